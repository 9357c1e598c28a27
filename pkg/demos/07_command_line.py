"""
The command-line pipeline
=========================

Drives the ``groundtrace`` subcommands in-process: score the bundled fixture,
analyse it, then replay the run from its resolved-config echo.
"""

import filecmp
import tempfile
from pathlib import Path

from groundtrace import fixture_path
from groundtrace.cli import main

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    main(["score", str(fixture_path()), "--out", str(tmp / "score")])
    main(["analyze", str(tmp / "score" / "signals.csv"), "--out", str(tmp / "analyze")])
    print("score wrote:", sorted(p.name for p in (tmp / "score").iterdir()))
    print((tmp / "score" / "termination.csv").read_text())
    print((tmp / "analyze" / "decay_V.csv").read_text())

    # The echo is a complete config; replaying it rewrites identical files
    snapshot = tmp / "first"
    (tmp / "analyze").rename(snapshot)
    main(["analyze", "--config", str(snapshot / "config.resolved.json"), "--workers", "4"])
    same = all(filecmp.cmp(p, tmp / "analyze" / p.name, shallow=False) for p in snapshot.iterdir() if p.name != "config.resolved.json")
    print("replay identical:", same)
