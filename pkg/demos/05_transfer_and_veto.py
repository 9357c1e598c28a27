"""
Cross-task transfer and the vision veto
=======================================

Trains an entropy-only probe on one synthetic task, scores the other, and
compares plain entropy deferral with the veto of the least visually engaged
accepted samples at 90% coverage.
"""

from groundtrace import synth
from groundtrace.selective import run_transfer

vcfg, scfg = synth.two_task_mixture(n=1500, seed=100)
visual, symbolic = synth.generate_feature_table(vcfg), synth.generate_feature_table(scfg)

for name, train, test in (("symbolic -> visual", symbolic, visual), ("visual -> symbolic", visual, symbolic)):
    res = run_transfer(train, test, "entropy_only", K=5, seed=0, veto_rate=0.05)
    auc, _ = res.summary()["auc"]
    print(
        f"{name}: AUC {auc:.3f}, entropy-only risk {res.splits[0].veto.risk_entropy:.3f}, "
        f"mean dRisk {res.mean_delta_risk_pp():+.2f} pp, wins {res.veto_wins()}/{len(res.splits)}"
    )

# Richer probes on the same direction
for level in ("entropy_plus_vision", "full"):
    res = run_transfer(symbolic, visual, level, K=3, seed=0)
    print(f"{level}: AUC {res.summary()['auc'][0]:.3f}, AURC {res.summary()['aurc'][0]:.4f}")
