"""Entropy and visual-grounding signals for reasoning VLM traces, probes and selective prediction."""

__version__ = "0.1.0"

from importlib import resources as _resources


def fixture_path(name: str = "sustained_deficit"):
    """Path to a bundled synthetic trace fixture (``fixtures/v1/<name>.jsonl``)."""
    return _resources.files("groundtrace") / "fixtures" / "v1" / f"{name}.jsonl"
