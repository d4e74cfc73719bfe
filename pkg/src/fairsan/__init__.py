"""Adversarial sanitization of tabular data against a binary sensitive attribute."""

__version__ = "0.1.0"

from .data import Schema, TabularEncoder, fold_indices, infer_schema, read_csv, split_folds
from .evaluators import LinearHingeProbe, MLPProbe, StumpBoostingProbe, make_probe
from .sanitizer import Sanitizer, alpha_progression, heuristic_a, soft_ber
from .scenarios import CVConfig, run_cv

__all__ = [
    "CVConfig",
    "LinearHingeProbe",
    "MLPProbe",
    "Sanitizer",
    "Schema",
    "StumpBoostingProbe",
    "TabularEncoder",
    "alpha_progression",
    "fold_indices",
    "heuristic_a",
    "infer_schema",
    "make_probe",
    "read_csv",
    "run_cv",
    "soft_ber",
    "split_folds",
]
