"""Fairness, fidelity and utility measures.

Predictions, labels and group memberships are binary arrays (0/1).
Continuous scores are thresholded at 0.5 by :func:`to_binary`.
"""

import numpy as np

from .exceptions import UndefinedMetricError, UsageError


def to_binary(scores, threshold=0.5):
    return (np.asarray(scores, dtype=np.float64) >= threshold).astype(np.int64)


def _binary(x, name):
    x = np.asarray(x)
    if x.ndim != 1:
        raise UsageError(f"{name} must be 1-D, got shape {x.shape}")
    if x.size and not np.all((x == 0) | (x == 1)):
        raise UsageError(f"{name} must contain only 0 and 1")
    return x.astype(np.int64)


def _pair(pred, other, name="s"):
    pred = _binary(pred, "predictions")
    other = _binary(other, name)
    if pred.shape != other.shape:
        raise UsageError(f"length mismatch: {pred.size} predictions vs {other.size} {name}")
    return pred, other


def ber(pred, s):
    """Balanced error rate of predicting ``s``: mean of the per-group error rates."""
    pred, s = _pair(pred, s)
    rates = []
    for group in (0, 1):
        mask = s == group
        if not mask.any():
            raise UndefinedMetricError(f"BER undefined: no records with s={group}")
        rates.append(np.mean(pred[mask] != group))
    return float(0.5 * (rates[0] + rates[1]))


def s_acc(pred, s):
    """Accuracy of recovering the sensitive attribute."""
    pred, s = _pair(pred, s)
    if pred.size == 0:
        raise UndefinedMetricError("accuracy of an empty prediction set")
    return float(np.mean(pred == s))


def accuracy(pred, y):
    pred, y = _pair(pred, y, "labels")
    if pred.size == 0:
        raise UndefinedMetricError("accuracy of an empty prediction set")
    return float(np.mean(pred == y))


def demo_parity(pred, s):
    """``|P(pred=1 | s=0) - P(pred=1 | s=1)|``."""
    pred, s = _pair(pred, s)
    rates = []
    for group in (0, 1):
        mask = s == group
        if not mask.any():
            raise UndefinedMetricError(f"demographic parity undefined: no records with s={group}")
        rates.append(np.mean(pred[mask]))
    return float(abs(rates[0] - rates[1]))


def eq_odd_gap(pred, y_true, s, outcome=1):
    """``|P(pred=1 | s=0, y=outcome) - P(pred=1 | s=1, y=outcome)|``.

    ``outcome=1`` gives the true-positive-rate gap, ``outcome=0`` the
    false-positive-rate gap.
    """
    pred, s = _pair(pred, s)
    y_true = _binary(y_true, "y_true")
    if y_true.shape != pred.shape:
        raise UsageError("y_true length does not match predictions")
    rates = []
    for group in (0, 1):
        mask = (s == group) & (y_true == outcome)
        if not mask.any():
            raise UndefinedMetricError(
                f"equalized odds undefined: empty cell (s={group}, y={outcome})"
            )
        rates.append(np.mean(pred[mask]))
    return float(abs(rates[0] - rates[1]))


def fidelity(original, sanitized):
    """``1 - mean_r ||o_r - s_r||_2 / sqrt(d)``; 1 for identical matrices.

    Both matrices are in the encoded space, so every entry lies in [0, 1]
    and the result lies in [0, 1].
    """
    original = np.asarray(original, dtype=np.float64)
    sanitized = np.asarray(sanitized, dtype=np.float64)
    if original.shape != sanitized.shape or original.ndim != 2:
        raise UsageError(f"shape mismatch: {original.shape} vs {sanitized.shape}")
    if original.shape[0] == 0:
        raise UndefinedMetricError("fidelity of an empty dataset")
    dist = np.sqrt(np.sum((original - sanitized) ** 2, axis=1))
    return float(1.0 - np.mean(dist) / np.sqrt(original.shape[1]))


def diversity(X):
    """Mean pairwise L2 distance between records, normalized by ``sqrt(d)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise UsageError(f"expected a 2-D matrix, got shape {X.shape}")
    n, d = X.shape
    if n < 2:
        raise UndefinedMetricError("diversity needs at least two records")
    # explicit differences, not the Gram expansion: identical rows must give exactly 0
    rows = max(1, 4_000_000 // max(1, n * d))
    total = 0.0
    for start in range(0, n, rows):
        diff = X[start:start + rows, None, :] - X[None, :, :]
        total += np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)).sum()
    return float(total / (n * (n - 1) * np.sqrt(d)))


def relative_change(original, sanitized):
    """Per-record ``|o - s| / ((|o| + |s|) / 2)``, defined as 0 when both are 0."""
    original = np.asarray(original, dtype=np.float64)
    sanitized = np.asarray(sanitized, dtype=np.float64)
    if original.shape != sanitized.shape:
        raise UsageError(f"shape mismatch: {original.shape} vs {sanitized.shape}")
    denom = (np.abs(original) + np.abs(sanitized)) / 2.0
    diff = np.abs(original - sanitized)
    out = np.zeros_like(diff)
    np.divide(diff, denom, out=out, where=denom > 0)
    return out


def categorical_modified_fraction(original, sanitized):
    original = np.asarray(original, dtype=object)
    sanitized = np.asarray(sanitized, dtype=object)
    if original.shape != sanitized.shape:
        raise UsageError(f"shape mismatch: {original.shape} vs {sanitized.shape}")
    if original.size == 0:
        return 0.0
    return float(np.mean(original != sanitized))


def decision_shift(y, y_sanitized, s=None):
    """Fraction of records whose decision changed.

    Returns a float, or with ``s`` given a dict with the overall value and
    the value within each sensitive group (``"s=0"`` and ``"s=1"``).
    """
    y, y_sanitized = _pair(y, y_sanitized, "sanitized decisions")
    changed = y != y_sanitized
    overall = float(np.mean(changed)) if changed.size else 0.0
    if s is None:
        return overall
    s = _binary(s, "s")
    out = {"overall": overall}
    for group in (0, 1):
        mask = s == group
        out[f"s={group}"] = float(np.mean(changed[mask])) if mask.any() else float("nan")
    return out
