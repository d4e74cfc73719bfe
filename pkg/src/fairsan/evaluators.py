"""Probe classifiers used to measure what can be predicted from (sanitized) data.

Three families with a scikit-learn interface:

* ``mlp`` -- :class:`MLPProbe`, a small dense network trained with Adam;
* ``gb_stumps`` -- :class:`StumpBoostingProbe`, gradient boosting of depth-1 trees;
* ``linear_hinge`` -- :class:`LinearHingeProbe`, a linear model trained by
  subgradient descent on the L2-regularized hinge loss.

All of them take binary 0/1 targets and are deterministic given
``random_state``.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DegenerateLabelError, UsageError
from .neural import Adam, Network, _sigmoid, network_from_bytes, network_to_bytes

FAMILIES = ("mlp", "gb_stumps", "linear_hinge")


def _check_fit_input(X, y):
    X = check_array(X, dtype=np.float64)
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != len(X):
        raise UsageError(f"labels must be 1-D with {len(X)} entries")
    if not np.all((y == 0) | (y == 1)):
        raise UsageError("labels must be binary 0/1")
    counts = np.bincount(y.astype(np.int64), minlength=2)
    if counts.min() < 2:
        raise DegenerateLabelError(
            f"need at least two examples of each class, got counts {counts.tolist()}"
        )
    return X, y.astype(np.float64)


class _BinaryProbe(ClassifierMixin, BaseEstimator):
    def _check_predict_input(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise UsageError(
                f"{type(self).__name__} was fitted on {self.n_features_in_} features, got {X.shape[1]}"
            )
        return X

    def predict_proba(self, X):
        p = self._positive_proba(self._check_predict_input(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self._positive_proba(self._check_predict_input(X)) >= 0.5).astype(np.int64)

    def _set_classes(self):
        self.classes_ = np.array([0, 1])


class MLPProbe(_BinaryProbe):
    """Dense ReLU network with a logistic output, trained on cross-entropy.

    Parameters
    ----------
    hidden : tuple of int, default=(32, 32)
    learning_rate : float, default=1e-3
    epochs : int, default=40
    batch_size : int, default=64
    random_state : int, default=0
    """

    def __init__(self, hidden=(32, 32), learning_rate=1e-3, epochs=40, batch_size=64,
                 random_state=0):
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X, y = _check_fit_input(X, y)
        rng = np.random.default_rng(self.random_state)
        net = Network.build([X.shape[1], *self.hidden, 1], "relu", "identity",
                            seed=int(rng.integers(2**62)))
        opt = Adam(net.parameters(), lr=self.learning_rate)
        n = len(X)
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                logits = net.forward(X[idx])[:, 0]
                grad = (_sigmoid(logits) - y[idx]) / len(idx)
                opt.step(net.backward(grad[:, None]))
        self.network_ = net
        self.n_features_in_ = X.shape[1]
        self._set_classes()
        return self

    def decision_function(self, X):
        return self.network_.predict(self._check_predict_input(X))[:, 0]

    def _positive_proba(self, X):
        return _sigmoid(self.network_.predict(X)[:, 0])


class StumpBoostingProbe(_BinaryProbe):
    """Gradient boosting with decision stumps on the logistic loss.

    Each round fits a threshold split ``x[:, j] <= t`` to the negative
    gradient by least squares; leaf values are Newton steps scaled by
    ``learning_rate``. The ensemble starts from the log-odds of the
    training prior.
    """

    def __init__(self, n_estimators=100, learning_rate=0.1):
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate

    def fit(self, X, y):
        X, y = _check_fit_input(X, y)
        n, d = X.shape
        prior = np.clip(y.mean(), 1e-6, 1 - 1e-6)
        self.init_ = float(np.log(prior / (1 - prior)))
        order = np.argsort(X, axis=0, kind="stable")
        xs = np.take_along_axis(X, order, axis=0)
        # a split after sorted position i is valid only between distinct values
        valid = xs[1:] > xs[:-1]
        f = np.full(n, self.init_)
        stumps = []
        for _ in range(self.n_estimators):
            p = _sigmoid(f)
            resid = y - p
            hess = p * (1 - p)
            stump = self._best_stump(X, xs, order, valid, resid, hess)
            stumps.append(stump)
            feature, threshold, left, right = stump
            if feature < 0:
                f += left
            else:
                f += np.where(X[:, feature] <= threshold, left, right)
        self.stumps_ = stumps
        self.n_features_in_ = d
        self._set_classes()
        return self

    def _best_stump(self, X, xs, order, valid, resid, hess):
        n, d = xs.shape
        total = resid.sum()
        best_gain = 0.0
        best = None
        if n > 1:
            r_sorted = resid[order]
            csum = np.cumsum(r_sorted, axis=0)[:-1]
            n_left = np.arange(1, n)[:, None]
            # SSE reduction of a two-leaf mean fit relative to a single leaf
            gain = csum**2 / n_left + (total - csum) ** 2 / (n - n_left) - total**2 / n
            gain = np.where(valid, gain, -np.inf)
            flat = int(np.argmax(gain))
            i, j = divmod(flat, d)
            if gain[i, j] > best_gain + 1e-12:
                best_gain = gain[i, j]
                best = (j, 0.5 * (xs[i, j] + xs[i + 1, j]))
        if best is None:
            value = self.learning_rate * total / max(hess.sum(), 1e-12)
            return (-1, 0.0, float(value), float(value))
        j, threshold = best
        mask = X[:, j] <= threshold
        left = self.learning_rate * resid[mask].sum() / max(hess[mask].sum(), 1e-12)
        right = self.learning_rate * resid[~mask].sum() / max(hess[~mask].sum(), 1e-12)
        return (int(j), float(threshold), float(left), float(right))

    def decision_function(self, X):
        X = self._check_predict_input(X)
        return self._raw(X)

    def _raw(self, X):
        f = np.full(len(X), self.init_)
        for feature, threshold, left, right in self.stumps_:
            if feature < 0:
                f += left
            else:
                f += np.where(X[:, feature] <= threshold, left, right)
        return f

    def _positive_proba(self, X):
        return _sigmoid(self._raw(X))


class LinearHingeProbe(_BinaryProbe):
    """Linear classifier minimizing ``alpha/2 ||w||^2 + mean(hinge)``.

    Full-batch subgradient descent with step ``learning_rate / sqrt(t)``;
    the iterate with the lowest objective is kept.
    """

    def __init__(self, alpha=1e-3, learning_rate=1.0, max_iter=2000):
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = _check_fit_input(X, y)
        sign = 2.0 * y - 1.0
        n, d = X.shape
        w = np.zeros(d)
        b = 0.0
        best = (np.inf, w.copy(), b)
        for t in range(1, self.max_iter + 1):
            margin = sign * (X @ w + b)
            active = margin < 1.0
            objective = 0.5 * self.alpha * w @ w + np.mean(np.maximum(0.0, 1.0 - margin))
            if objective < best[0]:
                best = (objective, w.copy(), b)
            grad_w = self.alpha * w - (sign[active] @ X[active]) / n
            grad_b = -sign[active].sum() / n
            step = self.learning_rate / np.sqrt(t)
            w = w - step * grad_w
            b = b - step * grad_b
        self.objective_, self.coef_, self.intercept_ = best[0], best[1], float(best[2])
        self.n_features_in_ = d
        self._set_classes()
        return self

    def decision_function(self, X):
        X = self._check_predict_input(X)
        return X @ self.coef_ + self.intercept_

    def _positive_proba(self, X):
        return _sigmoid(X @ self.coef_ + self.intercept_)

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(np.int64)


def make_probe(family, random_state=0, **params):
    """Construct an unfitted probe of the given family."""
    if family == "mlp":
        return MLPProbe(random_state=random_state, **params)
    if family == "gb_stumps":
        return StumpBoostingProbe(**params)
    if family == "linear_hinge":
        return LinearHingeProbe(**params)
    raise UsageError(f"unknown probe family {family!r}; expected one of {FAMILIES}")


def probe_to_dict(probe):
    """JSON-serializable snapshot of a fitted probe."""
    check_is_fitted(probe, "n_features_in_")
    doc = {"params": probe.get_params(), "n_features_in": probe.n_features_in_}
    if isinstance(probe, MLPProbe):
        doc["family"] = "mlp"
        doc["params"]["hidden"] = list(probe.hidden)
        doc["network"] = network_to_bytes(probe.network_).hex()
    elif isinstance(probe, StumpBoostingProbe):
        doc["family"] = "gb_stumps"
        doc["init"] = probe.init_
        doc["stumps"] = [list(s) for s in probe.stumps_]
    elif isinstance(probe, LinearHingeProbe):
        doc["family"] = "linear_hinge"
        doc["coef"] = probe.coef_.tolist()
        doc["intercept"] = probe.intercept_
    else:
        raise UsageError(f"not a probe: {type(probe).__name__}")
    return doc


def probe_from_dict(doc):
    params = dict(doc["params"])
    family = doc["family"]
    if family == "mlp":
        params["hidden"] = tuple(params["hidden"])
        probe = MLPProbe(**params)
        probe.network_, _ = network_from_bytes(bytes.fromhex(doc["network"]))
    elif family == "gb_stumps":
        probe = StumpBoostingProbe(**params)
        probe.init_ = doc["init"]
        probe.stumps_ = [(int(j), float(t), float(l), float(r)) for j, t, l, r in doc["stumps"]]
    elif family == "linear_hinge":
        probe = LinearHingeProbe(**params)
        probe.coef_ = np.array(doc["coef"], dtype=np.float64)
        probe.intercept_ = float(doc["intercept"])
    else:
        raise UsageError(f"unknown probe family {family!r}")
    probe.n_features_in_ = doc["n_features_in"]
    probe._set_classes()
    return probe
