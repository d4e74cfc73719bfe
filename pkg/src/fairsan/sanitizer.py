"""Adversarial training of a sanitizer that hides a binary sensitive attribute.

The sanitizer maps an encoded record ``[A, Y]`` plus its sensitive value and
some uniform noise to a record ``[A', Y']`` in the same encoded space. A
discriminator is trained to recover the sensitive value from ``[A', Y']``;
the sanitizer is trained to defeat it while changing each attribute as
little as possible, with ``alpha`` setting the trade-off.
"""

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import metrics
from .evaluators import FAMILIES, make_probe
from .exceptions import ConfigError, TrainingDivergenceError, UsageError
from .neural import Adam, Network, load_network, mse, mse_grad, network_from_bytes, \
    network_to_bytes, save_network

logger = logging.getLogger(__name__)


def alpha_progression(i_max):
    """``alpha_i = 0.2 + 0.4 (2^i - 1) / 2^(i-1)`` for ``i = 1..i_max``.

    Evaluated in exact rational arithmetic so that e.g. ``alpha_3`` is the
    double closest to 0.9.
    """
    if i_max < 1:
        raise UsageError("i_max must be at least 1")
    return [
        float(Fraction(1, 5) + Fraction(2, 5) * Fraction(2**i - 1, 2 ** (i - 1)))
        for i in range(1, i_max + 1)
    ]


def soft_ber(p, s):
    """Expected balanced error of continuous predictions ``p`` in [0, 1].

    ``0.5 * (mean(p | s=0) + mean(1 - p | s=1))``; equals the hard BER when
    ``p`` is 0/1.
    """
    p = np.asarray(p, dtype=np.float64)
    s = np.asarray(s)
    if p.shape != s.shape:
        raise UsageError(f"shape mismatch: {p.shape} vs {s.shape}")
    mask0, mask1 = s == 0, s == 1
    if not mask0.any() or not mask1.any():
        raise metrics.UndefinedMetricError("soft BER needs both groups in the batch")
    return float(0.5 * (p[mask0].mean() + (1.0 - p[mask1]).mean()))


def soft_ber_grad(p, s):
    """Gradient of :func:`soft_ber` with respect to ``p``."""
    s = np.asarray(s)
    n0, n1 = np.sum(s == 0), np.sum(s == 1)
    return np.where(s == 0, 0.5 / max(n0, 1), -0.5 / max(n1, 1))


def sanitizer_loss(original, sanitized, disc_out, s, alpha):
    """Vector loss: one reconstruction term per output column, then the adversarial term.

    Component ``i < d`` is ``(1 - alpha) * mean |original_i - sanitized_i|``;
    the last component is ``alpha * (0.5 - soft_ber(disc_out, s))``, or 0
    when the batch holds a single group.
    """
    original = np.atleast_2d(np.asarray(original, dtype=np.float64))
    sanitized = np.atleast_2d(np.asarray(sanitized, dtype=np.float64))
    if original.shape != sanitized.shape:
        raise UsageError(f"shape mismatch: {original.shape} vs {sanitized.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    recon = (1.0 - alpha) * np.abs(original - sanitized).mean(axis=0)
    try:
        adv = alpha * (0.5 - soft_ber(np.ravel(disc_out), np.ravel(s)))
    except metrics.UndefinedMetricError:
        adv = 0.0
    return np.append(recon, adv)


@dataclass
class EpochRecord:
    epoch: int
    ber_min: float
    sacc: float
    fid: float
    disc_ber: float = float("nan")


def heuristic_a(trace, literal=False):
    """Index of the epoch closest to the ideal point ``(BER=0.5, fid=1)``.

    The score is ``(ber_min - 0.5)^2 + (1 - fid)^2``; ties go to the
    earliest epoch. ``literal=True`` scores ``(ber_min - 0.5)^2 + fid``
    instead, which rewards low fidelity and is kept only for comparison.
    """
    if not trace:
        raise UsageError("empty trace")
    scores = [heuristic_a_score(rec.ber_min, rec.fid, literal) for rec in trace]
    return int(np.argmin(scores))


def heuristic_a_score(ber_min, fid, literal=False):
    if literal:
        return (ber_min - 0.5) ** 2 + fid
    return (ber_min - 0.5) ** 2 + (1.0 - fid) ** 2


class Sanitizer(TransformerMixin, BaseEstimator):
    """Adversarially trained sanitizer for encoded tabular data.

    ``fit(X, s)`` takes ``X``, the encoded public part of each record
    (attributes followed by the decision column, all in [0, 1]) and ``s``,
    the binary sensitive attribute. ``transform(X, s)`` returns a matrix of
    the same shape as ``X`` with the sensitive information removed.

    Parameters
    ----------
    alpha : float, default=0.9875
        Weight of the adversarial objective; ``1 - alpha`` weighs the
        per-attribute reconstruction error.
    epochs : int, default=40
    batch_size : int, default=100
    disc_ratio : int, default=50
        Discriminator steps per sanitizer step, each on a fresh batch.
    noise_dim : int, default=3
        Width of the uniform [0, 1] noise appended to the sanitizer input.
    san_hidden, disc_hidden : tuple of int
        Hidden widths; the defaults give 3 and 5 linear layers.
    san_lr, disc_lr : float, default=2e-4
    disc_output : {"sigmoid", "leaky_relu"}, default="sigmoid"
    loss_schedule : {"accumulate", "round_robin"}, default="accumulate"
        ``accumulate`` sums the gradients of all loss components into one
        Adam step; ``round_robin`` takes one Adam step per component.
    probe_families : tuple of str
        External classifiers used to score each epoch.
    probe_max_records : int, default=5000
        Cap on the records used to fit the per-epoch probes.
    selection : {"heuristic_a", "heuristic_a_literal", "last"}
    random_state : int, default=0
    """

    def __init__(self, alpha=0.9875, epochs=40, batch_size=100, disc_ratio=50, noise_dim=3,
                 san_hidden=(64, 64), disc_hidden=(64, 64, 64, 64), san_lr=2e-4, disc_lr=2e-4,
                 disc_output="sigmoid", loss_schedule="accumulate", probe_families=FAMILIES,
                 probe_max_records=5000, selection="heuristic_a", random_state=0):
        self.alpha = alpha
        self.epochs = epochs
        self.batch_size = batch_size
        self.disc_ratio = disc_ratio
        self.noise_dim = noise_dim
        self.san_hidden = san_hidden
        self.disc_hidden = disc_hidden
        self.san_lr = san_lr
        self.disc_lr = disc_lr
        self.disc_output = disc_output
        self.loss_schedule = loss_schedule
        self.probe_families = probe_families
        self.probe_max_records = probe_max_records
        self.selection = selection
        self.random_state = random_state

    def _validate_params(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.batch_size < 1 or self.disc_ratio < 1 or self.epochs < 1:
            raise ConfigError("batch_size, disc_ratio and epochs must be at least 1")
        if self.noise_dim < 0:
            raise ConfigError("noise_dim must be non-negative")
        if self.disc_output not in ("sigmoid", "leaky_relu"):
            raise ConfigError(f"unknown disc_output {self.disc_output!r}")
        if self.loss_schedule not in ("accumulate", "round_robin"):
            raise ConfigError(f"unknown loss_schedule {self.loss_schedule!r}")
        if self.selection not in ("heuristic_a", "heuristic_a_literal", "last"):
            raise ConfigError(f"unknown selection {self.selection!r}")
        for fam in self.probe_families:
            if fam not in FAMILIES:
                raise ConfigError(f"unknown probe family {fam!r}")

    @staticmethod
    def _check_xs(X, s):
        X = check_array(X, dtype=np.float64)
        s = np.asarray(s)
        if s.shape != (len(X),):
            raise UsageError(f"s must have shape ({len(X)},), got {s.shape}")
        if not np.all((s == 0) | (s == 1)):
            raise UsageError("s must be binary 0/1")
        return X, s.astype(np.float64)

    def fit(self, X, s, X_val=None, s_val=None, checkpoint_dir=None):
        """Train the sanitizer and discriminator.

        After every epoch the sanitizer state is kept and scored on the
        validation set (or on the training set when none is given); the
        epoch named by ``selection`` becomes the fitted sanitizer.
        """
        self._validate_params()
        X, s = self._check_xs(X, s)
        if X_val is None:
            X_val, s_val = X, s
        else:
            X_val, s_val = self._check_xs(X_val, s_val)
            if X_val.shape[1] != X.shape[1]:
                raise UsageError("validation data has a different column layout")
        n, width = X.shape
        seq = np.random.SeedSequence(self.random_state)
        init_san, init_disc, shuffle, noise, evaluation = (
            int(c.generate_state(1, dtype=np.uint64)[0] >> 1) for c in seq.spawn(5)
        )
        self.n_features_in_ = width
        self.sanitizer_ = Network.build(
            [width + 1 + self.noise_dim, *self.san_hidden, width], "relu", "leaky_relu",
            seed=init_san,
        )
        self.discriminator_ = Network.build(
            [width, *self.disc_hidden, 1], "relu", self.disc_output, seed=init_disc,
        )
        san_opt = Adam(self.sanitizer_.parameters(), lr=self.san_lr)
        disc_opt = Adam(self.discriminator_.parameters(), lr=self.disc_lr)
        batch_rng = np.random.default_rng(shuffle)
        noise_rng = np.random.default_rng(noise)
        disc_stream = _BatchStream(n, self.batch_size, np.random.default_rng(shuffle + 1))
        eval_seed = evaluation

        self.trace_ = []
        self.checkpoints_ = []
        self.loss_trace_ = []
        if checkpoint_dir is not None:
            os.makedirs(checkpoint_dir, exist_ok=True)
        for epoch in range(self.epochs):
            order = batch_rng.permutation(n)
            epoch_losses = []
            for b, start in enumerate(range(0, n, self.batch_size)):
                idx = order[start:start + self.batch_size]
                components = self._sanitizer_step(X[idx], s[idx], noise_rng, san_opt, epoch, b)
                epoch_losses.append(components)
                for _ in range(self.disc_ratio):
                    didx = disc_stream.next()
                    z = self._inputs(X[didx], s[didx], noise_rng)
                    p = self.discriminator_.forward(self.sanitizer_.predict(z))
                    loss = mse(p[:, 0], s[didx])
                    if not np.isfinite(loss):
                        raise TrainingDivergenceError("discriminator loss is not finite", epoch, b)
                    grad = mse_grad(p[:, 0], s[didx])[:, None]
                    try:
                        disc_opt.step(self.discriminator_.backward(grad))
                    except TrainingDivergenceError as exc:
                        raise TrainingDivergenceError(str(exc), epoch, b) from exc
            self.loss_trace_.append(np.mean(epoch_losses, axis=0))
            blob = network_to_bytes(self.sanitizer_)
            self.checkpoints_.append(blob)
            if checkpoint_dir is not None:
                with open(os.path.join(checkpoint_dir, f"epoch_{epoch:03d}.san"), "wb") as fh:
                    fh.write(blob)
            record = self._score_epoch(epoch, X, s, X_val, s_val, eval_seed)
            self.trace_.append(record)
            logger.info("epoch %d: ber_min=%.4f sacc=%.4f fid=%.4f", epoch, record.ber_min,
                        record.sacc, record.fid)
        self.select_epoch()
        return self

    def _inputs(self, X, s, rng):
        noise = rng.random((len(X), self.noise_dim))
        return np.hstack([X, s[:, None], noise])

    def _sanitizer_step(self, xb, sb, rng, opt, epoch, batch):
        z = self._inputs(xb, sb, rng)
        width = xb.shape[1]
        if self.loss_schedule == "accumulate":
            targets = [None]
        else:
            targets = list(range(width + 1))
        components = None
        for target in targets:
            out = self.sanitizer_.forward(z)
            p = self.discriminator_.forward(out)[:, 0]
            comps = sanitizer_loss(xb, out, p, sb, self.alpha)
            if not np.all(np.isfinite(comps)):
                raise TrainingDivergenceError("sanitizer loss is not finite", epoch, batch)
            if components is None:
                components = comps
            grad_out = np.zeros_like(out)
            if target is None or target < width:
                recon = (1.0 - self.alpha) * np.sign(out - xb) / len(xb)
                if target is None:
                    grad_out += recon
                else:
                    grad_out[:, target] += recon[:, target]
            adversarial = (target is None or target == width) and self.alpha > 0
            if adversarial and 0 < sb.sum() < len(sb):
                dp = -self.alpha * soft_ber_grad(p, sb)
                _, g_in = self.discriminator_.backward(dp[:, None], return_input_grad=True)
                grad_out += g_in
            grads = self.sanitizer_.backward(grad_out)
            try:
                opt.step(grads)
            except TrainingDivergenceError as exc:
                raise TrainingDivergenceError(str(exc), epoch, batch) from exc
        return components

    def _score_epoch(self, epoch, X, s, X_val, s_val, seed):
        train_out = self._sanitize_with(self.sanitizer_, X, s, seed)
        val_out = self._sanitize_with(self.sanitizer_, X_val, s_val, seed + 1)
        fid = metrics.fidelity(X_val, val_out)
        disc_pred = metrics.to_binary(self.discriminator_.predict(val_out)[:, 0])
        s_val_int = s_val.astype(np.int64)
        try:
            disc_ber = metrics.ber(disc_pred, s_val_int)
        except metrics.UndefinedMetricError:
            disc_ber = float("nan")
        fit_idx = np.arange(len(X))
        if len(fit_idx) > self.probe_max_records:
            fit_idx = np.random.default_rng(seed).choice(fit_idx, self.probe_max_records,
                                                         replace=False)
            fit_idx.sort()
        bers, accs = [], []
        for fam in self.probe_families:
            probe = make_probe(fam, random_state=seed).fit(train_out[fit_idx],
                                                           s[fit_idx].astype(np.int64))
            pred = probe.predict(val_out)
            bers.append(metrics.ber(pred, s_val_int))
            accs.append(metrics.s_acc(pred, s_val_int))
        if not bers:
            bers, accs = [disc_ber], [metrics.s_acc(disc_pred, s_val_int)]
        return EpochRecord(epoch=epoch, ber_min=float(min(bers)), sacc=float(max(accs)),
                           fid=fid, disc_ber=disc_ber)

    def select_epoch(self, epoch=None):
        """Load the checkpoint of ``epoch`` (default: per ``selection``) as the active sanitizer."""
        check_is_fitted(self, "checkpoints_")
        if epoch is None:
            if self.selection == "last":
                epoch = len(self.checkpoints_) - 1
            else:
                epoch = heuristic_a(self.trace_, literal=self.selection == "heuristic_a_literal")
        if not 0 <= epoch < len(self.checkpoints_):
            raise UsageError(f"no checkpoint for epoch {epoch}")
        self.best_epoch_ = epoch
        self.network_, _ = network_from_bytes(self.checkpoints_[epoch])
        return self

    def _sanitize_with(self, net, X, s, noise_seed):
        rng = np.random.default_rng(noise_seed)
        return np.clip(net.predict(self._inputs(X, s, rng)), 0.0, 1.0)

    def transform(self, X, s, noise_seed=0):
        """Sanitize records; deterministic for a given ``noise_seed``."""
        check_is_fitted(self, "network_")
        X, s = self._check_xs(X, s)
        if X.shape[1] != self.n_features_in_:
            raise UsageError(
                f"sanitizer was trained on {self.n_features_in_} columns, got {X.shape[1]}"
            )
        return self._sanitize_with(self.network_, X, s, noise_seed)

    def fit_transform(self, X, s, **fit_params):
        noise_seed = fit_params.pop("noise_seed", 0)
        return self.fit(X, s, **fit_params).transform(X, s, noise_seed=noise_seed)

    def discriminate(self, X_sanitized):
        """Discriminator estimate of P(s=1) for sanitized records."""
        check_is_fitted(self, "discriminator_")
        return self.discriminator_.predict(check_array(X_sanitized, dtype=np.float64))[:, 0]

    # persistence -------------------------------------------------------

    def save(self, directory):
        """Write params, trace, every epoch checkpoint and the discriminator."""
        check_is_fitted(self, "checkpoints_")
        os.makedirs(directory, exist_ok=True)
        params = self.get_params()
        params["san_hidden"] = list(self.san_hidden)
        params["disc_hidden"] = list(self.disc_hidden)
        params["probe_families"] = list(self.probe_families)
        doc = {"params": params, "n_features_in": self.n_features_in_,
               "selected_epoch": self.best_epoch_, "n_epochs": len(self.checkpoints_)}
        with open(os.path.join(directory, "sanitizer.json"), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        for epoch, blob in enumerate(self.checkpoints_):
            with open(os.path.join(directory, f"epoch_{epoch:03d}.san"), "wb") as fh:
                fh.write(blob)
        save_network(os.path.join(directory, "discriminator.net"), self.discriminator_)
        write_trace(os.path.join(directory, "trace.csv"), self.trace_)

    @classmethod
    def load(cls, directory, epoch=None):
        """Restore a saved sanitizer; ``epoch`` overrides the saved selection."""
        with open(os.path.join(directory, "sanitizer.json"), encoding="utf-8") as fh:
            doc = json.load(fh)
        params = doc["params"]
        params["san_hidden"] = tuple(params["san_hidden"])
        params["disc_hidden"] = tuple(params["disc_hidden"])
        params["probe_families"] = tuple(params["probe_families"])
        est = cls(**params)
        est.n_features_in_ = doc["n_features_in"]
        est.checkpoints_ = []
        for e in range(doc["n_epochs"]):
            with open(os.path.join(directory, f"epoch_{e:03d}.san"), "rb") as fh:
                est.checkpoints_.append(fh.read())
        est.sanitizer_, _ = network_from_bytes(est.checkpoints_[-1])
        est.discriminator_, _ = load_network(os.path.join(directory, "discriminator.net"))
        est.trace_ = read_trace(os.path.join(directory, "trace.csv"))
        est.select_epoch(doc["selected_epoch"] if epoch is None else epoch)
        return est


class _BatchStream:
    """Endless sequence of batches drawn from reshuffled passes over ``n`` records."""

    def __init__(self, n, batch_size, rng):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self._order = rng.permutation(n)
        self._pos = 0

    def next(self):
        if self._pos + self.batch_size > self.n:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx


TRACE_FIELDS = ("epoch", "ber_min", "sacc", "fid", "disc_ber")


def write_trace(path, trace):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_FIELDS)
        for rec in trace:
            row = asdict(rec)
            writer.writerow([row["epoch"]] + [repr(float(row[k])) for k in TRACE_FIELDS[1:]])


def read_trace(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            EpochRecord(epoch=int(row["epoch"]), ber_min=float(row["ber_min"]),
                        sacc=float(row["sacc"]), fid=float(row["fid"]),
                        disc_ber=float(row["disc_ber"]))
            for row in csv.DictReader(fh)
        ]
