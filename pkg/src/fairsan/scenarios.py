"""Cross-validated evaluation of sanitizers under the four deployment scenarios.

Every random draw is seeded by :func:`derive_seed` from the master seed and
the coordinates of the cell (fold, alpha, purpose), so any (fold, alpha)
cell can be recomputed in isolation.
"""

import csv
import json
import logging
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import metrics
from .data import TabularEncoder, fold_indices, split_folds
from .evaluators import FAMILIES, make_probe, probe_to_dict
from .exceptions import DegenerateLabelError, FairsanError, UndefinedMetricError, UsageError
from .sanitizer import Sanitizer, alpha_progression

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScenarioSpec:
    """Which version (``original`` or ``sanitized``) of attributes and decision each set uses."""

    id: str
    train_attributes: str
    train_decision: str
    test_attributes: str
    test_decision: str

    @property
    def uses_sanitized(self):
        return "sanitized" in (self.train_attributes, self.train_decision,
                               self.test_attributes, self.test_decision)


O, S = "original", "sanitized"
SCENARIOS = {
    "baseline": ScenarioSpec("baseline", O, O, O, O),
    "s1": ScenarioSpec("s1", S, S, S, S),
    "s2": ScenarioSpec("s2", S, O, S, O),
    "s3": ScenarioSpec("s3", S, S, O, O),
    "s4": ScenarioSpec("s4", O, O, S, O),
}


@dataclass
class Split:
    """Encoded attributes with binary decision and sensitive labels."""

    attributes: np.ndarray
    decision: np.ndarray
    sensitive: np.ndarray


def compose(scenario, original_train, original_test, sanitized_train=None, sanitized_test=None):
    """Build ``(train_X, train_y, test_X, test_y)`` for a scenario."""
    spec = SCENARIOS[scenario] if isinstance(scenario, str) else scenario
    if spec.uses_sanitized and (sanitized_train is None or sanitized_test is None):
        raise UsageError(f"scenario {spec.id} needs sanitized data")
    train = {O: original_train, S: sanitized_train}
    test = {O: original_test, S: sanitized_test}
    for a, b in ((original_train, sanitized_train), (original_test, sanitized_test)):
        if b is not None and len(a.decision) != len(b.decision):
            raise UsageError("original and sanitized splits come from different folds")
    return (
        train[spec.train_attributes].attributes,
        train[spec.train_decision].decision,
        test[spec.test_attributes].attributes,
        test[spec.test_decision].decision,
    )


@dataclass
class RunResult:
    fold: int
    alpha: float
    scenario: str
    classifier: str
    epoch: int = -1
    yacc: float = math.nan
    demo_parity: float = math.nan
    eq_odd_gap_1: float = math.nan
    eq_odd_gap_0: float = math.nan
    ber: float = math.nan
    sacc: float = math.nan
    fid: float = math.nan
    diversity: float = math.nan
    diversity_original: float = math.nan
    decision_shift: float = math.nan
    decision_shift_s0: float = math.nan
    decision_shift_s1: float = math.nan


RESULT_FIELDS = tuple(f.name for f in fields(RunResult))
METRIC_FIELDS = RESULT_FIELDS[5:]


@dataclass
class DamageRow:
    fold: int
    alpha: float
    attribute: str
    kind: str
    statistic: str
    value: float


@dataclass
class CVConfig:
    """Settings of a cross-validation run.

    ``sanitizer`` holds keyword arguments for :class:`Sanitizer` (alpha and
    random_state are set per cell). ``folds`` restricts the run to a subset
    of fold ids.
    """

    n_folds: int = 10
    folds: list = None
    seed: int = 0
    scenarios: tuple = ("baseline", "s1", "s2", "s3", "s4")
    families: tuple = FAMILIES
    sanitizer: dict = field(default_factory=dict)
    probe_params: dict = field(default_factory=dict)

    def fold_ids(self):
        return list(range(self.n_folds)) if self.folds is None else list(self.folds)


def default_alphas(i_max=6):
    """The progression values plus the endpoints 0 and 1."""
    return [0.0] + alpha_progression(i_max) + [1.0]



def derive_seed(master, fold=-1, alpha=None, purpose=""):
    """Deterministic 62-bit sub-seed for one (fold, alpha, purpose) coordinate.

    The entropy pool is ``[master, fold + 1, round(alpha * 1e9) + 1 (0 when
    alpha is None), crc32(purpose)]``.
    """
    alpha_key = 0 if alpha is None else int(round(alpha * 1e9)) + 1
    seq = np.random.SeedSequence([int(master), int(fold) + 1, alpha_key,
                                  zlib.crc32(purpose.encode("utf-8"))])
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> 2)


def encode_fold(df, schema, blocks, fold):
    """Fit the encoder on the training blocks of ``fold`` and encode every record."""
    train, val, test = fold_indices(blocks, fold)
    encoder = TabularEncoder(schema).fit(df.iloc[train])
    return encoder, encoder.transform(df), (train, val, test)


def train_cell(df, schema, blocks, fold, alpha, config, checkpoint_dir=None):
    encoder, X, (train, val, _) = encode_fold(df, schema, blocks, fold)
    public, s = X[:, :encoder.sensitive_index_], X[:, encoder.sensitive_index_]
    params = dict(config.sanitizer)
    params.update(alpha=alpha, random_state=derive_seed(config.seed, fold, alpha, "sanitizer"))
    try:
        sanitizer = Sanitizer(**params).fit(public[train], s[train], public[val], s[val],
                                            checkpoint_dir=checkpoint_dir)
    except FairsanError as exc:
        raise type(exc)(f"fold {fold}, alpha {alpha}: {exc}") from exc
    return encoder, sanitizer


def _split(encoder, X, idx):
    return Split(
        attributes=X[idx, :encoder.n_attribute_columns_],
        decision=X[idx, encoder.decision_index_].astype(np.int64),
        sensitive=X[idx, encoder.sensitive_index_].astype(np.int64),
    )


def _fit_predict(family, seed, probe_params, X_train, y_train, X_test, save_to=None):
    try:
        probe = make_probe(family, random_state=seed, **probe_params.get(family, {}))
        pred = probe.fit(X_train, y_train).predict(X_test)
    except DegenerateLabelError:
        # sanitized decisions can collapse to one class; predict the majority class
        logger.warning("%s: degenerate training labels, using a constant predictor", family)
        majority = int(np.mean(y_train) >= 0.5)
        pred = np.full(len(X_test), majority, dtype=np.int64)
        doc = {"family": "constant", "value": majority}
    else:
        doc = probe_to_dict(probe)
    if save_to is not None:
        os.makedirs(os.path.dirname(save_to), exist_ok=True)
        with open(save_to, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)
            fh.write("\n")
    return pred


def _safe(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except UndefinedMetricError:
        return math.nan


def evaluate_cell(df, encoder, sanitizer, blocks, fold, alpha, config, probe_dir=None):
    """Protection, scenario and damage measurements for one (fold, alpha) cell.

    Returns ``(results, damage)``. With ``probe_dir`` every fitted probe is
    written there as JSON.
    """

    def probe_path(name):
        return None if probe_dir is None else os.path.join(probe_dir, f"{name}.json")

    train, _, test = fold_indices(blocks, fold)
    X = encoder.transform(df)
    public, s = X[:, :encoder.sensitive_index_], X[:, encoder.sensitive_index_]
    orig_train, orig_test = _split(encoder, X, train), _split(encoder, X, test)
    results, damage = [], []
    needs_sanitized = any(SCENARIOS[sc].uses_sanitized for sc in config.scenarios)
    san_train = san_test = None
    epoch = -1
    if needs_sanitized:
        if sanitizer is None:
            raise UsageError(f"fold {fold}, alpha {alpha}: scenarios need a trained sanitizer")
        epoch = sanitizer.best_epoch_
        out_train = sanitizer.transform(public[train], s[train],
                                        noise_seed=derive_seed(config.seed, fold, alpha, "noise_train"))
        out_test = sanitizer.transform(public[test], s[test],
                                       noise_seed=derive_seed(config.seed, fold, alpha, "noise_test"))
        nd = encoder.n_attribute_columns_
        san_train = Split(out_train[:, :nd], metrics.to_binary(out_train[:, nd]), orig_train.sensitive)
        san_test = Split(out_test[:, :nd], metrics.to_binary(out_test[:, nd]), orig_test.sensitive)
        results.extend(_protection_rows(fold, alpha, epoch, config, public[test], out_train,
                                        out_test, orig_train, orig_test, san_test, sanitizer,
                                        probe_path))
        damage.extend(_damage_rows(fold, alpha, encoder, public[test], out_test))
    probe_seed = derive_seed(config.seed, fold, None, "probe")
    for scenario in config.scenarios:
        spec = SCENARIOS[scenario]
        X_tr, y_tr, X_te, y_te = compose(spec, orig_train, orig_test, san_train, san_test)
        for family in config.families:
            pred = _fit_predict(family, probe_seed, config.probe_params, X_tr, y_tr, X_te,
                                save_to=probe_path(f"{scenario}_{family}"))
            s_te = orig_test.sensitive
            results.append(RunResult(
                fold=fold, alpha=alpha, scenario=scenario, classifier=family,
                epoch=epoch if spec.uses_sanitized else -1,
                yacc=metrics.accuracy(pred, y_te),
                demo_parity=_safe(metrics.demo_parity, pred, s_te),
                eq_odd_gap_1=_safe(metrics.eq_odd_gap, pred, y_te, s_te, 1),
                eq_odd_gap_0=_safe(metrics.eq_odd_gap, pred, y_te, s_te, 0),
            ))
    return results, damage


def _protection_rows(fold, alpha, epoch, config, public_test, out_train, out_test,
                     orig_train, orig_test, san_test, sanitizer, probe_path):
    shift = metrics.decision_shift(orig_test.decision, san_test.decision, orig_test.sensitive)
    common = dict(
        fold=fold, alpha=alpha, scenario="protection", epoch=epoch,
        fid=metrics.fidelity(public_test, out_test),
        diversity=_safe(metrics.diversity, out_test),
        diversity_original=_safe(metrics.diversity, public_test),
        decision_shift=shift["overall"], decision_shift_s0=shift["s=0"],
        decision_shift_s1=shift["s=1"],
    )
    rows = []
    s_test = orig_test.sensitive
    probe_seed = derive_seed(config.seed, fold, alpha, "protection_probe")
    for family in config.families:
        pred = _fit_predict(family, probe_seed, config.probe_params, out_train,
                            orig_train.sensitive, out_test,
                            save_to=probe_path(f"protection_{family}"))
        rows.append(RunResult(classifier=family, ber=_safe(metrics.ber, pred, s_test),
                              sacc=metrics.s_acc(pred, s_test), **common))
    disc_pred = metrics.to_binary(sanitizer.discriminate(out_test))
    rows.append(RunResult(classifier="discriminator", ber=_safe(metrics.ber, disc_pred, s_test),
                          sacc=metrics.s_acc(disc_pred, s_test), **common))
    return rows


def _damage_rows(fold, alpha, encoder, public_test, out_test):
    original = encoder.inverse_transform(public_test)
    sanitized = encoder.inverse_transform(out_test)
    rows = []
    for col in encoder.schema.attributes + [encoder.schema.decision]:
        name = col.name
        if col.kind == "numeric":
            rc = metrics.relative_change(original[name].to_numpy(dtype=np.float64),
                                         sanitized[name].to_numpy(dtype=np.float64))
            stats = {
                "rc_mean": rc.mean(),
                "rc_median": np.median(rc),
                "rc_p75": np.quantile(rc, 0.75),
                "rc_frac_below_0.25": np.mean(rc < 0.25),
                "rc_frac_below_0.5": np.mean(rc < 0.5),
            }
        else:
            stats = {"modified_fraction": metrics.categorical_modified_fraction(
                original[name].to_numpy(), sanitized[name].to_numpy())}
        for stat, value in stats.items():
            rows.append(DamageRow(fold, alpha, name, col.kind, stat, float(value)))
    return rows


@dataclass
class CVReport:
    results: list
    damage: list
    traces: dict

    def summary(self):
        return aggregate(self.results)


def _run_cell(args):
    df, schema, blocks, fold, alpha, config = args
    if alpha is None:
        encoder, _, _ = encode_fold(df, schema, blocks, fold)
        cfg = CVConfig(**{**asdict(config), "scenarios": ("baseline",)})
        results, damage = evaluate_cell(df, encoder, None, blocks, fold, None, cfg)
        return fold, alpha, results, damage, []
    encoder, sanitizer = train_cell(df, schema, blocks, fold, alpha, config)
    try:
        results, damage = evaluate_cell(df, encoder, sanitizer, blocks, fold, alpha, config)
    except FairsanError as exc:
        raise type(exc)(f"fold {fold}, alpha {alpha}: {exc}") from exc
    return fold, alpha, results, damage, sanitizer.trace_


def run_cv(df, schema, alphas, config=None, jobs=1):
    """Train and evaluate a sanitizer for every (fold, alpha) cell.

    ``df`` holds raw string records (as returned by :func:`read_csv`).
    With ``alphas`` empty only the baseline scenario is evaluated.
    """
    config = config or CVConfig()
    blocks = split_folds(len(df), config.n_folds, derive_seed(config.seed, purpose="folds"))
    alpha_list = list(alphas) if alphas else [None]
    cells = [(df, schema, blocks, f, a, config) for f in config.fold_ids() for a in alpha_list]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_cell, cells))
    else:
        outputs = [_run_cell(c) for c in cells]
    results, damage, traces = [], [], {}
    for fold, alpha, res, dmg, trace in outputs:
        results.extend(res)
        damage.extend(dmg)
        traces[(fold, alpha)] = trace
    return CVReport(results=results, damage=damage, traces=traces)


def aggregate(results):
    """Mean and sample standard deviation (N - 1) per (alpha, scenario, classifier, metric).

    Missing values are skipped; a single observation has std 0.
    """
    groups = {}
    for row in results:
        key = (row.alpha, row.scenario, row.classifier)
        for metric in METRIC_FIELDS:
            value = getattr(row, metric)
            if value is None or (isinstance(value, float) and math.isnan(value)):
                continue
            groups.setdefault(key + (metric,), []).append(float(value))
    summary = []
    for (alpha, scenario, classifier, metric), values in groups.items():
        arr = np.array(values)
        summary.append({
            "alpha": alpha, "scenario": scenario, "classifier": classifier, "metric": metric,
            "mean": float(arr.mean()),
            "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
            "n": len(arr),
        })
    summary.sort(key=lambda r: (-1.0 if r["alpha"] is None else r["alpha"], r["scenario"],
                                r["classifier"], r["metric"]))
    return summary


# output files ----------------------------------------------------------

def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_results_csv(path, results):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_FIELDS)
        for row in results:
            writer.writerow([_fmt(getattr(row, f)) for f in RESULT_FIELDS])


def read_results_csv(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for raw in csv.DictReader(fh):
            rows.append(RunResult(
                fold=int(raw["fold"]),
                alpha=float(raw["alpha"]) if raw["alpha"] else None,
                scenario=raw["scenario"], classifier=raw["classifier"], epoch=int(raw["epoch"]),
                **{m: float(raw[m]) if raw[m] else math.nan for m in METRIC_FIELDS},
            ))
    return rows


def long_rows(results):
    """``{fold, alpha, scenario, classifier, metric, value}`` records, NaNs dropped."""
    out = []
    for row in results:
        for metric in METRIC_FIELDS:
            value = getattr(row, metric)
            if isinstance(value, float) and math.isnan(value):
                continue
            out.append({"fold": row.fold, "alpha": row.alpha, "scenario": row.scenario,
                        "classifier": row.classifier, "metric": metric, "value": value})
    return out


def write_long(csv_path, json_path, results):
    rows = long_rows(results)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("fold", "alpha", "scenario", "classifier", "metric", "value"))
        for r in rows:
            writer.writerow([_fmt(r[k]) for k in ("fold", "alpha", "scenario", "classifier",
                                                   "metric", "value")])
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=1)
        fh.write("\n")


def write_damage_csv(path, damage):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("fold", "alpha", "attribute", "kind", "statistic", "value"))
        for d in damage:
            writer.writerow([d.fold, _fmt(d.alpha), d.attribute, d.kind, d.statistic,
                             _fmt(d.value)])


def write_summary_json(path, summary):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"std_estimator": "sample (ddof=1)", "rows": summary}, fh, indent=1)
        fh.write("\n")
