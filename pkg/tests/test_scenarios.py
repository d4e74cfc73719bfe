import math
from dataclasses import asdict

import numpy as np
import pytest

from fairsan.data import fold_indices, split_folds
from fairsan.exceptions import UsageError
from fairsan.scenarios import (METRIC_FIELDS, RESULT_FIELDS, SCENARIOS, CVConfig, RunResult, Split,
                               aggregate, compose, default_alphas, derive_seed, encode_fold,
                               evaluate_cell,
                               read_results_csv, run_cv, train_cell, write_results_csv)
from fairsan.synthetic import leak_schema, make_leak_dataset

TINY = dict(epochs=2, batch_size=40, disc_ratio=2, san_hidden=(16,), disc_hidden=(16,),
            probe_families=("linear_hinge",))
PROBES = {"mlp": {"epochs": 5}, "gb_stumps": {"n_estimators": 10},
          "linear_hinge": {"max_iter": 200}}


def tiny_config(**kw):
    return CVConfig(n_folds=5, folds=[0], seed=4, sanitizer=TINY, probe_params=PROBES, **kw)


@pytest.fixture(scope="module")
def data():
    df = make_leak_dataset(200, seed=1)
    return df, leak_schema(df)


@pytest.fixture(scope="module")
def report(data):
    df, schema = data
    return run_cv(df, schema, [0.0, 1.0], tiny_config())


def splits():
    def mk(tag):
        return Split(np.full((3, 2), tag), np.array([tag] * 3), np.array([0, 1, 0]))
    return mk(0), mk(1), mk(2), mk(3)  # original train/test, sanitized train/test


@pytest.mark.parametrize("scenario, expected", [
    ("baseline", (0, 0, 1, 1)),
    ("s1", (2, 2, 3, 3)),
    ("s2", (2, 0, 3, 1)),
    ("s3", (2, 2, 1, 1)),
    ("s4", (0, 0, 3, 1)),
])
def test_compose(scenario, expected):
    Xtr, ytr, Xte, yte = compose(scenario, *splits())
    assert (Xtr[0, 0], ytr[0], Xte[0, 0], yte[0]) == expected


def test_baseline_needs_no_sanitized_data():
    o_tr, o_te, _, _ = splits()
    compose("baseline", o_tr, o_te)
    assert not SCENARIOS["baseline"].uses_sanitized
    with pytest.raises(UsageError):
        compose("s1", o_tr, o_te)


def test_fold_mismatch_rejected():
    o_tr, o_te, s_tr, _ = splits()
    short = Split(np.zeros((2, 2)), np.zeros(2), np.zeros(2))
    with pytest.raises(UsageError):
        compose("s4", o_tr, o_te, s_tr, short)


def row(alpha, value, fold=0):
    return RunResult(fold=fold, alpha=alpha, scenario="s1", classifier="mlp", yacc=value)


def test_aggregate_examples():
    summary = {(r["alpha"], r["metric"]): r for r in aggregate([row(0.5, 0.1), row(0.5, 0.3, 1),
                                                                 row(0.9, 0.7)])}
    assert summary[(0.5, "yacc")]["mean"] == pytest.approx(0.2)
    assert summary[(0.5, "yacc")]["std"] == pytest.approx(0.1414, abs=1e-4)
    assert summary[(0.9, "yacc")]["std"] == 0.0
    assert (0.5, "ber") not in summary  # NaNs are skipped


def test_aggregate_matches_recomputation(report):
    summary = aggregate(report.results)
    for entry in summary:
        values = [getattr(r, entry["metric"]) for r in report.results
                  if (r.alpha, r.scenario, r.classifier) ==
                  (entry["alpha"], entry["scenario"], entry["classifier"])]
        values = [v for v in values if not math.isnan(v)]
        mean = sum(values) / len(values)
        assert entry["mean"] == pytest.approx(mean, abs=1e-12)
        assert entry["n"] == len(values)


def test_default_alphas():
    assert default_alphas() == [0.0, 0.6, 0.8, 0.9, 0.95, 0.975, 0.9875, 1.0]


def test_derive_seed():
    a = derive_seed(0, 1, 0.5, "x")
    assert a == derive_seed(0, 1, 0.5, "x")
    others = {derive_seed(1, 1, 0.5, "x"), derive_seed(0, 2, 0.5, "x"),
              derive_seed(0, 1, 0.6, "x"), derive_seed(0, 1, 0.5, "y"), derive_seed(0, 1, None, "x")}
    assert a not in others and len(others) == 5
    assert 0 <= a < 2**62


def test_row_counts(report):
    # per alpha: 5 scenarios x 3 families plus 3 probes and the discriminator
    assert len(report.results) == 2 * (5 * 3 + 4)
    assert set(report.traces) == {(0, 0.0), (0, 1.0)}
    protection = [r for r in report.results if r.scenario == "protection"]
    assert {r.classifier for r in protection} == {"mlp", "gb_stumps", "linear_hinge",
                                                  "discriminator"}
    for r in protection:
        assert 0 <= r.ber <= 1 and 0 <= r.fid <= 1 and r.epoch >= 0


def test_baseline_independent_of_alpha(report):
    base = {}
    for r in report.results:
        if r.scenario == "baseline":
            vals = tuple(getattr(r, m) for m in METRIC_FIELDS)
            base.setdefault(r.classifier, set()).add(tuple("nan" if math.isnan(v) else v
                                                           for v in vals))
    assert all(len(v) == 1 for v in base.values())


def test_damage_rows(report):
    stats = {(d.attribute, d.statistic) for d in report.damage}
    assert ("x4", "modified_fraction") in stats
    assert ("x2", "rc_median") in stats
    assert ("decision", "modified_fraction") in stats
    assert not any(d.attribute == "group" for d in report.damage)


def test_baseline_only_run(data):
    df, schema = data
    rep = run_cv(df, schema, [], tiny_config())
    assert {r.scenario for r in rep.results} == {"baseline"}
    assert all(r.alpha is None for r in rep.results)


def test_rerun_byte_identical(data, report, tmp_path):
    df, schema = data
    again = run_cv(df, schema, [0.0, 1.0], tiny_config())
    write_results_csv(tmp_path / "a.csv", report.results)
    write_results_csv(tmp_path / "b.csv", again.results)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_results_csv_roundtrip(report, tmp_path):
    write_results_csv(tmp_path / "r.csv", report.results)
    header = (tmp_path / "r.csv").read_text().splitlines()[0].split(",")
    assert tuple(header) == RESULT_FIELDS
    back = read_results_csv(tmp_path / "r.csv")
    for a, b in zip(report.results, back):
        for k, v in asdict(a).items():
            w = getattr(b, k)
            assert (isinstance(v, float) and math.isnan(v) and math.isnan(w)) or v == w


def test_no_test_fold_leakage(data, tmp_path):
    df, schema = data
    config = tiny_config()
    blocks = split_folds(len(df), 5, 9)
    train, val, test = fold_indices(blocks, 0)
    assert not set(test) & (set(train) | set(val))
    enc_a, san_a = train_cell(df, schema, blocks, 0, 0.5, config)
    # scramble the test fold: nothing fitted may change
    poisoned = df.copy()
    poisoned.loc[poisoned.index[test], "x2"] = "1000.0"
    poisoned.loc[poisoned.index[test], "x4"] = "c0"
    enc_b, san_b = train_cell(poisoned, schema, blocks, 0, 0.5, config)
    assert enc_a.to_dict() == enc_b.to_dict()
    assert san_a.checkpoints_ == san_b.checkpoints_
    enc, X, _ = encode_fold(df, schema, blocks, 0)
    x2 = df["x2"].astype(float).to_numpy()
    assert enc.numeric_["x2"]["max"] == x2[train].max()
    # every probe is fitted on training records only
    poisoned.loc[poisoned.index[test], "x2"] = repr(float(x2[train].max()))
    for name, frame in (("a", df), ("b", poisoned)):
        evaluate_cell(frame, enc_a, san_a, blocks, 0, 0.5, config, probe_dir=tmp_path / name)
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(files) == 5 * 3 + 3
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_parallel_matches_serial(data, report):
    df, schema = data
    par = run_cv(df, schema, [0.0, 1.0], tiny_config(), jobs=2)
    # repr, since NaN fields never compare equal
    assert [repr(r) for r in par.results] == [repr(r) for r in report.results]
