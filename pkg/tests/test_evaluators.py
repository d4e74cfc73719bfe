import json

import numpy as np
import pytest

from fairsan.evaluators import (FAMILIES, LinearHingeProbe, StumpBoostingProbe, make_probe,
                                probe_from_dict, probe_to_dict)
from fairsan.exceptions import DegenerateLabelError, UsageError
from fairsan.synthetic import make_leak_dataset, leak_schema
from fairsan.data import TabularEncoder


def separable(n=60, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.random(n)
    y = (x > 0.5).astype(int)
    # keep a clear margin around the boundary
    x = np.where(y == 1, 0.6 + 0.4 * x, 0.4 * x)
    return x[:, None], y


@pytest.mark.parametrize("family", FAMILIES)
def test_separable_data_fit_exactly(family):
    X, y = separable()
    probe = make_probe(family, random_state=0, **({"epochs": 200} if family == "mlp" else {}))
    probe.fit(X, y)
    np.testing.assert_array_equal(probe.predict(X), y)
    proba = probe.predict_proba(X)
    assert proba.shape == (len(y), 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)


def test_single_stump_on_label_column():
    rng = np.random.default_rng(1)
    y = np.array([0, 1] * 20)
    X = np.column_stack([rng.random(40), y, rng.random(40)])
    probe = StumpBoostingProbe(n_estimators=1).fit(X, y)
    assert len(probe.stumps_) == 1 and probe.stumps_[0][0] == 1
    assert probe.stumps_[0][1] == 0.5
    np.testing.assert_array_equal(probe.predict(X), y)


@pytest.mark.parametrize("family", FAMILIES)
def test_random_labels_near_chance(family):
    accs = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.random((200, 5))
        y = rng.integers(0, 2, 200)
        probe = make_probe(family, random_state=seed).fit(X[:100], y[:100])
        accs.append(np.mean(probe.predict(X[100:]) == y[100:]))
    assert 0.35 <= min(accs) and max(accs) <= 0.65


def test_constant_features_give_constant_prediction():
    X = np.full((30, 3), 0.4)
    y = np.array([1] * 20 + [0] * 10)
    probe = StumpBoostingProbe().fit(X, y)
    pred = probe.predict(np.random.default_rng(0).random((10, 3)))
    assert len(set(pred.tolist())) == 1


def test_negated_linear_weights_flip_predictions():
    rng = np.random.default_rng(2)
    X = rng.random((80, 4))
    y = (X[:, 0] + X[:, 1] > 1).astype(int)
    probe = LinearHingeProbe().fit(X, y)
    before = probe.predict(X)
    assert np.all(probe.decision_function(X) != 0)
    probe.coef_, probe.intercept_ = -probe.coef_, -probe.intercept_
    np.testing.assert_array_equal(probe.predict(X), 1 - before)


@pytest.mark.parametrize("family", FAMILIES)
def test_deterministic(family):
    rng = np.random.default_rng(3)
    X = rng.random((100, 4))
    y = rng.integers(0, 2, 100)
    a = make_probe(family, random_state=7).fit(X, y).predict_proba(X)
    b = make_probe(family, random_state=7).fit(X, y).predict_proba(X)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("family", FAMILIES)
def test_degenerate_labels(family):
    X = np.random.default_rng(0).random((10, 2))
    with pytest.raises(DegenerateLabelError):
        make_probe(family).fit(X, np.ones(10, int))
    with pytest.raises(DegenerateLabelError):
        make_probe(family).fit(X, np.array([1] + [0] * 9))


@pytest.mark.parametrize("family", FAMILIES)
def test_layout_mismatch(family):
    X, y = separable()
    probe = make_probe(family).fit(X, y)
    with pytest.raises(UsageError):
        probe.predict(np.zeros((3, 2)))


def test_unknown_family():
    with pytest.raises(UsageError):
        make_probe("svm")


@pytest.mark.parametrize("family", FAMILIES)
def test_serialization_roundtrip(family):
    rng = np.random.default_rng(4)
    X = rng.random((60, 3))
    y = (X[:, 2] > 0.4).astype(int)
    probe = make_probe(family, random_state=1).fit(X, y)
    clone = probe_from_dict(json.loads(json.dumps(probe_to_dict(probe))))
    assert clone.predict_proba(X).tobytes() == probe.predict_proba(X).tobytes()


@pytest.mark.parametrize("family", FAMILIES)
def test_probes_recover_leaked_attribute(family):
    df = make_leak_dataset(600, seed=0)
    enc = TabularEncoder(leak_schema(df)).fit(df)
    Z = enc.transform(df)
    X, s = Z[:, :-1], Z[:, -1].astype(int)
    probe = make_probe(family, random_state=0).fit(X[:400], s[:400])
    pred = probe.predict(X[400:])
    assert np.mean(pred == s[400:]) >= 0.99
