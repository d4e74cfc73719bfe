import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairsan import metrics
from fairsan.data import TabularEncoder
from fairsan.exceptions import ConfigError, TrainingDivergenceError, UndefinedMetricError, UsageError
from fairsan.neural import Network
from fairsan.sanitizer import (EpochRecord, Sanitizer, alpha_progression, heuristic_a,
                               heuristic_a_score, read_trace, sanitizer_loss, soft_ber,
                               soft_ber_grad, write_trace)
from fairsan.synthetic import leak_schema, make_leak_dataset

FAST = dict(epochs=2, batch_size=50, disc_ratio=3, san_hidden=(16,), disc_hidden=(16,),
            probe_families=("linear_hinge",))


@pytest.fixture(scope="module")
def leak():
    df = make_leak_dataset(300, seed=0)
    Z = TabularEncoder(leak_schema(df)).fit(df).transform(df)
    return Z[:, :-1], Z[:, -1]


@pytest.fixture(scope="module")
def fitted(leak):
    X, s = leak
    return Sanitizer(alpha=0.5, random_state=3, **FAST).fit(X[:200], s[:200], X[200:], s[200:])


def test_soft_ber_examples():
    assert soft_ber([0.5, 0.5, 0.5], [0, 1, 1]) == 0.5
    assert soft_ber([0, 1, 1, 0], [0, 1, 1, 0]) == 0.0
    assert soft_ber([0.2, 0.9], [0, 1]) == pytest.approx(0.15)
    with pytest.raises(UndefinedMetricError):
        soft_ber([0.1, 0.2], [1, 1])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_soft_ber_matches_hard_ber_on_binary_outputs(seed):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 2, 30)
    s[:2] = [0, 1]
    pred = rng.integers(0, 2, 30)
    assert soft_ber(pred.astype(float), s) == pytest.approx(metrics.ber(pred, s), abs=1e-15)
    p = rng.random(30)
    assert 0.0 <= soft_ber(p, s) <= 1.0
    h = 1e-6
    num = np.array([(soft_ber(p + h * e, s) - soft_ber(p - h * e, s)) / (2 * h)
                    for e in np.eye(30)])
    np.testing.assert_allclose(soft_ber_grad(p, s), num, atol=1e-8)


def test_sanitizer_loss_examples():
    # alpha 0.5, |A - A'| = 0.4, soft BER 0.3
    orig = np.array([[0.9], [0.1]])
    san = np.array([[0.5], [0.5]])
    comps = sanitizer_loss(orig, san, [0.2, 0.6], [0, 1], 0.5)
    np.testing.assert_allclose(comps, [0.2, 0.1])


def test_sanitizer_loss_alpha_extremes():
    rng = np.random.default_rng(0)
    orig, san = rng.random((6, 3)), rng.random((6, 3))
    comps = sanitizer_loss(orig, san, rng.random(6), [0, 1] * 3, 1.0)
    assert not comps[:3].any() and comps[3] != 0
    comps = sanitizer_loss(orig, orig, rng.random(6), [0, 1] * 3, 0.0)
    assert not comps.any()
    # single-group batch drops the adversarial term
    assert sanitizer_loss(orig, san, rng.random(6), [1] * 6, 0.7)[-1] == 0.0
    with pytest.raises(ConfigError):
        sanitizer_loss(orig, san, rng.random(6), [0, 1] * 3, 1.5)
    with pytest.raises(UsageError):
        sanitizer_loss(orig, san[:, :2], rng.random(6), [0, 1] * 3, 0.5)


def rec(i, ber, fid):
    return EpochRecord(epoch=i, ber_min=ber, sacc=0.5, fid=fid)


def test_heuristic_a_examples():
    assert heuristic_a([rec(0, 0.3, 0.9), rec(1, 0.5, 1.0), rec(2, 0.45, 0.99)]) == 1
    assert heuristic_a_score(0.5, 1.0) == 0.0
    trace = [rec(0, 0.30, 0.99), rec(1, 0.48, 0.95)]
    assert heuristic_a_score(0.30, 0.99) == pytest.approx(0.0401)
    assert heuristic_a_score(0.48, 0.95) == pytest.approx(0.0029)
    assert heuristic_a(trace) == 1
    assert heuristic_a([rec(i, 0.4, 0.9) for i in range(5)]) == 0
    with pytest.raises(UsageError):
        heuristic_a([])


def test_heuristic_a_literal_flag():
    # the printed formula rewards low fidelity
    trace = [rec(0, 0.5, 0.99), rec(1, 0.5, 0.2)]
    assert heuristic_a(trace) == 0
    assert heuristic_a(trace, literal=True) == 1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=40))
def test_heuristic_a_matches_distance_scoring(points):
    trace = [rec(i, b, f) for i, (b, f) in enumerate(points)]
    scores = [(b - 0.5) ** 2 + (1 - f) ** 2 for b, f in points]
    best = min(scores)
    assert heuristic_a(trace) == scores.index(best)


def test_alpha_progression():
    assert alpha_progression(6) == [0.6, 0.8, 0.9, 0.95, 0.975, 0.9875]
    values = alpha_progression(30)
    assert all(a < b for a, b in zip(values, values[1:]))
    assert values[-1] <= 1.0
    with pytest.raises(UsageError):
        alpha_progression(0)


def test_trace_and_checkpoints(fitted):
    assert len(fitted.trace_) == 2 == len(fitted.checkpoints_)
    assert fitted.best_epoch_ == heuristic_a(fitted.trace_)
    for r in fitted.trace_:
        assert 0 <= r.ber_min <= 1 and 0 <= r.fid <= 1
    assert fitted.loss_trace_[0].shape == (fitted.n_features_in_ + 1,)


def test_transform_deterministic_and_shaped(fitted, leak):
    X, s = leak
    a = fitted.transform(X, s, noise_seed=11)
    b = fitted.transform(X, s, noise_seed=11)
    assert a.tobytes() == b.tobytes()
    # output is [A', Y']: no sensitive column
    assert a.shape == X.shape
    assert a.min() >= 0.0 and a.max() <= 1.0
    assert not np.array_equal(a, fitted.transform(X, s, noise_seed=12))


def test_layout_mismatch(fitted, leak):
    X, s = leak
    with pytest.raises(UsageError):
        fitted.transform(X[:, :-1], s)
    with pytest.raises(UsageError):
        fitted.transform(X, s[:-1])


def test_save_load_bit_identical(fitted, leak, tmp_path):
    X, s = leak
    fitted.save(tmp_path)
    loaded = Sanitizer.load(tmp_path)
    assert loaded.best_epoch_ == fitted.best_epoch_
    assert loaded.transform(X, s, 5).tobytes() == fitted.transform(X, s, 5).tobytes()
    assert loaded.trace_ == fitted.trace_
    other = Sanitizer.load(tmp_path, epoch=0)
    assert other.best_epoch_ == 0
    np.testing.assert_array_equal(loaded.discriminate(X), fitted.discriminate(X))


def test_trace_csv_roundtrip(tmp_path):
    trace = [EpochRecord(0, 0.1, 0.9, 0.95, 0.2), EpochRecord(1, 1 / 3, 0.6, 0.8)]
    write_trace(tmp_path / "t.csv", trace)
    back = read_trace(tmp_path / "t.csv")
    assert back[0] == trace[0]
    assert back[1].ber_min == 1 / 3 and np.isnan(back[1].disc_ber)


def test_fit_is_deterministic(leak):
    X, s = leak
    a = Sanitizer(alpha=0.7, random_state=1, **FAST).fit(X, s)
    b = Sanitizer(alpha=0.7, random_state=1, **FAST).fit(X, s)
    assert a.checkpoints_ == b.checkpoints_
    assert a.trace_ == b.trace_


def test_alpha_zero_improves_fidelity(leak):
    X, s = leak
    est = Sanitizer(alpha=0.0, epochs=3, batch_size=50, disc_ratio=1, san_hidden=(32,),
                    disc_hidden=(8,), san_lr=1e-3, probe_families=("linear_hinge",),
                    selection="last", random_state=0)
    est.fit(X, s)
    seed = int(np.random.SeedSequence(0).spawn(5)[0].generate_state(1, dtype=np.uint64)[0] >> 1)
    init = Network.build([X.shape[1] + 4, 32, X.shape[1]], "relu", "leaky_relu", seed=seed)
    assert init.parameters()[0].tobytes() != est.network_.parameters()[0].tobytes()
    before = metrics.fidelity(X, est._sanitize_with(init, X, s, 0))
    after = metrics.fidelity(X, est.transform(X, s, 0))
    assert after >= before


def test_round_robin_schedule_runs(leak):
    X, s = leak
    est = Sanitizer(alpha=0.5, loss_schedule="round_robin", random_state=0,
                    **{**FAST, "epochs": 1}).fit(X[:100], s[:100])
    assert np.isfinite(est.transform(X, s)).all()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported_with_context(leak):
    X, s = leak
    with pytest.raises(TrainingDivergenceError, match="epoch=0"):
        Sanitizer(san_lr=np.inf, **FAST).fit(X[:100], s[:100])


@pytest.mark.parametrize("bad", [dict(alpha=1.2), dict(disc_output="tanh"), dict(batch_size=0),
                                 dict(loss_schedule="x"), dict(probe_families=("svm",)),
                                 dict(selection="best")])
def test_bad_params(bad, leak):
    X, s = leak
    with pytest.raises(ConfigError):
        Sanitizer(**{**FAST, **bad}).fit(X[:50], s[:50])


def test_unfitted_transform(leak):
    X, s = leak
    with pytest.raises(Exception):
        Sanitizer().transform(X, s)
