import math

import numpy as np
import pytest

from cellloc.augmenter import (
    _top_k_mask,
    ZERO_CENTERED,
    AugmentConfig,
    AugmentReport,
    GpFitError,
    GpHyperparams,
    augment,
    fit_gp,
    fit_tower,
    kernel,
    kernel_matrix,
    predict,
    predict_tower,
    resample_path,
)
from cellloc.domain import FeatureVector, InvalidInput, LabeledSample, PlanarPoint, SampleSource, TowerRegistry


def dense_oracle(xy, y, probes, ell, noise, mean):
    """GP posterior by explicit matrix inverse, written independently of the Cholesky path."""
    n = len(xy)
    K = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            K[i, j] = math.exp(-((xy[i] - xy[j]) ** 2).sum() / (2 * ell**2))
    Kinv = np.linalg.inv(K + noise * np.eye(n))
    mu, var = [], []
    for p in probes:
        ks = np.array([math.exp(-((p - q) ** 2).sum() / (2 * ell**2)) for q in xy])
        mu.append(ks @ Kinv @ (y - mean) + mean)
        var.append(1.0 - ks @ Kinv @ ks)
    return np.array(mu), np.array(var)


def test_kernel_examples():
    p = PlanarPoint(3, 4)
    assert kernel(p, p, 7.0) == 1.0
    assert kernel(PlanarPoint(0, 0), PlanarPoint(30, 40), 50.0) == pytest.approx(math.exp(-0.5), abs=1e-12)
    assert kernel(PlanarPoint(0, 0), PlanarPoint(150, 0), 50.0) == pytest.approx(0.01111, abs=1e-5)


def test_kernel_matrix_symmetric_unit_diagonal(rng):
    xy = rng.uniform(0, 500, (40, 2))
    K = kernel_matrix(xy, xy, 80.0)
    assert np.abs(K - K.T).max() <= 1e-12
    assert np.all(np.diag(K) == 1.0)
    assert np.all((K > 0) & (K <= 1))


def test_single_point_alpha_zero():
    gp = fit_gp(np.array([[0.0, 0.0]]), np.array([-70.0]), 100.0, 0.0)
    assert gp.alpha.tolist() == [0.0]
    assert gp.mean == -70.0


def test_noiseless_interpolation_far_points():
    xy = np.array([[0.0, 0.0], [1000.0, 0.0]])
    y = np.array([-60.0, -90.0])
    gp = fit_gp(xy, y, 100.0, 0.0)
    m, v = predict(gp, xy)
    np.testing.assert_allclose(m, y, atol=1e-8)
    np.testing.assert_allclose(v, 0.0, atol=1e-10)


def test_far_probe_reverts_to_prior():
    xy = np.array([[0.0, 0.0], [10.0, 5.0]])
    gp = fit_gp(xy, np.array([-60.0, -64.0]), 20.0, 0.1)
    m, v = predict(gp, np.array([[1e5, 1e5]]))
    assert m[0] == pytest.approx(-62.0, abs=1e-12)
    assert v[0] == pytest.approx(1.0, abs=1e-12)


def test_midpoint_matches_oracle():
    xy = np.array([[0.0, 0.0], [80.0, 0.0]])
    y = np.array([-60.0, -80.0])
    gp = fit_gp(xy, y, 50.0, 0.2)
    m, v = predict(gp, np.array([[40.0, 0.0]]))
    om, ov = dense_oracle(xy, y, np.array([[40.0, 0.0]]), 50.0, 0.2, y.mean())
    assert abs(m[0] - om[0]) < 1e-8 and abs(v[0] - ov[0]) < 1e-8


@pytest.mark.parametrize("seed", range(20))
def test_predict_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 51))
    xy = rng.uniform(0, 400, (n, 2))
    y = rng.uniform(-110, -50, n)
    ell = float(rng.uniform(30, 150))
    noise = float(rng.uniform(0.05, 2.0))
    probes = rng.uniform(-50, 450, (10, 2))
    gp = fit_gp(xy, y, ell, noise)
    m, v = predict(gp, probes)
    om, ov = dense_oracle(xy, y, probes, ell, noise, y.mean())
    np.testing.assert_allclose(m, om, rtol=0, atol=1e-8)
    np.testing.assert_allclose(v, np.maximum(ov, 0), rtol=0, atol=1e-8)


def test_zero_centered_mode():
    xy = np.array([[0.0, 0.0]])
    gp = fit_gp(xy, np.array([2.0]), 10.0, 0.0, ZERO_CENTERED)
    m, _ = predict(gp, np.array([[1e6, 0.0]]))
    assert m[0] == 0.0


def test_variance_non_negative(rng):
    xy = rng.uniform(0, 100, (30, 2))
    gp = fit_gp(xy, rng.normal(size=30), 40.0, 1e-6)
    _, v = predict(gp, np.vstack([xy, rng.uniform(0, 100, (50, 2))]))
    assert np.all(v >= 0)


def test_factorization_failure_diagnostics():
    xy = np.array([[0.0, 0.0], [0.0, 0.0]])
    with pytest.raises(GpFitError, match="cond"):
        fit_gp(xy, np.array([1.0, 2.0]), 10.0, 0.0)


def test_hyperparam_validation():
    with pytest.raises(InvalidInput):
        GpHyperparams(length_scale=0)
    with pytest.raises(InvalidInput):
        GpHyperparams(noise_variance=-1)
    with pytest.raises(InvalidInput):
        AugmentConfig(path_spacing_m=0)


def sample(x, y, rss, bits, src=SampleSource.SYNCHRONIZED):
    return LabeledSample(FeatureVector(rss, bits), PlanarPoint(x, y), src)


def test_unmodeled_tower_reads_unheard():
    data = [sample(0, 0, [-70, 0], [1, 0])]
    tgp = fit_tower(data, 1, GpHyperparams())
    assert not tgp.modeled
    m, v, b, _ = predict_tower(tgp, np.array([[0.0, 0.0]]))
    assert m[0] == 0 and b[0] == 0 and v[0] == 1


def test_resample_path_spacing():
    pts = [PlanarPoint(0, 0), PlanarPoint(100, 0), PlanarPoint(100, 50)]
    out = resample_path(pts, 10.0)
    assert len(out) == 16
    steps = np.hypot(*np.diff(out, axis=0).T)
    np.testing.assert_allclose(steps[:10], 10.0)


REG1 = TowerRegistry(("T0",))


def line_trace(n=300, step=5.0):
    return [PlanarPoint(i * step, 0.0) for i in range(n)]


def test_augment_disabled_returns_input():
    data = [sample(i * 10.0, 0, [-70], [1]) for i in range(5)]
    out = augment(data, line_trace(), AugmentConfig(n_augmented=0), GpHyperparams(), REG1)
    assert out == data


def test_augment_counts():
    data = [sample(i * 30.0, 0, [-70 - i * 0.1], [1]) for i in range(50)]
    trace = line_trace(3000, 1.0)  # 3 km, 300 locations at 10 m spacing
    rep = AugmentReport()
    out = augment(data, trace, AugmentConfig(n_augmented=1000), GpHyperparams(), REG1, report=rep)
    assert rep.available_locations == 300 and len(out) == 350
    long_trace = line_trace(20001, 1.0)
    out = augment(data, long_trace, AugmentConfig(n_augmented=1000), GpHyperparams(), REG1)
    assert len(out) == len(data) + 1000
    assert sum(s.source is SampleSource.AUGMENTED for s in out) == 1000
    assert out[: len(data)] == data


def test_augment_constant_field():
    rng = np.random.default_rng(0)
    data = [sample(float(x), float(y), [-70.0], [1]) for x, y in rng.uniform(0, 500, (40, 2))]
    out = augment(data, line_trace(100, 5.0), AugmentConfig(n_augmented=30), GpHyperparams(), REG1)
    synth = [s for s in out if s.source is SampleSource.AUGMENTED]
    assert len(synth) == 30
    for s in synth:
        assert abs(s.features.rss[0] - (-70.0)) < 1e-6
        assert s.features.active_bits[0] == 1


def test_augment_empty_sparse_warns():
    rep = AugmentReport()
    assert augment([], line_trace(), AugmentConfig(), GpHyperparams(), REG1, report=rep) == []
    assert rep.empty_input_warnings == 1


def test_augment_presence_and_floor():
    # tower T1 only heard on the left half; T0 everywhere but weak on the right
    reg = TowerRegistry(("T0", "T1"))
    data = []
    for x in range(0, 1000, 10):
        left = x < 500
        data.append(sample(float(x), 0.0, [-60.0 if left else -112.0, -80.0 if left else 0.0],
                           [1, 1 if left else 0]))
    hp = GpHyperparams(length_scale=30.0)
    out = augment(data, line_trace(200, 5.0), AugmentConfig(n_augmented=200, path_spacing_m=5.0, match_record_shape=False),
                  hp, reg)
    synth = [s for s in out if s.source is SampleSource.AUGMENTED]
    for s in synth:
        fv = s.features
        if s.location.x < 400:
            assert fv.rss[1] != 0 and fv.active_bits[1] == 1
        if s.location.x > 600:
            assert fv.rss[1] == 0 and fv.active_bits[1] == 0
            assert fv.rss[0] == 0  # below the -110 dBm floor


def test_augment_matches_record_shape():
    # every record hears the two strongest of three towers and marks the strongest active
    reg = TowerRegistry(("T0", "T1", "T2"))
    data = []
    for x in range(0, 1000, 10):
        levels = np.array([-60.0 - 0.04 * x, -70.0, -100.0 + 0.04 * x])
        top = np.argsort(-levels)[:2]
        rss = [levels[j] if j in top else 0.0 for j in range(3)]
        bits = [1 if j == top[0] else 0 for j in range(3)]
        data.append(sample(float(x), 0.0, rss, bits))
    out = augment(data, line_trace(200, 5.0), AugmentConfig(n_augmented=150, path_spacing_m=5.0),
                  GpHyperparams(length_scale=50.0), reg)
    for s in out[len(data):]:
        assert (s.features.rss != 0).sum() <= 2
        assert s.features.active_bits.sum() == 1
        heard = np.flatnonzero(s.features.rss)
        assert s.features.active_bits[heard].sum() == 1


def test_top_k_mask():
    vals = np.array([[3.0, 1.0, 2.0, 5.0], [1.0, 1.0, 1.0, 1.0]])
    allowed = np.array([[True, True, True, False], [False, True, False, False]])
    np.testing.assert_array_equal(_top_k_mask(vals, allowed, 2),
                                  [[True, False, True, False], [False, True, False, False]])


def test_augment_does_not_mutate_and_is_deterministic():
    data = [sample(i * 20.0, 0, [-70 - i], [1]) for i in range(20)]
    before = [(s.location, s.features.rss.copy()) for s in data]
    cfg = AugmentConfig(n_augmented=25, seed=3)
    a = augment(data, line_trace(), cfg, GpHyperparams(), REG1)
    b = augment(data, line_trace(), cfg, GpHyperparams(), REG1)
    assert [(s.location, s.features) for s in a] == [(s.location, s.features) for s in b]
    assert [(s.location, s.features.rss) for s in data] == before
