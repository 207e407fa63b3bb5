import numpy as np
import pytest
from scipy.stats import mannwhitneyu

import trajood.scoring as scoring
from trajood.errors import InsufficientTrajectoryError, InvalidArgumentError
from trajood.predictors import AnalyticPredictor, GaussianMixtureDataModel
from trajood.scoring import (compute_score, minmax_rescale, mse_trajectory, read_score_table,
                             ssim_map, write_score_table)
from trajood.trajectory import STOCHASTIC, TrajectoryConfig, TrajectoryRecord, stochastic_forward

from oracles import scalar_score, scalar_ssim


def record(pred, truth):
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    n, tp = pred.shape[:2]
    return TrajectoryRecord(tuple(str(i) for i in range(n)), np.arange(1, tp + 1), pred, truth)


def test_mse_examples():
    z = np.zeros((1, 2, 1, 1, 1))
    np.testing.assert_array_equal(mse_trajectory(record(z, z)), 0)
    np.testing.assert_array_equal(mse_trajectory(record(np.full_like(z, 3.0), np.full_like(z, 1.0))), 4)


def test_mse_matches_scalar_loop(rng):
    p, q = rng.normal(size=(2, 3, 2, 4, 4)), rng.normal(size=(2, 3, 2, 4, 4))
    out = mse_trajectory(record(p, q))
    for idx in np.ndindex(p.shape):
        assert out[idx] == (p[idx] - q[idx]) ** 2


def test_ssim_identity_and_symmetry(rng):
    x, y = rng.uniform(size=(5, 3, 16, 16)), rng.uniform(size=(5, 3, 16, 16))
    np.testing.assert_allclose(ssim_map(x, x), 1.0, atol=1e-6)
    np.testing.assert_allclose(ssim_map(x, y), ssim_map(y, x), atol=1e-6)
    s = ssim_map(x, y)
    assert s.min() >= -1 and s.max() <= 1


def test_ssim_matches_scalar_reference(rng):
    x, y = rng.uniform(size=(1, 1, 12, 13)), rng.uniform(size=(1, 1, 12, 13))
    np.testing.assert_allclose(ssim_map(x, y, rescale=False)[0, 0], scalar_ssim(x[0, 0], y[0, 0]),
                               rtol=1e-9, atol=1e-12)


def test_ssim_anticorrelated_is_negative(rng):
    x = rng.uniform(size=(1, 1, 16, 16))
    assert ssim_map(x, 1.0 - x).mean() < 0


@pytest.mark.parametrize("a,b", [(0.2, 0.2), (0.0, 1.0), (0.3, 0.7), (0.9, 0.1)])
def test_ssim_constant_closed_form(a, b):
    x, y = np.full((1, 1, 11, 11), a), np.full((1, 1, 11, 11), b)
    expected = (2 * a * b + 1e-4) / (a * a + b * b + 1e-4)
    np.testing.assert_allclose(ssim_map(x, y, rescale=False), expected, rtol=0, atol=1e-12)


def test_ssim_window_too_large():
    with pytest.raises(InvalidArgumentError, match="window"):
        ssim_map(np.zeros((1, 1, 8, 8)), np.zeros((1, 1, 8, 8)))


def test_minmax_flat_sample_maps_to_zero():
    x = np.stack([np.full((1, 2, 2), 5.0), np.arange(4.0).reshape(1, 2, 2)])
    out = minmax_rescale(x)
    np.testing.assert_array_equal(out[0], 0)
    np.testing.assert_array_equal(out[1].ravel(), [0, 1 / 3, 2 / 3, 1])


def test_perfect_predictor_scores_zero(rng):
    e = rng.normal(size=(2, 4, 1, 12, 12))
    s = compute_score(rng.uniform(-1, 1, (2, 1, 12, 12)), record(e, e))
    np.testing.assert_array_equal(s, 0)


def test_single_pixel_two_step_expansion():
    # predicted (a1, a2), truth 0, weight 1: s_p = a1^2p + a2^2p, s_{p+3} = a2^2p - a1^2p
    a1, a2 = 0.5, -1.5
    rec = record(np.array([a1, a2]).reshape(1, 2, 1, 1, 1), np.zeros((1, 2, 1, 1, 1)))
    s = compute_score(np.zeros((1, 1, 1, 1)), rec, use_ssim=False)[0]
    for p in (1, 2, 3):
        assert s[p - 1] == pytest.approx(a1 ** (2 * p) + a2 ** (2 * p), rel=1e-15)
        assert s[p + 2] == pytest.approx(a2 ** (2 * p) - a1 ** (2 * p), rel=1e-15)


@pytest.mark.parametrize("use_error", [True, False])
@pytest.mark.parametrize("use_ssim", [True, False])
def test_score_matches_scalar_reference(rng, use_error, use_ssim):
    x0 = rng.uniform(-1, 1, (2, 2, 11, 12))
    p, q = rng.normal(size=(2, 3, 2, 11, 12)), rng.normal(size=(2, 3, 2, 11, 12))
    got = compute_score(x0, record(p, q), use_error, use_ssim)
    for i in range(2):
        np.testing.assert_allclose(got[i], scalar_score(x0[i], p[i], q[i], use_error, use_ssim), rtol=1e-9)


def test_unit_ssim_gives_zero_score(rng, monkeypatch):
    monkeypatch.setattr(scoring, "ssim_map", lambda *a, **k: np.ones((1, 1, 12, 12)))
    p = rng.normal(size=(1, 3, 1, 12, 12))
    np.testing.assert_array_equal(compute_score(np.zeros((1, 1, 12, 12)), record(p, 0 * p)), 0)


def test_zero_ssim_equals_unweighted(rng, monkeypatch):
    x0 = rng.uniform(-1, 1, (2, 1, 12, 12))
    p, q = rng.normal(size=(2, 3, 1, 12, 12)), rng.normal(size=(2, 3, 1, 12, 12))
    plain = compute_score(x0, record(p, q), use_ssim=False)
    monkeypatch.setattr(scoring, "ssim_map", lambda *a, **k: np.zeros_like(x0))
    np.testing.assert_array_equal(compute_score(x0, record(p, q)), plain)


def test_error_scaling_is_homogeneous(rng):
    x0 = rng.uniform(-1, 1, (1, 1, 12, 12))
    p, q = rng.normal(size=(1, 4, 1, 12, 12)), rng.normal(size=(1, 4, 1, 12, 12))
    lam = 1.7
    base = compute_score(x0, record(p, q), use_ssim=False)[0]
    scaled = compute_score(x0, record(lam * p, lam * q), use_ssim=False)[0]
    for k in range(6):
        assert scaled[k] == pytest.approx(lam ** (2 * (k % 3 + 1)) * base[k], rel=1e-12)


def test_short_trajectory_rejected(rng):
    p = rng.normal(size=(1, 1, 1, 12, 12))
    with pytest.raises(InsufficientTrajectoryError):
        compute_score(np.zeros((1, 1, 12, 12)), record(p, p))


def test_x0_shape_must_match(rng):
    p = rng.normal(size=(1, 2, 1, 12, 12))
    with pytest.raises(InvalidArgumentError):
        compute_score(np.zeros((1, 1, 11, 12)), record(p, p))


def test_mean_shift_separates_on_s2(schedule, rng):
    model = GaussianMixtureDataModel(np.ones(1), np.zeros((1, 1, 12, 12)), np.full(1, 0.1))
    pred = AnalyticPredictor(model, schedule)
    x_id, _ = model.sample(60, rng)
    x_ood, _ = model.sample(60, rng, shift=np.full((1, 12, 12), 0.4))
    cfg = TrajectoryConfig(STOCHASTIC, 10, seed=2)
    s_id = compute_score(x_id, stochastic_forward(x_id, pred, schedule, cfg), use_ssim=False)[:, 1]
    s_ood = compute_score(x_ood, stochastic_forward(x_ood, pred, schedule, cfg), use_ssim=False)[:, 1]
    assert mannwhitneyu(s_ood, s_id, alternative="greater").pvalue < 0.01


def test_score_table_round_trip(tmp_path, rng):
    s = rng.normal(size=(4, 6)) * 1e3
    write_score_table(tmp_path / "s.tsv", list("abcd"), s)
    ids, back = read_score_table(tmp_path / "s.tsv")
    assert ids == list("abcd")
    np.testing.assert_array_equal(back, s)
