import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trajood.errors import ContractError, InvalidArgumentError
from trajood.predictors import AnalyticPredictor, GaussianMixtureDataModel
from trajood.schedule import make_linear_schedule
from trajood.tensor import UNIT, ImageTensor
from trajood.trajectory import (DDIM, STOCHASTIC, TrajectoryConfig, TrajectoryRecord, ddim_invert,
                                dump_record, load_records, stochastic_forward)

from conftest import random_mixture, standard_normal_model
from oracles import reverse_ddim


class Zero:
    name = "zero"
    trained_on = "-"

    def predict(self, x, t, sample_ids=None):
        return np.zeros_like(x)


class Perturbed:
    """Exact predictor plus fixed-seed noise or a scale change."""

    def __init__(self, inner, scale=1.0, noise=0.0, seed=0):
        self.inner, self.scale, self.noise = inner, scale, noise
        self.rng = np.random.default_rng(seed)
        self.name, self.trained_on = "perturbed", "-"

    def predict(self, x, t, sample_ids=None):
        out = self.scale * self.inner.predict(x, t)
        return out + self.noise * self.rng.standard_normal(x.shape)


def per_step_mse(rec):
    return np.mean(np.sum((rec.predicted - rec.truth) ** 2, axis=(2, 3, 4)), axis=0)


def test_default_timesteps(schedule):
    ts = TrajectoryConfig().timesteps(schedule)
    assert list(ts) == [1, 112, 223, 334, 445, 556, 667, 778, 889, 1000]


def test_single_step_trajectory(schedule, std_normal_predictor, rng):
    rec = ddim_invert(rng.normal(size=(3, 1, 8, 8)), std_normal_predictor, schedule, TrajectoryConfig(n_steps=1))
    assert rec.predicted.shape == (3, 1, 1, 8, 8)
    assert list(rec.timesteps) == [1]
    np.testing.assert_array_equal(rec.truth, 0.0)


def test_ddim_latents_follow_closed_form(schedule, std_normal_predictor, rng):
    """For N(0, I) data the exact DDIM step is a rotation-angle contraction:
    x_{i+1} = cos(theta_{i+1} - theta_i) x_i with cos(theta) = sqrt(abar)."""
    x0 = rng.normal(size=(4, 1, 8, 8))
    rec = ddim_invert(x0, std_normal_predictor, schedule, keep_latents=True)
    theta = np.arccos(np.sqrt(schedule.alpha_bar[rec.timesteps]))
    factor = np.concatenate([[1.0], np.cumprod(np.cos(np.diff(theta)))])
    for i, f in enumerate(factor):
        np.testing.assert_allclose(rec.latents[:, i + 1], f * x0, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(rec.predicted[:, i], schedule.sigma[rec.timesteps[i]] * f * x0,
                                   rtol=1e-10, atol=1e-12)
    np.testing.assert_array_equal(rec.latents[:, 0], x0)


def test_reverse_integration_recovers_x0(schedule, rng):
    model = random_mixture(rng, 2, shape=(1, 3, 3), spread=0.4)
    pred = AnalyticPredictor(model, schedule)
    x0, _ = model.sample(3, rng)
    rec = ddim_invert(x0, pred, schedule, TrajectoryConfig(n_steps=6), keep_latents=True)
    back = reverse_ddim(rec.latents[:, -1], rec.timesteps, pred, schedule)
    np.testing.assert_allclose(back, x0, atol=1e-3)


def test_ddim_is_bit_reproducible(schedule, rng):
    pred = AnalyticPredictor(random_mixture(rng, 3), schedule)
    x0 = rng.uniform(-1, 1, (5, 1, 8, 8))
    a, b = ddim_invert(x0, pred, schedule), ddim_invert(x0, pred, schedule)
    assert a.predicted.tobytes() == b.predicted.tobytes() and a.truth.tobytes() == b.truth.tobytes()


def test_stochastic_same_seed_identical(schedule, std_normal_predictor, rng):
    x0 = rng.normal(size=(3, 1, 8, 8))
    cfg = TrajectoryConfig(STOCHASTIC, 5, seed=9)
    a = stochastic_forward(x0, std_normal_predictor, schedule, cfg)
    b = stochastic_forward(x0, std_normal_predictor, schedule, cfg)
    assert a.predicted.tobytes() == b.predicted.tobytes() and a.truth.tobytes() == b.truth.tobytes()
    c = stochastic_forward(x0, std_normal_predictor, schedule, TrajectoryConfig(STOCHASTIC, 5, seed=10))
    assert not np.array_equal(a.truth, c.truth)


def test_stochastic_zero_predictor_mse_is_dimension(schedule, rng):
    x0 = rng.uniform(-1, 1, (400, 1, 8, 8))
    rec = stochastic_forward(x0, Zero(), schedule, TrajectoryConfig(STOCHASTIC, 5, seed=1))
    # ||eps||^2 has mean 64 and sd sqrt(128) per sample
    np.testing.assert_allclose(per_step_mse(rec), 64, atol=4 * np.sqrt(128 / 400))


def test_stochastic_shifted_data_has_larger_error(schedule, rng):
    model = GaussianMixtureDataModel(np.ones(1), np.zeros((1, 1, 8, 8)), np.ones(1))
    pred = AnalyticPredictor(model, schedule)
    x_id, _ = model.sample(500, rng)
    x_ood = x_id + 4.0
    cfg = TrajectoryConfig(STOCHASTIC, 10, seed=3)
    mse_id = per_step_mse(stochastic_forward(x_id, pred, schedule, cfg))
    mse_ood = per_step_mse(stochastic_forward(x_ood, pred, schedule, cfg))
    assert np.all(mse_ood > mse_id)
    assert np.all(mse_id < 64)


@pytest.mark.parametrize("perturb", [dict(scale=0.9), dict(scale=1.1), dict(noise=0.05)])
def test_exact_predictor_is_mse_optimal_stochastic(schedule, rng, perturb):
    model = random_mixture(rng, 2, spread=0.5)
    exact = AnalyticPredictor(model, schedule)
    x0, _ = model.sample(100, rng)
    cfg = TrajectoryConfig(STOCHASTIC, 10, seed=4)
    base = per_step_mse(stochastic_forward(x0, exact, schedule, cfg)).mean()
    other = per_step_mse(stochastic_forward(x0, Perturbed(exact, **perturb), schedule, cfg)).mean()
    assert base <= other


@pytest.mark.parametrize("noise", [0.05, 0.2])
def test_exact_predictor_beats_noisy_predictor_ddim(schedule, rng, noise):
    model = random_mixture(rng, 2, spread=0.5)
    exact = AnalyticPredictor(model, schedule)
    x0, _ = model.sample(100, rng)
    base = per_step_mse(ddim_invert(x0, exact, schedule)).mean()
    assert base <= per_step_mse(ddim_invert(x0, Perturbed(exact, noise=noise), schedule)).mean()


@settings(max_examples=25, deadline=None)
@given(T=st.integers(1, 60), frac=st.floats(0, 1), mode=st.sampled_from([DDIM, STOCHASTIC]),
       shape=st.tuples(st.integers(1, 3), st.integers(1, 2), st.integers(1, 5), st.integers(1, 5)))
def test_record_invariants(T, frac, mode, shape):
    sched = make_linear_schedule(T, 1e-3, 0.2)
    n_steps = 1 + int(frac * (T - 1))
    pred = AnalyticPredictor(standard_normal_model(shape[1:]), sched)
    x0 = np.random.default_rng(0).uniform(-1, 1, shape)
    fn = ddim_invert if mode == DDIM else stochastic_forward
    rec = fn(x0, pred, sched, TrajectoryConfig(mode, n_steps), keep_latents=True)
    assert rec.predicted.shape == rec.truth.shape == (shape[0], n_steps, *shape[1:])
    assert rec.latents.shape == (shape[0], n_steps + 1, *shape[1:])
    assert np.all(np.diff(rec.timesteps) > 0) and rec.timesteps[0] >= 1 and rec.timesteps[-1] <= T


def test_config_validation(schedule):
    with pytest.raises(InvalidArgumentError, match="T_prime"):
        TrajectoryConfig(n_steps=0).timesteps(schedule)
    with pytest.raises(InvalidArgumentError):
        TrajectoryConfig(n_steps=1001).timesteps(schedule)
    with pytest.raises(InvalidArgumentError):
        TrajectoryConfig(mode="sde").timesteps(schedule)


def test_mode_and_input_checks(schedule, std_normal_predictor):
    x = np.zeros((1, 1, 8, 8))
    with pytest.raises(InvalidArgumentError):
        ddim_invert(x, std_normal_predictor, schedule, TrajectoryConfig(STOCHASTIC))
    with pytest.raises(InvalidArgumentError):
        stochastic_forward(x, std_normal_predictor, schedule, TrajectoryConfig(DDIM))
    with pytest.raises(InvalidArgumentError, match=r"\[-1, 1\]"):
        ddim_invert(ImageTensor(np.zeros((1, 1, 8, 8)), UNIT), std_normal_predictor, schedule)


def test_predictor_shape_violation(schedule):
    class Bad:
        name, trained_on = "bad", "-"

        def predict(self, x, t, sample_ids=None):
            return np.zeros((1, 1, 2, 2))

    with pytest.raises(ContractError):
        ddim_invert(np.zeros((1, 1, 8, 8)), Bad(), schedule)


def test_record_validation():
    z = np.zeros((1, 2, 1, 2, 2))
    with pytest.raises(InvalidArgumentError):
        TrajectoryRecord(("a",), np.array([5, 3]), z, z)
    with pytest.raises(InvalidArgumentError):
        TrajectoryRecord(("a",), np.array([1, 2]), z, z[:, :1])


def test_dump_and_reload(tmp_path, schedule, std_normal_predictor, rng):
    rec = ddim_invert(rng.normal(size=(2, 1, 8, 8)), std_normal_predictor, schedule,
                      TrajectoryConfig(n_steps=4), sample_ids=["a", "b"])
    dump_record(rec, tmp_path)
    back = load_records(tmp_path, ["a", "b"])
    np.testing.assert_array_equal(back.timesteps, rec.timesteps)
    np.testing.assert_allclose(back.predicted, rec.predicted, rtol=1e-6)
    assert rec.select(1).sample_ids == ("b",)
