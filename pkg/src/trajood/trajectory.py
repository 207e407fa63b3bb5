"""Per-sample denoising trajectories: paired predicted and true noise over a
strided set of timesteps."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as tio
from .errors import InvalidArgumentError
from .predictors import checked_predict
from .schedule import DiffusionSchedule, forward_noise, true_noise

DDIM = "ddim-inversion"
STOCHASTIC = "stochastic-forward"
MODES = (DDIM, STOCHASTIC)


@dataclass(frozen=True)
class TrajectoryConfig:
    mode: str = DDIM
    n_steps: int = 10
    seed: int = 0

    def validate(self, schedule: DiffusionSchedule) -> None:
        if self.mode not in MODES:
            raise InvalidArgumentError(f"unknown trajectory mode {self.mode!r}")
        if not 1 <= self.n_steps <= schedule.T:
            raise InvalidArgumentError(
                f"T_prime={self.n_steps} violates 1 <= T_prime <= T={schedule.T}"
            )

    def timesteps(self, schedule: DiffusionSchedule) -> np.ndarray:
        self.validate(schedule)
        if self.n_steps == 1:
            return np.array([1])
        ts = np.unique(np.round(np.linspace(1, schedule.T, self.n_steps)).astype(int))
        if len(ts) != self.n_steps:
            raise InvalidArgumentError(f"T_prime={self.n_steps} does not give distinct strided timesteps")
        return ts


@dataclass(frozen=True)
class TrajectoryRecord:
    """Trajectories for a batch of samples.

    ``predicted`` and ``truth`` have shape (N, T', C, H, W); ``latents`` when
    present has shape (N, T'+1, C, H, W), with x_0 first.
    """

    sample_ids: tuple
    timesteps: np.ndarray
    predicted: np.ndarray
    truth: np.ndarray
    latents: np.ndarray | None = None

    def __post_init__(self):
        ts = np.asarray(self.timesteps)
        n, tp = self.predicted.shape[:2]
        if ts.ndim != 1 or len(ts) != tp or np.any(np.diff(ts) <= 0):
            raise InvalidArgumentError("timesteps must be strictly increasing and match the trajectory length")
        if self.truth.shape != self.predicted.shape or len(self.sample_ids) != n:
            raise InvalidArgumentError("predicted/truth/sample_ids disagree in shape")
        if self.latents is not None and self.latents.shape != (n, tp + 1, *self.predicted.shape[2:]):
            raise InvalidArgumentError("latents must hold T'+1 states per sample")

    def __len__(self):
        return len(self.sample_ids)

    @property
    def sample_shape(self):
        return self.predicted.shape[2:]

    def select(self, idx) -> "TrajectoryRecord":
        idx = np.atleast_1d(np.arange(len(self))[idx])
        return TrajectoryRecord(
            tuple(self.sample_ids[i] for i in idx), self.timesteps,
            self.predicted[idx], self.truth[idx],
            None if self.latents is None else self.latents[idx],
        )


def _prepare(x0):
    if isinstance(x0, tio.ImageTensor):
        if x0.value_range != tio.SIGNED:
            raise InvalidArgumentError("diffusion inputs must be normalized to [-1, 1]")
        x0 = x0.data
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 4:
        raise InvalidArgumentError(f"expected (N, C, H, W), got {x0.shape}")
    return x0


def _ids(sample_ids, n):
    if sample_ids is None:
        return tuple(str(i) for i in range(n))
    if len(sample_ids) != n:
        raise InvalidArgumentError(f"{len(sample_ids)} ids for {n} samples")
    return tuple(str(s) for s in sample_ids)


def ddim_step(schedule, x, eps_hat, t_from, t_to):
    """Deterministic DDIM move of ``x`` from ``t_from`` to ``t_to`` using ``eps_hat``."""
    x0_hat = (x - schedule.sigma[t_from] * eps_hat) / np.sqrt(schedule.alpha_bar[t_from])
    return np.sqrt(schedule.alpha_bar[t_to]) * x0_hat + schedule.sigma[t_to] * eps_hat


def ddim_invert(x0, predictor, schedule: DiffusionSchedule, config: TrajectoryConfig = TrajectoryConfig(),
                sample_ids=None, keep_latents: bool = False) -> TrajectoryRecord:
    """DDIM inversion from the clean image toward noise.

    The clean image is taken as the state at the first selected timestep, so
    the true noise there is zero by definition.
    """
    if config.mode != DDIM:
        raise InvalidArgumentError(f"ddim_invert called with mode {config.mode!r}")
    x0 = _prepare(x0)
    ts = config.timesteps(schedule)
    ids = _ids(sample_ids, len(x0))
    preds, truths, latents = [], [], [x0]
    x = x0
    for i, t in enumerate(ts):
        t = int(t)
        latents.append(x)
        eps_hat = checked_predict(predictor, x, t, ids)
        preds.append(eps_hat)
        truths.append(np.zeros_like(x0) if i == 0 else true_noise(schedule, x0, x, t))
        if i + 1 < len(ts):
            x = ddim_step(schedule, x, eps_hat, t, int(ts[i + 1]))
    return TrajectoryRecord(ids, ts, np.stack(preds, axis=1), np.stack(truths, axis=1),
                            np.stack(latents, axis=1) if keep_latents else None)


def stochastic_forward(x0, predictor, schedule: DiffusionSchedule, config: TrajectoryConfig,
                       sample_ids=None, keep_latents: bool = False) -> TrajectoryRecord:
    """Independent forward-noised draws at each selected timestep."""
    if config.mode != STOCHASTIC:
        raise InvalidArgumentError(f"stochastic_forward called with mode {config.mode!r}")
    x0 = _prepare(x0)
    ts = config.timesteps(schedule)
    ids = _ids(sample_ids, len(x0))
    rng = np.random.default_rng(config.seed)
    preds, truths, latents = [], [], [x0]
    for t in ts:
        eps = rng.standard_normal(x0.shape)
        xt = forward_noise(schedule, x0, int(t), eps)
        preds.append(checked_predict(predictor, xt, int(t), ids))
        truths.append(eps)
        latents.append(xt)
    return TrajectoryRecord(ids, ts, np.stack(preds, axis=1), np.stack(truths, axis=1),
                            np.stack(latents, axis=1) if keep_latents else None)


def extract(x0, predictor, schedule, config: TrajectoryConfig, sample_ids=None, keep_latents=False):
    fn = ddim_invert if config.mode == DDIM else stochastic_forward
    return fn(x0, predictor, schedule, config, sample_ids=sample_ids, keep_latents=keep_latents)


def dump_record(rec: TrajectoryRecord, directory) -> list[Path]:
    """One file per sample: a (2, T', C, H, W) stack of predicted then truth."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, sid in enumerate(rec.sample_ids):
        p = directory / f"{sid}.dpv2"
        tio.write_array(p, np.stack([rec.predicted[i], rec.truth[i]]))
        paths.append(p)
    (directory / "timesteps.txt").write_text(" ".join(str(int(t)) for t in rec.timesteps) + "\n")
    return paths


def load_records(directory, sample_ids) -> TrajectoryRecord:
    directory = Path(directory)
    ts = np.array((directory / "timesteps.txt").read_text().split(), dtype=int)
    stacks = [tio.read_array(directory / f"{sid}.dpv2").astype(np.float64) for sid in sample_ids]
    arr = np.stack(stacks)
    return TrajectoryRecord(tuple(str(s) for s in sample_ids), ts, arr[:, 0], arr[:, 1])
