"""Discrete variance schedule and the forward noising process."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTimestepError, InvalidArgumentError

VARIANCE_PRESERVING = "vp"  # sigma_t = sqrt(1 - alpha_bar_t)
POSTERIOR_RATIO = "ratio"  # sigma_t^2 = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)
SIGMA_CONVENTIONS = (VARIANCE_PRESERVING, POSTERIOR_RATIO)


@dataclass(frozen=True)
class DiffusionSchedule:
    """Tables indexed by timestep ``t`` in ``1..T``; index 0 holds the
    clean-data convention (alpha_bar = 1, sigma = 0)."""

    T: int
    beta_start: float
    beta_end: float
    sigma_convention: str
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def check_t(self, t) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise InvalidArgumentError(f"timestep {t} outside [1, {self.T}]")
        return t

    def config(self) -> dict:
        return {
            "T": self.T,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "sigma_convention": self.sigma_convention,
        }


def make_linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02,
                         sigma_convention: str = VARIANCE_PRESERVING) -> DiffusionSchedule:
    if int(T) != T or T < 1:
        raise InvalidArgumentError(f"T must be a positive integer, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise InvalidArgumentError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    if sigma_convention not in SIGMA_CONVENTIONS:
        raise InvalidArgumentError(f"unknown sigma convention {sigma_convention!r}")
    T = int(T)
    beta = np.concatenate([[0.0], np.linspace(beta_start, beta_end, T)])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if sigma_convention == VARIANCE_PRESERVING:
        sigma = np.sqrt(1.0 - alpha_bar)
    else:
        sigma = np.zeros(T + 1)
        sigma[1:] = np.sqrt((1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]))
    for arr in (beta, alpha, alpha_bar, sigma):
        arr.flags.writeable = False
    return DiffusionSchedule(T, float(beta_start), float(beta_end), sigma_convention,
                             beta, alpha, alpha_bar, sigma)


def _check_shapes(a, b):
    if np.shape(a) != np.shape(b):
        raise InvalidArgumentError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")


def _values(x):
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def forward_noise(schedule: DiffusionSchedule, x0, t, eps) -> np.ndarray:
    """x_t = sqrt(alpha_bar_t) x_0 + sigma_t eps."""
    t = schedule.check_t(t)
    x0, eps = _values(x0), _values(eps)
    _check_shapes(x0, eps)
    return np.sqrt(schedule.alpha_bar[t]) * x0 + schedule.sigma[t] * eps


def true_noise(schedule: DiffusionSchedule, x0, xt, t) -> np.ndarray:
    """Invert the mixing equation for the noise that carried ``x0`` to ``xt``."""
    t = schedule.check_t(t)
    x0, xt = _values(x0), _values(xt)
    _check_shapes(x0, xt)
    s = schedule.sigma[t]
    if s <= 0:
        raise DegenerateTimestepError(f"sigma_{t} = {s}; noise is not identifiable")
    return (xt - np.sqrt(schedule.alpha_bar[t]) * x0) / s
