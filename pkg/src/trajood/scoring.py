"""Trajectory error maps, SSIM weighting and the six-dimensional score."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .errors import InsufficientTrajectoryError, InvalidArgumentError
from .trajectory import TrajectoryRecord

SCORE_NAMES = ("s1", "s2", "s3", "s4", "s5", "s6")


def mse_trajectory(rec: TrajectoryRecord) -> np.ndarray:
    """Elementwise squared error per timestep, shape (N, T', C, H, W)."""
    return (rec.predicted - rec.truth) ** 2


def gaussian_window(size: int = 11, std: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * std ** 2))
    return g / g.sum()


def minmax_rescale(x) -> np.ndarray:
    """Rescale each sample of an (N, ...) batch to [0, 1]; flat samples map to 0."""
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(len(x), -1)
    lo = flat.min(axis=1)
    span = flat.max(axis=1) - lo
    safe = np.where(span > 0, span, 1.0)
    out = (flat - lo[:, None]) / safe[:, None]
    out[span == 0] = 0.0
    return out.reshape(x.shape)


def _local_mean(x, win):
    # separable Gaussian over H then W; scipy 'reflect' mirrors about the edge
    return correlate1d(correlate1d(x, win, axis=-2, mode="reflect"), win, axis=-1, mode="reflect")


def ssim_map(x, y, window: int = 11, window_std: float = 1.5, rescale: bool = True,
             data_range: float = 1.0) -> np.ndarray:
    """Per-pixel, per-channel SSIM between two (N, C, H, W) batches.

    With ``rescale`` each sample of each input is min-max mapped to [0, 1]
    first, since the inputs may live on unrelated scales.
    """
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    y = np.asarray(getattr(y, "data", y), dtype=np.float64)
    if x.shape != y.shape:
        raise InvalidArgumentError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.ndim != 4:
        raise InvalidArgumentError(f"expected (N, C, H, W), got {x.shape}")
    if window > min(x.shape[-2:]):
        raise InvalidArgumentError(f"window {window} larger than image {x.shape[-2:]}")
    if rescale:
        x, y = minmax_rescale(x), minmax_rescale(y)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    win = gaussian_window(window, window_std)
    mx, my = _local_mean(x, win), _local_mean(y, win)
    sxx = _local_mean(x * x, win) - mx * mx
    syy = _local_mean(y * y, win) - my * my
    sxy = _local_mean(x * y, win) - mx * my
    s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    # rounding in the moment estimates can leave |s| a few ulp above 1
    return np.clip(s, -1.0, 1.0)


def compute_score(x0, rec: TrajectoryRecord, use_error: bool = True, use_ssim: bool = True,
                  window: int = 11, window_std: float = 1.5) -> np.ndarray:
    """Six trajectory statistics per sample, shape (N, 6).

    E_t is the squared-error map (``use_error``) or the raw predicted noise.
    W is ``1 - SSIM(x0, sum_t eps_theta)`` (``use_ssim``) or ones. For
    p = 1, 2, 3: s_p sums (sum_t E_t^p) * W over pixels, and s_{p+3} does the
    same with the backward difference of E_t^p along the trajectory index.
    """
    x0 = np.asarray(getattr(x0, "data", x0), dtype=np.float64)
    if x0.shape != (len(rec), *rec.sample_shape):
        raise InvalidArgumentError(f"x0 shape {x0.shape} does not match trajectories {rec.predicted.shape}")
    if rec.predicted.shape[1] < 2:
        raise InsufficientTrajectoryError("temporal terms need at least two timesteps")
    e = mse_trajectory(rec) if use_error else rec.predicted
    if use_ssim:
        w = 1.0 - ssim_map(x0, rec.predicted.sum(axis=1), window, window_std)
    else:
        w = np.ones_like(x0)
    out = np.empty((len(rec), 6))
    for p in (1, 2, 3):
        ep = e ** p
        out[:, p - 1] = np.sum(ep.sum(axis=1) * w, axis=(1, 2, 3))
        out[:, p + 2] = np.sum(np.diff(ep, axis=1).sum(axis=1) * w, axis=(1, 2, 3))
    return out


def write_score_table(path, sample_ids, scores) -> None:
    rows = ["sample_id\t" + "\t".join(SCORE_NAMES)]
    for sid, s in zip(sample_ids, np.asarray(scores)):
        rows.append(str(sid) + "\t" + "\t".join(f"{v:.17g}" for v in s))
    Path(path).write_text("\n".join(rows) + "\n")


def read_score_table(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    ids, vals = [], []
    for ln in lines[1:]:
        parts = ln.split("\t")
        ids.append(parts[0])
        vals.append([float(v) for v in parts[1:7]])
    return ids, np.array(vals, dtype=np.float64).reshape(-1, 6)
