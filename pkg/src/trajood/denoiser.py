"""A three-layer convolutional noise predictor trained with the denoising
score-matching loss, with hand-written reverse mode."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import tensor as tio
from .errors import DivergenceError, InvalidArgumentError
from .schedule import DiffusionSchedule, forward_noise

log = logging.getLogger(__name__)

PARAM_NAMES = ("w1", "b1", "w_emb", "b_emb", "w2", "b2", "w3", "b3")
WEIGHTS_MANIFEST = "weights.tsv"


def sinusoidal_embedding(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    ang = float(t) * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


def _silu(x):
    s = expit(x)
    return x * s, s


def conv3x3(x, w, b):
    """'same' 3x3 convolution (cross-correlation) with zero padding."""
    n, _, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.empty((n, w.shape[0], h, wd))
    out[:] = b[None, :, None, None]
    for i in range(3):
        for j in range(3):
            out += np.tensordot(xp[:, :, i:i + h, j:j + wd], w[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
    return out


def conv3x3_backward(x, w, grad):
    """Gradients of :func:`conv3x3` w.r.t. input, weight and bias."""
    n, _, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for i in range(3):
        for j in range(3):
            dw[:, :, i, j] = np.tensordot(grad, xp[:, :, i:i + h, j:j + wd], axes=([0, 2, 3], [0, 2, 3]))
            dxp[:, :, i:i + h, j:j + wd] += np.tensordot(grad, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dw, grad.sum(axis=(0, 2, 3))


@dataclass
class TinyDenoiser:
    """conv(C->F) -> SiLU -> +time embedding -> conv(F->F) -> SiLU -> conv(F->C)."""

    params: dict
    channels: int
    width: int = 32
    emb_dim: int = 32
    name: str = "tiny-denoiser"
    trained_on: str = "unknown"
    loss_history: list = field(default_factory=list)

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator, width: int = 32, emb_dim: int = 32, **kw):
        def he(shape, fan_in, gain=1.0):
            return rng.standard_normal(shape) * gain * np.sqrt(2.0 / fan_in)

        params = {
            "w1": he((width, channels, 3, 3), 9 * channels),
            "b1": np.zeros(width),
            "w_emb": he((width, emb_dim), emb_dim, 0.1),
            "b_emb": np.zeros(width),
            "w2": he((width, width, 3, 3), 9 * width),
            "b2": np.zeros(width),
            "w3": he((channels, width, 3, 3), 9 * width, 0.1),
            "b3": np.zeros(channels),
        }
        return cls(params, channels, width, emb_dim, **kw)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def _forward(self, x, t):
        p = self.params
        h1 = conv3x3(x, p["w1"], p["b1"])
        a1, s1 = _silu(h1)
        emb = p["w_emb"] @ sinusoidal_embedding(t, self.emb_dim) + p["b_emb"]
        a1e = a1 + emb[None, :, None, None]
        h2 = conv3x3(a1e, p["w2"], p["b2"])
        a2, s2 = _silu(h2)
        out = conv3x3(a2, p["w3"], p["b3"])
        return out, (x, t, h1, s1, a1e, h2, s2, a2)

    def predict(self, x_t, t, sample_ids=None) -> np.ndarray:
        x = np.asarray(x_t, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise InvalidArgumentError(f"expected (N, {self.channels}, H, W), got {x.shape}")
        return self._forward(x, t)[0]

    def loss_and_grads(self, x_t, t, eps):
        """Batch-mean of the per-sample summed squared error, and its gradient."""
        out, (x, t, h1, s1, a1e, h2, s2, a2) = self._forward(x_t, t)
        n = len(x_t)
        diff = out - eps
        loss = float(np.sum(diff ** 2) / n)
        p = self.params
        g = {}
        dout = 2.0 * diff / n
        da2, g["w3"], g["b3"] = conv3x3_backward(a2, p["w3"], dout)
        dh2 = da2 * (s2 * (1 + h2 * (1 - s2)))
        da1e, g["w2"], g["b2"] = conv3x3_backward(a1e, p["w2"], dh2)
        demb = da1e.sum(axis=(0, 2, 3))
        g["w_emb"] = np.outer(demb, sinusoidal_embedding(t, self.emb_dim))
        g["b_emb"] = demb
        dh1 = da1e * (s1 * (1 + h1 * (1 - s1)))
        _, g["w1"], g["b1"] = conv3x3_backward(x, p["w1"], dh1)
        return loss, g

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        rows = [f"# channels={self.channels} width={self.width} emb_dim={self.emb_dim} trained_on={self.trained_on}"]
        for key in PARAM_NAMES:
            tio.write_array(directory / f"{key}.dpv2", self.params[key])
            rows.append(f"{key}\t{key}.dpv2")
        manifest = directory / WEIGHTS_MANIFEST
        manifest.write_text("\n".join(rows) + "\n")
        return manifest

    @classmethod
    def load(cls, directory) -> "TinyDenoiser":
        directory = Path(directory)
        lines = (directory / WEIGHTS_MANIFEST).read_text().splitlines()
        meta = dict(kv.split("=", 1) for kv in lines[0].lstrip("# ").split())
        params = {}
        for line in lines[1:]:
            if line.strip():
                key, rel = line.split("\t")
                params[key] = tio.read_array(directory / rel).astype(np.float64)
        missing = set(PARAM_NAMES) - set(params)
        if missing:
            raise InvalidArgumentError(f"weights manifest lacks {sorted(missing)}")
        return cls(params, int(meta["channels"]), int(meta["width"]), int(meta["emb_dim"]),
                   trained_on=meta.get("trained_on", "unknown"))


def train_denoiser(data, schedule: DiffusionSchedule, epochs: int = 10, lr: float = 1e-4,
                   seed: int = 0, batch_size: int = 16, width: int = 32,
                   trained_on: str = "unknown", callback=None) -> TinyDenoiser:
    """Plain SGD on E_t E_x0 E_eps ||eps_theta(x_t, t) - eps||^2 with
    t ~ U{1..T}. One timestep is drawn per minibatch.

    ``data`` is an ImageTensor (or array) in [-1, 1]. ``callback(epoch, model)``
    runs after every epoch.
    """
    x = np.asarray(getattr(data, "data", data), dtype=np.float64)
    if x.ndim != 4 or len(x) == 0:
        raise InvalidArgumentError("training data must be a non-empty (N, C, H, W) batch")
    if not lr > 0:
        raise InvalidArgumentError(f"learning rate must be positive, got {lr}")
    rng = np.random.default_rng(seed)
    model = TinyDenoiser.init(x.shape[1], rng, width=width, trained_on=trained_on)
    for epoch in range(epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), batch_size):
            x0 = x[order[start:start + batch_size]]
            t = int(rng.integers(1, schedule.T + 1))
            eps = rng.standard_normal(x0.shape)
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = model.loss_and_grads(forward_noise(schedule, x0, t, eps), t, eps)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            for key, g in grads.items():
                model.params[key] -= lr * g
            total += loss * len(x0)
        model.loss_history.append(total / len(x))
        log.debug("epoch %d loss %.5g", epoch, model.loss_history[-1])
        if callback is not None:
            callback(epoch, model)
    return model
