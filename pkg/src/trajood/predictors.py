"""Noise predictors eps_theta(x_t, t): the closed-form oracle for Gaussian
mixture data and a replay predictor backed by stored tensors."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from scipy.special import logsumexp

from . import tensor as tio
from .errors import ContractError, InvalidArgumentError, PredictionLookupError
from .schedule import DiffusionSchedule


@runtime_checkable
class NoisePredictor(Protocol):
    name: str
    trained_on: str

    def predict(self, x_t: np.ndarray, t: int, sample_ids: Sequence[str] | None = None) -> np.ndarray:
        """Predicted noise for a batch ``x_t`` of shape (N, C, H, W)."""
        ...


def checked_predict(predictor, x_t, t, sample_ids=None) -> np.ndarray:
    """Call ``predictor`` and enforce the shape/finiteness contract."""
    out = np.asarray(predictor.predict(x_t, t, sample_ids=sample_ids), dtype=np.float64)
    if out.shape != x_t.shape:
        raise ContractError(
            f"predictor {getattr(predictor, 'name', predictor)!r} returned shape {out.shape} for input {x_t.shape}"
        )
    if not np.all(np.isfinite(out)):
        raise ContractError(f"predictor {getattr(predictor, 'name', predictor)!r} returned non-finite values")
    return out


@dataclass(frozen=True)
class GaussianMixtureDataModel:
    """Isotropic Gaussian mixture over image-shaped tensors.

    ``means`` has shape (K, C, H, W); component k is N(means[k], stds[k]^2 I).
    """

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.means, dtype=np.float64)
        s = np.asarray(self.stds, dtype=np.float64)
        if w.ndim != 1 or m.ndim != 4 or s.shape != w.shape or m.shape[0] != w.shape[0]:
            raise InvalidArgumentError("weights (K,), means (K,C,H,W) and stds (K,) must agree")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise InvalidArgumentError("mixture weights must be positive and sum to 1")
        if np.any(s <= 0):
            raise InvalidArgumentError("component stds must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", s)

    @property
    def K(self):
        return self.weights.shape[0]

    @property
    def sample_shape(self):
        return self.means.shape[1:]

    def sample(self, n: int, rng: np.random.Generator, shift=None):
        """Draw ``n`` samples; returns (samples, component labels).

        ``shift`` (broadcastable to the sample shape) is added to every draw,
        which is how mean-shifted out-of-distribution sets are built.
        """
        labels = rng.choice(self.K, size=n, p=self.weights)
        z = rng.standard_normal((n, *self.sample_shape))
        x = self.means[labels] + self.stds[labels, None, None, None] * z
        if shift is not None:
            x = x + shift
        return x, labels

    def marginal_at(self, schedule: DiffusionSchedule, t: int):
        """(means, variances) of the mixture after forward noising to ``t``."""
        ab = schedule.alpha_bar[t]
        return np.sqrt(ab) * self.means, ab * self.stds ** 2 + schedule.sigma[t] ** 2

    def log_density(self, schedule: DiffusionSchedule, x_t, t: int) -> np.ndarray:
        """log p_t(x_t) per sample for a batch of shape (N, C, H, W)."""
        return logsumexp(self._component_logs(schedule, x_t, t), axis=1)

    def _component_logs(self, schedule, x_t, t):
        mu, var = self.marginal_at(schedule, t)
        x = np.asarray(x_t, dtype=np.float64).reshape(len(x_t), 1, -1)
        d = x.shape[-1]
        sq = np.sum((x - mu.reshape(1, self.K, -1)) ** 2, axis=-1)
        return np.log(self.weights) - 0.5 * d * np.log(2 * np.pi * var) - 0.5 * sq / var

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        tio.write_array(directory / "means.dpv2", self.means)
        lines = [
            "weights " + " ".join(f"{v:.17g}" for v in self.weights),
            "stds " + " ".join(f"{v:.17g}" for v in self.stds),
            "means means.dpv2",
        ]
        (directory / "mixture.txt").write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, directory) -> "GaussianMixtureDataModel":
        directory = Path(directory)
        fields = {}
        for line in (directory / "mixture.txt").read_text().splitlines():
            if line.strip():
                key, _, rest = line.partition(" ")
                fields[key] = rest.split()
        means = tio.read_array(directory / fields["means"][0]).astype(np.float64)
        return cls(np.array(fields["weights"], dtype=float), means, np.array(fields["stds"], dtype=float))


@dataclass
class AnalyticPredictor:
    """Exact E[eps | x_t] for data drawn from a :class:`GaussianMixtureDataModel`.

    Each component stays Gaussian under forward noising, with mean
    sqrt(abar_t) mu_k and variance abar_t s_k^2 + sigma_t^2, so the score is the
    responsibility-weighted sum of per-component Gaussian scores and the
    prediction is ``-sigma_t * score``.
    """

    model: GaussianMixtureDataModel
    schedule: DiffusionSchedule
    name: str = "analytic"
    trained_on: str = "gaussian-mixture"

    def score(self, x_t, t) -> np.ndarray:
        t = self.schedule.check_t(t)
        x = np.asarray(x_t, dtype=np.float64)
        logs = self.model._component_logs(self.schedule, x, t)
        resp = np.exp(logs - logsumexp(logs, axis=1, keepdims=True))
        mu, var = self.model.marginal_at(self.schedule, t)
        # sum_k r_k (mu_k - x) / v_k
        coef = resp / var  # (N, K)
        return np.einsum("nk,kchw->nchw", coef, mu) - coef.sum(axis=1)[:, None, None, None] * x

    def predict(self, x_t, t, sample_ids=None) -> np.ndarray:
        return -self.schedule.sigma[self.schedule.check_t(t)] * self.score(x_t, t)


MANIFEST = "manifest.tsv"


@dataclass
class FilePredictor:
    """Replays per-(sample, timestep) predictions written by an external model.

    The manifest is a tab-separated text file with rows
    ``sample_id<TAB>timestep<TAB>relative/path.dpv2``; each file holds one
    (C, H, W) prediction.
    """

    root: Path
    entries: dict = field(default_factory=dict)
    name: str = "file"
    trained_on: str = "external"

    def predict(self, x_t, t, sample_ids=None) -> np.ndarray:
        if sample_ids is None:
            raise InvalidArgumentError("file-backed predictions need sample ids")
        if len(sample_ids) != len(x_t):
            raise InvalidArgumentError(f"{len(sample_ids)} sample ids for a batch of {len(x_t)}")
        out = []
        for sid in sample_ids:
            rel = self.entries.get((str(sid), int(t)))
            if rel is None:
                raise PredictionLookupError(sid, int(t))
            out.append(tio.read_array(self.root / rel))
        return np.stack(out).astype(np.float64)

    def timesteps(self, sample_id) -> list[int]:
        return sorted(t for sid, t in self.entries if sid == str(sample_id))


def file_predictor(path) -> FilePredictor:
    """Open a prediction store; ``path`` is the store directory or its manifest."""
    path = Path(path)
    manifest = path / MANIFEST if path.is_dir() else path
    entries = {}
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise InvalidArgumentError(f"{manifest}:{lineno}: expected 3 tab-separated fields")
        entries[(parts[0], int(parts[1]))] = parts[2]
    return FilePredictor(manifest.parent, entries)


class PredictionStore:
    """Writer side of :func:`file_predictor`."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._rows = []

    def add(self, sample_id, t, prediction) -> None:
        rel = f"pred/{sample_id}/t{int(t):05d}.dpv2"
        (self.root / rel).parent.mkdir(parents=True, exist_ok=True)
        tio.write_array(self.root / rel, prediction)
        self._rows.append(f"{sample_id}\t{int(t)}\t{rel}")

    def close(self) -> Path:
        manifest = self.root / MANIFEST
        manifest.write_text("".join(r + "\n" for r in self._rows))
        return manifest


class RecordingPredictor:
    """Wraps a predictor and dumps every query into a :class:`PredictionStore`."""

    def __init__(self, inner, store: PredictionStore):
        self.inner = inner
        self.store = store
        self.name = f"recording:{inner.name}"
        self.trained_on = inner.trained_on

    def predict(self, x_t, t, sample_ids=None):
        out = checked_predict(self.inner, x_t, t, sample_ids)
        if sample_ids is None:
            raise InvalidArgumentError("recording needs sample ids")
        for sid, pred in zip(sample_ids, out):
            self.store.add(sid, t, pred)
        return out
