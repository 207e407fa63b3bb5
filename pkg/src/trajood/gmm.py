"""Gaussian mixture density over score vectors, fitted by EM."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import (ComponentCollapseError, EmMonotonicityError, GridExhaustedError,
                     InvalidArgumentError, TrajoodError)

log = logging.getLogger(__name__)

FULL = "full"
DIAG = "diag"
COV_TYPES = (DIAG, FULL)  # order doubles as the tie-break preference
REG_COVAR = 1e-6
MIN_WEIGHT = 1e-8
MONOTONE_SLACK = 1e-9


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray  # (K, D), standardized space
    covariances: np.ndarray  # (K, D, D)
    cov_type: str
    shift: np.ndarray  # per-dimension standardization mean
    scale: np.ndarray  # per-dimension standardization std
    log_likelihood: float = float("nan")
    n_iter: int = 0
    history: list = field(default_factory=list)

    @property
    def K(self):
        return len(self.weights)

    def standardize(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.shift) / self.scale


def _standardization(x):
    shift = x.mean(axis=0)
    scale = x.std(axis=0)
    return shift, np.where(scale > 0, scale, 1.0)


def _component_log_densities(z, means, covs):
    """log N(z_i; m_k, S_k) for every (i, k), via Cholesky factors."""
    n, d = z.shape
    out = np.empty((n, len(means)))
    for k, (m, s) in enumerate(zip(means, covs)):
        chol = np.linalg.cholesky(s)
        sol = np.linalg.solve(chol, (z - m).T)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, k] = -0.5 * (d * np.log(2 * np.pi) + logdet + np.sum(sol ** 2, axis=0))
    return out


def _kmeans_pp(z, k, rng):
    centers = [z[rng.integers(len(z))]]
    for _ in range(1, k):
        d2 = np.min(((z[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        idx = rng.integers(len(z)) if total <= 0 else rng.choice(len(z), p=d2 / total)
        centers.append(z[idx])
    return np.array(centers)


def e_step(z, weights, means, covs):
    """Responsibilities and mean log-likelihood."""
    logp = _component_log_densities(z, means, covs) + np.log(weights)
    norm = logsumexp(logp, axis=1, keepdims=True)
    return np.exp(logp - norm), float(norm.mean())


def m_step(z, resp, cov_type, reg=REG_COVAR):
    n, d = z.shape
    nk = resp.sum(axis=0)
    for k, v in enumerate(nk / n):
        if v < MIN_WEIGHT:
            raise ComponentCollapseError(k, v)
    weights = nk / n
    means = (resp.T @ z) / nk[:, None]
    covs = np.empty((len(nk), d, d))
    for k in range(len(nk)):
        diff = z - means[k]
        if cov_type == FULL:
            c = (resp[:, k, None] * diff).T @ diff / nk[k]
        else:
            c = np.diag(resp[:, k] @ diff ** 2 / nk[k])
        covs[k] = c + reg * np.eye(d)
    return weights, means, covs


def fit_em(features, K: int, cov_type: str = FULL, seed: int = 0, max_iter: int = 500,
           tol: float = 1e-6) -> GmmModel:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgumentError(f"features must be (n, d), got {x.shape}")
    if cov_type not in COV_TYPES:
        raise InvalidArgumentError(f"unknown covariance type {cov_type!r}")
    if K < 1 or len(x) < 7 * K:
        raise InvalidArgumentError(f"K={K} needs at least {7 * K} vectors, got {len(x)}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("features contain non-finite values")
    shift, scale = _standardization(x)
    z = (x - shift) / scale
    rng = np.random.default_rng(seed)
    d = z.shape[1]

    weights = np.full(K, 1.0 / K)
    means = _kmeans_pp(z, K, rng)
    glob = np.cov(z, rowvar=False, bias=True).reshape(d, d)
    if cov_type == DIAG:
        glob = np.diag(np.diag(glob))
    covs = np.repeat((glob + REG_COVAR * np.eye(d))[None], K, axis=0)

    resp, ll = e_step(z, weights, means, covs)
    history = [ll]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        weights, means, covs = m_step(z, resp, cov_type)
        resp, new_ll = e_step(z, weights, means, covs)
        history.append(new_ll)
        if new_ll < ll - MONOTONE_SLACK:
            raise EmMonotonicityError(
                f"log-likelihood fell from {ll:.12g} to {new_ll:.12g} at iteration {n_iter}"
            )
        converged = new_ll - ll < tol
        ll = new_ll
        if converged:
            break
    return GmmModel(weights, means, covs, cov_type, shift, scale, ll, n_iter, history)


def log_likelihood(model: GmmModel, features) -> np.ndarray | float:
    """log sum_k pi_k N(z; m_k, S_k) on standardized features.

    Accepts one vector (returns a float) or an (n, d) batch.
    """
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("feature contains non-finite values")
    logp = _component_log_densities(model.standardize(x), model.means, model.covariances)
    with np.errstate(divide="ignore"):
        out = logsumexp(logp + np.log(model.weights), axis=1)
    return float(out[0]) if single else out


def anomaly_score(model: GmmModel, features) -> np.ndarray:
    return -log_likelihood(model, np.atleast_2d(features))


@dataclass(frozen=True)
class GmmGrid:
    ks: tuple = tuple(range(1, 11))
    cov_types: tuple = COV_TYPES
    criterion: str = "holdout-loglik"

    def __post_init__(self):
        if not self.ks or not self.cov_types:
            raise InvalidArgumentError("GMM grid must be non-empty")
        bad = [c for c in self.cov_types if c not in COV_TYPES]
        if bad:
            raise InvalidArgumentError(f"unknown covariance types {bad}")

    def candidates(self):
        """Unique (K, cov_type) pairs in tie-break order."""
        return sorted({(int(k), c) for k in self.ks for c in self.cov_types},
                      key=lambda kc: (kc[0], COV_TYPES.index(kc[1])))


def grid_search(features, grid: GmmGrid = GmmGrid(), holdout_fraction: float = 0.2,
                seed: int = 0) -> GmmModel:
    """Pick (K, cov_type) by mean held-out log-likelihood, then refit the
    winner on all features.

    Candidates whose held-out mean is within one standard error of the best
    count as tied; the tie goes to the earliest in :meth:`GmmGrid.candidates`
    order (smaller K, then diagonal).
    """
    x = np.asarray(features, dtype=np.float64)
    n_hold = int(round(holdout_fraction * len(x)))
    if n_hold < 1 or len(x) - n_hold < 7:
        raise InvalidArgumentError(f"{len(x)} vectors are too few for a {holdout_fraction} holdout split")
    perm = np.random.default_rng(seed).permutation(len(x))
    hold, fit = x[perm[:n_hold]], x[perm[n_hold:]]

    fitted = []
    for k, cov in grid.candidates():
        try:
            m = fit_em(fit, k, cov, seed=seed)
            ll = log_likelihood(m, hold)
        except (TrajoodError, np.linalg.LinAlgError) as exc:
            log.debug("grid candidate K=%d %s failed: %s", k, cov, exc)
            continue
        if np.all(np.isfinite(ll)):
            log.debug("grid candidate K=%d %s holdout ll %.6g", k, cov, ll.mean())
            fitted.append((k, cov, m, ll))
    if not fitted:
        raise GridExhaustedError("every grid candidate failed to fit")
    top = max(fitted, key=lambda c: c[3].mean())[3]
    bar = top.mean() - top.std() / np.sqrt(len(top))
    best = next(c for c in fitted if c[3].mean() >= bar)
    k, cov, fallback, _ = best
    try:
        return fit_em(x, k, cov, seed=seed)
    except (TrajoodError, np.linalg.LinAlgError):
        return fallback


def save_gmm(model: GmmModel, path) -> None:
    def row(name, arr):
        return name + " " + " ".join(f"{v:.17g}" for v in np.ravel(arr))

    k, d = model.means.shape
    lines = [
        f"gmm K={k} D={d} cov_type={model.cov_type} n_iter={model.n_iter} loglik={model.log_likelihood:.17g}",
        row("shift", model.shift),
        row("scale", model.scale),
        row("weights", model.weights),
    ]
    for i in range(k):
        lines.append(row(f"mean{i}", model.means[i]))
        lines.append(row(f"cov{i}", model.covariances[i]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_gmm(path) -> GmmModel:
    lines = Path(path).read_text().splitlines()
    head = dict(kv.split("=", 1) for kv in lines[0].split()[1:])
    k, d = int(head["K"]), int(head["D"])
    rows = {}
    for ln in lines[1:]:
        if ln.strip():
            name, *vals = ln.split()
            rows[name] = np.array(vals, dtype=np.float64)
    return GmmModel(
        weights=rows["weights"],
        means=np.stack([rows[f"mean{i}"] for i in range(k)]),
        covariances=np.stack([rows[f"cov{i}"].reshape(d, d) for i in range(k)]),
        cov_type=head["cov_type"],
        shift=rows["shift"],
        scale=rows["scale"],
        log_likelihood=float(head["loglik"]),
        n_iter=int(head["n_iter"]),
    )
