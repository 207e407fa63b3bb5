"""End-to-end benchmark: trajectories -> 6D scores -> GMM on ID validation
scores -> AUROC of ID test vs each OOD test set."""

from __future__ import annotations

import hashlib
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import tensor as tio
from .config import format_value, parse_grid
from .errors import ConfigError, InvalidArgumentError
from .gmm import GmmGrid, GmmModel, anomaly_score, grid_search
from .predictors import AnalyticPredictor, GaussianMixtureDataModel, file_predictor
from .schedule import SIGMA_CONVENTIONS, DiffusionSchedule, make_linear_schedule
from .scoring import compute_score
from .trajectory import MODES, TrajectoryConfig, extract

log = logging.getLogger(__name__)

RESIZE_TARGETS = (32, 64)


def auroc(scores_id, scores_ood) -> float:
    """P(OOD score > ID score) + 0.5 P(tie), from mid-ranks (Mann-Whitney U)."""
    a = np.asarray(scores_id, dtype=np.float64).ravel()
    b = np.asarray(scores_ood, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise InvalidArgumentError("AUROC needs non-empty ID and OOD score lists")
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[a.size:].sum() - b.size * (b.size + 1) / 2.0
    return float(u / (a.size * b.size))


def derive_seed(master: int, name: str) -> int:
    """Stable per-name seed so adding a dataset leaves the others' draws alone."""
    digest = hashlib.sha256(f"{int(master)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class Dataset:
    name: str
    test: tio.ImageTensor
    val: tio.ImageTensor | None = None

    @classmethod
    def from_dir(cls, path, value_range=tio.UNIT, with_val=False):
        path = Path(path)
        val = tio.read_split(path, "val", value_range) if with_val else None
        return cls(path.name, tio.read_split(path, "test", value_range), val)


@dataclass
class BenchmarkSpec:
    id_dataset: Dataset
    ood_datasets: list
    predictor: object
    schedule: DiffusionSchedule = field(default_factory=make_linear_schedule)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    use_error: bool = True
    use_ssim: bool = True
    grid: GmmGrid = field(default_factory=GmmGrid)
    holdout_fraction: float = 0.2
    resize: int = 32
    seed: int = 0
    threads: int = 1
    batch_size: int = 128
    ssim_window: int = 11
    ssim_std: float = 1.5
    echo: dict = field(default_factory=dict)

    def validate(self):
        if self.resize not in RESIZE_TARGETS:
            raise ConfigError(f"resize must be one of {RESIZE_TARGETS}, got {self.resize}", "resize")
        if self.id_dataset.val is None:
            raise ConfigError("the in-distribution dataset needs a val split", "datasets")
        if not self.ood_datasets:
            raise ConfigError("at least one OOD dataset is required", "datasets")
        try:
            self.trajectory.validate(self.schedule)
        except InvalidArgumentError as exc:
            raise ConfigError(str(exc), "T_prime" if "T_prime" in str(exc) else "mode") from None


@dataclass
class BenchmarkResult:
    pairs: list  # (id_name, ood_name, auroc)
    scores: dict  # split label -> (sample_ids, (n, 6) scores, anomaly scores)
    config: dict
    gmm: GmmModel
    timings: dict


def prepare(x: tio.ImageTensor, size: int) -> tio.ImageTensor:
    # resize first, then map to the signed range used by the diffusion maths
    return tio.normalize(tio.resize_bilinear(x, size, size), tio.SIGNED)


def score_split(spec: BenchmarkSpec, label: str, x: tio.ImageTensor):
    """6D scores for one split, processed in fixed-size chunks."""
    data = x.data.astype(np.float64)
    ids = [f"{label}/{i:06d}" for i in range(len(data))]
    out = []
    for start in range(0, len(data), spec.batch_size):
        chunk = slice(start, start + spec.batch_size)
        cfg = spec.trajectory
        if cfg.mode != MODES[0]:
            cfg = TrajectoryConfig(cfg.mode, cfg.n_steps, derive_seed(spec.seed, f"{label}#{start}"))
        rec = extract(data[chunk], spec.predictor, spec.schedule, cfg, sample_ids=ids[chunk])
        out.append(compute_score(data[chunk], rec, spec.use_error, spec.use_ssim,
                                 spec.ssim_window, spec.ssim_std))
    return ids, np.concatenate(out)


def run_benchmark(spec: BenchmarkSpec) -> BenchmarkResult:
    spec.validate()
    timings = {}
    t0 = time.perf_counter()
    splits = {f"{spec.id_dataset.name}/val": spec.id_dataset.val,
              f"{spec.id_dataset.name}/test": spec.id_dataset.test}
    for d in spec.ood_datasets:
        label = f"{d.name}/test"
        if label in splits:
            raise ConfigError(f"duplicate dataset name {d.name!r}", "datasets")
        splits[label] = d.test
    prepared = {k: prepare(v, spec.resize) for k, v in splits.items()}
    shapes = {k: v.shape[1:] for k, v in prepared.items()}
    if len(set(shapes.values())) != 1:
        raise ConfigError(f"datasets disagree in shape after resizing: {shapes}", "datasets")
    timings["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    threads = spec.threads or os.cpu_count() or 1
    labels = list(prepared)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(lambda k: score_split(spec, k, prepared[k]), labels))
    scored = dict(zip(labels, results))
    timings["scoring"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    val_label = f"{spec.id_dataset.name}/val"
    gmm = grid_search(scored[val_label][1], spec.grid, spec.holdout_fraction,
                      seed=derive_seed(spec.seed, "gmm"))
    timings["gmm"] = time.perf_counter() - t0

    table = {}
    for label, (ids, s) in scored.items():
        table[label] = (ids, s, anomaly_score(gmm, s) if label != val_label else None)
    id_test = table[f"{spec.id_dataset.name}/test"][2]
    pairs = [(spec.id_dataset.name, d.name, auroc(id_test, table[f"{d.name}/test"][2]))
             for d in spec.ood_datasets]
    log.info("benchmark timings: %s", {k: round(v, 3) for k, v in timings.items()})
    return BenchmarkResult(pairs, table, dict(spec.echo), gmm, timings)


def emit_report(result: BenchmarkResult) -> str:
    """Tab-separated AUROC table, one row per (ID, OOD) pair."""
    lines = [
        "# trajectory-statistic OOD benchmark",
        "# positive_class=OOD anomaly_score=-log_likelihood_under_val_gmm",
        f"# gmm K={result.gmm.K} cov_type={result.gmm.cov_type}",
    ]
    for key in sorted(result.config):
        lines.append(f"# config {key}={format_value(result.config[key])}")
    lines.append("id_dataset\tood_dataset\tauroc")
    for id_name, ood_name, a in result.pairs:
        lines.append(f"{id_name}\t{ood_name}\t{a:.4f}")
    mean = np.mean([a for *_, a in result.pairs])
    lines.append(f"# average_auroc={mean:.4f}")
    return "\n".join(lines) + "\n"


def parse_report(text: str):
    rows = []
    for line in text.splitlines():
        if not line or line.startswith("#") or line.startswith("id_dataset\t"):
            continue
        id_name, ood_name, a = line.split("\t")
        rows.append((id_name, ood_name, float(a)))
    return rows


def write_scores(result: BenchmarkResult, path) -> None:
    rows = ["split\tsample_id\ts1\ts2\ts3\ts4\ts5\ts6\tanomaly"]
    for label, (ids, s, anom) in result.scores.items():
        for i, sid in enumerate(ids):
            a = "" if anom is None else f"{anom[i]:.17g}"
            rows.append("\t".join([label, sid, *(f"{v:.17g}" for v in s[i]), a]))
    Path(path).write_text("\n".join(rows) + "\n")


def build_predictor(text: str, schedule: DiffusionSchedule):
    """``analytic:<mixture dir>``, ``denoiser:<weights dir>`` or ``file:<store>``."""
    kind, _, loc = text.partition(":")
    if not loc:
        raise ConfigError(f"predictor must look like kind:path, got {text!r}", "predictor")
    if not Path(loc).exists():
        raise ConfigError(f"predictor path does not exist: {loc}", "predictor")
    if kind == "analytic":
        return AnalyticPredictor(GaussianMixtureDataModel.load(loc), schedule)
    if kind == "denoiser":
        from .denoiser import TinyDenoiser
        return TinyDenoiser.load(loc)
    if kind == "file":
        return file_predictor(loc)
    raise ConfigError(f"unknown predictor kind {kind!r}", "predictor")


def schedule_from_config(cfg) -> DiffusionSchedule:
    if cfg["sigma_convention"] not in SIGMA_CONVENTIONS:
        raise ConfigError(f"sigma_convention must be one of {SIGMA_CONVENTIONS}", "sigma_convention")
    try:
        return make_linear_schedule(cfg["T"], cfg["beta_start"], cfg["beta_end"], cfg["sigma_convention"])
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc), "T") from None


def trajectory_from_config(cfg, schedule) -> TrajectoryConfig:
    tc = TrajectoryConfig(cfg["mode"], cfg["T_prime"], cfg["seed"])
    if tc.mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}", "mode")
    if not 1 <= tc.n_steps <= schedule.T:
        raise ConfigError(f"T_prime={tc.n_steps} violates 1 <= T_prime <= T={schedule.T}", "T_prime")
    return tc


def spec_from_config(cfg: dict) -> BenchmarkSpec:
    if not cfg.get("datasets"):
        raise ConfigError("datasets is required (ID directory first, then OOD directories)", "datasets")
    if not cfg.get("predictor"):
        raise ConfigError("predictor is required", "predictor")
    if cfg["value_range"] not in tio.RANGES:
        raise ConfigError(f"value_range must be one of {tuple(tio.RANGES)}", "value_range")
    if cfg["resize"] not in RESIZE_TARGETS:
        raise ConfigError(f"resize must be one of {RESIZE_TARGETS}", "resize")
    schedule = schedule_from_config(cfg)
    traj = trajectory_from_config(cfg, schedule)
    dirs = [Path(p) for p in cfg["datasets"].split(",")]
    for d in dirs:
        if not d.is_dir():
            raise ConfigError(f"dataset directory not found: {d}", "datasets")
    if len(dirs) < 2:
        raise ConfigError("datasets needs an ID directory and at least one OOD directory", "datasets")
    id_ds = Dataset.from_dir(dirs[0], cfg["value_range"], with_val=True)
    oods = [Dataset.from_dir(d, cfg["value_range"]) for d in dirs[1:]]
    echo_keys = ("datasets", "predictor", "mode", "T", "beta_start", "beta_end", "sigma_convention",
                 "T_prime", "use_error", "use_ssim", "ssim_window", "ssim_std", "gmm_grid",
                 "holdout_fraction", "resize", "value_range", "seed")
    return BenchmarkSpec(
        id_dataset=id_ds,
        ood_datasets=oods,
        predictor=build_predictor(cfg["predictor"], schedule),
        schedule=schedule,
        trajectory=traj,
        use_error=cfg["use_error"],
        use_ssim=cfg["use_ssim"],
        grid=parse_grid(cfg["gmm_grid"]),
        holdout_fraction=cfg["holdout_fraction"],
        resize=cfg["resize"],
        seed=cfg["seed"],
        threads=cfg["threads"],
        batch_size=cfg["batch_size"],
        ssim_window=cfg["ssim_window"],
        ssim_std=cfg["ssim_std"],
        echo={k: cfg[k] for k in echo_keys},
    )
