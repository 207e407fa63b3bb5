"""Command-line entry point.

    trajood VERB --config FILE [--set key=value ...] [--out DIR] [--quiet]

Exit codes: 0 success, 1 invalid input (bad flag, config key or value),
2 failure while running.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import tensor as tio
from .config import dump_config, load_config, parse_grid
from .errors import ConfigError, InvalidArgumentError
from .gmm import grid_search, save_gmm
from .harness import (BenchmarkResult, build_predictor, derive_seed, emit_report, prepare,
                      run_benchmark, schedule_from_config, spec_from_config,
                      trajectory_from_config, write_scores)
from .scoring import compute_score, read_score_table, write_score_table

log = logging.getLogger("trajood")

VERBS = ("convert", "train-denoiser", "dump-trajectories", "fit-gmm", "run-benchmark", "report")
EFFECTIVE_CONFIG = "effective.cfg"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parser():
    ap = _Parser(prog="trajood", description="Trajectory-statistic OOD detection with diffusion noise predictors.")
    ap.add_argument("verb", choices=VERBS)
    ap.add_argument("--config", required=True, help="key = value config file")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config key (repeatable, last one wins)")
    ap.add_argument("--out", default="out", help="output directory (default: ./out)")
    ap.add_argument("--quiet", action="store_true")
    return ap


def _require(cfg, key):
    if not cfg.get(key):
        raise ConfigError(f"{key} is required for this command", key)
    return cfg[key]


def cmd_convert(cfg, out: Path):
    """Array file (.npy, N x C x H x W float or N x H x W x C uint8) to a dataset split."""
    src = Path(_require(cfg, "input"))
    if not src.is_file():
        raise ConfigError(f"input file not found: {src}", "input")
    arr = np.load(src)
    if arr.ndim != 4:
        raise ConfigError(f"input must be a rank-4 array, got shape {arr.shape}", "input")
    if arr.dtype == np.uint8:
        arr = arr.transpose(0, 3, 1, 2) / 255.0 if arr.shape[-1] in (1, 3) else arr / 255.0
        value_range = tio.UNIT
    else:
        value_range = cfg["value_range"]
    x = tio.resize_bilinear(tio.ImageTensor(arr, value_range), cfg["resize"], cfg["resize"])
    paths = tio.write_split(out, cfg["split"], x, cfg["batch_size"])
    log.info("wrote %d file(s) to %s", len(paths), out / cfg["split"])


def cmd_train_denoiser(cfg, out: Path):
    from .denoiser import train_denoiser

    data_dir = Path(_require(cfg, "data"))
    x = prepare(tio.read_split(data_dir, "train", cfg["value_range"]), cfg["resize"])
    schedule = schedule_from_config(cfg)
    model = train_denoiser(x, schedule, cfg["epochs"], cfg["lr"], cfg["seed"],
                           batch_size=min(cfg["batch_size"], 64), trained_on=data_dir.name)
    model.save(out / "denoiser")
    (out / "loss.tsv").write_text(
        "epoch\tloss\n" + "".join(f"{i}\t{v:.17g}\n" for i, v in enumerate(model.loss_history))
    )


def cmd_dump_trajectories(cfg, out: Path):
    from .trajectory import TrajectoryConfig, dump_record, extract

    data_dir = Path(_require(cfg, "data"))
    schedule = schedule_from_config(cfg)
    traj = trajectory_from_config(cfg, schedule)
    predictor = build_predictor(_require(cfg, "predictor"), schedule)
    split = cfg["split"]
    x = prepare(tio.read_split(data_dir, split, cfg["value_range"]), cfg["resize"]).data.astype(np.float64)
    label = f"{data_dir.name}/{split}"
    ids = [f"{label}/{i:06d}" for i in range(len(x))]
    scores = []
    for start in range(0, len(x), cfg["batch_size"]):
        sl = slice(start, start + cfg["batch_size"])
        tc = traj if traj.mode == "ddim-inversion" else TrajectoryConfig(
            traj.mode, traj.n_steps, derive_seed(cfg["seed"], f"{label}#{start}"))
        rec = extract(x[sl], predictor, schedule, tc, sample_ids=[s.replace("/", "_") for s in ids[sl]])
        dump_record(rec, out / "trajectories")
        scores.append(compute_score(x[sl], rec, cfg["use_error"], cfg["use_ssim"],
                                    cfg["ssim_window"], cfg["ssim_std"]))
    write_score_table(out / "scores.tsv", ids, np.concatenate(scores))


def cmd_fit_gmm(cfg, out: Path):
    path = Path(_require(cfg, "scores"))
    if not path.is_file():
        raise ConfigError(f"scores table not found: {path}", "scores")
    _, s = read_score_table(path)
    model = grid_search(s, parse_grid(cfg["gmm_grid"]), cfg["holdout_fraction"],
                        seed=derive_seed(cfg["seed"], "gmm"))
    save_gmm(model, out / "gmm.txt")


def _result_json(result: BenchmarkResult) -> str:
    payload = {
        "positive_class": "OOD",
        "pairs": [{"id": a, "ood": b, "auroc": v} for a, b, v in result.pairs],
        "config": {k: result.config[k] for k in sorted(result.config)},
        "gmm": {"K": result.gmm.K, "cov_type": result.gmm.cov_type},
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def cmd_run_benchmark(cfg, out: Path):
    result = run_benchmark(spec_from_config(cfg))
    (out / "result.json").write_text(_result_json(result))
    (out / "report.tsv").write_text(emit_report(result))
    write_scores(result, out / "scores.tsv")
    save_gmm(result.gmm, out / "gmm.txt")


def cmd_report(cfg, out: Path):
    path = Path(_require(cfg, "result"))
    if not path.is_file():
        raise ConfigError(f"result file not found: {path}", "result")
    payload = json.loads(path.read_text())

    class _Gmm:
        K = payload["gmm"]["K"]
        cov_type = payload["gmm"]["cov_type"]

    result = BenchmarkResult([(p["id"], p["ood"], p["auroc"]) for p in payload["pairs"]],
                             {}, payload["config"], _Gmm(), {})
    (out / "report.tsv").write_text(emit_report(result))


COMMANDS = {
    "convert": cmd_convert,
    "train-denoiser": cmd_train_denoiser,
    "dump-trajectories": cmd_dump_trajectories,
    "fit-gmm": cmd_fit_gmm,
    "run-benchmark": cmd_run_benchmark,
    "report": cmd_report,
}


def dispatch(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    out = Path(args.out)
    try:
        cfg = load_config(args.config, args.overrides)
        out.mkdir(parents=True, exist_ok=True)
        (out / EFFECTIVE_CONFIG).write_text(dump_config(cfg))
        COMMANDS[args.verb](cfg, out)
    except (ConfigError, InvalidArgumentError) as exc:
        key = getattr(exc, "key", None)
        prefix = f"invalid value for '{key}': " if key else "invalid input: "
        print(f"trajood: {prefix}{exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - exit-code contract
        log.debug("run failed", exc_info=True)
        print(f"trajood: {args.verb} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(dispatch())
