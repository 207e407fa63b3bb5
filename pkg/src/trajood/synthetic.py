"""Desk-scale benchmark data: an isotropic Gaussian mixture as the
in-distribution source and a mean-shifted copy of it as the anomaly source.

Run ``python -m trajood.synthetic OUT_DIR`` to write a ready-to-run
benchmark (datasets, mixture for the analytic predictor, config file).
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as tio
from .harness import Dataset
from .predictors import GaussianMixtureDataModel


@dataclass(frozen=True)
class ShiftBenchmark:
    model: GaussianMixtureDataModel
    shift: np.ndarray
    id_dataset: Dataset
    ood_dataset: Dataset


def make_mixture(rng, K=3, shape=(1, 32, 32), mean_spread=0.25, std=0.08) -> GaussianMixtureDataModel:
    means = rng.uniform(-mean_spread, mean_spread, (K, *shape))
    return GaussianMixtureDataModel(np.full(K, 1.0 / K), means, np.full(K, std))


def to_unit_tensor(x) -> tio.ImageTensor:
    """Signed-range samples to a [0, 1] tensor; the rare tail draw beyond
    [-1, 1] is clipped."""
    return tio.normalize(tio.ImageTensor(np.clip(x, -1.0, 1.0), tio.SIGNED), tio.UNIT)


def shift_benchmark(seed=0, n_val=200, n_test=200, n_ood=200, shift_stds=4.0, null=False,
                    K=3, shape=(1, 32, 32), std=0.08) -> ShiftBenchmark:
    """ID val/test sets and an OOD test set whose every pixel mean moves by
    ``shift_stds`` component stds (random sign per pixel). ``null`` makes the
    OOD set a fresh draw from the ID mixture instead."""
    rng = np.random.default_rng(seed)
    model = make_mixture(rng, K, shape, std=std)
    shift = shift_stds * std * rng.choice([-1.0, 1.0], size=shape)
    val, _ = model.sample(n_val, rng)
    test, _ = model.sample(n_test, rng)
    ood, _ = model.sample(n_ood, rng, shift=None if null else shift)
    id_ds = Dataset("mixture", to_unit_tensor(test), to_unit_tensor(val))
    ood_ds = Dataset("resample" if null else "shifted", to_unit_tensor(ood))
    return ShiftBenchmark(model, shift, id_ds, ood_ds)


def write_benchmark(bench: ShiftBenchmark, out_dir) -> Path:
    out_dir = Path(out_dir)
    id_dir = out_dir / bench.id_dataset.name
    ood_dir = out_dir / bench.ood_dataset.name
    tio.write_split(id_dir, "val", bench.id_dataset.val)
    tio.write_split(id_dir, "test", bench.id_dataset.test)
    tio.write_split(ood_dir, "test", bench.ood_dataset.test)
    bench.model.save(out_dir / "mixture")
    cfg = out_dir / "bench.cfg"
    cfg.write_text(
        f"datasets = {bench.id_dataset.name},{bench.ood_dataset.name}\n"
        "predictor = analytic:mixture\n"
        "resize = 32\n"
        "seed = 0\n"
    )
    return cfg


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n", type=int, default=200, help="samples per split")
    ap.add_argument("--null", action="store_true", help="OOD set drawn from the ID mixture")
    args = ap.parse_args(argv)
    bench = shift_benchmark(args.seed, args.n, args.n, args.n, null=args.null)
    print(write_benchmark(bench, args.out_dir))


if __name__ == "__main__":
    main()
