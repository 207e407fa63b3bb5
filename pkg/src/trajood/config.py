"""Plain-text ``key = value`` run configuration."""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError
from .gmm import COV_TYPES, GmmGrid

# key -> (type, default); None default means "required where used"
KEYS = {
    "datasets": (str, None),
    "predictor": (str, None),
    "mode": (str, "ddim-inversion"),
    "T": (int, 1000),
    "beta_start": (float, 1e-4),
    "beta_end": (float, 0.02),
    "sigma_convention": (str, "vp"),
    "T_prime": (int, 10),
    "use_error": (bool, True),
    "use_ssim": (bool, True),
    "ssim_window": (int, 11),
    "ssim_std": (float, 1.5),
    "gmm_grid": (str, "1-10:diag,full"),
    "holdout_fraction": (float, 0.2),
    "resize": (int, 32),
    "value_range": (str, "unit"),
    "seed": (int, 0),
    "threads": (int, 0),
    "batch_size": (int, 128),
    # convert / train-denoiser / dump-trajectories / fit-gmm / report
    "input": (str, None),
    "split": (str, "test"),
    "data": (str, None),
    "epochs": (int, 10),
    "lr": (float, 1e-4),
    "scores": (str, None),
    "result": (str, None),
}
PATH_KEYS = ("input", "data", "scores", "result")


def _parse_bool(text, key):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}", key)


def coerce(key, text):
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}", key)
    typ = KEYS[key][0]
    if typ is bool:
        return _parse_bool(text, key)
    try:
        return typ(text.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {typ.__name__}", key) from None


def parse_assignment(line):
    key, sep, value = line.partition("=")
    if not sep:
        raise ConfigError(f"expected key=value, got {line!r}")
    return key.strip(), value.strip()


def _resolve_paths(key, value, base: Path):
    if key == "datasets":
        return ",".join(str((base / p.strip()).resolve()) for p in value.split(",") if p.strip())
    if key == "predictor" and ":" in value:
        kind, _, loc = value.partition(":")
        return f"{kind}:{(base / loc).resolve()}"
    if key in PATH_KEYS:
        return str((base / value).resolve())
    return value


def load_config(path, overrides=()) -> dict:
    """Parse a config file, then apply ``key=value`` overrides in order.

    Relative paths resolve against the config file's directory (overrides
    against the working directory). The returned dict holds every known key,
    with defaults filled in.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", "config")
    raw = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, value = parse_assignment(line)
        if key not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}", key)
        raw[key] = _resolve_paths(key, value, path.parent)
    for item in overrides:
        key, value = parse_assignment(item)
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r} in --set", key)
        raw[key] = _resolve_paths(key, value, Path.cwd())
    cfg = {k: d for k, (_, d) in KEYS.items()}
    for key, value in raw.items():
        cfg[key] = coerce(key, value)
    return cfg


def format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: dict) -> str:
    lines = ["# effective configuration"]
    for key in KEYS:
        if cfg.get(key) is not None:
            lines.append(f"{key} = {format_value(cfg[key])}")
    return "\n".join(lines) + "\n"


def parse_grid(text: str) -> GmmGrid:
    """``"1-10:diag,full"`` or ``"1,3,5:diag"``; the covariance part is optional."""
    ks_part, _, cov_part = text.partition(":")
    ks = []
    try:
        for tok in ks_part.split(","):
            tok = tok.strip()
            if "-" in tok:
                lo, hi = tok.split("-")
                ks.extend(range(int(lo), int(hi) + 1))
            elif tok:
                ks.append(int(tok))
    except ValueError:
        raise ConfigError(f"gmm_grid: bad component list {ks_part!r}", "gmm_grid") from None
    covs = tuple(c.strip() for c in cov_part.split(",") if c.strip()) or COV_TYPES
    if not ks or any(k < 1 for k in ks):
        raise ConfigError("gmm_grid: need at least one K >= 1", "gmm_grid")
    if any(c not in COV_TYPES for c in covs):
        raise ConfigError(f"gmm_grid: covariance types must be among {COV_TYPES}", "gmm_grid")
    return GmmGrid(tuple(ks), covs)
