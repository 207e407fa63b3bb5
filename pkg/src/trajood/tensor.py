"""Image tensor container, value-range handling, bilinear resizing and the
``.dpv2`` binary tensor format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, TensorFormatError

UNIT = "unit"  # [0, 1]
SIGNED = "signed"  # [-1, 1]
RANGES = {UNIT: (0.0, 1.0), SIGNED: (-1.0, 1.0)}

MAGIC = b"DPV2"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sHBB")
SUFFIX = ".dpv2"


@dataclass(frozen=True)
class ImageTensor:
    """Immutable N x C x H x W float32 batch with a declared value range."""

    data: np.ndarray
    value_range: str = SIGNED

    def __post_init__(self):
        if self.value_range not in RANGES:
            raise InvalidArgumentError(f"unknown value range {self.value_range!r}")
        arr = np.array(self.data, dtype=np.float32, copy=True)
        if arr.ndim != 4 or min(arr.shape) < 1:
            raise InvalidArgumentError(f"expected a non-empty N x C x H x W array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("image tensor contains non-finite values")
        lo, hi = RANGES[self.value_range]
        if arr.min() < lo or arr.max() > hi:
            raise InvalidArgumentError(
                f"values [{arr.min():.6g}, {arr.max():.6g}] outside declared range {self.value_range} [{lo}, {hi}]"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def shape(self):
        return self.data.shape

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, idx):
        sub = self.data[idx]
        if sub.ndim == 3:
            sub = sub[None]
        return ImageTensor(sub, self.value_range)


def concat(tensors):
    tensors = list(tensors)
    if not tensors:
        raise InvalidArgumentError("nothing to concatenate")
    ranges = {t.value_range for t in tensors}
    if len(ranges) != 1:
        raise InvalidArgumentError(f"mixed value ranges {sorted(ranges)}")
    return ImageTensor(np.concatenate([t.data for t in tensors]), ranges.pop())


def normalize(x: ImageTensor, target: str) -> ImageTensor:
    """Affinely map ``x`` from its declared range onto ``target``."""
    if target not in RANGES:
        raise InvalidArgumentError(f"unknown value range {target!r}")
    if target == x.value_range:
        return x
    src_lo, src_hi = RANGES[x.value_range]
    dst_lo, dst_hi = RANGES[target]
    scale = (dst_hi - dst_lo) / (src_hi - src_lo)
    out = (x.data.astype(np.float64) - src_lo) * scale + dst_lo
    # float32 rounding can step a hair outside the closed interval
    return ImageTensor(np.clip(out, dst_lo, dst_hi), target)


def _axis_weights(n_in, n_out):
    # half-pixel centres (align_corners=False), edge-clamped
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(x: ImageTensor, out_h: int, out_w: int) -> ImageTensor:
    if int(out_h) < 1 or int(out_w) < 1:
        raise InvalidArgumentError(f"target size must be positive, got {out_h}x{out_w}")
    n, c, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return x
    d = x.data.astype(np.float64)
    lo, hi, f = _axis_weights(h, out_h)
    d = d[:, :, lo, :] * (1 - f)[:, None] + d[:, :, hi, :] * f[:, None]
    lo, hi, f = _axis_weights(w, out_w)
    d = d[..., lo] * (1 - f) + d[..., hi] * f
    lo_v, hi_v = RANGES[x.value_range]
    return ImageTensor(np.clip(d, lo_v, hi_v), x.value_range)


def write_array(path, arr) -> None:
    """Write any finite-or-not float32 array of rank <= 255 to ``path``."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim > 255:
        raise InvalidArgumentError("rank too large for container")
    head = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(head + dims + arr.tobytes())


def read_array(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TensorFormatError("truncated header", len(raw))
    magic, version, dtype, rank = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}", 4)
    if dtype != DTYPE_F32:
        raise TensorFormatError(f"unsupported dtype code {dtype}", 6)
    off = _HEADER.size
    if len(raw) < off + 4 * rank:
        raise TensorFormatError("truncated dims", len(raw))
    dims = struct.unpack_from(f"<{rank}I", raw, off)
    off += 4 * rank
    expected = int(np.prod(dims, dtype=np.int64)) * 4
    if len(raw) - off != expected:
        raise TensorFormatError(
            f"payload is {len(raw) - off} bytes but dims {tuple(dims)} need {expected}", off
        )
    return np.frombuffer(raw, dtype="<f4", offset=off).reshape(dims).astype(np.float32)


def write_tensor_file(path, x: ImageTensor) -> None:
    write_array(path, x.data)


def read_tensor_file(path, value_range: str = UNIT) -> ImageTensor:
    """Read a rank-4 container file. The format carries no range tag, so the
    caller declares it."""
    arr = read_array(path)
    if arr.ndim != 4:
        raise TensorFormatError(f"expected rank 4, found rank {arr.ndim}", 7)
    return ImageTensor(arr, value_range)


def read_split(dataset_dir, split: str, value_range: str = UNIT) -> ImageTensor:
    """Concatenate every ``.dpv2`` batch under ``<dataset_dir>/<split>/`` in
    lexicographic file order."""
    d = Path(dataset_dir) / split
    files = sorted(d.glob(f"*{SUFFIX}"))
    if not files:
        raise InvalidArgumentError(f"no {SUFFIX} files in {d}")
    return concat(read_tensor_file(f, value_range) for f in files)


def write_split(dataset_dir, split: str, x: ImageTensor, batch_size: int = 256) -> list[Path]:
    d = Path(dataset_dir) / split
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, start in enumerate(range(0, len(x), batch_size)):
        p = d / f"batch_{i:05d}{SUFFIX}"
        write_tensor_file(p, x[start:start + batch_size])
        paths.append(p)
    return paths
