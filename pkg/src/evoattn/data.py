"""Feature-map persistence, dataset manifests, splits, and synthetic data.

FMAP container (all little-endian):

    bytes 0-3   magic "FMAP"
    byte  4     version, 0x01
    byte  5     dtype, 0x01 = 32-bit IEEE-754 float
    byte  6     rank, 1..3
    byte  7     zero padding
    next rank*4 dimensions as unsigned 32-bit ints, ordered H, W, C
    payload     product(dims) float32 values, row-major, last index fastest

Manifests are UTF-8 JSON: {"feature_shape": [H, W, C], "samples":
[{"path": ..., "label": 0|1, "split": "train"|"val"|"test"?}, ...]} with
sample paths resolved relative to the manifest's directory.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError
from .tensor import Tensor

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1
FMAP_DTYPE_F32 = 1
_MAX_ELEMENTS = 2 ** 28  # 1 GiB of float32 payload

SPLITS = ("train", "val", "test")


class FmapError(ValueError):
    """Base class for FMAP decode failures."""


class FmapMagicError(FmapError):
    pass


class FmapVersionError(FmapError):
    pass


class FmapDtypeError(FmapError):
    pass


class FmapDimensionError(FmapError):
    pass


class FmapTruncatedError(FmapError):
    pass


def fmap_write(t: Tensor, dest) -> None:
    """Write one tensor to a path or binary stream; bit-exact round trip."""
    header = FMAP_MAGIC + bytes([FMAP_VERSION, FMAP_DTYPE_F32, t.rank, 0])
    dims = struct.pack(f"<{t.rank}I", *t.shape)
    payload = np.ascontiguousarray(t.array, dtype="<f4").tobytes()
    if hasattr(dest, "write"):
        dest.write(header + dims + payload)
    else:
        with open(dest, "wb") as f:
            f.write(header + dims + payload)


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FmapTruncatedError(f"{what}: expected {n} bytes, got {len(buf)}")
    return buf


def _fmap_read_stream(f) -> Tensor:
    magic = _read_exact(f, 4, "magic")
    if magic != FMAP_MAGIC:
        raise FmapMagicError(f"bad magic {magic!r}")
    version, dtype, rank, _pad = _read_exact(f, 4, "header")
    if version != FMAP_VERSION:
        raise FmapVersionError(f"unsupported version {version}")
    if dtype != FMAP_DTYPE_F32:
        raise FmapDtypeError(f"unsupported dtype {dtype}")
    if not 1 <= rank <= 3:
        raise FmapDimensionError(f"unsupported rank {rank}")
    dims = struct.unpack(f"<{rank}I", _read_exact(f, rank * 4, "dimensions"))
    if any(d == 0 for d in dims):
        raise FmapDimensionError(f"zero dimension in {dims}")
    count = math.prod(dims)
    if count > _MAX_ELEMENTS:
        raise FmapDimensionError(f"dimension overflow: {dims} has {count} elements")
    payload = _read_exact(f, count * 4, "payload")
    values = np.frombuffer(payload, dtype="<f4")
    return Tensor(dims, values)


def fmap_read(src) -> Tensor:
    """Read one tensor from a path or binary stream."""
    if hasattr(src, "read"):
        return _fmap_read_stream(src)
    with open(src, "rb") as f:
        return _fmap_read_stream(f)


@dataclass
class ManifestSample:
    path: str
    label: int
    split: str | None = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValidationError(f"label must be 0 or 1, got {self.label}")
        if self.split is not None and self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")


@dataclass
class DatasetManifest:
    feature_shape: tuple[int, int, int]
    samples: list[ManifestSample]
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        shape = tuple(int(d) for d in self.feature_shape)
        if len(shape) != 3 or any(d < 1 for d in shape):
            raise ValidationError(f"feature_shape must be [H, W, C] with positive dims, got {shape}")
        self.feature_shape = shape

    def of_split(self, split: str) -> list[ManifestSample]:
        return [s for s in self.samples if s.split == split]

    def has_splits(self) -> bool:
        return all(s.split is not None for s in self.samples)

    def resolve(self, sample: ManifestSample) -> Path:
        p = Path(sample.path)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    entries = []
    for s in manifest.samples:
        entry = {"path": s.path, "label": s.label}
        if s.split is not None:
            entry["split"] = s.split
        entries.append(entry)
    doc = {"feature_shape": list(manifest.feature_shape), "samples": entries}
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid manifest JSON") from exc
    try:
        samples = [
            ManifestSample(entry["path"], int(entry["label"]), entry.get("split"))
            for entry in doc["samples"]
        ]
        return DatasetManifest(tuple(doc["feature_shape"]), samples, root=path.parent)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: manifest is missing required fields") from exc


def load_labeled(manifest: DatasetManifest, split: str | None = None):
    """Load (Tensor, label) pairs, optionally restricted to one split."""
    out = []
    for sample in manifest.samples:
        if split is not None and sample.split != split:
            continue
        t = fmap_read(manifest.resolve(sample))
        if t.shape != manifest.feature_shape:
            raise ValidationError(
                f"{sample.path}: shape {t.shape} != manifest feature_shape {manifest.feature_shape}"
            )
        out.append((t, sample.label))
    return out


def _largest_remainder(n: int, fractions) -> list[int]:
    raw = [f * n for f in fractions]
    base = [int(math.floor(r)) for r in raw]
    leftover = n - sum(base)
    order = sorted(range(len(fractions)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def split_dataset(manifest: DatasetManifest, fractions, seed: int) -> DatasetManifest:
    """Stratified train/val/test assignment with largest-remainder rounding.

    Each class is shuffled independently (seeded) and partitioned by the
    fractions; any pre-existing split tags are overwritten.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ConfigError(f"need three positive fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {sum(fractions)}")

    rng = np.random.default_rng(seed)
    new_samples: list[ManifestSample | None] = [None] * len(manifest.samples)
    for label in (0, 1):
        idx = [i for i, s in enumerate(manifest.samples) if s.label == label]
        if not idx:
            continue
        counts = _largest_remainder(len(idx), fractions)
        if any(c < 1 for c in counts):
            raise ConfigError(
                f"class {label} has {len(idx)} samples; cannot place >= 1 in every split"
            )
        perm = rng.permutation(len(idx))
        shuffled = [idx[i] for i in perm]
        cursor = 0
        for split, count in zip(SPLITS, counts):
            for i in shuffled[cursor:cursor + count]:
                src = manifest.samples[i]
                new_samples[i] = ManifestSample(src.path, src.label, split)
            cursor += count
    if any(s is None for s in new_samples):
        raise ConfigError("manifest contains samples with labels outside {0, 1}")
    return DatasetManifest(manifest.feature_shape, new_samples, root=manifest.root)


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for the line-pattern stand-in dataset."""

    count_per_class: int
    feature_shape: tuple[int, int, int]
    line_intensity: float = 2.0
    noise_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "feature_shape", tuple(int(d) for d in self.feature_shape))
        if self.count_per_class < 1:
            raise ConfigError(f"count_per_class must be >= 1, got {self.count_per_class}")
        if len(self.feature_shape) != 3 or any(d < 1 for d in self.feature_shape):
            raise ConfigError(f"feature_shape must be [H, W, C], got {self.feature_shape}")
        if self.feature_shape[0] == 1 and self.feature_shape[1] == 1:
            raise ConfigError("spatial extent 1x1 cannot hold a line segment")
        if not self.line_intensity > 0:
            raise ConfigError(f"line_intensity must be > 0, got {self.line_intensity}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def _line_cells(rng: np.random.Generator, h: int, w: int) -> list[tuple[int, int]]:
    # Segment endpoints are rejection-sampled until the geometric length
    # reaches half the smaller spatial dimension.
    min_len = min(h, w) / 2.0
    while True:
        r0, r1 = rng.uniform(0, h - 1, size=2)
        c0, c1 = rng.uniform(0, w - 1, size=2)
        length = math.hypot(r1 - r0, c1 - c0)
        if length >= min_len:
            break
    steps = int(math.ceil(length * 2)) + 1
    cells = set()
    for t in np.linspace(0.0, 1.0, steps):
        cells.add((int(round(r0 + t * (r1 - r0))), int(round(c0 + t * (c1 - c0)))))
    return sorted(cells)


def synthesize(spec: SyntheticSpec, out_dir) -> DatasetManifest:
    """Write FMAP samples plus manifest.json; negatives are pure noise,
    positives carry an additive line on a contiguous half of the channels."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h, w, c = spec.feature_shape
    n_line_channels = max(1, c // 2)
    rng = np.random.default_rng(spec.seed)
    samples = []
    for label, prefix in ((0, "neg"), (1, "pos")):
        for i in range(spec.count_per_class):
            values = rng.normal(0.0, spec.noise_sigma, size=(h, w, c))
            if label == 1:
                cells = _line_cells(rng, h, w)
                start = int(rng.integers(0, c - n_line_channels + 1))
                for (r, col) in cells:
                    values[r, col, start:start + n_line_channels] += spec.line_intensity
            name = f"{prefix}_{i:04d}.fmap"
            fmap_write(Tensor.from_array(values), out_dir / name)
            samples.append(ManifestSample(name, label))
    manifest = DatasetManifest(spec.feature_shape, samples, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
