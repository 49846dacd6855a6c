"""Dataset loaders, interchange file formats, and run configuration.

Binary layouts (all multi-byte integers little-endian unless stated):

* CIFAR-style batch: sequence of 3073-byte records, each a label byte in
  [0, 10) followed by 3x1024 channel-planar pixel bytes (32x32, row-major).
* IDX images/labels: big-endian, magic 0x00000803 / 0x00000801, dimension
  sizes as u32, then raw u8 payload.
* Saliency file:  magic ``OBSM`` | u32 count | u32 h | u32 w | count*h*w
  float32 values, row-major per map, image order = dataset index order.
* Mask file:      magic ``OBMK`` | u32 count | u32 h | u32 w | count*h*w
  bytes, each 0 or 1, row-major.
* Prediction log: JSON Lines, one object per record with exactly the keys
  split, index, true_label, predicted_label; sorted by (split, index).
* Subset index:   text, header line ``split=<train|test>``, then one
  integer per line.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from occlubench.core import (
    LabeledDataset,
    Mask,
    SubsetIndex,
    derive_seed,
    rng_from_seed,
)

SALIENCY_MAGIC = b"OBSM"
MASKBANK_MAGIC = b"OBMK"

CIFAR_RECORD_BYTES = 3073
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class FormatError(ValueError):
    """Raised when an input file violates its documented layout."""


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class Normalization:
    """Per-channel mean/std applied to [0,1] pixels: (x - mean) / std."""

    mean: tuple[float, ...]
    std: tuple[float, ...]

    def __post_init__(self):
        if len(self.mean) != len(self.std):
            raise ValueError("mean and std must have equal length")
        if any(s <= 0 for s in self.std):
            raise ValueError("std values must be positive")
        object.__setattr__(self, "mean", tuple(float(m) for m in self.mean))
        object.__setattr__(self, "std", tuple(float(s) for s in self.std))

    def apply(self, images: np.ndarray) -> np.ndarray:
        c = images.shape[1]
        if len(self.mean) != c:
            raise ValueError(f"normalization is {len(self.mean)}-channel, data is {c}")
        m = np.array(self.mean)[None, :, None, None]
        s = np.array(self.std)[None, :, None, None]
        return (images - m) / s

    def invert(self, images: np.ndarray) -> np.ndarray:
        m = np.array(self.mean)[None, :, None, None]
        s = np.array(self.std)[None, :, None, None]
        return images * s + m

    def to_json(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_json(cls, obj: dict) -> "Normalization":
        return cls(tuple(obj["mean"]), tuple(obj["std"]))


def compute_normalization(images: np.ndarray) -> Normalization:
    """Per-channel mean/std of a raw (n, c, h, w) pixel stack in [0, 1]."""
    mean = images.mean(axis=(0, 2, 3))
    std = images.std(axis=(0, 2, 3))
    std = np.where(std > 0, std, 1.0)
    return Normalization(tuple(mean), tuple(std))


# ---------------------------------------------------------------------------
# CIFAR-style binary batches


def load_cifar10(
    paths: Sequence[str | Path],
    split: str,
    normalization: Normalization | None = None,
) -> LabeledDataset:
    """Parse 3073-byte-record batch files into a 10-class dataset.

    Pixels are scaled to [0, 1]; if ``normalization`` is given it is applied
    on top.  A file whose size is not a multiple of 3073, or a record whose
    label byte is >= 10, is rejected.
    """
    all_images = []
    all_labels = []
    for path in paths:
        raw = Path(path).read_bytes()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
            raise FormatError(
                f"{path}: size {len(raw)} is not a positive multiple of "
                f"{CIFAR_RECORD_BYTES}"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels = records[:, 0].astype(np.int64)
        bad = np.nonzero(labels >= 10)[0]
        if bad.size:
            raise FormatError(
                f"{path}: record {int(bad[0])} has label byte "
                f"{int(labels[bad[0]])} (must be < 10)"
            )
        pixels = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
        all_images.append(pixels)
        all_labels.append(labels)
    images = np.concatenate(all_images)
    if normalization is not None:
        images = normalization.apply(images)
    return LabeledDataset(images, np.concatenate(all_labels), 10, split)


def write_cifar10(
    path: str | Path,
    dataset: LabeledDataset,
    normalization: Normalization | None = None,
) -> None:
    """Inverse of :func:`load_cifar10` for 3-channel 32x32 datasets.

    If the dataset was normalized, pass the same constants so pixels are
    mapped back to bytes; values are clipped to [0, 255].
    """
    if dataset.images.shape[1:] != (3, 32, 32):
        raise ValueError("CIFAR batches require 3x32x32 images")
    images = dataset.images
    if normalization is not None:
        images = normalization.invert(images)
    pixels = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    records = np.empty((len(dataset), CIFAR_RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = dataset.labels.astype(np.uint8)
    records[:, 1:] = pixels.reshape(len(dataset), -1)
    Path(path).write_bytes(records.tobytes())


# ---------------------------------------------------------------------------
# IDX


def _read_idx_header(raw: bytes, path, expect_magic: int, dims: int) -> tuple:
    need = 4 * (1 + dims)
    if len(raw) < need:
        raise FormatError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expect_magic:
        raise FormatError(
            f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expect_magic:08x}"
        )
    return struct.unpack(f">{dims}I", raw[4:need])


def load_idx(
    images_path: str | Path,
    labels_path: str | Path,
    split: str,
    normalization: Normalization | None = None,
    num_classes: int = 10,
) -> LabeledDataset:
    """Parse an IDX image/label file pair into a grayscale dataset."""
    img_raw = Path(images_path).read_bytes()
    count, rows, cols = _read_idx_header(img_raw, images_path, IDX_IMAGES_MAGIC, 3)
    payload = img_raw[16:]
    if len(payload) != count * rows * cols:
        raise FormatError(
            f"{images_path}: payload is {len(payload)} bytes, "
            f"header implies {count * rows * cols}"
        )
    images = (
        np.frombuffer(payload, dtype=np.uint8)
        .reshape(count, 1, rows, cols)
        .astype(np.float64)
        / 255.0
    )

    lab_raw = Path(labels_path).read_bytes()
    (lab_count,) = _read_idx_header(lab_raw, labels_path, IDX_LABELS_MAGIC, 1)
    if lab_count != count:
        raise FormatError(
            f"{labels_path}: {lab_count} labels for {count} images"
        )
    if len(lab_raw) - 8 != lab_count:
        raise FormatError(f"{labels_path}: payload length mismatch")
    labels = np.frombuffer(lab_raw, dtype=np.uint8, offset=8).astype(np.int64)

    if normalization is not None:
        images = normalization.apply(images)
    return LabeledDataset(images, labels, num_classes, split)


def write_idx(
    images_path: str | Path,
    labels_path: str | Path,
    dataset: LabeledDataset,
    normalization: Normalization | None = None,
) -> None:
    """Inverse of :func:`load_idx` for single-channel datasets."""
    if dataset.channels != 1:
        raise ValueError("IDX output requires single-channel images")
    images = dataset.images
    if normalization is not None:
        images = normalization.invert(images)
    pixels = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    n, _, h, w = pixels.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(dataset.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# synthetic shapes


def _draw_shape(canvas: np.ndarray, shape_id: int, rng: np.random.Generator) -> None:
    size = canvas.shape[0]
    cy = size / 2 + rng.uniform(-size / 5, size / 5)
    cx = size / 2 + rng.uniform(-size / 5, size / 5)
    half = rng.uniform(size / 6, size / 4)
    value = rng.uniform(0.55, 0.95)
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    if shape_id == 0:  # filled rectangle, variable aspect
        sel = (np.abs(dy) <= half * rng.uniform(0.6, 1.4)) & (
            np.abs(dx) <= half * rng.uniform(0.6, 1.4)
        )
    elif shape_id == 1:  # filled disc
        sel = dy * dy + dx * dx <= half * half
    elif shape_id == 2:  # cross of two bars, variable bar width
        bar = max(half * rng.uniform(0.25, 0.45), 1.0)
        sel = ((np.abs(dy) <= bar) & (np.abs(dx) <= half)) | (
            (np.abs(dx) <= bar) & (np.abs(dy) <= half)
        )
    elif shape_id == 3:  # ring, variable thickness
        r2 = dy * dy + dx * dx
        sel = (r2 <= half * half) & (r2 >= (rng.uniform(0.45, 0.65) * half) ** 2)
    elif shape_id == 4:  # upward triangle
        sel = (dy >= -half) & (dy <= half) & (np.abs(dx) <= (dy + half) / 2)
    else:
        raise ValueError("synthetic data supports at most 5 classes")
    canvas[sel] = value


def _draw_clutter(canvas: np.ndarray, count: int, rng: np.random.Generator) -> None:
    """Small class-uninformative blobs: plausible overfitting fuel, never a
    label signal (every class gets the same distribution of them)."""
    size = canvas.shape[0]
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(count):
        cy, cx = rng.uniform(0, size, size=2)
        r = rng.uniform(size / 24, size / 10)
        value = rng.uniform(0.3, 0.9)
        sel = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        canvas[sel] = value


def gen_synthetic(
    num_classes: int,
    per_class: int,
    size: int,
    seed: int,
    split: str = "train",
    channels: int = 1,
    noise: float = 0.15,
    clutter: int = 2,
    normalization: Normalization | None = None,
) -> LabeledDataset:
    """Class-conditional shape images with positional jitter and pixel noise.

    Class c draws shape c (rectangle, disc, cross, ring, triangle) with
    per-image geometry variation, plus ``clutter`` class-uninformative
    blobs.  Pixel values live in [0, 1] before optional normalization.
    Every image is generated from a seed derived from ``seed`` and the
    image index, so the dataset is reproducible and order-independent.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    n = num_classes * per_class
    images = np.zeros((n, channels, size, size))
    labels = np.zeros(n, dtype=np.int64)
    for i in range(n):
        label = i % num_classes
        rng = rng_from_seed(derive_seed(seed, i))
        canvas = np.zeros((size, size))
        if clutter > 0:
            _draw_clutter(canvas, clutter, rng)
        _draw_shape(canvas, label, rng)
        img = np.repeat(canvas[None], channels, axis=0)
        if channels == 3:
            # random (class-uninformative) tint so color carries no signal
            img = img * rng.uniform(0.6, 1.0, size=(3, 1, 1))
        if noise > 0:
            img = img + rng.normal(0.0, noise, size=img.shape)
        images[i] = np.clip(img, 0.0, 1.0)
        labels[i] = label
    if normalization is not None:
        images = normalization.apply(images)
    return LabeledDataset(images, labels, num_classes, split)


# ---------------------------------------------------------------------------
# prediction logs (JSON Lines)


@dataclass(frozen=True)
class PredictionRecord:
    split: str
    index: int
    true_label: int
    predicted_label: int

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        for name in ("index", "true_label", "predicted_label"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")

    @property
    def correct(self) -> bool:
        return self.true_label == self.predicted_label


_RECORD_FIELDS = ("split", "index", "true_label", "predicted_label")


@dataclass(frozen=True)
class PredictionLog:
    """Prediction records with unique (split, index), stored sorted."""

    records: tuple[PredictionRecord, ...]

    def __init__(self, records: Iterable[PredictionRecord]):
        recs = tuple(sorted(records, key=lambda r: (r.split, r.index)))
        seen = set()
        for r in recs:
            key = (r.split, r.index)
            if key in seen:
                raise ValueError(f"duplicate record for {key}")
            seen.add(key)
        object.__setattr__(self, "records", recs)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def key_set(self) -> set[tuple[str, int]]:
        return {(r.split, r.index) for r in self.records}

    def for_split(self, split: str) -> "PredictionLog":
        return PredictionLog(r for r in self.records if r.split == split)

    def restrict(self, subset: SubsetIndex) -> "PredictionLog":
        wanted = set(subset.indices)
        return PredictionLog(
            r
            for r in self.records
            if r.split != subset.split or r.index in wanted
        )


def read_prediction_log(path: str | Path) -> PredictionLog:
    records = []
    seen: dict[tuple[str, int], int] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({e.msg})") from e
            if not isinstance(obj, dict) or set(obj) != set(_RECORD_FIELDS):
                raise FormatError(
                    f"{path}:{lineno}: record must have exactly the fields "
                    f"{_RECORD_FIELDS}"
                )
            try:
                rec = PredictionRecord(
                    obj["split"], obj["index"], obj["true_label"], obj["predicted_label"]
                )
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from e
            key = (rec.split, rec.index)
            if key in seen:
                raise FormatError(
                    f"{path}:{lineno}: duplicate (split, index) {key}, "
                    f"first seen on line {seen[key]}"
                )
            seen[key] = lineno
            records.append(rec)
    return PredictionLog(records)


def write_prediction_log(path: str | Path, log: PredictionLog) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in log.records:
            f.write(
                json.dumps(
                    {
                        "split": r.split,
                        "index": r.index,
                        "true_label": r.true_label,
                        "predicted_label": r.predicted_label,
                    },
                    separators=(", ", ": "),
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# saliency files (OBSM)


def write_saliency(path: str | Path, maps: np.ndarray) -> None:
    """Write an (n, h, w) stack of non-negative float maps."""
    maps = np.asarray(maps, dtype=np.float32)
    if maps.ndim != 3:
        raise ValueError(f"saliency stack must be (n, h, w), got {maps.shape}")
    if not np.all(np.isfinite(maps)):
        raise ValueError("saliency values must be finite")
    if maps.size and maps.min() < 0:
        raise ValueError("saliency values must be non-negative")
    n, h, w = maps.shape
    with open(path, "wb") as f:
        f.write(SALIENCY_MAGIC)
        f.write(struct.pack("<III", n, h, w))
        f.write(np.ascontiguousarray(maps, dtype="<f4").tobytes())


def read_saliency(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != SALIENCY_MAGIC:
        raise FormatError(f"{path}: not a saliency file (bad magic)")
    n, h, w = struct.unpack("<III", raw[4:16])
    expected = n * h * w * 4
    if len(raw) - 16 != expected:
        raise FormatError(
            f"{path}: payload is {len(raw) - 16} bytes, header implies {expected}"
        )
    maps = np.frombuffer(raw, dtype="<f4", offset=16).reshape(n, h, w)
    if not np.all(np.isfinite(maps)):
        raise FormatError(f"{path}: saliency values must be finite")
    if maps.size and maps.min() < 0:
        raise FormatError(f"{path}: saliency values must be non-negative")
    return maps.astype(np.float32)


# ---------------------------------------------------------------------------
# mask files (OBMK)


def write_mask_bank(path: str | Path, masks: Sequence[Mask]) -> None:
    if not masks:
        raise ValueError("cannot write an empty mask file")
    h, w = masks[0].height, masks[0].width
    for m in masks:
        if (m.height, m.width) != (h, w):
            raise ValueError("all masks in a file must share one shape")
    with open(path, "wb") as f:
        f.write(MASKBANK_MAGIC)
        f.write(struct.pack("<III", len(masks), h, w))
        for m in masks:
            f.write(m.covered.astype(np.uint8).tobytes())


def read_mask_bank(path: str | Path) -> list[Mask]:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MASKBANK_MAGIC:
        raise FormatError(f"{path}: not a mask file (bad magic)")
    n, h, w = struct.unpack("<III", raw[4:16])
    expected = n * h * w
    if len(raw) - 16 != expected:
        raise FormatError(
            f"{path}: payload is {len(raw) - 16} bytes, header implies {expected}"
        )
    body = np.frombuffer(raw, dtype=np.uint8, offset=16)
    if body.size and body.max() > 1:
        raise FormatError(f"{path}: mask bytes must be 0 or 1")
    return [Mask(body[i * h * w : (i + 1) * h * w].reshape(h, w).astype(bool)) for i in range(n)]


# ---------------------------------------------------------------------------
# subset index files


def read_subset_index(path: str | Path) -> SubsetIndex:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("split="):
        raise FormatError(f"{path}:1: expected header line 'split=<train|test>'")
    split = lines[0][len("split="):].strip()
    if split not in ("train", "test"):
        raise FormatError(f"{path}:1: split must be 'train' or 'test', got {split!r}")
    indices = []
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        try:
            indices.append(int(line))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: not an integer index: {line!r}") from None
    try:
        return SubsetIndex(split, tuple(indices))
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


def write_subset_index(path: str | Path, subset: SubsetIndex) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"split={subset.split}\n")
        for i in subset.indices:
            f.write(f"{i}\n")


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """JSON run configuration for the CLI; see README for the schema."""

    dataset: dict
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    normalization: dict | str | None = "auto"

    _ALLOWED_TOP = ("dataset", "model", "train", "normalization")

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from e
        if not isinstance(obj, dict):
            raise FormatError(f"{path}: top-level value must be an object")
        errors = cls.validate_dict(obj)
        if errors:
            raise FormatError(
                f"{path}: invalid configuration:\n  - " + "\n  - ".join(errors)
            )
        return cls(
            dataset=obj["dataset"],
            model=obj.get("model", {}),
            train=obj.get("train", {}),
            normalization=obj.get("normalization", "auto"),
        )

    @staticmethod
    def validate_dict(obj: dict) -> list[str]:
        """Collect every validation problem rather than stopping at the first."""
        errors: list[str] = []
        for key in obj:
            if key not in RunConfig._ALLOWED_TOP:
                errors.append(f"unknown top-level key {key!r}")
        ds = obj.get("dataset")
        if not isinstance(ds, dict):
            errors.append("'dataset' section is required and must be an object")
            ds = {}
        kind = ds.get("kind")
        if kind not in ("synthetic", "cifar10", "idx"):
            errors.append("dataset.kind must be one of 'synthetic', 'cifar10', 'idx'")
        if kind == "synthetic":
            for name, lo in (("num_classes", 2), ("per_class", 1), ("size", 8)):
                v = ds.get(name)
                if not isinstance(v, int) or v < lo:
                    errors.append(f"dataset.{name} must be an integer >= {lo}")
            if ds.get("channels", 1) not in (1, 3):
                errors.append("dataset.channels must be 1 or 3")
        elif kind == "cifar10":
            for name in ("train_paths", "test_paths"):
                v = ds.get(name)
                if not isinstance(v, list) or not v:
                    errors.append(f"dataset.{name} must be a non-empty list of paths")
        elif kind == "idx":
            for name in ("train_images", "train_labels", "test_images", "test_labels"):
                if not isinstance(ds.get(name), str):
                    errors.append(f"dataset.{name} must be a path string")

        model = obj.get("model", {})
        if not isinstance(model, dict):
            errors.append("'model' must be an object")
            model = {}
        cc = model.get("conv_channels", [8, 16])
        if (
            not isinstance(cc, list)
            or len(cc) != 2
            or not all(isinstance(c, int) and c >= 1 for c in cc)
        ):
            errors.append("model.conv_channels must be two positive integers")
        ks = model.get("kernel_size", 3)
        if not isinstance(ks, int) or ks < 1 or ks % 2 == 0:
            errors.append("model.kernel_size must be a positive odd integer")

        tr = obj.get("train", {})
        if not isinstance(tr, dict):
            errors.append("'train' must be an object")
            tr = {}
        if not isinstance(tr.get("epochs", 1), int) or tr.get("epochs", 1) < 1:
            errors.append("train.epochs must be an integer >= 1")
        if not isinstance(tr.get("batch_size", 128), int) or tr.get("batch_size", 128) < 1:
            errors.append("train.batch_size must be an integer >= 1")
        mom = tr.get("momentum", 0.9)
        if not isinstance(mom, (int, float)) or not 0 <= mom < 1:
            errors.append("train.momentum must lie in [0, 1)")
        mode = tr.get("mode", "basic")
        if mode not in ("basic", "mixup", "cutmix", "fmix", "rm", "rm3"):
            errors.append(
                "train.mode must be one of basic, mixup, cutmix, fmix, rm, rm3"
            )
        if mode in ("rm", "rm3"):
            bank = tr.get("mask_bank_path")
            bank_seed = tr.get("mask_bank_seed")
            if bank is None and bank_seed is None:
                errors.append(
                    f"train.mode={mode} requires mask_bank_path or mask_bank_seed"
                )
        sched = tr.get("lr_schedule")
        if sched is not None:
            ok = (
                isinstance(sched, list)
                and len(sched) >= 1
                and all(
                    isinstance(e, list)
                    and len(e) == 2
                    and isinstance(e[0], int)
                    and isinstance(e[1], (int, float))
                    and e[1] > 0
                    for e in sched
                )
            )
            if not ok:
                errors.append("train.lr_schedule must be a list of [epoch, lr] pairs")
            elif sched[0][0] != 0 or any(
                b[0] <= a[0] for a, b in zip(sched, sched[1:])
            ):
                errors.append(
                    "train.lr_schedule epochs must start at 0 and strictly increase"
                )
        norm = obj.get("normalization", "auto")
        if norm is not None and norm != "auto":
            if not isinstance(norm, dict) or set(norm) != {"mean", "std"}:
                errors.append("normalization must be 'auto', null, or {mean, std}")
            else:
                try:
                    Normalization.from_json(norm)
                except (ValueError, TypeError) as e:
                    errors.append(f"normalization: {e}")
        return errors
