"""Shared domain types, seeded randomness, and the deterministic parallel map.

Every stochastic operation in the toolkit receives an integer seed that is
derived from a single base seed and the index of the item being processed.
Because the derivation is a pure function, serial and parallel runs (and
runs on different platforms) produce bit-identical results.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

THREADS_ENV_VAR = "OCCLUBENCH_THREADS"


class ShapeMismatchError(ValueError):
    """Raised when images, masks, or saliency maps of unequal shape are combined."""


def derive_seed(base_seed: int, index: int) -> int:
    """Derive a child seed from ``base_seed`` and an item index.

    Applies the SplitMix64 finalizer to ``base_seed + (index + 1) * golden``
    where ``golden`` is 0x9E3779B97F4A7C15, all modulo 2**64.  The function is
    pure, so the result depends only on its arguments, never on call order,
    thread count, or platform.
    """
    z = (base_seed + (index + 1) * _GOLDEN) & _MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return z


@dataclass(frozen=True)
class SeedSequence:
    """A 64-bit base seed plus the fixed derivation rule of :func:`derive_seed`."""

    base_seed: int

    def derive(self, index: int) -> int:
        return derive_seed(self.base_seed, index)

    def child(self, index: int) -> "SeedSequence":
        return SeedSequence(self.derive(index))


def rng_from_seed(seed) -> np.random.Generator:
    """PCG64 generator for an integer seed; passes existing generators through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Image:
    """A single image: float64 array of shape (channels, height, width).

    Data is channel-planar and row-major within each plane.  Values are
    expected to be pre-normalized (see :func:`occlubench.dataio.normalize`);
    any finite range is accepted.
    """

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3:
            raise ValueError(f"image data must be (channels, h, w), got shape {d.shape}")
        if d.shape[0] not in (1, 3):
            raise ValueError(f"images must have 1 or 3 channels, got {d.shape[0]}")
        if not np.all(np.isfinite(d)):
            raise ValueError("image data contains non-finite values")
        object.__setattr__(self, "data", _readonly(d))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def check_same_shape(self, other: "Image") -> None:
        if self.data.shape != other.data.shape:
            raise ShapeMismatchError(
                f"image shapes differ: {self.data.shape} vs {other.data.shape}"
            )


@dataclass(frozen=True)
class Mask:
    """Per-pixel boolean cover map; True marks an occluded pixel."""

    covered: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.covered)
        if c.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {c.shape}")
        if c.dtype != np.bool_:
            if not np.all((c == 0) | (c == 1)):
                raise ValueError("mask values must be boolean or 0/1")
            c = c.astype(bool)
        if c.size == 0:
            raise ValueError("mask must have at least one pixel")
        object.__setattr__(self, "covered", _readonly(c))

    @property
    def height(self) -> int:
        return self.covered.shape[0]

    @property
    def width(self) -> int:
        return self.covered.shape[1]

    @property
    def covered_count(self) -> int:
        return int(np.count_nonzero(self.covered))

    @property
    def covered_fraction(self) -> float:
        return self.covered_count / self.covered.size

    def check_matches(self, img: Image) -> None:
        if (self.height, self.width) != (img.height, img.width):
            raise ShapeMismatchError(
                f"mask {self.height}x{self.width} does not match "
                f"image {img.height}x{img.width}"
            )


@dataclass(frozen=True)
class LabeledDataset:
    """Uniform-shape image stack with integer class labels and a split identity.

    ``images`` has shape (n, channels, height, width); ``labels`` has shape
    (n,) with values in [0, num_classes).
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str

    def __post_init__(self):
        imgs = np.asarray(self.images, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.int64)
        if imgs.ndim != 4:
            raise ValueError(f"images must be (n, c, h, w), got shape {imgs.shape}")
        if imgs.shape[1] not in (1, 3):
            raise ValueError(f"images must have 1 or 3 channels, got {imgs.shape[1]}")
        if labs.ndim != 1 or labs.shape[0] != imgs.shape[0]:
            raise ValueError("labels must be one integer per image")
        if not np.all(np.isfinite(imgs)):
            raise ValueError("image data contains non-finite values")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if labs.size and (labs.min() < 0 or labs.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        object.__setattr__(self, "images", _readonly(imgs))
        object.__setattr__(self, "labels", _readonly(labs))

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def channels(self) -> int:
        return self.images.shape[1]

    @property
    def height(self) -> int:
        return self.images.shape[2]

    @property
    def width(self) -> int:
        return self.images.shape[3]

    def image(self, index: int) -> Image:
        return Image(self.images[index])

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= len(self)):
            raise IndexError("subset index out of range")
        return LabeledDataset(
            self.images[idx], self.labels[idx], self.num_classes, self.split
        )

    def with_labels(self, labels: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.images, labels, self.num_classes, self.split)

    def with_images(self, images: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(images, self.labels, self.num_classes, self.split)


@dataclass(frozen=True)
class SubsetIndex:
    """Sorted unique indices into one split of a dataset."""

    split: str
    indices: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        idx = tuple(int(i) for i in self.indices)
        if any(i < 0 for i in idx):
            raise ValueError("subset indices must be non-negative")
        if len(set(idx)) != len(idx):
            raise ValueError("subset indices must be unique")
        object.__setattr__(self, "indices", tuple(sorted(idx)))

    def validate_against(self, dataset: LabeledDataset) -> None:
        if self.split != dataset.split:
            raise ValueError(
                f"subset is for split {self.split!r}, dataset is {dataset.split!r}"
            )
        if self.indices and self.indices[-1] >= len(dataset):
            raise IndexError(
                f"subset index {self.indices[-1]} out of range for "
                f"dataset of size {len(dataset)}"
            )


T = TypeVar("T")
U = TypeVar("U")


def thread_count(explicit: int | None = None) -> int:
    """Worker count: explicit argument, else OCCLUBENCH_THREADS, else 1."""
    if explicit is not None:
        if explicit < 1:
            raise ValueError("thread count must be >= 1")
        return explicit
    env = os.environ.get(THREADS_ENV_VAR)
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"{THREADS_ENV_VAR} must be >= 1, got {env}")
        return n
    return 1


def parallel_map(
    fn: Callable[[T], U], items: Iterable[T], threads: int | None = None
) -> list[U]:
    """Map ``fn`` over ``items``, returning results in input order.

    The work items themselves must be deterministic (seeded by index, not by
    a shared stream); under that contract the output is identical for any
    worker count.  With one worker the executor is bypassed entirely.
    """
    items = list(items)
    n = thread_count(threads)
    if n == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
