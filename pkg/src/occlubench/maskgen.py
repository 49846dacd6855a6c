"""Mask construction policies.

Four ways to decide which pixels get covered: an exact-fraction axis-aligned
rectangle, thresholded low-pass noise sampled in Fourier space, a saliency
threshold, and fixed banks of pre-sampled masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from occlubench.core import Mask, derive_seed, rng_from_seed


@dataclass(frozen=True)
class FourierMaskParams:
    """Low-pass filter decay and the Beta(alpha, alpha) mixing distribution."""

    decay_power: float = 3.0
    alpha: float = 1.0

    def __post_init__(self):
        if not self.decay_power > 0:
            raise ValueError("decay_power must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


def round_half_up(x: float) -> int:
    """Deterministic rounding used for pixel counts: .5 always rounds up."""
    return int(math.floor(x + 0.5))


def _check_fraction(fraction: float) -> None:
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")


def topk_mask(field: np.ndarray, k: int) -> Mask:
    """Cover exactly the k largest-valued pixels of ``field``.

    Ties are broken by ascending row-major index, which the stable sort on
    the negated values guarantees.
    """
    h, w = field.shape
    if k <= 0:
        return Mask(np.zeros((h, w), dtype=bool))
    flat = field.ravel()
    order = np.argsort(-flat, kind="stable")
    covered = np.zeros(h * w, dtype=bool)
    covered[order[:k]] = True
    return Mask(covered.reshape(h, w))


def rect_mask(h: int, w: int, fraction: float, seed) -> Mask:
    """One axis-aligned rectangle, fully inside the grid, covering
    round(fraction*h*w) pixels up to integer-rectangle realizability.

    The requested pixel count may not factor into a rectangle that fits the
    grid; the rectangle whose area is closest to the target is used, with
    ties resolved toward the squarer aspect.  Placement is uniform over all
    valid positions.  The achieved fraction is readable from the returned
    mask's ``covered_fraction``.
    """
    _check_fraction(fraction)
    target = round_half_up(fraction * h * w)
    if target <= 0:
        return Mask(np.zeros((h, w), dtype=bool))
    if target >= h * w:
        return Mask(np.ones((h, w), dtype=bool))

    best = None  # (area error, aspect error, rh, rw)
    for rh in range(1, h + 1):
        for rw in range(1, w + 1):
            key = (abs(rh * rw - target), abs(rh - rw), rh, rw)
            if best is None or key < best:
                best = key
    _, _, rh, rw = best

    rng = rng_from_seed(seed)
    top = int(rng.integers(0, h - rh + 1))
    left = int(rng.integers(0, w - rw + 1))
    covered = np.zeros((h, w), dtype=bool)
    covered[top : top + rh, left : left + rw] = True
    return Mask(covered)


def fourier_field(h: int, w: int, params: FourierMaskParams, seed) -> np.ndarray:
    """Grayscale low-pass noise field underlying :func:`fourier_mask`.

    Independent complex Gaussian noise is sampled on the full frequency
    grid, each bin is attenuated by 1/max(f_min, ||f||)**decay_power with
    f_min = 1/max(h, w) (the smallest nonzero grid frequency, which also
    keeps the zero bin finite), and the real part of the inverse transform
    is returned.
    """
    rng = rng_from_seed(seed)
    noise = rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    dist = np.sqrt(fy * fy + fx * fx)
    f_min = 1.0 / max(h, w)
    attenuation = 1.0 / np.maximum(dist, f_min) ** params.decay_power
    return np.fft.ifft2(noise * attenuation).real


def fourier_mask(
    h: int, w: int, lam: float, params: FourierMaskParams, seed
) -> Mask:
    """Irregular mask covering the round(lam*h*w) highest pixels of a
    low-pass noise field sampled in Fourier space."""
    _check_fraction(lam)
    field = fourier_field(h, w, params, seed)
    return topk_mask(field, round_half_up(lam * h * w))


def saliency_mask(saliency: np.ndarray, fraction: float) -> Mask:
    """Cover the most salient round(fraction*h*w) pixels.

    Saliency values must be finite and non-negative; ties are broken by
    ascending row-major index.
    """
    _check_fraction(fraction)
    s = np.asarray(saliency, dtype=np.float64)
    if s.ndim != 2 or s.size == 0:
        raise ValueError(f"saliency map must be non-empty 2-D, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("saliency map contains non-finite values")
    if s.min() < 0:
        raise ValueError("saliency map contains negative values")
    return topk_mask(s, round_half_up(fraction * s.size))


@dataclass(frozen=True)
class MaskBank:
    """Masks sampled once and then fixed for an entire training run."""

    masks: tuple[Mask, ...]

    def __post_init__(self):
        if len(self.masks) == 0:
            raise ValueError("mask bank must contain at least one mask")
        shape = (self.masks[0].height, self.masks[0].width)
        for m in self.masks:
            if (m.height, m.width) != shape:
                raise ValueError("all masks in a bank must share one shape")

    def __len__(self) -> int:
        return len(self.masks)

    @classmethod
    def sample(
        cls, h: int, w: int, size: int, params: FourierMaskParams, seed: int
    ) -> "MaskBank":
        """Draw ``size`` Fourier masks, each with its own mixing coefficient."""
        if size < 1:
            raise ValueError("bank size must be >= 1")
        masks = []
        for i in range(size):
            lam = sample_lambda(params, derive_seed(seed, 2 * i))
            masks.append(fourier_mask(h, w, lam, params, derive_seed(seed, 2 * i + 1)))
        return cls(tuple(masks))


def bank_pick(bank: MaskBank, seed) -> Mask:
    """Uniform choice of one bank entry, deterministic given the seed."""
    rng = rng_from_seed(seed)
    return bank.masks[int(rng.integers(0, len(bank)))]


def sample_lambda(params: FourierMaskParams, seed) -> float:
    """Mixing coefficient drawn from Beta(alpha, alpha); Uniform(0,1) at alpha=1."""
    rng = rng_from_seed(seed)
    return float(rng.beta(params.alpha, params.alpha))
