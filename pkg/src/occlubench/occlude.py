"""Applying masks to images, and the three mixed-sample augmentations.

Mask-based operations are pure pixel selections: every output pixel equals
the corresponding pixel of exactly one input.  MixUp is the one convex
combination.  Effective mixing weights always report the realized fraction
of the first image that survived, after any clipping or quantization.
"""

from __future__ import annotations

import math

import numpy as np

from occlubench.core import Image, Mask, derive_seed, rng_from_seed
from occlubench.maskgen import (
    FourierMaskParams,
    fourier_mask,
    round_half_up,
    sample_lambda,
)


def _fill_vector(fill, channels: int) -> np.ndarray:
    v = np.asarray(fill, dtype=np.float64).reshape(-1)
    if v.size == 1:
        v = np.repeat(v, channels)
    if v.size != channels:
        raise ValueError(f"fill must be scalar or length {channels}, got {v.size}")
    return v


def apply_uniform(img: Image, mask: Mask, fill=0.0) -> Image:
    """Set covered pixels to ``fill`` (scalar or per-channel) in every channel."""
    mask.check_matches(img)
    v = _fill_vector(fill, img.channels)
    out = np.where(mask.covered[None, :, :], v[:, None, None], img.data)
    return Image(out)


def apply_donor(img: Image, mask: Mask, donor: Image) -> Image:
    """Covered pixels take the donor image's values; uncovered keep ``img``'s."""
    img.check_same_shape(donor)
    mask.check_matches(img)
    out = np.where(mask.covered[None, :, :], donor.data, img.data)
    return Image(out)


def mixup_mix(x1: Image, x2: Image, lam: float) -> tuple[Image, tuple[float, float]]:
    """Elementwise convex combination lam*x1 + (1-lam)*x2."""
    x1.check_same_shape(x2)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must be in [0, 1], got {lam}")
    out = lam * x1.data + (1.0 - lam) * x2.data
    return Image(out), (lam, 1.0 - lam)


def cutmix_box(
    h: int, w: int, lam: float, seed
) -> tuple[int, int, int, int]:
    """Clipped paste box (top, bottom, left, right) for a nominal area of
    (1-lam)*h*w centered uniformly over the grid.

    The center is drawn row first, then column.  Because the center is
    uniform over the whole grid, the box may overhang the borders; the
    returned coordinates are already clipped.
    """
    cut = math.sqrt(1.0 - lam)
    rh = round_half_up(h * cut)
    rw = round_half_up(w * cut)
    rng = rng_from_seed(seed)
    cy = int(rng.integers(0, h))
    cx = int(rng.integers(0, w))
    top = cy - rh // 2
    left = cx - rw // 2
    y1, y2 = max(top, 0), min(top + rh, h)
    x1, x2 = max(left, 0), min(left + rw, w)
    if y2 <= y1 or x2 <= x1:  # fully degenerate or fully overhanging box
        return 0, 0, 0, 0
    return y1, y2, x1, x2


def cutmix_mix(
    x1: Image, x2: Image, lam: float, seed
) -> tuple[Image, float, tuple[float, float]]:
    """Paste a rectangle from x2 onto x1; the patch may overhang borders.

    Unlike :func:`occlubench.maskgen.rect_mask`, overhang is intentional
    here, so the visible patch can be smaller than its nominal size.  The
    effective coefficient is 1 - visible_area/(h*w) and is what the label
    weights use.
    """
    x1.check_same_shape(x2)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must be in [0, 1], got {lam}")
    h, w = x1.height, x1.width
    y1, y2, xl, xr = cutmix_box(h, w, lam, seed)
    out = np.array(x1.data)
    out[:, y1:y2, xl:xr] = x2.data[:, y1:y2, xl:xr]
    lam_eff = 1.0 - ((y2 - y1) * (xr - xl)) / (h * w)
    return Image(out), lam_eff, (lam_eff, 1.0 - lam_eff)


def fmix_mix(
    x1: Image,
    x2: Image,
    params: FourierMaskParams,
    seed,
    lam: float | None = None,
) -> tuple[Image, float, tuple[float, float]]:
    """Mask-mix x2 over x1 using a Fourier-sampled irregular mask.

    The covered fraction is drawn from the params' Beta distribution unless
    ``lam`` is given explicitly.  The mixing coefficient seed is
    derive_seed(seed, 0) and the mask seed is derive_seed(seed, 1), so the
    operation composes exactly from :func:`fourier_mask` and
    :func:`apply_donor`.
    """
    x1.check_same_shape(x2)
    if lam is None:
        lam = sample_lambda(params, derive_seed(seed, 0))
    mask = fourier_mask(x1.height, x1.width, lam, params, derive_seed(seed, 1))
    out = apply_donor(x1, mask, x2)
    lam_eff = 1.0 - mask.covered_fraction
    return out, lam_eff, (lam_eff, 1.0 - lam_eff)


# Array-level variants used by training and batch evaluation.  Shapes:
# images (n, c, h, w), masks (n, h, w) boolean.


def fill_masked_batch(images: np.ndarray, masks: np.ndarray, fill=0.0) -> np.ndarray:
    if images.shape[0] != masks.shape[0] or images.shape[2:] != masks.shape[1:]:
        raise ValueError(
            f"batch shapes disagree: images {images.shape}, masks {masks.shape}"
        )
    v = _fill_vector(fill, images.shape[1])
    return np.where(masks[:, None, :, :], v[None, :, None, None], images)


def donor_masked_batch(
    images: np.ndarray, masks: np.ndarray, donors: np.ndarray
) -> np.ndarray:
    if images.shape != donors.shape:
        raise ValueError(
            f"batch shapes disagree: images {images.shape}, donors {donors.shape}"
        )
    if images.shape[0] != masks.shape[0] or images.shape[2:] != masks.shape[1:]:
        raise ValueError(
            f"batch shapes disagree: images {images.shape}, masks {masks.shape}"
        )
    return np.where(masks[:, None, :, :], donors, images)
