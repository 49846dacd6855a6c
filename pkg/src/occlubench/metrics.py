"""Robustness metrics: accuracy, the rectangular-patch baseline score, the
gap-normalised occlusion score, per-class misclassification deltas, and
multi-seed aggregation.

The gap-normalised score for occlusion fraction i is

    |accuracy(train_occluded_i) - accuracy(test_occluded_i)|
    --------------------------------------------------------
    |accuracy(train_clean)      - accuracy(test_clean)|

It is 1 at i = 0 by construction and is undefined when the clean
generalisation gap vanishes; that case raises instead of returning a
number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from occlubench.core import LabeledDataset, derive_seed, rng_from_seed
from occlubench.dataio import PredictionLog
from occlubench.maskgen import FourierMaskParams, fourier_mask, rect_mask, saliency_mask
from occlubench.occlude import donor_masked_batch, fill_masked_batch
from occlubench.refmodel import GradCamConfig, TinyCnn, grad_cam_maps, predict_dataset

MASK_POLICIES = ("gradcam", "rect", "fourier")


class DegenerateGapError(ValueError):
    """The clean generalisation gap is (numerically) zero, so the
    gap-normalised score is undefined."""


@dataclass(frozen=True)
class SplitAccuracy:
    """Clean and occluded accuracies for one model at one occlusion fraction."""

    a_train: float
    a_test: float
    a_train_i: float
    a_test_i: float

    def __post_init__(self):
        for name in ("a_train", "a_test", "a_train_i", "a_test_i"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")


@dataclass(frozen=True)
class SeedAggregate:
    """Per-seed metric values with their mean and sample standard deviation."""

    values: tuple[float, ...]
    mean: float
    std: float


@dataclass(frozen=True)
class RobustnessCurve:
    """Per-fraction metric samples aggregated over seeds (or model repeats)."""

    kind: str
    fractions: tuple[float, ...]
    samples: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        object.__setattr__(
            self, "samples", tuple(tuple(float(v) for v in s) for s in self.samples)
        )
        if self.kind not in ("cutocclusion", "iocclusion"):
            raise ValueError(f"unknown curve kind {self.kind!r}")
        if len(self.fractions) != len(self.samples):
            raise ValueError("one sample tuple required per fraction")
        if any(not 0 <= f <= 1 for f in self.fractions):
            raise ValueError("fractions must lie in [0, 1]")
        if any(b <= a for a, b in zip(self.fractions, self.fractions[1:])):
            raise ValueError("fractions must be strictly ascending")
        if any(len(s) == 0 for s in self.samples):
            raise ValueError("every fraction needs at least one sample")

    @property
    def means(self) -> tuple[float, ...]:
        return tuple(aggregate_seeds(s).mean for s in self.samples)

    @property
    def stds(self) -> tuple[float, ...]:
        return tuple(aggregate_seeds(s).std for s in self.samples)

    @property
    def n_seeds(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.samples)


def combine_curves(curves: Sequence[RobustnessCurve]) -> RobustnessCurve:
    """Pool per-fraction samples of curves measured on the same grid."""
    if not curves:
        raise ValueError("no curves to combine")
    first = curves[0]
    for c in curves[1:]:
        if c.kind != first.kind or c.fractions != first.fractions:
            raise ValueError("curves must share kind and fraction grid")
    pooled = tuple(
        tuple(v for c in curves for v in c.samples[i])
        for i in range(len(first.fractions))
    )
    return RobustnessCurve(first.kind, first.fractions, pooled)


@dataclass(frozen=True)
class MisclassDelta:
    """Per-class change in wrong-as-that-class predictions under distortion."""

    deltas: tuple[int, ...]
    distortion: str

    @property
    def total(self) -> int:
        return sum(self.deltas)


# ---------------------------------------------------------------------------
# scalar metrics


def accuracy(log: PredictionLog) -> float:
    """Fraction of records whose prediction matches the true label."""
    if len(log) == 0:
        raise ValueError("empty prediction log")
    return sum(1 for r in log if r.correct) / len(log)


def i_occlusion(acc: SplitAccuracy, eps: float = 1e-6) -> float:
    """Gap-normalised occlusion score; see the module docstring.

    The value is invariant under common rescaling of all four accuracies
    (percent and fraction inputs agree), so callers may pass either scale
    consistently.
    """
    gap = acc.a_train - acc.a_test
    if abs(gap) < eps:
        raise DegenerateGapError(
            "undefined: zero generalisation gap "
            f"(train {acc.a_train} vs test {acc.a_test})"
        )
    return abs((acc.a_train_i - acc.a_test_i) / gap)


def misclass_delta(
    clean: PredictionLog, distorted: PredictionLog, num_classes: int
) -> MisclassDelta:
    """Per class c: (#wrongly predicted as c on distorted data) minus
    (#wrongly predicted as c on clean data).

    Both logs must cover exactly the same (split, index) pairs.
    """
    if clean.key_set() != distorted.key_set():
        missing = clean.key_set() ^ distorted.key_set()
        sample = sorted(missing)[:3]
        raise ValueError(
            f"logs cover different records; {len(missing)} mismatched, e.g. {sample}"
        )
    deltas = [0] * num_classes
    for log, sign in ((distorted, 1), (clean, -1)):
        for r in log:
            if r.predicted_label >= num_classes:
                raise ValueError(
                    f"predicted label {r.predicted_label} out of range "
                    f"for {num_classes} classes"
                )
            if not r.correct:
                deltas[r.predicted_label] += sign
    return MisclassDelta(tuple(deltas), "distorted-vs-clean")


def aggregate_seeds(values: Sequence[float]) -> SeedAggregate:
    """Arithmetic mean and (n-1) sample standard deviation; std is 0 for n=1."""
    vals = tuple(float(v) for v in values)
    if not vals:
        raise ValueError("no values to aggregate")
    mean = float(np.mean(vals))
    std = 0.0 if len(vals) == 1 else float(np.std(vals, ddof=1))
    return SeedAggregate(vals, mean, std)


# ---------------------------------------------------------------------------
# occluded evaluation


def build_masks(
    dataset: LabeledDataset,
    fraction: float,
    policy: str,
    seed: int,
    saliency: np.ndarray | None = None,
    params: FourierMaskParams | None = None,
) -> np.ndarray:
    """Per-image boolean cover maps (n, h, w) for one occlusion fraction.

    ``gradcam`` thresholds the supplied per-image saliency maps (computed
    once and reused across fractions); ``rect`` and ``fourier`` draw one
    mask per image from a seed derived from the image index.
    """
    if policy not in MASK_POLICIES:
        raise ValueError(f"mask policy must be one of {MASK_POLICIES}")
    n, h, w = len(dataset), dataset.height, dataset.width
    masks = np.empty((n, h, w), dtype=bool)
    if policy == "gradcam":
        if saliency is None:
            raise ValueError("gradcam policy requires saliency maps")
        if saliency.shape != (n, h, w):
            raise ValueError(
                f"saliency shape {saliency.shape} does not match dataset {(n, h, w)}"
            )
        for i in range(n):
            masks[i] = saliency_mask(saliency[i], fraction).covered
    elif policy == "rect":
        for i in range(n):
            masks[i] = rect_mask(h, w, fraction, derive_seed(seed, i)).covered
    else:
        params = params or FourierMaskParams()
        for i in range(n):
            masks[i] = fourier_mask(h, w, fraction, params, derive_seed(seed, i)).covered
    return masks


def occlude_images(
    dataset: LabeledDataset,
    masks: np.ndarray,
    fill=0.0,
    donors: LabeledDataset | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Cover each image with its mask, using a uniform fill or patches from
    a donor dataset (one donor image drawn per input image)."""
    if donors is None:
        return fill_masked_batch(dataset.images, masks, fill)
    if donors.images.shape[1:] != dataset.images.shape[1:]:
        raise ValueError("donor dataset shape differs from evaluated dataset")
    picks = np.array(
        [
            rng_from_seed(derive_seed(derive_seed(seed, i), 1)).integers(0, len(donors))
            for i in range(len(dataset))
        ]
    )
    return donor_masked_batch(dataset.images, masks, donors.images[picks])


def occluded_accuracy(
    model: TinyCnn,
    dataset: LabeledDataset,
    fraction: float,
    policy: str,
    seed: int,
    fill=0.0,
    donors: LabeledDataset | None = None,
    saliency: np.ndarray | None = None,
    params: FourierMaskParams | None = None,
    threads: int | None = None,
) -> float:
    masks = build_masks(dataset, fraction, policy, seed, saliency, params)
    images = occlude_images(dataset, masks, fill, donors, seed)
    return accuracy(predict_dataset(model, dataset, threads, images=images))


def cut_occlusion(
    model: TinyCnn,
    test_set: LabeledDataset,
    fraction: float,
    seeds: Sequence[int],
    fill=0.0,
    donors: LabeledDataset | None = None,
    threads: int | None = None,
) -> SeedAggregate:
    """Accuracy after covering every test image with a random rectangle of
    the given exact fraction, aggregated over seeds."""
    values = [
        occluded_accuracy(
            model, test_set, fraction, "rect", s, fill, donors, threads=threads
        )
        for s in seeds
    ]
    return aggregate_seeds(values)


def cut_occlusion_curve(
    model: TinyCnn,
    test_set: LabeledDataset,
    fractions: Sequence[float],
    seeds: Sequence[int],
    fill=0.0,
    donors: LabeledDataset | None = None,
    threads: int | None = None,
) -> RobustnessCurve:
    samples = tuple(
        cut_occlusion(model, test_set, f, seeds, fill, donors, threads).values
        for f in fractions
    )
    return RobustnessCurve("cutocclusion", tuple(fractions), samples)


def i_occlusion_curve(
    model: TinyCnn,
    train_set: LabeledDataset,
    test_set: LabeledDataset,
    fractions: Sequence[float],
    mask_policy: str = "gradcam",
    seeds: Sequence[int] = (0,),
    fill=0.0,
    donors: tuple[LabeledDataset | None, LabeledDataset | None] = (None, None),
    cam_cfg: GradCamConfig | None = None,
    params: FourierMaskParams | None = None,
    saliency_train: np.ndarray | None = None,
    saliency_test: np.ndarray | None = None,
    threads: int | None = None,
    eps: float = 1e-6,
) -> RobustnessCurve:
    """Gap-normalised occlusion score over a fraction grid.

    Under the default policy the saliency map of each image is computed
    once (or taken from ``saliency_*``) and re-thresholded per fraction;
    the random-mask policies draw fresh masks per (seed, fraction).  Raises
    :class:`DegenerateGapError` when the clean gap is numerically zero.
    """
    a_train = accuracy(predict_dataset(model, train_set, threads))
    a_test = accuracy(predict_dataset(model, test_set, threads))
    # fail fast on a degenerate gap, before any occluded evaluation
    i_occlusion(SplitAccuracy(a_train, a_test, a_train, a_test), eps)

    if mask_policy == "gradcam":
        cfg = cam_cfg or GradCamConfig()
        if saliency_train is None:
            saliency_train = grad_cam_maps(model, train_set, cfg, threads)
        if saliency_test is None:
            saliency_test = grad_cam_maps(model, test_set, cfg, threads)

    donor_train, donor_test = donors
    samples = []
    for fraction in fractions:
        per_seed = []
        for s in seeds:
            a_train_i = occluded_accuracy(
                model, train_set, fraction, mask_policy, derive_seed(s, 0),
                fill, donor_train, saliency_train, params, threads,
            )
            a_test_i = occluded_accuracy(
                model, test_set, fraction, mask_policy, derive_seed(s, 1),
                fill, donor_test, saliency_test, params, threads,
            )
            per_seed.append(
                i_occlusion(SplitAccuracy(a_train, a_test, a_train_i, a_test_i), eps)
            )
        samples.append(tuple(per_seed))
    return RobustnessCurve("iocclusion", tuple(fractions), samples)


def i_occlusion_from_logs(
    clean_train: PredictionLog,
    clean_test: PredictionLog,
    occluded_train: PredictionLog,
    occluded_test: PredictionLog,
    eps: float = 1e-6,
) -> float:
    """Gap-normalised score from externally produced prediction logs."""
    acc = SplitAccuracy(
        accuracy(clean_train),
        accuracy(clean_test),
        accuracy(occluded_train),
        accuracy(occluded_test),
    )
    return i_occlusion(acc, eps)
