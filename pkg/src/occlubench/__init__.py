"""Occlusion-robustness evaluation toolkit for image classifiers.

Measures how a classifier's accuracy degrades when image regions are
covered, either with the classic rectangular-patch baseline or with a
gap-normalised score that compares the occluded train/test accuracy
difference against the clean generalisation gap.
"""

from occlubench.core import (
    Image,
    LabeledDataset,
    Mask,
    SeedSequence,
    ShapeMismatchError,
    SubsetIndex,
    derive_seed,
    parallel_map,
)
from occlubench.maskgen import (
    FourierMaskParams,
    MaskBank,
    bank_pick,
    fourier_field,
    fourier_mask,
    rect_mask,
    saliency_mask,
    sample_lambda,
)
from occlubench.occlude import (
    apply_donor,
    apply_uniform,
    cutmix_mix,
    fmix_mix,
    mixup_mix,
)
from occlubench.refmodel import (
    GradCamConfig,
    TinyCnn,
    TrainConfig,
    TrainingDiverged,
    grad_cam,
    grad_cam_maps,
    load_checkpoint,
    predict_dataset,
    save_checkpoint,
    train,
)
from occlubench.metrics import (
    DegenerateGapError,
    MisclassDelta,
    RobustnessCurve,
    SplitAccuracy,
    accuracy,
    aggregate_seeds,
    cut_occlusion,
    cut_occlusion_curve,
    i_occlusion,
    i_occlusion_curve,
    misclass_delta,
)
from occlubench.dataio import (
    FormatError,
    PredictionLog,
    PredictionRecord,
    compute_normalization,
    gen_synthetic,
    load_cifar10,
    load_idx,
    read_mask_bank,
    read_prediction_log,
    read_saliency,
    read_subset_index,
    write_mask_bank,
    write_prediction_log,
    write_saliency,
    write_subset_index,
)

__version__ = "0.1.0"
