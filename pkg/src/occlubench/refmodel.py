"""A small from-scratch convolutional classifier with exact backprop.

Two 3x3 conv layers (ReLU + 2x2 max-pool after each) feed a dense head.
Everything runs in float64 numpy: forward, backward, SGD with momentum,
mixed-label training for the mask-based augmentations, and a Grad-CAM
implementation over the same layers.  No autodiff framework is involved,
which keeps gradients auditable against finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from occlubench.core import (
    LabeledDataset,
    Image,
    ShapeMismatchError,
    derive_seed,
    rng_from_seed,
    parallel_map,
)
from occlubench.maskgen import (
    FourierMaskParams,
    MaskBank,
    bank_pick,
    fourier_mask,
    sample_lambda,
)
from occlubench.occlude import cutmix_box
from occlubench.dataio import PredictionLog, PredictionRecord

TRAIN_MODES = ("basic", "mixup", "cutmix", "fmix", "rm", "rm3")

CHECKPOINT_MAGIC = b"OBNN"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite."""


# ---------------------------------------------------------------------------
# layer primitives


def _im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    """(n, c, h, w) -> (n, c*k*k, h*w) patch matrix for same-size convolution."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k, k, h, w), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + h, j : j + w]
    return cols.reshape(n, c * k * k, h * w)


def _col2im(dcols: np.ndarray, x_shape, k: int, pad: int) -> np.ndarray:
    n, c, h, w = x_shape
    d = dcols.reshape(n, c, k, k, h, w)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + h, j : j + w] += d[:, :, i, j]
    return dxp[:, :, pad : pad + h, pad : pad + w]


def _conv_forward(x, weight, bias):
    n, _, h, w = x.shape
    f, _, k, _ = weight.shape
    cols = _im2col(x, k, k // 2)
    out = np.matmul(weight.reshape(f, -1), cols) + bias[:, None]
    return out.reshape(n, f, h, w), cols


def _conv_backward(dout, cols, x_shape, weight):
    n, _, h, w = x_shape
    f = weight.shape[0]
    k = weight.shape[2]
    dflat = dout.reshape(n, f, h * w)
    dw = np.matmul(dflat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
    db = dflat.sum(axis=(0, 2))
    dcols = np.matmul(weight.reshape(f, -1).T, dflat)
    dx = _col2im(dcols, x_shape, k, k // 2)
    return dx, dw, db


_POOL_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _pool_forward(x):
    """2x2 stride-2 max pool; odd trailing rows/cols are dropped.

    Returns the pooled map and the winning window position (0..3); ties go
    to the first position in row-major window order.
    """
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    xt = x[:, :, : h2 * 2, : w2 * 2]
    views = [xt[:, :, sy::2, sx::2] for sy, sx in _POOL_OFFSETS]
    out = np.maximum(np.maximum(views[0], views[1]), np.maximum(views[2], views[3]))
    idx = np.full((n, c, h2, w2), 3, dtype=np.int8)
    for k in (2, 1, 0):  # overwrite so the first max in window order wins
        idx[views[k] == out] = k
    return out, idx


def _pool_backward(dout, idx, x_shape):
    dx = np.zeros(x_shape, dtype=dout.dtype)
    h2, w2 = x_shape[2] // 2, x_shape[3] // 2
    dxt = dx[:, :, : h2 * 2, : w2 * 2]
    for k, (sy, sx) in enumerate(_POOL_OFFSETS):
        sel = idx == k
        dxt[:, :, sy::2, sx::2][sel] = dout[sel]
    return dx


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# model


class TinyCnn:
    """conv(k) -> ReLU -> pool -> conv(k) -> ReLU -> pool -> dense logits."""

    def __init__(
        self,
        input_shape: tuple[int, int, int],
        num_classes: int,
        conv_channels: tuple[int, int] = (8, 16),
        kernel_size: int = 3,
        seed: int = 0,
    ):
        c, h, w = input_shape
        if c not in (1, 3):
            raise ValueError(f"input channels must be 1 or 3, got {c}")
        if kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")
        if num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        f1, f2 = conv_channels
        self.input_shape = (c, h, w)
        self.num_classes = num_classes
        self.conv_channels = (f1, f2)
        self.kernel_size = kernel_size
        h2, w2 = h // 2, w // 2
        h4, w4 = h2 // 2, w2 // 2
        if h4 < 1 or w4 < 1:
            raise ValueError("input too small for two 2x2 pooling stages")
        self.feature_shape = (f2, h4, w4)
        dense_in = f2 * h4 * w4

        rng = rng_from_seed(seed)
        k = kernel_size
        self.w1 = rng.standard_normal((f1, c, k, k)) * np.sqrt(2.0 / (c * k * k))
        self.b1 = np.zeros(f1)
        self.w2 = rng.standard_normal((f2, f1, k, k)) * np.sqrt(2.0 / (f1 * k * k))
        self.b2 = np.zeros(f2)
        self.wd = rng.standard_normal((num_classes, dense_in)) * np.sqrt(2.0 / dense_in)
        self.bd = np.zeros(num_classes)

    # parameter order is fixed; the checkpoint format and SGD rely on it
    def parameters(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.wd, self.bd]

    def set_parameters(self, values: Sequence[np.ndarray]) -> None:
        names = ["w1", "b1", "w2", "b2", "wd", "bd"]
        for name, v in zip(names, values, strict=True):
            cur = getattr(self, name)
            if cur.shape != v.shape:
                raise ValueError(f"{name}: shape {v.shape} != {cur.shape}")
            setattr(self, name, np.asarray(v, dtype=np.float64))

    def _check_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ShapeMismatchError(
                f"batch shape {x.shape} does not match model input {self.input_shape}"
            )
        return x

    def forward_cached(self, x: np.ndarray) -> dict:
        x = self._check_batch(x)
        z1, cols1 = _conv_forward(x, self.w1, self.b1)
        a1 = np.maximum(z1, 0.0)
        p1, sw1 = _pool_forward(a1)
        z2, cols2 = _conv_forward(p1, self.w2, self.b2)
        a2 = np.maximum(z2, 0.0)
        p2, sw2 = _pool_forward(a2)
        flat = p2.reshape(x.shape[0], -1)
        logits = flat @ self.wd.T + self.bd
        return {
            "x": x, "z1": z1, "cols1": cols1, "sw1": sw1, "p1": p1,
            "z2": z2, "cols2": cols2, "sw2": sw2, "p2": p2,
            "flat": flat, "logits": logits,
        }

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        return self.forward_cached(x)["logits"]

    def backward(self, cache: dict, dlogits: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients for an upstream gradient on the logits."""
        grads, _ = self._backward_full(cache, dlogits, stop_layer=None)
        return grads

    def _backward_full(self, cache, dlogits, stop_layer):
        """Backprop; if stop_layer is 0 or 1, also return the gradient at that
        conv layer's pre-activation output (used by Grad-CAM)."""
        x = cache["x"]
        n = x.shape[0]
        dwd = dlogits.T @ cache["flat"]
        dbd = dlogits.sum(axis=0)
        dflat = dlogits @ self.wd
        dp2 = dflat.reshape(cache["p2"].shape)
        da2 = _pool_backward(dp2, cache["sw2"], cache["z2"].shape)
        dz2 = da2 * (cache["z2"] > 0)
        if stop_layer == 1:
            return None, dz2
        dp1, dw2, db2 = _conv_backward(dz2, cache["cols2"], cache["p1"].shape, self.w2)
        da1 = _pool_backward(dp1, cache["sw1"], cache["z1"].shape)
        dz1 = da1 * (cache["z1"] > 0)
        if stop_layer == 0:
            return None, dz1
        _, dw1, db1 = _conv_backward(dz1, cache["cols1"], x.shape, self.w1)
        return [dw1, db1, dw2, db2, dwd, dbd], None

    def conv_activation(self, cache: dict, layer: int) -> np.ndarray:
        """Pre-activation output of conv layer 0 or 1 from a forward cache."""
        if layer not in (0, 1):
            raise ValueError("conv layer index must be 0 or 1")
        return cache["z1"] if layer == 0 else cache["z2"]


def forward(model: TinyCnn, img: Image) -> np.ndarray:
    """Logits for a single image."""
    if img.data.shape != model.input_shape:
        raise ShapeMismatchError(
            f"image shape {img.data.shape} does not match model input "
            f"{model.input_shape}"
        )
    return model.forward_batch(img.data[None])[0]


# ---------------------------------------------------------------------------
# loss


def mixed_loss_and_dlogits(logits, y1, y2, weight1):
    """Softmax cross-entropy against two label vectors, weighted weight1 and
    1-weight1.  Returns the mean loss and d(loss)/d(logits)."""
    n = logits.shape[0]
    logp = _log_softmax(logits)
    nll1 = -logp[np.arange(n), y1].mean()
    if weight1 == 1.0:
        loss = nll1
    else:
        nll2 = -logp[np.arange(n), y2].mean()
        loss = weight1 * nll1 + (1.0 - weight1) * nll2
    p = softmax(logits)
    target = np.zeros_like(p)
    target[np.arange(n), y1] += weight1
    target[np.arange(n), y2] += 1.0 - weight1
    return loss, (p - target) / n


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.

    ``lr_schedule`` is piecewise constant: a tuple of (start_epoch, lr)
    pairs.  The default (None) uses 0.1 for the first half of the epochs and
    0.001 for the rest.
    """

    epochs: int
    batch_size: int = 128
    lr_schedule: tuple[tuple[int, float], ...] | None = None
    momentum: float = 0.9
    mode: str = "basic"
    label_randomization: bool = False
    seed: int = 0
    msda_params: FourierMaskParams = field(default_factory=FourierMaskParams)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        sched = self.lr_schedule
        if sched is None:
            sched = ((0, 0.1), (max(self.epochs // 2, 1), 0.001))
        sched = tuple((int(e), float(lr)) for e, lr in sched)
        if not sched or sched[0][0] != 0:
            raise ValueError("lr_schedule must start at epoch 0")
        if any(lr <= 0 for _, lr in sched):
            raise ValueError("learning rates must be positive")
        if any(b[0] <= a[0] for a, b in zip(sched, sched[1:])):
            raise ValueError("lr_schedule epochs must be strictly increasing")
        object.__setattr__(self, "lr_schedule", sched)

    def lr_at(self, epoch: int) -> float:
        lr = self.lr_schedule[0][1]
        for start, value in self.lr_schedule:
            if epoch >= start:
                lr = value
        return lr


def randomize_labels(labels: np.ndarray, seed: int) -> np.ndarray:
    """Permute the label vector once; the permutation is a pure function of
    the seed, so it stays fixed for the whole training run."""
    perm = rng_from_seed(derive_seed(seed, 0)).permutation(len(labels))
    return labels[perm]


def _mix_batch(xb, yb, donors_x, donors_y, mode, params, bank, step_seed):
    """Build the (inputs, labels1, labels2, weight1) tuple for one step.

    Sub-seed layout under ``step_seed``: 0 selects the donor rows, 1 draws
    the mixing coefficient, 2 drives the patch/mask geometry, 3 picks from
    the mask bank.
    """
    if mode == "basic":
        return xb, yb, yb, 1.0
    n = xb.shape[0]
    pick = rng_from_seed(derive_seed(step_seed, 0))
    if donors_x is None:
        order = pick.permutation(n)
        x2, y2 = xb[order], yb[order]
    else:
        order = pick.integers(0, donors_x.shape[0], size=n)
        x2, y2 = donors_x[order], donors_y[order]
    h, w = xb.shape[2], xb.shape[3]

    if mode == "mixup":
        lam = sample_lambda(params, derive_seed(step_seed, 1))
        return lam * xb + (1.0 - lam) * x2, yb, y2, lam
    if mode == "cutmix":
        lam = sample_lambda(params, derive_seed(step_seed, 1))
        t, b, l, r = cutmix_box(h, w, lam, derive_seed(step_seed, 2))
        xm = np.array(xb)
        xm[:, :, t:b, l:r] = x2[:, :, t:b, l:r]
        lam_eff = 1.0 - ((b - t) * (r - l)) / (h * w)
        return xm, yb, y2, lam_eff
    if mode == "fmix":
        lam = sample_lambda(params, derive_seed(step_seed, 1))
        mask = fourier_mask(h, w, lam, params, derive_seed(step_seed, 2))
    elif mode in ("rm", "rm3"):
        mask = bank_pick(bank, derive_seed(step_seed, 3))
    else:  # pragma: no cover - guarded by TrainConfig
        raise ValueError(f"unknown mode {mode!r}")
    xm = np.where(mask.covered[None, None], x2, xb)
    return xm, yb, y2, 1.0 - mask.covered_fraction


def train(
    model: TinyCnn,
    dataset: LabeledDataset,
    config: TrainConfig,
    mask_bank: MaskBank | None = None,
    donor_dataset: LabeledDataset | None = None,
) -> tuple[TinyCnn, list[dict]]:
    """SGD-with-momentum training under the configured augmentation mode.

    Returns the model (modified in place) and a per-epoch log of dicts with
    ``epoch``, ``lr``, ``mean_loss``, and ``train_accuracy`` (computed on
    the unaugmented data, after label randomization if enabled).
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if config.mode in ("rm", "rm3"):
        expected = 1 if config.mode == "rm" else 3
        if mask_bank is None or len(mask_bank) != expected:
            raise ValueError(
                f"mode {config.mode!r} requires a mask bank of size {expected}"
            )
        m = mask_bank.masks[0]
        if (m.height, m.width) != (dataset.height, dataset.width):
            raise ShapeMismatchError(
                f"mask bank {m.height}x{m.width} does not match "
                f"dataset {dataset.height}x{dataset.width}"
            )

    labels = dataset.labels
    if config.label_randomization:
        labels = randomize_labels(labels, config.seed)

    donors_x = donors_y = None
    if donor_dataset is not None:
        if donor_dataset.images.shape[1:] != dataset.images.shape[1:]:
            raise ShapeMismatchError("donor dataset shape differs from training data")
        donors_x, donors_y = donor_dataset.images, donor_dataset.labels

    images = dataset.images
    n = len(dataset)
    velocity = [np.zeros_like(p) for p in model.parameters()]
    history = []

    # float overflow during a diverging run is reported through the
    # isfinite check below, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _train_loop(
            model, config, images, labels, donors_x, donors_y,
            mask_bank, n, velocity, history,
        )


def _train_loop(
    model, config, images, labels, donors_x, donors_y, mask_bank, n, velocity, history
):
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        epoch_seed = derive_seed(config.seed, 1 + epoch)
        order = rng_from_seed(derive_seed(epoch_seed, 0)).permutation(n)
        losses = []
        for step, start in enumerate(range(0, n, config.batch_size)):
            rows = order[start : start + config.batch_size]
            step_seed = derive_seed(epoch_seed, 1 + step)
            xb, y1, y2, w1 = _mix_batch(
                images[rows], labels[rows], donors_x, donors_y,
                config.mode, config.msda_params, mask_bank, step_seed,
            )
            cache = model.forward_cached(xb)
            loss, dlogits = mixed_loss_and_dlogits(cache["logits"], y1, y2, w1)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss} at epoch {epoch}, step {step} "
                    f"(lr={lr}, mode={config.mode})"
                )
            grads = model.backward(cache, dlogits)
            params = model.parameters()
            for p, g, v in zip(params, grads, velocity):
                v *= config.momentum
                v += g
                p -= lr * v
            losses.append(float(loss))
        history.append(
            {
                "epoch": epoch,
                "lr": lr,
                "mean_loss": float(np.mean(losses)),
                "train_accuracy": _batch_accuracy(model, images, labels),
            }
        )
    return model, history


def _batch_accuracy(model, images, labels, batch: int = 256) -> float:
    correct = 0
    for start in range(0, images.shape[0], batch):
        logits = model.forward_batch(images[start : start + batch])
        correct += int(np.sum(np.argmax(logits, axis=1) == labels[start : start + batch]))
    return correct / images.shape[0]


# ---------------------------------------------------------------------------
# prediction


def predict_dataset(
    model: TinyCnn,
    dataset: LabeledDataset,
    threads: int | None = None,
    batch_size: int = 128,
    images: np.ndarray | None = None,
) -> PredictionLog:
    """One record per image; argmax ties resolve to the lowest class index.

    ``images`` may override the dataset's pixels (e.g. occluded copies)
    while labels, split, and ordering stay those of ``dataset``.  The batch
    size is fixed independently of the thread count so results are
    bit-identical for any parallelism degree.
    """
    x = dataset.images if images is None else images
    if x.shape != dataset.images.shape:
        raise ShapeMismatchError(
            f"image override shape {x.shape} != dataset shape {dataset.images.shape}"
        )
    starts = list(range(0, len(dataset), batch_size))

    def run_chunk(start: int) -> np.ndarray:
        logits = model.forward_batch(x[start : start + batch_size])
        return np.argmax(logits, axis=1)  # first max = lowest class index

    preds = np.concatenate(parallel_map(run_chunk, starts, threads)) if starts else np.zeros(0, int)
    records = [
        PredictionRecord(dataset.split, i, int(dataset.labels[i]), int(preds[i]))
        for i in range(len(dataset))
    ]
    return PredictionLog(records)


# ---------------------------------------------------------------------------
# Grad-CAM


@dataclass(frozen=True)
class GradCamConfig:
    """Saliency extraction settings.

    ``target_layer`` indexes the conv layers (1 = final conv).  The target
    class is the model's prediction on the clean image by default;
    ``target="true"`` uses the dataset label instead.  Upsampling back to
    input resolution is bilinear (half-pixel centers) or nearest.
    """

    target_layer: int = 1
    target: str = "predicted"
    upsample: str = "bilinear"

    def __post_init__(self):
        if self.target_layer not in (0, 1):
            raise ValueError("target_layer must be 0 or 1")
        if self.target not in ("predicted", "true"):
            raise ValueError("target must be 'predicted' or 'true'")
        if self.upsample not in ("bilinear", "nearest"):
            raise ValueError("upsample must be 'bilinear' or 'nearest'")


def _resize_maps(maps: np.ndarray, out_h: int, out_w: int, mode: str) -> np.ndarray:
    """(n, h, w) -> (n, out_h, out_w), half-pixel-center sampling."""
    n, h, w = maps.shape
    if (h, w) == (out_h, out_w):
        return maps
    sy, sx = h / out_h, w / out_w
    ys = (np.arange(out_h) + 0.5) * sy - 0.5
    xs = (np.arange(out_w) + 0.5) * sx - 0.5
    if mode == "nearest":
        yi = np.clip(np.floor(ys + 0.5).astype(int), 0, h - 1)
        xi = np.clip(np.floor(xs + 0.5).astype(int), 0, w - 1)
        return maps[:, yi[:, None], xi[None, :]]
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    fy = np.clip(ys - np.floor(ys), 0.0, 1.0)
    fy[ys < 0] = 0.0
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    fx = np.clip(xs - np.floor(xs), 0.0, 1.0)
    fx[xs < 0] = 0.0
    rows = maps[:, y0, :] * (1 - fy)[None, :, None] + maps[:, y1, :] * fy[None, :, None]
    return rows[:, :, x0] * (1 - fx)[None, None, :] + rows[:, :, x1] * fx[None, None, :]


def cam_from_activations(activations: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    """ReLU of activation maps weighted per channel by the spatial mean of
    the target-score gradient: relu(sum_k mean(grad_k) * act_k).

    Shapes are (n, k, h, w) for both inputs; the result is (n, h, w).
    """
    if activations.shape != gradients.shape:
        raise ShapeMismatchError(
            f"activations {activations.shape} vs gradients {gradients.shape}"
        )
    alpha = gradients.mean(axis=(2, 3))  # (n, k)
    return np.maximum(np.einsum("nk,nkhw->nhw", alpha, activations), 0.0)


def grad_cam_batch(
    model: TinyCnn,
    images: np.ndarray,
    cfg: GradCamConfig,
    labels: np.ndarray | None = None,
) -> np.ndarray:
    """Grad-CAM maps for a batch: ReLU of activation maps weighted by the
    spatial mean of the target-class logit gradient, upsampled to input size."""
    cache = model.forward_cached(images)
    n = images.shape[0]
    if cfg.target == "true":
        if labels is None:
            raise ValueError("target='true' requires labels")
        targets = np.asarray(labels, dtype=np.int64)
    else:
        targets = np.argmax(cache["logits"], axis=1)
    dlogits = np.zeros_like(cache["logits"])
    dlogits[np.arange(n), targets] = 1.0
    _, dz = model._backward_full(cache, dlogits, stop_layer=cfg.target_layer)
    acts = model.conv_activation(cache, cfg.target_layer)
    cam = cam_from_activations(acts, dz)
    return _resize_maps(cam, images.shape[2], images.shape[3], cfg.upsample)


def grad_cam(model: TinyCnn, img: Image, cfg: GradCamConfig, label: int | None = None) -> np.ndarray:
    """Saliency map for a single image, shape (h, w), non-negative."""
    if img.data.shape != model.input_shape:
        raise ShapeMismatchError(
            f"image shape {img.data.shape} does not match model input "
            f"{model.input_shape}"
        )
    labels = None if label is None else np.array([label])
    return grad_cam_batch(model, img.data[None], cfg, labels)[0]


def grad_cam_maps(
    model: TinyCnn,
    dataset: LabeledDataset,
    cfg: GradCamConfig,
    threads: int | None = None,
    batch_size: int = 128,
) -> np.ndarray:
    """Saliency maps for every image of a dataset, shape (n, h, w)."""
    starts = list(range(0, len(dataset), batch_size))

    def run_chunk(start: int) -> np.ndarray:
        sl = slice(start, start + batch_size)
        return grad_cam_batch(model, dataset.images[sl], cfg, dataset.labels[sl])

    if not starts:
        return np.zeros((0, dataset.height, dataset.width))
    return np.concatenate(parallel_map(run_chunk, starts, threads))


# ---------------------------------------------------------------------------
# checkpoints
#
# Layout (all integers little-endian u32 unless noted):
#   magic "OBNN" | version | layer_count
#   per layer: kind (0 conv, 1 dense), then weight and bias arrays,
#   each as ndim | dims... | float64 values (little-endian, C order)


def save_checkpoint(path, model: TinyCnn) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, 3))
        c, h, w = model.input_shape
        f.write(struct.pack("<IIII", c, h, w, model.num_classes))
        layers = [
            (0, model.w1, model.b1),
            (0, model.w2, model.b2),
            (1, model.wd, model.bd),
        ]
        for kind, weight, bias in layers:
            f.write(struct.pack("<I", kind))
            for arr in (weight, bias):
                f.write(struct.pack("<I", arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(f, count: int) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise ValueError("checkpoint truncated")
    return data


def load_checkpoint(path) -> TinyCnn:
    with open(path, "rb") as f:
        if _read_exact(f, 4) != CHECKPOINT_MAGIC:
            raise ValueError(f"not a model checkpoint: {path}")
        version, layer_count = struct.unpack("<II", _read_exact(f, 8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if layer_count != 3:
            raise ValueError(f"expected 3 layers, found {layer_count}")
        c, h, w, num_classes = struct.unpack("<IIII", _read_exact(f, 16))
        arrays = []
        for _ in range(layer_count):
            (kind,) = struct.unpack("<I", _read_exact(f, 4))
            if kind not in (0, 1):
                raise ValueError(f"unknown layer kind {kind}")
            for _ in range(2):
                (ndim,) = struct.unpack("<I", _read_exact(f, 4))
                shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
                size = int(np.prod(shape)) if shape else 1
                arr = np.frombuffer(_read_exact(f, 8 * size), dtype="<f8")
                arrays.append(arr.reshape(shape).astype(np.float64))
        if f.read(1):
            raise ValueError("trailing bytes after checkpoint payload")
    f1 = arrays[0].shape[0]
    f2 = arrays[2].shape[0]
    kernel = arrays[0].shape[2]
    model = TinyCnn((c, h, w), num_classes, (f1, f2), kernel, seed=0)
    model.set_parameters(arrays)
    return model
