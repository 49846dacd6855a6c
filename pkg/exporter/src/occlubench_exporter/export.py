"""Run a torch classifier and export predictions / Grad-CAM saliency."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from occlubench_exporter.io import write_obsm, write_prediction_jsonl


def _prepare(images: np.ndarray, normalization) -> torch.Tensor:
    x = torch.from_numpy(np.ascontiguousarray(images))
    if normalization is not None:
        mean, std = normalization
        mean = torch.as_tensor(mean, dtype=x.dtype).view(1, -1, 1, 1)
        std = torch.as_tensor(std, dtype=x.dtype).view(1, -1, 1, 1)
        x = (x - mean) / std
    return x


def predict_labels(
    model: torch.nn.Module,
    images: np.ndarray,
    normalization=None,
    batch_size: int = 128,
) -> np.ndarray:
    """Argmax predictions; ties resolve to the lowest class index."""
    model.eval()
    x = _prepare(images, normalization)
    preds = []
    with torch.no_grad():
        for start in range(0, x.shape[0], batch_size):
            logits = model(x[start : start + batch_size])
            # numpy argmax guarantees the first (lowest-index) maximum
            preds.append(np.argmax(logits.detach().cpu().numpy(), axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def export_predictions(
    model: torch.nn.Module,
    images: np.ndarray,
    labels: np.ndarray,
    split: str,
    out_path: str | Path,
    normalization=None,
    batch_size: int = 128,
) -> None:
    """Evaluate the model and write a schema-exact JSON Lines log."""
    preds = predict_labels(model, images, normalization, batch_size)
    write_prediction_jsonl(out_path, split, labels, preds)


def _find_conv_layer(model: torch.nn.Module, name: str) -> torch.nn.Module:
    modules = dict(model.named_modules())
    if name not in modules:
        conv_names = [
            n for n, m in modules.items() if isinstance(m, torch.nn.Conv2d)
        ]
        raise ValueError(
            f"no layer named {name!r}; convolutional layers: {conv_names}"
        )
    layer = modules[name]
    if not isinstance(layer, torch.nn.Conv2d):
        raise ValueError(f"layer {name!r} is {type(layer).__name__}, not Conv2d")
    return layer


def gradcam_maps(
    model: torch.nn.Module,
    layer_name: str,
    images: np.ndarray,
    normalization=None,
    batch_size: int = 64,
    targets: np.ndarray | None = None,
) -> np.ndarray:
    """Grad-CAM over the named conv layer, upsampled to input size.

    Per image: weight each activation map of the layer by the spatial mean
    of the target-class logit gradient, sum, ReLU, then bilinear-resize
    (half-pixel centers) to the input resolution.  The target class is the
    model's own argmax unless ``targets`` is given.
    """
    layer = _find_conv_layer(model, layer_name)
    model.eval()
    x_all = _prepare(images, normalization)
    out_maps = []

    captured: dict = {}

    def hook(_module, _inputs, output):
        captured["acts"] = output
        output.retain_grad()

    handle = layer.register_forward_hook(hook)
    try:
        for start in range(0, x_all.shape[0], batch_size):
            x = x_all[start : start + batch_size].clone().requires_grad_(False)
            model.zero_grad(set_to_none=True)
            logits = model(x)
            acts = captured["acts"]
            if targets is None:
                chosen = logits.detach().cpu().numpy().argmax(axis=1)
            else:
                chosen = np.asarray(targets[start : start + batch_size])
            picked = logits[torch.arange(logits.shape[0]), torch.as_tensor(chosen)]
            grads = torch.autograd.grad(picked.sum(), acts)[0]
            alpha = grads.mean(dim=(2, 3), keepdim=True)
            cam = torch.relu((alpha * acts).sum(dim=1, keepdim=True))
            cam = F.interpolate(
                cam, size=x.shape[-2:], mode="bilinear", align_corners=False
            )
            # interpolation of non-negative values can round slightly below zero
            cam = torch.clamp(cam[:, 0], min=0.0)
            out_maps.append(cam.detach().cpu().numpy().astype(np.float32))
    finally:
        handle.remove()
    if not out_maps:
        return np.zeros((0,) + images.shape[2:], dtype=np.float32)
    return np.concatenate(out_maps)


def export_gradcam(
    model: torch.nn.Module,
    layer_name: str,
    images: np.ndarray,
    split: str,
    out_path: str | Path,
    normalization=None,
    batch_size: int = 64,
    targets: np.ndarray | None = None,
) -> None:
    """Write per-image saliency for one split as an ``OBSM`` file."""
    del split  # order is the dataset's index order by construction
    maps = gradcam_maps(model, layer_name, images, normalization, batch_size, targets)
    write_obsm(out_path, maps)
