"""Readers and writers for the occlubench interchange formats.

Implemented against the documented byte layouts (not by importing the main
toolkit): CIFAR-style 3073-byte records, big-endian IDX pairs, JSON Lines
prediction logs, and the little-endian ``OBSM`` float32 saliency format.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

CIFAR_RECORD_BYTES = 3073
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
OBSM_MAGIC = b"OBSM"


def load_cifar_batches(paths: Sequence[str | Path]):
    """3073-byte records -> images (n, 3, 32, 32) in [0, 1] plus labels."""
    images, labels = [], []
    for path in paths:
        raw = Path(path).read_bytes()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
            raise ValueError(f"{path}: not a CIFAR-style batch file")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels.append(rec[:, 0].astype(np.int64))
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0)
    return np.concatenate(images), np.concatenate(labels)


def load_idx_pair(images_path: str | Path, labels_path: str | Path):
    """IDX image/label pair -> images (n, 1, h, w) in [0, 1] plus labels."""
    raw = Path(images_path).read_bytes()
    magic, n, h, w = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise ValueError(f"{images_path}: bad IDX images magic 0x{magic:08x}")
    if len(raw) - 16 != n * h * w:
        raise ValueError(f"{images_path}: truncated IDX payload")
    images = (
        np.frombuffer(raw, dtype=np.uint8, offset=16)
        .reshape(n, 1, h, w)
        .astype(np.float32)
        / 255.0
    )
    lraw = Path(labels_path).read_bytes()
    lmagic, ln = struct.unpack(">II", lraw[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise ValueError(f"{labels_path}: bad IDX labels magic 0x{lmagic:08x}")
    if ln != n:
        raise ValueError(f"{labels_path}: {ln} labels for {n} images")
    labels = np.frombuffer(lraw, dtype=np.uint8, offset=8).astype(np.int64)
    return images, labels


def load_manifest(manifest_path: str | Path, split: str):
    """Occluded derived datasets listed in a toolkit manifest.json.

    Yields (fraction, images, labels) in the manifest's order.
    """
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    base = manifest_path.parent
    if split not in manifest.get("splits", {}):
        raise ValueError(f"{manifest_path}: no split {split!r} in manifest")
    for entry in manifest["splits"][split]:
        if entry["format"] == "cifar10":
            images, labels = load_cifar_batches([base / entry["path"]])
        elif entry["format"] == "idx":
            images, labels = load_idx_pair(base / entry["images"], base / entry["labels"])
        else:
            raise ValueError(f"unknown dataset format {entry['format']!r}")
        yield float(entry["fraction"]), images, labels


def write_prediction_jsonl(
    path: str | Path,
    split: str,
    true_labels: np.ndarray,
    predicted_labels: np.ndarray,
) -> None:
    """One record per image, ordered by index, schema-exact."""
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    if len(true_labels) != len(predicted_labels):
        raise ValueError("label vectors must have equal length")
    with open(path, "w", encoding="utf-8") as f:
        for i, (t, p) in enumerate(zip(true_labels, predicted_labels)):
            f.write(
                json.dumps(
                    {
                        "split": split,
                        "index": i,
                        "true_label": int(t),
                        "predicted_label": int(p),
                    },
                    separators=(", ", ": "),
                )
                + "\n"
            )


def write_obsm(path: str | Path, maps: np.ndarray) -> None:
    """(n, h, w) float32 stack, non-negative, little-endian."""
    maps = np.asarray(maps, dtype=np.float32)
    if maps.ndim != 3:
        raise ValueError(f"saliency stack must be (n, h, w), got {maps.shape}")
    if not np.all(np.isfinite(maps)):
        raise ValueError("saliency values must be finite")
    if maps.size and maps.min() < 0:
        raise ValueError("saliency values must be non-negative")
    n, h, w = maps.shape
    with open(path, "wb") as f:
        f.write(OBSM_MAGIC)
        f.write(struct.pack("<III", n, h, w))
        f.write(np.ascontiguousarray(maps, dtype="<f4").tobytes())
