"""Exporter conformance: interchange files must satisfy the main toolkit's
validators, and the exported saliency must agree with the toolkit's own
implementation when both run identical weights."""

import json
import struct
import subprocess
import sys

import numpy as np
import pytest
import torch
from torch import nn

from occlubench_exporter.export import (
    export_gradcam,
    export_predictions,
    gradcam_maps,
    predict_labels,
)
from occlubench_exporter.io import (
    load_cifar_batches,
    load_idx_pair,
    load_manifest,
    write_obsm,
    write_prediction_jsonl,
)


def build_toy_model(channels=1, f1=4, f2=6, classes=3, hw=16, seed=11):
    torch.manual_seed(seed)
    model = nn.Sequential(
        nn.Conv2d(channels, f1, 3, padding=1),
        nn.ReLU(),
        nn.MaxPool2d(2),
        nn.Conv2d(f1, f2, 3, padding=1),
        nn.ReLU(),
        nn.MaxPool2d(2),
        nn.Flatten(),
        nn.Linear(f2 * (hw // 4) * (hw // 4), classes),
    )
    model.double()
    return model


def toy_images(n=12, channels=1, hw=16, seed=3):
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(0, 1, size=(n, channels, hw, hw)).astype(np.float64)


def run_validate(*paths):
    return subprocess.run(
        [sys.executable, "-m", "occlubench.cli", "validate", *map(str, paths)],
        capture_output=True,
        text=True,
    )


class TestPredictions:
    def test_log_passes_primary_validate(self, tmp_path):
        model = build_toy_model()
        images = toy_images()
        labels = np.arange(12) % 3
        out = tmp_path / "preds.jsonl"
        export_predictions(model, images, labels, "test", out)
        result = run_validate(out)
        assert result.returncode == 0, result.stderr
        assert "prediction log: 12 records" in result.stdout

    def test_record_count_and_order(self, tmp_path):
        model = build_toy_model()
        images = toy_images(n=9)
        labels = np.arange(9) % 3
        out = tmp_path / "preds.jsonl"
        export_predictions(model, images, labels, "test", out)
        lines = out.read_text().splitlines()
        assert len(lines) == 9
        records = [json.loads(l) for l in lines]
        assert [r["index"] for r in records] == list(range(9))
        assert all(set(r) == {"split", "index", "true_label", "predicted_label"}
                   for r in records)

    def test_rerun_is_byte_identical(self, tmp_path):
        model = build_toy_model()
        images = toy_images()
        labels = np.arange(12) % 3
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        export_predictions(model, images, labels, "test", a)
        export_predictions(model, images, labels, "test", b)
        assert a.read_bytes() == b.read_bytes()

    def test_argmax_tie_breaks_low(self):
        class Constant(nn.Module):
            def forward(self, x):
                return torch.zeros(x.shape[0], 4, dtype=x.dtype)

        preds = predict_labels(Constant(), toy_images(n=5))
        assert np.array_equal(preds, np.zeros(5, dtype=np.int64))


class TestGradCam:
    def test_saliency_passes_primary_validate(self, tmp_path):
        model = build_toy_model()
        images = toy_images()
        out = tmp_path / "sal.obsm"
        export_gradcam(model, "3", images, "test", out)
        result = run_validate(out)
        assert result.returncode == 0, result.stderr
        assert "saliency file: 12 maps of 16x16" in result.stdout

    def test_maps_nonnegative_and_input_sized(self):
        model = build_toy_model()
        maps = gradcam_maps(model, "3", toy_images(n=4))
        assert maps.shape == (4, 16, 16)
        assert maps.min() >= 0.0

    def test_unknown_layer_lists_conv_layers(self):
        model = build_toy_model()
        with pytest.raises(ValueError, match="convolutional layers"):
            gradcam_maps(model, "features.9", toy_images(n=2))

    def test_non_conv_layer_rejected(self):
        model = build_toy_model()
        with pytest.raises(ValueError, match="not Conv2d"):
            gradcam_maps(model, "7", toy_images(n=2))  # the Linear head

    def test_agrees_with_primary_on_ported_weights(self):
        # identical weights in both implementations must give maps within
        # 1e-4 of each other (shared math, independent code paths)
        from occlubench.refmodel import GradCamConfig, TinyCnn, grad_cam_batch

        hw, f1, f2, classes = 16, 4, 6, 3
        torch_model = build_toy_model(1, f1, f2, classes, hw, seed=21)
        primary = TinyCnn((1, hw, hw), classes, (f1, f2), 3, seed=0)
        with torch.no_grad():
            primary.set_parameters(
                [
                    torch_model[0].weight.numpy().astype(np.float64),
                    torch_model[0].bias.numpy().astype(np.float64),
                    torch_model[3].weight.numpy().astype(np.float64),
                    torch_model[3].bias.numpy().astype(np.float64),
                    torch_model[7].weight.numpy().astype(np.float64),
                    torch_model[7].bias.numpy().astype(np.float64),
                ]
            )
        images = toy_images(n=10, hw=hw, seed=5)

        logits_torch = torch_model(torch.from_numpy(images)).detach().numpy()
        logits_primary = primary.forward_batch(images)
        assert np.max(np.abs(logits_torch - logits_primary)) < 1e-8

        theirs = gradcam_maps(torch_model, "3", images)
        ours = grad_cam_batch(primary, images, GradCamConfig(target_layer=1))
        assert np.max(np.abs(theirs - ours)) < 1e-4

    def test_explicit_targets(self):
        model = build_toy_model()
        images = toy_images(n=4)
        maps_a = gradcam_maps(model, "3", images, targets=np.zeros(4, dtype=int))
        maps_b = gradcam_maps(model, "3", images, targets=np.full(4, 2))
        assert maps_a.shape == maps_b.shape
        assert not np.allclose(maps_a, maps_b)


class TestIo:
    def test_cifar_round_trip_bytes(self, tmp_path):
        rng = np.random.Generator(np.random.PCG64(0))
        records = []
        for i in range(3):
            records.append(bytes([i]) + bytes(rng.integers(0, 256, 3072).tolist()))
        path = tmp_path / "batch.bin"
        path.write_bytes(b"".join(records))
        images, labels = load_cifar_batches([path])
        assert images.shape == (3, 3, 32, 32)
        assert labels.tolist() == [0, 1, 2]
        assert images.max() <= 1.0

    def test_idx_pair(self, tmp_path):
        img = np.zeros((2, 4, 4), dtype=np.uint8)
        img[1, 2, 3] = 255
        ip = tmp_path / "img"
        ip.write_bytes(struct.pack(">IIII", 0x803, 2, 4, 4) + img.tobytes())
        lp = tmp_path / "lab"
        lp.write_bytes(struct.pack(">II", 0x801, 2) + bytes([0, 1]))
        images, labels = load_idx_pair(ip, lp)
        assert images.shape == (2, 1, 4, 4)
        assert images[1, 0, 2, 3] == 1.0
        assert labels.tolist() == [0, 1]

    def test_idx_magic_checked(self, tmp_path):
        ip = tmp_path / "img"
        ip.write_bytes(struct.pack(">IIII", 0x801, 1, 2, 2) + bytes(4))
        lp = tmp_path / "lab"
        lp.write_bytes(struct.pack(">II", 0x801, 1) + bytes([0]))
        with pytest.raises(ValueError, match="magic"):
            load_idx_pair(ip, lp)

    def test_manifest_iteration(self, tmp_path):
        img = np.zeros((2, 4, 4), dtype=np.uint8)
        (tmp_path / "occ-images.idx").write_bytes(
            struct.pack(">IIII", 0x803, 2, 4, 4) + img.tobytes()
        )
        (tmp_path / "occ-labels.idx").write_bytes(
            struct.pack(">II", 0x801, 2) + bytes([0, 1])
        )
        manifest = {
            "fractions": [0.3],
            "splits": {
                "test": [
                    {
                        "fraction": 0.3,
                        "format": "idx",
                        "images": "occ-images.idx",
                        "labels": "occ-labels.idx",
                    }
                ]
            },
        }
        mpath = tmp_path / "manifest.json"
        mpath.write_text(json.dumps(manifest))
        out = list(load_manifest(mpath, "test"))
        assert len(out) == 1
        fraction, images, labels = out[0]
        assert fraction == 0.3
        assert images.shape == (2, 1, 4, 4)

    def test_write_obsm_rejects_negative(self, tmp_path):
        with pytest.raises(ValueError, match="non-negative"):
            write_obsm(tmp_path / "x.obsm", np.full((1, 2, 2), -1.0))

    def test_write_jsonl_rejects_bad_split(self, tmp_path):
        with pytest.raises(ValueError, match="split"):
            write_prediction_jsonl(
                tmp_path / "x.jsonl", "val", np.zeros(1, int), np.zeros(1, int)
            )
