"""Loaders and interchange formats against hand-crafted byte fixtures."""

import json
import struct

import numpy as np
import pytest

from occlubench.core import SubsetIndex
from occlubench.dataio import (
    FormatError,
    Normalization,
    PredictionLog,
    PredictionRecord,
    RunConfig,
    compute_normalization,
    gen_synthetic,
    load_cifar10,
    load_idx,
    read_mask_bank,
    read_prediction_log,
    read_saliency,
    read_subset_index,
    write_cifar10,
    write_idx,
    write_mask_bank,
    write_prediction_log,
    write_saliency,
    write_subset_index,
)
from occlubench.maskgen import FourierMaskParams, fourier_mask


def cifar_record(label, red=0, green=0, blue=0):
    return bytes([label]) + bytes([red] * 1024 + [green] * 1024 + [blue] * 1024)


class TestCifar10:
    def test_two_record_file(self, tmp_path):
        path = tmp_path / "batch.bin"
        path.write_bytes(cifar_record(3) + cifar_record(7, red=255))
        ds = load_cifar10([path], "train")
        assert len(ds) == 2
        assert ds.labels.tolist() == [3, 7]
        assert ds.images.shape == (2, 3, 32, 32)

    def test_label_byte_preserved(self, tmp_path):
        path = tmp_path / "batch.bin"
        path.write_bytes(cifar_record(7))
        assert load_cifar10([path], "test").labels.tolist() == [7]

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "batch.bin"
        path.write_bytes(cifar_record(1)[:-1])
        with pytest.raises(FormatError, match="multiple of 3073"):
            load_cifar10([path], "train")

    def test_label_byte_out_of_range(self, tmp_path):
        path = tmp_path / "batch.bin"
        path.write_bytes(cifar_record(10))
        with pytest.raises(FormatError, match="label byte 10"):
            load_cifar10([path], "train")

    def test_extreme_pixels_normalized_by_hand(self, tmp_path):
        # bytes 0 and 255 scale to 0.0 and 1.0; with mean .5 and std .25 the
        # normalized extremes are (0-.5)/.25 = -2 and (1-.5)/.25 = 2
        path = tmp_path / "batch.bin"
        path.write_bytes(cifar_record(0, red=255, green=0, blue=255))
        norm = Normalization((0.5, 0.5, 0.5), (0.25, 0.25, 0.25))
        ds = load_cifar10([path], "train", norm)
        assert np.all(ds.images[0, 0] == 2.0)
        assert np.all(ds.images[0, 1] == -2.0)
        assert np.all(ds.images[0, 2] == 2.0)

    def test_write_read_round_trip(self, tmp_path):
        rng = np.random.Generator(np.random.PCG64(5))
        pixels = rng.integers(0, 256, size=(4, 3, 32, 32)).astype(np.float64) / 255.0
        from occlubench.core import LabeledDataset

        ds = LabeledDataset(pixels, rng.integers(0, 10, size=4), 10, "test")
        path = tmp_path / "out.bin"
        write_cifar10(path, ds)
        back = load_cifar10([path], "test")
        assert np.allclose(back.images, ds.images, atol=1e-12)
        assert np.array_equal(back.labels, ds.labels)

    def test_multiple_files_concatenate(self, tmp_path):
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        p1.write_bytes(cifar_record(1))
        p2.write_bytes(cifar_record(2) + cifar_record(3))
        ds = load_cifar10([p1, p2], "train")
        assert ds.labels.tolist() == [1, 2, 3]


def idx_image_bytes(images):
    n, h, w = images.shape
    return struct.pack(">IIII", 0x803, n, h, w) + images.astype(np.uint8).tobytes()


def idx_label_bytes(labels):
    return struct.pack(">II", 0x801, len(labels)) + bytes(labels)


class TestIdx:
    def test_three_image_pair(self, tmp_path):
        images = np.zeros((3, 4, 4), dtype=np.uint8)
        ip, lp = tmp_path / "img", tmp_path / "lab"
        ip.write_bytes(idx_image_bytes(images))
        lp.write_bytes(idx_label_bytes([0, 1, 2]))
        ds = load_idx(ip, lp, "train")
        assert len(ds) == 3
        assert ds.labels.tolist() == [0, 1, 2]
        assert ds.images.shape == (3, 1, 4, 4)

    def test_wrong_images_magic_rejected(self, tmp_path):
        ip, lp = tmp_path / "img", tmp_path / "lab"
        ip.write_bytes(struct.pack(">IIII", 0x801, 1, 4, 4) + bytes(16))
        lp.write_bytes(idx_label_bytes([0]))
        with pytest.raises(FormatError, match="magic"):
            load_idx(ip, lp, "train")

    def test_count_mismatch_rejected(self, tmp_path):
        ip, lp = tmp_path / "img", tmp_path / "lab"
        ip.write_bytes(idx_image_bytes(np.zeros((2, 4, 4), dtype=np.uint8)))
        lp.write_bytes(idx_label_bytes([0, 1, 2]))
        with pytest.raises(FormatError, match="3 labels for 2 images"):
            load_idx(ip, lp, "train")

    def test_payload_position_row_major(self, tmp_path):
        # byte written at flat position r*28+c must surface at pixel (r, c)
        img = np.zeros((1, 28, 28), dtype=np.uint8)
        img[0, 5, 11] = 255
        img[0, 27, 0] = 128
        ip, lp = tmp_path / "img", tmp_path / "lab"
        ip.write_bytes(idx_image_bytes(img))
        lp.write_bytes(idx_label_bytes([4]))
        ds = load_idx(ip, lp, "train")
        assert ds.images[0, 0, 5, 11] == 1.0
        assert ds.images[0, 0, 27, 0] == 128 / 255
        assert np.count_nonzero(ds.images) == 2

    def test_truncated_payload(self, tmp_path):
        ip, lp = tmp_path / "img", tmp_path / "lab"
        ip.write_bytes(idx_image_bytes(np.zeros((2, 4, 4), dtype=np.uint8))[:-3])
        lp.write_bytes(idx_label_bytes([0, 1]))
        with pytest.raises(FormatError, match="payload"):
            load_idx(ip, lp, "train")

    def test_write_read_round_trip(self, tmp_path):
        ds = gen_synthetic(2, 3, 8, seed=1)
        ip, lp = tmp_path / "img", tmp_path / "lab"
        write_idx(ip, lp, ds)
        back = load_idx(ip, lp, "train", num_classes=2)
        assert np.allclose(back.images, ds.images, atol=1 / 255 / 2 + 1e-12)
        assert np.array_equal(back.labels, ds.labels)


class TestSynthetic:
    def test_counts_and_classes(self):
        ds = gen_synthetic(3, 100, 16, seed=0)
        assert len(ds) == 300
        assert np.bincount(ds.labels).tolist() == [100, 100, 100]

    def test_deterministic(self):
        a = gen_synthetic(3, 10, 16, seed=5)
        b = gen_synthetic(3, 10, 16, seed=5)
        assert np.array_equal(a.images, b.images)
        assert np.array_equal(a.labels, b.labels)

    def test_zero_noise_two_classes_linearly_separable(self):
        # perceptron oracle: convergence proves separability
        ds = gen_synthetic(2, 40, 16, seed=3, noise=0.0)
        x = ds.images.reshape(len(ds), -1)
        y = np.where(ds.labels == 1, 1.0, -1.0)
        w = np.zeros(x.shape[1])
        b = 0.0
        converged = False
        for _ in range(500):
            updates = 0
            for i in range(len(ds)):
                if y[i] * (x[i] @ w + b) <= 0:
                    w += y[i] * x[i]
                    b += y[i]
                    updates += 1
            if updates == 0:
                converged = True
                break
        assert converged

    def test_three_channel_variant(self):
        ds = gen_synthetic(2, 5, 16, seed=1, channels=3)
        assert ds.images.shape == (10, 3, 16, 16)

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            gen_synthetic(1, 5, 16, seed=0)

    def test_at_most_five_shapes(self):
        ds = gen_synthetic(5, 2, 16, seed=0)
        assert ds.num_classes == 5
        with pytest.raises(ValueError, match="at most 5"):
            gen_synthetic(6, 2, 16, seed=0)


class TestPredictionLog:
    def _log(self):
        return PredictionLog(
            [
                PredictionRecord("test", 1, 3, 3),
                PredictionRecord("test", 0, 2, 1),
                PredictionRecord("train", 5, 0, 0),
            ]
        )

    def test_sorted_by_split_and_index(self):
        log = self._log()
        assert [(r.split, r.index) for r in log] == [
            ("test", 0),
            ("test", 1),
            ("train", 5),
        ]

    def test_round_trip(self, tmp_path):
        path = tmp_path / "preds.jsonl"
        log = self._log()
        write_prediction_log(path, log)
        assert read_prediction_log(path).records == log.records

    def test_duplicate_rejected_with_line_number(self, tmp_path):
        path = tmp_path / "preds.jsonl"
        line = json.dumps(
            {"split": "test", "index": 0, "true_label": 1, "predicted_label": 1}
        )
        path.write_text(line + "\n" + line + "\n")
        with pytest.raises(FormatError, match=r":2: duplicate"):
            read_prediction_log(path)

    def test_missing_field_rejected(self, tmp_path):
        path = tmp_path / "preds.jsonl"
        path.write_text('{"split": "test", "index": 0, "true_label": 1}\n')
        with pytest.raises(FormatError, match="exactly the fields"):
            read_prediction_log(path)

    def test_extra_field_rejected(self, tmp_path):
        path = tmp_path / "preds.jsonl"
        path.write_text(
            '{"split": "test", "index": 0, "true_label": 1, '
            '"predicted_label": 1, "extra": 2}\n'
        )
        with pytest.raises(FormatError, match="exactly the fields"):
            read_prediction_log(path)

    def test_malformed_json_names_line(self, tmp_path):
        path = tmp_path / "preds.jsonl"
        good = json.dumps(
            {"split": "test", "index": 0, "true_label": 1, "predicted_label": 1}
        )
        path.write_text(good + "\n{broken\n")
        with pytest.raises(FormatError, match=r":2: invalid JSON"):
            read_prediction_log(path)

    def test_negative_index_rejected(self, tmp_path):
        path = tmp_path / "preds.jsonl"
        path.write_text(
            '{"split": "test", "index": -1, "true_label": 1, "predicted_label": 1}\n'
        )
        with pytest.raises(FormatError, match="index"):
            read_prediction_log(path)

    def test_restrict_and_for_split(self):
        log = self._log()
        test_only = log.for_split("test")
        assert len(test_only) == 2
        sub = log.restrict(SubsetIndex("test", (0,)))
        assert {(r.split, r.index) for r in sub} == {("test", 0), ("train", 5)}


class TestSaliencyFile:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.Generator(np.random.PCG64(2))
        maps = rng.uniform(0, 3, size=(3, 5, 4)).astype(np.float32)
        p1, p2 = tmp_path / "a.obsm", tmp_path / "b.obsm"
        write_saliency(p1, maps)
        back = read_saliency(p1)
        assert np.array_equal(back, maps)
        write_saliency(p2, back)
        assert p1.read_bytes() == p2.read_bytes()

    def test_nan_rejected_on_read(self, tmp_path):
        path = tmp_path / "bad.obsm"
        body = np.array([[np.nan, 1.0], [0.0, 2.0]], dtype="<f4")
        path.write_bytes(b"OBSM" + struct.pack("<III", 1, 2, 2) + body.tobytes())
        with pytest.raises(FormatError, match="finite"):
            read_saliency(path)

    def test_negative_rejected(self, tmp_path):
        path = tmp_path / "bad.obsm"
        body = np.array([[-0.5, 1.0], [0.0, 2.0]], dtype="<f4")
        path.write_bytes(b"OBSM" + struct.pack("<III", 1, 2, 2) + body.tobytes())
        with pytest.raises(FormatError, match="non-negative"):
            read_saliency(path)

    def test_length_arithmetic(self, tmp_path):
        # 2 maps of 4x4 float32 = 128 body bytes; 127 must be rejected
        good = tmp_path / "good.obsm"
        good.write_bytes(b"OBSM" + struct.pack("<III", 2, 4, 4) + bytes(128))
        assert read_saliency(good).shape == (2, 4, 4)
        bad = tmp_path / "bad.obsm"
        bad.write_bytes(b"OBSM" + struct.pack("<III", 2, 4, 4) + bytes(127))
        with pytest.raises(FormatError, match="128"):
            read_saliency(bad)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.obsm"
        path.write_bytes(b"NOPE" + struct.pack("<III", 0, 0, 0))
        with pytest.raises(FormatError, match="magic"):
            read_saliency(path)

    def test_write_rejects_nan(self, tmp_path):
        with pytest.raises(ValueError, match="finite"):
            write_saliency(tmp_path / "x.obsm", np.full((1, 2, 2), np.nan))


class TestMaskFile:
    def test_round_trip(self, tmp_path):
        params = FourierMaskParams()
        masks = [fourier_mask(8, 8, 0.4, params, s) for s in range(3)]
        path = tmp_path / "bank.obmk"
        write_mask_bank(path, masks)
        back = read_mask_bank(path)
        assert len(back) == 3
        for a, b in zip(masks, back):
            assert np.array_equal(a.covered, b.covered)

    def test_header_layout(self, tmp_path):
        masks = [fourier_mask(4, 6, 0.5, FourierMaskParams(), 0)]
        path = tmp_path / "bank.obmk"
        write_mask_bank(path, masks)
        raw = path.read_bytes()
        assert raw[:4] == b"OBMK"
        assert struct.unpack("<III", raw[4:16]) == (1, 4, 6)
        assert len(raw) == 16 + 24

    def test_bad_byte_rejected(self, tmp_path):
        path = tmp_path / "bad.obmk"
        path.write_bytes(b"OBMK" + struct.pack("<III", 1, 2, 2) + bytes([0, 1, 2, 0]))
        with pytest.raises(FormatError, match="0 or 1"):
            read_mask_bank(path)

    def test_length_mismatch(self, tmp_path):
        path = tmp_path / "bad.obmk"
        path.write_bytes(b"OBMK" + struct.pack("<III", 2, 2, 2) + bytes(7))
        with pytest.raises(FormatError, match="header implies 8"):
            read_mask_bank(path)


class TestSubsetIndexFile:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "tail.idx"
        write_subset_index(path, SubsetIndex("test", (4, 1, 9)))
        back = read_subset_index(path)
        assert back.split == "test"
        assert back.indices == (1, 4, 9)

    def test_header_format(self, tmp_path):
        path = tmp_path / "tail.idx"
        write_subset_index(path, SubsetIndex("train", (2,)))
        assert path.read_text().splitlines()[0] == "split=train"

    def test_missing_header(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_text("1\n2\n")
        with pytest.raises(FormatError, match="header"):
            read_subset_index(path)

    def test_bad_split(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_text("split=validation\n1\n")
        with pytest.raises(FormatError, match="split"):
            read_subset_index(path)

    def test_non_integer_line(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_text("split=train\n1\nx\n")
        with pytest.raises(FormatError, match=":3: not an integer"):
            read_subset_index(path)

    def test_duplicate_indices(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_text("split=train\n1\n1\n")
        with pytest.raises(FormatError, match="unique"):
            read_subset_index(path)


class TestNormalization:
    def test_apply_invert_round_trip(self):
        rng = np.random.Generator(np.random.PCG64(1))
        images = rng.uniform(size=(4, 3, 5, 5))
        norm = Normalization((0.4, 0.5, 0.6), (0.2, 0.25, 0.3))
        assert np.allclose(norm.invert(norm.apply(images)), images, atol=1e-12)

    def test_compute_matches_manual(self):
        rng = np.random.Generator(np.random.PCG64(2))
        images = rng.uniform(size=(10, 3, 4, 4))
        norm = compute_normalization(images)
        for c in range(3):
            assert norm.mean[c] == pytest.approx(images[:, c].mean())
            assert norm.std[c] == pytest.approx(images[:, c].std())

    def test_std_positive_required(self):
        with pytest.raises(ValueError):
            Normalization((0.5,), (0.0,))

    def test_json_round_trip(self):
        norm = Normalization((0.1, 0.2, 0.3), (1.0, 2.0, 3.0))
        assert Normalization.from_json(norm.to_json()) == norm


class TestRunConfig:
    def test_valid_config(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(
            json.dumps(
                {
                    "dataset": {
                        "kind": "synthetic",
                        "num_classes": 3,
                        "per_class": 10,
                        "size": 16,
                    },
                    "train": {"epochs": 2, "mode": "fmix", "seed": 1},
                }
            )
        )
        cfg = RunConfig.from_file(path)
        assert cfg.dataset["kind"] == "synthetic"
        assert cfg.train["mode"] == "fmix"

    def test_all_errors_collected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(
            json.dumps(
                {
                    "dataset": {"kind": "volumetric"},
                    "train": {"epochs": 0, "momentum": 1.5, "mode": "rm3"},
                    "typo": 1,
                }
            )
        )
        with pytest.raises(FormatError) as err:
            RunConfig.from_file(path)
        msg = str(err.value)
        # every problem is reported, not just the first
        assert "dataset.kind" in msg
        assert "train.epochs" in msg
        assert "train.momentum" in msg
        assert "mask_bank" in msg
        assert "unknown top-level key 'typo'" in msg

    def test_invalid_json_reported(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{nope")
        with pytest.raises(FormatError, match="invalid JSON"):
            RunConfig.from_file(path)
