"""Metric arithmetic, formula identities, and occluded-evaluation plumbing."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from occlubench.core import LabeledDataset, SubsetIndex, rng_from_seed
from occlubench.dataio import PredictionLog, PredictionRecord, gen_synthetic
from occlubench.metrics import (
    DegenerateGapError,
    RobustnessCurve,
    SplitAccuracy,
    accuracy,
    aggregate_seeds,
    build_masks,
    combine_curves,
    cut_occlusion,
    cut_occlusion_curve,
    i_occlusion,
    i_occlusion_curve,
    i_occlusion_from_logs,
    misclass_delta,
    occlude_images,
)
from occlubench.refmodel import TinyCnn, TrainConfig, predict_dataset, train


def make_log(true_labels, predicted, split="test"):
    return PredictionLog(
        [
            PredictionRecord(split, i, int(t), int(p))
            for i, (t, p) in enumerate(zip(true_labels, predicted))
        ]
    )


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy(make_log([0, 1, 2], [0, 1, 2])) == 1.0

    def test_half_correct(self):
        assert accuracy(make_log([0, 1], [0, 2])) == 0.5

    def test_seven_of_nine_exact(self):
        true = [0] * 9
        pred = [0] * 7 + [1] * 2
        assert accuracy(make_log(true, pred)) == 7 / 9

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            accuracy(PredictionLog([]))


class TestIOcclusion:
    def test_zero_fraction_is_exactly_one(self):
        acc = SplitAccuracy(0.83, 0.61, 0.83, 0.61)
        assert i_occlusion(acc) == 1.0

    def test_direct_arithmetic(self):
        assert i_occlusion(SplitAccuracy(0.9, 0.7, 0.6, 0.5)) == pytest.approx(0.5)

    def test_absolute_value(self):
        assert i_occlusion(SplitAccuracy(0.9, 0.7, 0.5, 0.6)) == pytest.approx(0.5)

    def test_degenerate_gap_is_error_not_number(self):
        with pytest.raises(DegenerateGapError, match="zero generalisation gap"):
            i_occlusion(SplitAccuracy(0.8, 0.8, 0.5, 0.4))
        with pytest.raises(DegenerateGapError):
            i_occlusion(SplitAccuracy(0.8, 0.8 + 1e-9, 0.5, 0.4))

    @given(
        st.floats(0.0, 1.0),
        st.floats(0.0, 1.0),
        st.floats(0.0, 1.0),
        st.floats(0.0, 1.0),
        st.sampled_from([0.25, 0.5, 2.0, 4.0, 1024.0, 2.0**-20]),
    )
    @settings(max_examples=200)
    def test_scale_invariance_binary_exact(self, a, b, c, d, scale):
        # scaling by powers of two commutes with IEEE rounding, so the
        # formula must be bit-exactly invariant under those rescalings
        # (wherever both the plain and the scaled gap clear the guard)
        if abs(a - b) < 1e-6 or abs(a * scale - b * scale) < 1e-6:
            return
        plain = i_occlusion(SplitAccuracy(a, b, c, d))
        scaled = i_occlusion(SplitAccuracy(a * scale, b * scale, c * scale, d * scale))
        assert plain == scaled

    def test_percent_vs_fraction_agree(self):
        frac = i_occlusion(SplitAccuracy(0.9, 0.7, 0.6, 0.5))
        pct = i_occlusion(SplitAccuracy(90.0, 70.0, 60.0, 50.0))
        assert pct == pytest.approx(frac, rel=1e-12)


class TestMisclassDelta:
    def test_identical_logs_give_zero(self):
        log = make_log([0, 1, 2, 0], [1, 1, 2, 2])
        d = misclass_delta(log, log, 3)
        assert d.deltas == (0, 0, 0)

    def test_forced_counting_example(self):
        clean = make_log([0, 0], [1, 1])
        distorted = make_log([0, 0], [2, 2])
        d = misclass_delta(clean, distorted, 4)
        assert d.deltas == (0, -2, 2, 0)

    def test_conservation_identity(self):
        rng = rng_from_seed(0)
        for _ in range(50):
            n = int(rng.integers(1, 40))
            classes = int(rng.integers(2, 7))
            true = rng.integers(0, classes, size=n)
            clean = make_log(true, rng.integers(0, classes, size=n))
            distorted = make_log(true, rng.integers(0, classes, size=n))
            d = misclass_delta(clean, distorted, classes)
            wrong_clean = sum(1 for r in clean if not r.correct)
            wrong_distorted = sum(1 for r in distorted if not r.correct)
            assert d.total == wrong_distorted - wrong_clean

    def test_mismatched_keys_rejected(self):
        a = make_log([0, 1], [0, 1])
        b = PredictionLog([PredictionRecord("test", 5, 0, 0), PredictionRecord("test", 6, 1, 1)])
        with pytest.raises(ValueError, match="different records"):
            misclass_delta(a, b, 2)


class TestAggregateSeeds:
    def test_single_value(self):
        agg = aggregate_seeds([1.0])
        assert (agg.mean, agg.std) == (1.0, 0.0)

    def test_textbook_sample_std(self):
        agg = aggregate_seeds([1.0, 2.0, 3.0])
        assert agg.mean == 2.0
        assert agg.std == 1.0

    def test_equal_values_zero_std(self):
        agg = aggregate_seeds([0.7] * 5)
        assert agg.std == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_seeds([])


class TestRobustnessCurve:
    def test_means_and_stds(self):
        curve = RobustnessCurve("iocclusion", (0.1, 0.3), ((1.0, 2.0, 3.0), (4.0,)))
        assert curve.means == (2.0, 4.0)
        assert curve.stds == (1.0, 0.0)
        assert curve.n_seeds == (3, 1)

    def test_fraction_order_enforced(self):
        with pytest.raises(ValueError, match="ascending"):
            RobustnessCurve("iocclusion", (0.3, 0.1), ((1.0,), (1.0,)))

    def test_combine_pools_samples(self):
        a = RobustnessCurve("cutocclusion", (0.1,), ((1.0,),))
        b = RobustnessCurve("cutocclusion", (0.1,), ((3.0,),))
        merged = combine_curves([a, b])
        assert merged.samples == ((1.0, 3.0),)
        assert merged.means == (2.0,)

    def test_combine_requires_same_grid(self):
        a = RobustnessCurve("cutocclusion", (0.1,), ((1.0,),))
        b = RobustnessCurve("cutocclusion", (0.2,), ((1.0,),))
        with pytest.raises(ValueError):
            combine_curves([a, b])


@pytest.fixture(scope="module")
def small_model_and_data():
    train_set = gen_synthetic(3, 40, 16, seed=11, split="train")
    test_set = gen_synthetic(3, 15, 16, seed=99, split="test")
    model = TinyCnn((1, 16, 16), 3, conv_channels=(4, 8), seed=2)
    train(model, train_set, TrainConfig(epochs=16, batch_size=32, seed=8))
    return model, train_set, test_set


class TestCutOcclusion:
    def test_fraction_zero_equals_clean_accuracy(self, small_model_and_data):
        model, _, test_set = small_model_and_data
        clean = accuracy(predict_dataset(model, test_set))
        agg = cut_occlusion(model, test_set, 0.0, seeds=[0, 1])
        assert agg.mean == clean
        assert agg.std == 0.0

    def test_fraction_one_constant_image_oracle(self, small_model_and_data):
        # with the whole image filled, every input is the same constant
        # image; a single forward pass on it determines the expected value
        model, _, test_set = small_model_and_data
        fill = 0.3
        constant = np.full((1, 1, 16, 16), fill)
        pred = int(np.argmax(model.forward_batch(constant)[0]))
        expected = float(np.mean(test_set.labels == pred))
        agg = cut_occlusion(model, test_set, 1.0, seeds=[3], fill=fill)
        assert agg.mean == expected

    def test_seed_variation_reported(self, small_model_and_data):
        model, _, test_set = small_model_and_data
        agg = cut_occlusion(model, test_set, 0.4, seeds=range(4))
        assert len(agg.values) == 4
        assert agg.std >= 0.0

    def test_curve_grid(self, small_model_and_data):
        model, _, test_set = small_model_and_data
        curve = cut_occlusion_curve(model, test_set, (0.0, 0.5), seeds=[0, 1])
        assert curve.kind == "cutocclusion"
        assert curve.fractions == (0.0, 0.5)
        assert len(curve.samples[0]) == 2


class TestBuildMasks:
    def test_policies_have_exact_fraction(self, small_model_and_data):
        _, _, test_set = small_model_and_data
        rng = rng_from_seed(0)
        saliency = rng.uniform(size=(len(test_set), 16, 16))
        for policy, sal in (("rect", None), ("fourier", None), ("gradcam", saliency)):
            masks = build_masks(test_set, 0.25, policy, 7, saliency=sal)
            counts = masks.reshape(len(test_set), -1).sum(axis=1)
            assert np.all(counts == 64)  # round(0.25 * 256)

    def test_gradcam_policy_needs_saliency(self, small_model_and_data):
        _, _, test_set = small_model_and_data
        with pytest.raises(ValueError, match="saliency"):
            build_masks(test_set, 0.2, "gradcam", 0)

    def test_unknown_policy(self, small_model_and_data):
        _, _, test_set = small_model_and_data
        with pytest.raises(ValueError, match="policy"):
            build_masks(test_set, 0.2, "checkerboard", 0)

    def test_donor_occlusion_takes_donor_pixels(self, small_model_and_data):
        _, _, test_set = small_model_and_data
        donors = gen_synthetic(2, 20, 16, seed=5, split="test")
        masks = build_masks(test_set, 0.5, "rect", 3)
        out = occlude_images(test_set, masks, donors=donors, seed=3)
        changed = out != test_set.images
        assert np.any(changed)
        assert not np.any(changed & ~masks[:, None, :, :])


class TestIOcclusionCurve:
    def test_fraction_zero_gives_exactly_one(self, small_model_and_data):
        model, train_set, test_set = small_model_and_data
        curve = i_occlusion_curve(
            model, train_set, test_set, fractions=(0.0,), seeds=(0,)
        )
        assert curve.samples == ((1.0,),)

    def test_gradcam_policy_deterministic_across_seeds(self, small_model_and_data):
        model, train_set, test_set = small_model_and_data
        curve = i_occlusion_curve(
            model, train_set, test_set, fractions=(0.3,), seeds=(0, 1)
        )
        assert curve.samples[0][0] == curve.samples[0][1]

    def test_random_policies_vary_with_seed(self, small_model_and_data):
        model, train_set, test_set = small_model_and_data
        curve = i_occlusion_curve(
            model, train_set, test_set, fractions=(0.4,), mask_policy="rect",
            seeds=(0, 1, 2),
        )
        assert len(set(curve.samples[0])) > 1

    def test_degenerate_gap_raises(self, small_model_and_data):
        _, train_set, test_set = small_model_and_data
        flat = TinyCnn((1, 16, 16), 3, seed=0)
        flat.set_parameters([np.zeros_like(p) for p in flat.parameters()])
        # constant logits predict class 0 everywhere; both splits are
        # class-balanced so both accuracies are exactly 1/3
        with pytest.raises(DegenerateGapError):
            i_occlusion_curve(flat, train_set, test_set, fractions=(0.3,))

    def test_memorizer_denominator_analytic(self):
        # formula-level check: a perfect memorizer has train accuracy 1 and
        # chance-level test accuracy 1/C, so the denominator is 1 - 1/C
        for C in (2, 5, 10):
            acc = SplitAccuracy(1.0, 1.0 / C, 0.8, 1.0 / C)
            expected = (0.8 - 1.0 / C) / (1.0 - 1.0 / C)
            assert i_occlusion(acc) == pytest.approx(expected)

    def test_subset_evaluation_equals_filtered_log(self, small_model_and_data):
        model, _, test_set = small_model_and_data
        subset = SubsetIndex("test", tuple(range(0, len(test_set), 3)))
        full_log = predict_dataset(model, test_set)
        filtered_ds = test_set.subset(subset.indices)
        direct = accuracy(predict_dataset(model, filtered_ds))
        via_log = accuracy(full_log.restrict(subset))
        assert direct == via_log

    def test_from_logs(self):
        clean_train = make_log([0, 1, 1, 0], [0, 1, 1, 0], split="train")
        clean_test = make_log([0, 1], [0, 0])
        occ_train = make_log([0, 1, 1, 0], [0, 1, 0, 0], split="train")
        occ_test = make_log([0, 1], [0, 0])
        # accuracies: 1.0 / 0.5 clean, 0.75 / 0.5 occluded -> 0.25/0.5
        assert i_occlusion_from_logs(
            clean_train, clean_test, occ_train, occ_test
        ) == pytest.approx(0.5)
