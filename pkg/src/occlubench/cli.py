"""Command-line surface: train, eval, gen-samples, gen-masks, validate.

All stochastic behavior is pinned by --seed (or the config seed); outputs
are written atomically (temp file + rename) so an interrupted run never
leaves a partial file.  OCCLUBENCH_THREADS caps evaluation parallelism and
never changes results.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from occlubench.core import LabeledDataset, derive_seed, rng_from_seed
from occlubench.dataio import (
    FormatError,
    Normalization,
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
)
from occlubench.maskgen import (
    FourierMaskParams,
    MaskBank,
    fourier_mask,
    rect_mask,
    saliency_mask,
)
from occlubench.metrics import (
    MASK_POLICIES,
    SplitAccuracy,
    accuracy,
    build_masks,
    combine_curves,
    cut_occlusion_curve,
    i_occlusion,
    i_occlusion_curve,
    misclass_delta,
    occlude_images,
)
from occlubench.occlude import cutmix_mix, fmix_mix, mixup_mix
from occlubench.plotting import (
    atomic_write_bytes,
    atomic_write_text,
    curves_csv,
    curves_svg,
    misclass_csv,
    misclass_svg,
)
from occlubench.refmodel import (
    GradCamConfig,
    TinyCnn,
    TrainConfig,
    grad_cam_maps,
    load_checkpoint,
    predict_dataset,
    save_checkpoint,
    train,
)

DEFAULT_FRACTIONS = tuple(round(0.1 * i, 1) for i in range(1, 10))


class CliError(RuntimeError):
    """User-facing failure; message is printed and the exit code is nonzero."""


def _atomic_binary(path: Path, writer) -> None:
    """Run ``writer(tmp_path)`` then rename, so partial files never land."""
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# shared plumbing


def _parse_fractions(text: str) -> tuple[float, ...]:
    try:
        fractions = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise CliError(f"cannot parse fractions list {text!r}") from None
    if not fractions:
        raise CliError("at least one fraction is required")
    if any(not 0 <= f <= 1 for f in fractions):
        raise CliError("fractions must lie in [0, 1]")
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise CliError("fractions must be strictly ascending")
    return fractions


def _resolve_normalization(cfg: RunConfig, raw_train: LabeledDataset):
    if cfg.normalization is None:
        return None
    if cfg.normalization == "auto":
        return compute_normalization(raw_train.images)
    return Normalization.from_json(cfg.normalization)


def _build_datasets(cfg: RunConfig):
    """Dataset pair plus the normalization actually applied."""
    ds = cfg.dataset
    kind = ds["kind"]
    if kind == "synthetic":
        seed = ds.get("seed", 0)
        common = dict(
            num_classes=ds["num_classes"],
            size=ds["size"],
            channels=ds.get("channels", 1),
            noise=ds.get("noise", 0.45),
        )
        raw_train = gen_synthetic(
            per_class=ds["per_class"], seed=seed, split="train", **common
        )
        norm = _resolve_normalization(cfg, raw_train)
        train_set = gen_synthetic(
            per_class=ds["per_class"], seed=seed, split="train",
            normalization=norm, **common,
        )
        test_set = gen_synthetic(
            per_class=ds.get("test_per_class", ds["per_class"]),
            seed=derive_seed(seed, 1), split="test", normalization=norm, **common,
        )
    elif kind == "cifar10":
        raw_train = load_cifar10(ds["train_paths"], "train")
        norm = _resolve_normalization(cfg, raw_train)
        train_set = load_cifar10(ds["train_paths"], "train", norm)
        test_set = load_cifar10(ds["test_paths"], "test", norm)
    else:  # idx
        raw_train = load_idx(ds["train_images"], ds["train_labels"], "train")
        norm = _resolve_normalization(cfg, raw_train)
        num_classes = ds.get("num_classes", 10)
        train_set = load_idx(
            ds["train_images"], ds["train_labels"], "train", norm, num_classes
        )
        test_set = load_idx(
            ds["test_images"], ds["test_labels"], "test", norm, num_classes
        )
    return train_set, test_set, norm


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    """Command-line flags win over config file values."""
    for name in ("seed", "mode", "epochs", "batch_size"):
        value = getattr(args, name, None)
        if value is not None:
            cfg.train[name] = value
    if getattr(args, "label_randomization", False):
        cfg.train["label_randomization"] = True
    errors = RunConfig.validate_dict(
        {
            "dataset": cfg.dataset,
            "model": cfg.model,
            "train": cfg.train,
            "normalization": cfg.normalization,
        }
    )
    if errors:
        raise CliError("invalid configuration:\n  - " + "\n  - ".join(errors))
    return cfg


def _train_config(cfg: RunConfig) -> TrainConfig:
    tr = cfg.train
    sched = tr.get("lr_schedule")
    return TrainConfig(
        epochs=tr.get("epochs", 30),
        batch_size=tr.get("batch_size", 128),
        lr_schedule=tuple(tuple(e) for e in sched) if sched else None,
        momentum=tr.get("momentum", 0.9),
        mode=tr.get("mode", "basic"),
        label_randomization=tr.get("label_randomization", False),
        seed=tr.get("seed", 0),
        msda_params=FourierMaskParams(
            decay_power=tr.get("decay_power", 3.0), alpha=tr.get("alpha", 1.0)
        ),
    )


def _provenance(norm: Normalization | None, **extra) -> dict:
    prov = dict(extra)
    if norm is not None:
        prov["normalization_mean"] = list(norm.mean)
        prov["normalization_std"] = list(norm.std)
    else:
        prov["normalization_mean"] = None
        prov["normalization_std"] = None
    return prov


def _load_subsets(paths):
    subsets = {}
    for p in paths or ():
        sub = read_subset_index(p)
        if sub.split in subsets:
            raise CliError(f"multiple subset files for split {sub.split!r}")
        subsets[sub.split] = sub
    return subsets


def _apply_subset(dataset: LabeledDataset, subsets) -> LabeledDataset:
    sub = subsets.get(dataset.split)
    if sub is None:
        return dataset
    sub.validate_against(dataset)
    return dataset.subset(sub.indices)


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    cfg = _apply_overrides(RunConfig.from_file(args.config), args)
    train_set, _, norm = _build_datasets(cfg)
    tconf = _train_config(cfg)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    bank = None
    if tconf.mode in ("rm", "rm3"):
        size = 1 if tconf.mode == "rm" else 3
        bank_path = cfg.train.get("mask_bank_path")
        if bank_path:
            masks = read_mask_bank(bank_path)
            if len(masks) != size:
                raise CliError(
                    f"mode {tconf.mode!r} needs a bank of {size} masks, "
                    f"{bank_path} holds {len(masks)}"
                )
            bank = MaskBank(tuple(masks))
        else:
            bank = MaskBank.sample(
                train_set.height, train_set.width, size,
                tconf.msda_params, cfg.train["mask_bank_seed"],
            )
            _atomic_binary(
                out_dir / "mask_bank.obmk",
                lambda p, b=bank: write_mask_bank(p, b.masks),
            )

    model = TinyCnn(
        (train_set.channels, train_set.height, train_set.width),
        train_set.num_classes,
        tuple(cfg.model.get("conv_channels", (8, 16))),
        cfg.model.get("kernel_size", 3),
        seed=cfg.model.get("seed", tconf.seed),
    )
    _, history = train(model, train_set, tconf, mask_bank=bank)

    _atomic_binary(out_dir / "model.obnn", lambda p: save_checkpoint(p, model))
    lines = ["epoch,lr,mean_loss,train_accuracy\n"]
    for h in history:
        lines.append(
            f"{h['epoch']},{h['lr']!r},{h['mean_loss']!r},{h['train_accuracy']!r}\n"
        )
    atomic_write_text(out_dir / "history.csv", "".join(lines))
    resolved = {
        "dataset": cfg.dataset,
        "model": cfg.model,
        "train": cfg.train,
        "normalization": norm.to_json() if norm else None,
    }
    atomic_write_text(out_dir / "run.json", json.dumps(resolved, indent=2) + "\n")
    print(f"trained {tconf.mode} model: {out_dir / 'model.obnn'}")
    print(f"final train accuracy: {history[-1]['train_accuracy']:.4f}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _eval_source(args):
    has_ckpt = bool(args.checkpoint)
    has_logs = bool(
        args.pred_clean_train or args.pred_clean_test
        or args.pred_clean or args.pred_distorted
    )
    if has_ckpt == has_logs:
        raise CliError(
            "exactly one model source is required: --checkpoint or prediction logs"
        )
    return "checkpoint" if has_ckpt else "logs"


def _percent_curve(curve):
    from occlubench.metrics import RobustnessCurve

    return RobustnessCurve(
        curve.kind,
        curve.fractions,
        tuple(tuple(v * 100.0 for v in s) for s in curve.samples),
    )


def cmd_eval(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fractions = _parse_fractions(args.fractions)
    seeds = tuple(range(args.seeds))
    subsets = _load_subsets(args.subset)

    if args.export_occluded:
        if args.metric != "iocclusion":
            raise CliError("--export-occluded applies to metric=iocclusion")
        if not args.config:
            raise CliError("--export-occluded requires --config (defines the dataset)")
        cfg = RunConfig.from_file(args.config)
        train_set, test_set, norm = _build_datasets(cfg)
        model = load_checkpoint(args.checkpoint[0]) if args.checkpoint else None
        return _export_occluded(
            args, out_dir, fractions, model, train_set, test_set, norm, seeds
        )

    source = _eval_source(args)
    if source == "logs":
        return _eval_from_logs(args, out_dir, fractions, subsets)

    cfg = RunConfig.from_file(args.config) if args.config else None
    if cfg is None:
        raise CliError("--config is required with --checkpoint (defines the dataset)")
    train_set, test_set, norm = _build_datasets(cfg)
    train_set = _apply_subset(train_set, subsets)
    test_set = _apply_subset(test_set, subsets)
    models = [load_checkpoint(p) for p in args.checkpoint]
    for m in models:
        expect = (test_set.channels, test_set.height, test_set.width)
        if m.input_shape != expect:
            raise CliError(
                f"checkpoint input shape {m.input_shape} does not match "
                f"dataset {expect}"
            )

    donors = None
    if args.donor_config:
        donor_cfg = RunConfig.from_file(args.donor_config)
        donor_train, donor_test, _ = _build_datasets(donor_cfg)
        donors = (donor_train, donor_test)

    prov = _provenance(
        norm,
        metric=args.metric,
        mask_policy=args.mask_policy,
        fill=args.fill,
        seeds=args.seeds,
        models=";".join(args.checkpoint),
        donor=args.donor_config or "uniform-fill",
    )

    if args.metric == "cutocclusion":
        curves = []
        for i, model in enumerate(models):
            model_seeds = [derive_seed(i, s) for s in seeds]
            curves.append(
                cut_occlusion_curve(
                    model, test_set, fractions, model_seeds, args.fill,
                    donors[1] if donors else None,
                )
            )
        curve = _percent_curve(combine_curves(curves))
        name = "cutocclusion"
        csv_text = curves_csv({name: curve}, prov)
        svg_text = curves_svg(
            {name: curve}, "Accuracy under rectangular occlusion", "accuracy (%)"
        )
    elif args.metric == "iocclusion":
        curves = []
        for i, model in enumerate(models):
            curves.append(
                i_occlusion_curve(
                    model, train_set, test_set, fractions,
                    mask_policy=args.mask_policy,
                    seeds=[derive_seed(i, s) for s in seeds],
                    fill=args.fill,
                    donors=donors or (None, None),
                )
            )
        curve = combine_curves(curves)
        name = "iocclusion"
        csv_text = curves_csv({name: curve}, prov)
        svg_text = curves_svg(
            {name: curve}, "Gap-normalised occlusion robustness", "score"
        )
    else:  # misclass-delta
        return _eval_misclass_model(args, out_dir, models[0], test_set, prov)

    atomic_write_text(out_dir / f"{name}.csv", csv_text)
    atomic_write_text(out_dir / f"{name}.svg", svg_text)
    print(f"wrote {out_dir / (name + '.csv')} and .svg")
    return 0


def _eval_misclass_model(args, out_dir, model, test_set, prov) -> int:
    fraction = _parse_fractions(args.fractions)
    if len(fraction) != 1:
        raise CliError("misclass-delta uses exactly one fraction")
    fraction = fraction[0]
    clean = predict_dataset(model, test_set)
    masks = build_masks(test_set, fraction, "rect", 0)
    distorted_images = occlude_images(test_set, masks, args.fill)
    distorted = predict_dataset(model, test_set, images=distorted_images)
    delta = misclass_delta(clean, distorted, test_set.num_classes)
    csv_text = misclass_csv(delta, "checkpoint", prov)
    svg_text = misclass_svg(delta, f"Increase in wrong predictions at {fraction:.0%}")
    atomic_write_text(out_dir / "misclass_delta.csv", csv_text)
    atomic_write_text(out_dir / "misclass_delta.svg", svg_text)
    print(f"wrote {out_dir / 'misclass_delta.csv'} and .svg")
    return 0


def _export_occluded(args, out_dir, fractions, model, train_set, test_set, norm, seeds) -> int:
    """Write occluded copies of both splits as derived datasets, for
    prediction by an external model (see the exporter package)."""
    if args.mask_policy == "gradcam":
        if args.saliency_train and args.saliency_test:
            sal_train = read_saliency(args.saliency_train).astype(np.float64)
            sal_test = read_saliency(args.saliency_test).astype(np.float64)
        elif model is not None:
            cam = GradCamConfig()
            sal_train = grad_cam_maps(model, train_set, cam)
            sal_test = grad_cam_maps(model, test_set, cam)
        else:
            raise CliError(
                "missing saliency files: --saliency-train/--saliency-test are "
                "required for metric=iocclusion with an external source"
            )
    else:
        sal_train = sal_test = None
    manifest = {"fractions": list(fractions), "splits": {}}
    for split, ds, sal in (("train", train_set, sal_train), ("test", test_set, sal_test)):
        entries = []
        for f in fractions:
            masks = build_masks(ds, f, args.mask_policy, derive_seed(seeds[0], 0), sal)
            images = occlude_images(ds, masks, args.fill)
            occluded = LabeledDataset(images, ds.labels, ds.num_classes, ds.split)
            stem = f"occluded_{split}_{int(round(f * 100)):03d}"
            if ds.channels == 3 and (ds.height, ds.width) == (32, 32):
                path = out_dir / f"{stem}.bin"
                _atomic_binary(path, lambda p, d=occluded: write_cifar10(p, d, norm))
                entries.append({"fraction": f, "format": "cifar10", "path": path.name})
            else:
                ipath = out_dir / f"{stem}-images.idx"
                lpath = out_dir / f"{stem}-labels.idx"
                tmp_l = ipath.with_suffix(".labels.tmp")
                _atomic_binary(
                    ipath,
                    lambda p, d=occluded: write_idx(p, tmp_l, d, norm),
                )
                os.replace(tmp_l, lpath)
                entries.append(
                    {
                        "fraction": f,
                        "format": "idx",
                        "images": ipath.name,
                        "labels": lpath.name,
                    }
                )
        manifest["splits"][split] = entries
    atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    print(f"wrote occluded datasets and {out_dir / 'manifest.json'}")
    return 0


def _eval_from_logs(args, out_dir, fractions, subsets) -> int:
    if args.metric == "misclass-delta":
        if not (args.pred_clean and args.pred_distorted):
            raise CliError(
                "misclass-delta from logs needs --pred-clean and --pred-distorted"
            )
        clean = read_prediction_log(args.pred_clean)
        distorted = read_prediction_log(args.pred_distorted)
        for sub in subsets.values():
            clean = clean.restrict(sub)
            distorted = distorted.restrict(sub)
        num_classes = args.num_classes
        if num_classes is None:
            num_classes = 1 + max(
                max((r.true_label for r in clean), default=0),
                max((r.predicted_label for r in clean), default=0),
                max((r.predicted_label for r in distorted), default=0),
            )
        delta = misclass_delta(clean, distorted, num_classes)
        prov = {"metric": "misclass-delta", "source": "logs"}
        atomic_write_text(out_dir / "misclass_delta.csv", misclass_csv(delta, "external", prov))
        atomic_write_text(
            out_dir / "misclass_delta.svg",
            misclass_svg(delta, "Increase in wrong predictions"),
        )
        print(f"wrote {out_dir / 'misclass_delta.csv'} and .svg")
        return 0

    if args.metric != "iocclusion":
        raise CliError("log-based evaluation supports iocclusion and misclass-delta")
    if not (args.pred_clean_train and args.pred_clean_test):
        raise CliError(
            "iocclusion from logs needs --pred-clean-train and --pred-clean-test"
        )
    if len(args.occluded_logs or ()) != len(fractions):
        raise CliError(
            f"need one --occluded-logs FRACTION:TRAIN:TEST per fraction "
            f"({len(fractions)} fractions given)"
        )
    clean_train = read_prediction_log(args.pred_clean_train).for_split("train")
    clean_test = read_prediction_log(args.pred_clean_test).for_split("test")
    for sub in subsets.values():
        clean_train = clean_train.restrict(sub)
        clean_test = clean_test.restrict(sub)
    a_train, a_test = accuracy(clean_train), accuracy(clean_test)

    by_fraction = {}
    for spec in args.occluded_logs:
        parts = spec.split(":")
        if len(parts) != 3:
            raise CliError(f"bad --occluded-logs value {spec!r}, want FRACTION:TRAIN:TEST")
        by_fraction[float(parts[0])] = (parts[1], parts[2])
    samples = []
    for f in fractions:
        if f not in by_fraction:
            raise CliError(f"no occluded logs supplied for fraction {f}")
        train_path, test_path = by_fraction[f]
        occ_train = read_prediction_log(train_path).for_split("train")
        occ_test = read_prediction_log(test_path).for_split("test")
        for sub in subsets.values():
            occ_train = occ_train.restrict(sub)
            occ_test = occ_test.restrict(sub)
        value = i_occlusion(
            SplitAccuracy(a_train, a_test, accuracy(occ_train), accuracy(occ_test))
        )
        samples.append((value,))
    from occlubench.metrics import RobustnessCurve

    curve = RobustnessCurve("iocclusion", fractions, tuple(samples))
    prov = {"metric": "iocclusion", "source": "logs"}
    atomic_write_text(out_dir / "iocclusion.csv", curves_csv({"external": curve}, prov))
    atomic_write_text(
        out_dir / "iocclusion.svg",
        curves_svg({"external": curve}, "Gap-normalised occlusion robustness", "score"),
    )
    print(f"wrote {out_dir / 'iocclusion.csv'} and .svg")
    return 0


# ---------------------------------------------------------------------------
# gen-samples


def _to_rgb8(img: np.ndarray, norm: Normalization | None) -> np.ndarray:
    x = img[None]
    if norm is not None:
        x = norm.invert(x)
    x = np.clip(x[0], 0.0, 1.0)
    if x.shape[0] == 1:
        x = np.repeat(x, 3, axis=0)
    return (np.rint(x * 255)).astype(np.uint8).transpose(1, 2, 0)


def cmd_gen_samples(args) -> int:
    from PIL import Image as PilImage

    cfg = RunConfig.from_file(args.config)
    train_set, test_set, norm = _build_datasets(cfg)
    dataset = train_set if args.split == "train" else test_set
    donor_set = dataset
    if args.donor_config:
        donor_set = _build_datasets(RunConfig.from_file(args.donor_config))[0]
        if donor_set.images.shape[1:] != dataset.images.shape[1:]:
            raise CliError("donor dataset shape differs from the primary dataset")

    fixed_lambdas = None
    if args.lambdas:
        fixed_lambdas = [float(t) for t in args.lambdas.split(",") if t.strip()]
        if len(fixed_lambdas) != args.columns:
            raise CliError(
                f"--lambdas needs {args.columns} values, got {len(fixed_lambdas)}"
            )
        if any(not 0 <= v <= 1 for v in fixed_lambdas):
            raise CliError("--lambdas values must lie in [0, 1]")

    params = FourierMaskParams()
    columns = []
    rows = ["image 1", "image 2", "mixup", "cutmix", "fmix"]
    sidecar = ["column,index1,index2,lambda,cutmix_lambda_eff,fmix_lambda_eff\n"]
    for c in range(args.columns):
        col_seed = derive_seed(args.seed, c)
        i1 = (args.index1 + c) % len(dataset)
        i2 = (args.index2 + c) % len(donor_set)
        x1, x2 = dataset.image(i1), donor_set.image(i2)
        if fixed_lambdas is not None:
            lam = fixed_lambdas[c]
        else:
            lam = float(rng_from_seed(derive_seed(col_seed, 0)).beta(1.0, 1.0))
        mixed, _ = mixup_mix(x1, x2, lam)
        cut, cut_lam_eff, _ = cutmix_mix(x1, x2, lam, derive_seed(col_seed, 1))
        # cover 1-lam of the image so all three rows keep lam of image 1
        fmx, fmx_lam_eff, _ = fmix_mix(x1, x2, params, col_seed, lam=1.0 - lam)
        columns.append([x1.data, x2.data, mixed.data, cut.data, fmx.data])
        sidecar.append(
            f"{c},{i1},{i2},{lam!r},{cut_lam_eff!r},{fmx_lam_eff!r}\n"
        )

    scale = args.scale
    cell_h, cell_w = dataset.height * scale, dataset.width * scale
    gap = 2
    grid = np.full(
        (len(rows) * (cell_h + gap) - gap, args.columns * (cell_w + gap) - gap, 3),
        255,
        dtype=np.uint8,
    )
    for c, col in enumerate(columns):
        for r, img in enumerate(col):
            rgb = _to_rgb8(img, norm)
            rgb = np.repeat(np.repeat(rgb, scale, 0), scale, 1)
            top, left = r * (cell_h + gap), c * (cell_w + gap)
            grid[top : top + cell_h, left : left + cell_w] = rgb

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    PilImage.fromarray(grid).save(buf, format="PNG")
    atomic_write_bytes(out, buf.getvalue())
    atomic_write_text(out.with_suffix(".csv"), "".join(sidecar))
    print(f"wrote {out} (rows: {', '.join(rows)}) and {out.with_suffix('.csv')}")
    return 0


# ---------------------------------------------------------------------------
# gen-masks


def cmd_gen_masks(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    params = FourierMaskParams()
    masks = []
    if args.policy == "saliency":
        if not args.saliency:
            raise CliError("--saliency is required for the saliency policy")
        maps = read_saliency(args.saliency)
        for i in range(min(args.count, maps.shape[0])):
            masks.append(saliency_mask(maps[i].astype(np.float64), args.fraction))
    else:
        for i in range(args.count):
            seed = derive_seed(args.seed, i)
            if args.policy == "rect":
                masks.append(rect_mask(args.height, args.width, args.fraction, seed))
            else:
                masks.append(
                    fourier_mask(args.height, args.width, args.fraction, params, seed)
                )
    _atomic_binary(out, lambda p: write_mask_bank(p, masks))
    achieved = ", ".join(f"{m.covered_fraction:.4f}" for m in masks[:5])
    print(f"wrote {len(masks)} masks to {out} (achieved fractions: {achieved}...)")
    return 0


# ---------------------------------------------------------------------------
# validate


def _sniff_and_validate(path: Path) -> str:
    head = path.read_bytes()[:4]
    if head == b"OBSM":
        maps = read_saliency(path)
        return f"saliency file: {maps.shape[0]} maps of {maps.shape[1]}x{maps.shape[2]}"
    if head == b"OBMK":
        masks = read_mask_bank(path)
        return f"mask file: {len(masks)} masks of {masks[0].height}x{masks[0].width}"
    if head == b"OBNN":
        model = load_checkpoint(path)
        return (
            f"model checkpoint: input {model.input_shape}, "
            f"{model.num_classes} classes"
        )
    text_head = head.decode("utf-8", errors="replace")
    if path.suffix == ".jsonl" or text_head.startswith('{"'):
        log = read_prediction_log(path)
        return f"prediction log: {len(log)} records"
    if text_head.startswith("spli"):
        sub = read_subset_index(path)
        return f"subset index: {len(sub.indices)} {sub.split} indices"
    if path.suffix == ".json":
        RunConfig.from_file(path)
        return "run configuration: valid"
    raise FormatError(f"{path}: unrecognized file type")


def cmd_validate(args) -> int:
    failures = 0
    for name in args.files:
        path = Path(name)
        try:
            summary = _sniff_and_validate(path)
            print(f"{path}: OK ({summary})")
        except (FormatError, ValueError, OSError) as e:
            failures += 1
            print(f"{path}: INVALID ({e})", file=sys.stderr)
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="occlubench",
        description="Occlusion-robustness evaluation for image classifiers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the built-in reference model")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out-dir", default="run", help="output directory")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument("--mode", help="override train.mode")
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument(
        "--label-randomization", action="store_true", dest="label_randomization",
        help="permute training labels once before training",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate robustness metrics")
    p.add_argument(
        "--metric", required=True,
        choices=("cutocclusion", "iocclusion", "misclass-delta"),
    )
    p.add_argument("--config", help="JSON run configuration (defines the dataset)")
    p.add_argument(
        "--checkpoint", action="append", default=[],
        help="model checkpoint; repeat for multi-repeat aggregation",
    )
    p.add_argument("--out-dir", required=True)
    p.add_argument(
        "--fractions", default=",".join(str(f) for f in DEFAULT_FRACTIONS),
        help="comma-separated occlusion fractions",
    )
    p.add_argument("--seeds", type=int, default=1, help="number of evaluation seeds")
    p.add_argument("--fill", type=float, default=0.0, help="uniform fill value")
    p.add_argument("--mask-policy", choices=MASK_POLICIES, default="gradcam",
                   dest="mask_policy")
    p.add_argument("--donor-config", dest="donor_config",
                   help="dataset config for textured (donor) occlusion")
    p.add_argument("--subset", action="append", help="subset index file (per split)")
    p.add_argument("--num-classes", type=int, dest="num_classes")
    p.add_argument("--pred-clean-train", dest="pred_clean_train")
    p.add_argument("--pred-clean-test", dest="pred_clean_test")
    p.add_argument(
        "--occluded-logs", action="append", dest="occluded_logs",
        help="FRACTION:TRAIN_LOG:TEST_LOG (repeat per fraction)",
    )
    p.add_argument("--pred-clean", dest="pred_clean")
    p.add_argument("--pred-distorted", dest="pred_distorted")
    p.add_argument("--saliency-train", dest="saliency_train")
    p.add_argument("--saliency-test", dest="saliency_test")
    p.add_argument(
        "--export-occluded", action="store_true", dest="export_occluded",
        help="write occluded derived datasets instead of scores",
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-samples", help="render an augmentation sample grid")
    p.add_argument("--config", required=True)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--donor-config", dest="donor_config")
    p.add_argument("--index1", type=int, default=0)
    p.add_argument("--index2", type=int, default=1)
    p.add_argument("--columns", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=int, default=4, help="pixel upscaling factor")
    p.add_argument(
        "--lambdas",
        help="comma-separated mixing coefficients, one per column "
        "(default: drawn from Beta(1,1))",
    )
    p.add_argument("--out", required=True, help="output PNG path")
    p.set_defaults(func=cmd_gen_samples)

    p = sub.add_parser("gen-masks", help="dump masks for debugging")
    p.add_argument("--policy", choices=("rect", "fourier", "saliency"), required=True)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--saliency", help="saliency file for the saliency policy")
    p.add_argument("--out", required=True, help="output mask file")
    p.set_defaults(func=cmd_gen_masks)

    p = sub.add_parser("validate", help="schema-check interchange files")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, FormatError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
