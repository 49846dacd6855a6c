"""Command line: load a model-building python file, run it over a dataset,
write prediction logs or saliency files.

The --model-file must define ``build_model() -> torch.nn.Module`` (weights
loaded inside).  It may also define ``NORMALIZATION = (mean, std)`` tuples
applied to [0,1] pixels before the forward pass.
"""

from __future__ import annotations

import argparse
import importlib.util
import sys
from pathlib import Path

from occlubench_exporter.export import export_gradcam, export_predictions
from occlubench_exporter.io import load_cifar_batches, load_idx_pair, load_manifest


def _load_model_file(path: str):
    spec = importlib.util.spec_from_file_location("exporter_model", path)
    if spec is None or spec.loader is None:
        raise ValueError(f"cannot import model file {path}")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    if not hasattr(module, "build_model"):
        raise ValueError(f"{path} must define build_model()")
    model = module.build_model()
    normalization = getattr(module, "NORMALIZATION", None)
    return model, normalization


def _load_dataset(args):
    if args.format == "cifar10":
        return load_cifar_batches(args.data)
    if args.format == "idx":
        if len(args.data) != 2:
            raise ValueError("--format idx needs two paths: images labels")
        return load_idx_pair(args.data[0], args.data[1])
    raise ValueError(f"unknown dataset format {args.format!r}")


def cmd_predictions(args) -> int:
    model, norm = _load_model_file(args.model_file)
    images, labels = _load_dataset(args)
    export_predictions(
        model, images, labels, args.split, args.out, norm, args.batch_size
    )
    print(f"wrote {len(labels)} predictions to {args.out}")
    return 0


def cmd_gradcam(args) -> int:
    model, norm = _load_model_file(args.model_file)
    images, _ = _load_dataset(args)
    export_gradcam(
        model, args.layer, images, args.split, args.out, norm, args.batch_size
    )
    print(f"wrote {images.shape[0]} saliency maps to {args.out}")
    return 0


def cmd_predict_manifest(args) -> int:
    """Predict every occluded variant listed in a toolkit manifest."""
    model, norm = _load_model_file(args.model_file)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for fraction, images, labels in load_manifest(args.manifest, args.split):
        out = out_dir / f"pred_{args.split}_{int(round(fraction * 100)):03d}.jsonl"
        export_predictions(
            model, images, labels, args.split, out, norm, args.batch_size
        )
        count += 1
    print(f"wrote {count} prediction logs to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="occlubench-export")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--model-file", required=True, dest="model_file")
        p.add_argument("--split", choices=("train", "test"), required=True)
        p.add_argument("--batch-size", type=int, default=128, dest="batch_size")

    p = sub.add_parser("predictions", help="write a JSON Lines prediction log")
    common(p)
    p.add_argument("--format", choices=("cifar10", "idx"), required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predictions)

    p = sub.add_parser("gradcam", help="write an OBSM saliency file")
    common(p)
    p.add_argument("--layer", required=True, help="name of a Conv2d module")
    p.add_argument("--format", choices=("cifar10", "idx"), required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gradcam)

    p = sub.add_parser(
        "predict-manifest", help="predict all occluded variants in a manifest"
    )
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.set_defaults(func=cmd_predict_manifest)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
