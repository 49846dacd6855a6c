#!/usr/bin/env python3
"""Run the desk-scale direction experiments and write CSV/SVG reports.

Experiment A trains plain and mask-augmented models (5 seeds each) on the
synthetic shape dataset and compares their gap-normalised occlusion scores
over a fraction grid.  Experiment B repeats the comparison with randomized
labels, where the rectangular-patch baseline collapses to chance.

    python scripts/desk_replication.py --out results/            # ~20 min
    python scripts/desk_replication.py --quick --out results/    # ~2 min
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from occlubench.desk import DeskConfig, build_datasets, direction_random_labels, train_model
from occlubench.metrics import combine_curves, cut_occlusion_curve, i_occlusion_curve
from occlubench.plotting import atomic_write_text, curves_csv, curves_svg


def experiment_a(cfg: DeskConfig, seeds, fractions, out_dir: Path) -> None:
    train_set, test_set, norm = build_datasets(
        cfg, cfg.a_per_class, cfg.a_test_per_class, cfg.a_data_seed, cfg.a_test_seed
    )
    iocc, cutocc = {}, {}
    for mode in ("basic", "fmix"):
        per_model_iocc, per_model_cut = [], []
        for seed in seeds:
            t0 = time.time()
            model, history = train_model(cfg, train_set, mode, seed, cfg.a_epochs)
            per_model_iocc.append(
                i_occlusion_curve(model, train_set, test_set, fractions, seeds=(0,))
            )
            per_model_cut.append(
                cut_occlusion_curve(model, test_set, fractions, seeds=(0,))
            )
            print(
                f"  {mode} seed {seed}: train acc "
                f"{history[-1]['train_accuracy']:.3f} ({time.time() - t0:.0f}s)",
                flush=True,
            )
        iocc[mode] = combine_curves(per_model_iocc)
        cutocc[mode] = combine_curves(per_model_cut)

    prov = {
        "experiment": "A (clean labels)",
        "seeds": list(seeds),
        "normalization_mean": list(norm.mean),
        "normalization_std": list(norm.std),
    }
    atomic_write_text(out_dir / "direction_a_iocclusion.csv", curves_csv(iocc, prov))
    atomic_write_text(
        out_dir / "direction_a_iocclusion.svg",
        curves_svg(iocc, "Gap-normalised occlusion robustness", "score"),
    )
    atomic_write_text(out_dir / "direction_a_cutocclusion.csv", curves_csv(cutocc, prov))
    atomic_write_text(
        out_dir / "direction_a_cutocclusion.svg",
        curves_svg(cutocc, "Accuracy under rectangular occlusion", "accuracy"),
    )
    at = iocc["basic"].fractions.index(cfg.a_fraction) if cfg.a_fraction in iocc["basic"].fractions else 0
    print(
        f"A summary at fraction {iocc['basic'].fractions[at]}: "
        f"basic {iocc['basic'].means[at]:.3f}±{iocc['basic'].stds[at]:.3f}  "
        f"fmix {iocc['fmix'].means[at]:.3f}±{iocc['fmix'].stds[at]:.3f}"
    )


def experiment_b(cfg: DeskConfig, out_dir: Path) -> None:
    result = direction_random_labels(cfg, seed=1)
    lines = ["model,train_accuracy,cutocclusion,iocclusion\n"]
    for mode in ("basic", "fmix"):
        r = result[mode]
        lines.append(
            f"{mode}-random,{r['train_accuracy']!r},{r['cutocclusion']!r},"
            f"{r['iocclusion']!r}\n"
        )
        print(
            f"  {mode}-random: train {r['train_accuracy']:.4f}  "
            f"rect-baseline {r['cutocclusion']:.3f}  score {r['iocclusion']:.3f}"
        )
    atomic_write_text(out_dir / "direction_b_random_labels.csv", "".join(lines))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results", help="output directory")
    parser.add_argument("--seeds", type=int, default=5, help="model repeats for A")
    parser.add_argument(
        "--fractions", default="0.1,0.3,0.5,0.7,0.9",
        help="occlusion fractions for the A curves",
    )
    parser.add_argument(
        "--quick", action="store_true",
        help="tiny configuration for a fast smoke run",
    )
    args = parser.parse_args()

    cfg = DeskConfig()
    if args.quick:
        cfg = replace(
            cfg, a_per_class=40, a_test_per_class=80, a_epochs=10,
            b_per_class=30, b_test_per_class=60,
            b_epochs_basic=40, b_epochs_fmix=60,
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    fractions = tuple(float(f) for f in args.fractions.split(","))

    print("experiment A: plain vs mask-augmented training")
    experiment_a(cfg, tuple(range(1, args.seeds + 1)), fractions, out_dir)
    print("experiment B: randomized labels")
    experiment_b(cfg, out_dir)
    print(f"reports in {out_dir}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
