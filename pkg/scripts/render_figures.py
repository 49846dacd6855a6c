#!/usr/bin/env python3
"""Render the qualitative artifacts: the augmentation sample grid, a mask
gallery, and a misclassification-delta chart for a briefly trained model.

    python scripts/render_figures.py --out figures/
"""

import argparse
import json
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from occlubench.cli import main as cli


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="figures")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "dataset": {
                        "kind": "synthetic", "num_classes": 3, "per_class": 60,
                        "size": 32, "seed": 12, "noise": 0.1,
                    },
                    "train": {"epochs": 12, "batch_size": 64, "seed": 2,
                              "lr_schedule": [[0, 0.01]]},
                }
            )
        )
        steps = [
            ["gen-samples", "--config", str(cfg), "--columns", "5", "--seed", "3",
             "--out", str(out / "augmentation_grid.png")],
            ["gen-masks", "--policy", "fourier", "--fraction", "0.3", "--count", "6",
             "--out", str(out / "fourier_masks.obmk")],
            ["gen-masks", "--policy", "rect", "--fraction", "0.3", "--count", "6",
             "--out", str(out / "rect_masks.obmk")],
            ["train", "--config", str(cfg), "--out-dir", str(Path(tmp) / "run")],
            ["eval", "--metric", "misclass-delta", "--config", str(cfg),
             "--checkpoint", str(Path(tmp) / "run" / "model.obnn"),
             "--fractions", "0.3", "--out-dir", str(out)],
            ["eval", "--metric", "iocclusion", "--config", str(cfg),
             "--checkpoint", str(Path(tmp) / "run" / "model.obnn"),
             "--fractions", "0.1,0.3,0.5,0.7,0.9", "--out-dir", str(out)],
        ]
        for step in steps:
            print("occlubench " + " ".join(step))
            code = cli(step)
            if code != 0:
                return code
    print(f"figures in {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
