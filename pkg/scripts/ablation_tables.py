#!/usr/bin/env python3
"""Emit ablation tables (reference families, gate on/off, level subsets).

Generates a small corpus, writes a base run config, and prints one table
per requested grid.  With the defaults each dc-grid cell is a real (if
short) training run, so the full family grid takes a while; use
--max-steps to cap runs when you only care about the table plumbing.

Usage:
    python3 scripts/ablation_tables.py --out runs/ablate --grids htc,dc
"""

import argparse
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from heightbins.ablate import run_ablation
from heightbins.config import ModelConfig, OptimizerConfig, RunConfig
from heightbins.head import HeadConfig
from heightbins.losses import LossConfig
from heightbins.synth import SceneSpec, generate_corpus


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/ablate", help="output directory")
    ap.add_argument("--grids", default="htc", help="comma list from {dc,htc,levels}")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--count", type=int, default=128, help="corpus size")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--max-steps", type=int, default=None)
    args = ap.parse_args()

    out = Path(args.out)
    spec = SceneSpec(
        seed=100, size=16, building_count=(1, 3), footprint_size=(3, 6),
        canopy_count=(0, 2), canopy_radius=(1.5, 3.0),
    )
    generate_corpus(out / "data", spec, count=args.count)

    cfg = RunConfig(
        manifest=str(out / "data" / "manifest.json"),
        out_dir=str(out / "base"),
        seed=0,
        levels=("F5",),
        model=ModelConfig(
            widths=(4, 8, 16, 16, 16),
            head=HeadConfig(n_bins=16, token_count=4, patch_size=2, embed_dim=16,
                            depth=1, n_heads=2),
        ),
        loss=LossConfig(lambdas=(1.0,)),
        optimizer=OptimizerConfig(lr=3e-3),
        batch_size=8,
        max_epochs=args.epochs,
        patience=args.epochs,
    )
    (out / "base_config.json").parent.mkdir(parents=True, exist_ok=True)
    (out / "base_config.json").write_text(json.dumps(cfg.to_dict(), indent=1))

    for grid in args.grids.split(","):
        grid = grid.strip()
        t0 = time.time()
        table = run_ablation(cfg, grid, seeds=args.seeds, max_steps=args.max_steps)
        print(f"\n== grid {grid} ({time.time() - t0:.0f}s, medians over "
              f"{args.seeds} seeds) ==")
        print(table)
    return 0


if __name__ == "__main__":
    sys.exit(main())
