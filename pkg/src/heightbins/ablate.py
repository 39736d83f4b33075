"""Ablation grids: train the same config under systematic variations and
tabulate median metrics across seeds.

Grids:
    dc      every fg/bg reference-family combination
    htc     gate enabled vs disabled
    levels  growing pyramid-level subsets with matching loss weights

Each setting trains `seeds` runs with seeds base, base+1, ..., then
evaluates the test split (val when the manifest has no test patches).
Cells are medians across seeds; undefined metrics print as n/a.
"""

from __future__ import annotations

import itertools
import logging
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ConfigError, DataError
from .losses import FAMILIES
from .train import evaluate_split, run_training

__all__ = ["run_ablation"]

logger = logging.getLogger("heightbins.ablate")

_METRIC_COLUMNS = ("rmse", "rmse_m", "rmse_nm", "rmse_b", "rmse_bg", "htc_accuracy")

_LEVEL_SUBSETS = (
    (("F5",), (1.0,)),
    (("F4", "F5"), (0.5, 1.0)),
    (("F3", "F4", "F5"), (0.25, 0.5, 1.0)),
    (("F2", "F3", "F4", "F5"), (0.125, 0.25, 0.5, 1.0)),
)


def _variant(cfg: RunConfig, label: str, **changes) -> RunConfig:
    data = cfg.to_dict()
    for dotted, value in changes.items():
        node = data
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node[key]
        node[leaf] = value
    data["out_dir"] = str(Path(cfg.out_dir) / "ablate" / label.replace("/", "-"))
    return RunConfig.from_dict(data)


def _grid_settings(cfg: RunConfig, grid: str) -> list[tuple[str, RunConfig]]:
    if grid == "dc":
        settings = []
        for fg, bg in itertools.product(FAMILIES, FAMILIES):
            label = f"fg={fg},bg={bg}"
            settings.append(
                (label, _variant(cfg, label, **{"loss.fg_family": fg, "loss.bg_family": bg}))
            )
        return settings
    if grid == "htc":
        return [
            ("htc=on", _variant(cfg, "htc-on", **{"model.head.use_htc": True})),
            ("htc=off", _variant(cfg, "htc-off", **{"model.head.use_htc": False})),
        ]
    if grid == "levels":
        settings = []
        for levels, lambdas in _LEVEL_SUBSETS:
            label = "+".join(levels)
            settings.append(
                (
                    label,
                    _variant(
                        cfg, label,
                        **{"levels": list(levels), "loss.lambdas": list(lambdas)},
                    ),
                )
            )
        return settings
    raise ConfigError(f"unknown ablation grid {grid!r}; choose dc, htc, or levels")


def _median(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    if len(present) != len(values) or not present:
        return None
    return float(np.median(present))


def run_ablation(
    cfg: RunConfig, grid: str, seeds: int = 3, max_steps: int | None = None
) -> str:
    """Run one grid and return a formatted table of median metrics."""
    if seeds < 1:
        raise ConfigError(f"seeds must be >= 1, got {seeds}")
    settings = _grid_settings(cfg, grid)
    rows = []
    for label, setting_cfg in settings:
        per_metric: dict[str, list[float | None]] = {m: [] for m in _METRIC_COLUMNS}
        for s in range(seeds):
            run_cfg = _variant(setting_cfg, f"{label}/seed{s}")
            run_cfg.seed = cfg.seed + s
            result = run_training(run_cfg, max_steps=max_steps)
            try:
                report = evaluate_split(result.checkpoint_path, "test", manifest=run_cfg.manifest)
            except DataError:
                report = evaluate_split(result.checkpoint_path, "val", manifest=run_cfg.manifest)
            for m in _METRIC_COLUMNS:
                per_metric[m].append(getattr(report, m))
            logger.info(
                "%s seed %d: rmse %.4f rmse_m %s", label, run_cfg.seed, report.rmse,
                "n/a" if report.rmse_m is None else f"{report.rmse_m:.4f}",
            )
        rows.append((label, {m: _median(per_metric[m]) for m in _METRIC_COLUMNS}))

    label_w = max(len("setting"), max(len(r[0]) for r in rows))
    header = "setting".ljust(label_w) + "".join(f"  {m:>12s}" for m in _METRIC_COLUMNS)
    lines = [header, "-" * len(header)]
    for label, med in rows:
        cells = "".join(
            f"  {('n/a' if med[m] is None else f'{med[m]:.4f}'):>12s}" for m in _METRIC_COLUMNS
        )
        lines.append(label.ljust(label_w) + cells)
    return "\n".join(lines)
