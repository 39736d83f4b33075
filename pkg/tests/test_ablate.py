"""Ablation grid construction and table emission."""

import pytest

from heightbins.ablate import _grid_settings, run_ablation
from heightbins.config import ModelConfig, OptimizerConfig, RunConfig
from heightbins.errors import ConfigError
from heightbins.head import HeadConfig
from heightbins.losses import FAMILIES, LossConfig


def base_cfg(manifest="m.json", out_dir="runs/base"):
    return RunConfig(
        manifest=str(manifest),
        out_dir=str(out_dir),
        levels=("F5",),
        model=ModelConfig(
            widths=(2, 4, 8, 8, 8),
            head=HeadConfig(n_bins=4, token_count=2, patch_size=4, embed_dim=8,
                            depth=1, n_heads=2),
        ),
        loss=LossConfig(lambdas=(1.0,)),
        optimizer=OptimizerConfig(lr=1e-3),
        batch_size=8,
        max_epochs=1,
    )


def test_dc_grid_covers_every_family_pair():
    settings = _grid_settings(base_cfg(), "dc")
    assert len(settings) == len(FAMILIES) ** 2
    labels = {label for label, _ in settings}
    assert f"fg={FAMILIES[0]},bg={FAMILIES[0]}" in labels
    fams = {(c.loss.fg_family, c.loss.bg_family) for _, c in settings}
    assert len(fams) == len(FAMILIES) ** 2


def test_htc_grid_toggles_only_the_gate():
    settings = dict(_grid_settings(base_cfg(), "htc"))
    assert settings["htc=on"].model.head.use_htc is True
    assert settings["htc=off"].model.head.use_htc is False
    on, off = settings["htc=on"].to_dict(), settings["htc=off"].to_dict()
    on["model"]["head"]["use_htc"] = off["model"]["head"]["use_htc"]
    on["out_dir"] = off["out_dir"]
    assert on == off


def test_levels_grid_pairs_lambdas_with_levels():
    settings = _grid_settings(base_cfg(), "levels")
    assert [label for label, _ in settings] == [
        "F5", "F4+F5", "F3+F4+F5", "F2+F3+F4+F5",
    ]
    for _, c in settings:
        assert len(c.loss.lambdas) == len(c.levels)
        assert c.loss.lambdas[-1] == 1.0


def test_variants_get_disjoint_output_directories():
    settings = _grid_settings(base_cfg(), "dc")
    dirs = {c.out_dir for _, c in settings}
    assert len(dirs) == len(settings)
    assert all(d.startswith("runs/base/ablate") for d in dirs)


def test_unknown_grid_rejected():
    with pytest.raises(ConfigError, match="grid"):
        _grid_settings(base_cfg(), "bogus")
    with pytest.raises(ConfigError, match="seeds"):
        run_ablation(base_cfg(), "htc", seeds=0)


def test_ablation_table_lists_every_setting(tiny_corpus, tmp_path):
    cfg = base_cfg(manifest=tiny_corpus, out_dir=tmp_path / "run")
    table = run_ablation(cfg, "htc", seeds=1, max_steps=1)
    lines = table.splitlines()
    assert lines[0].startswith("setting")
    assert "rmse_m" in lines[0] and "htc_accuracy" in lines[0]
    body = {ln.split()[0] for ln in lines[2:]}
    assert body == {"htc=on", "htc=off"}
    off_row = [ln for ln in lines[2:] if ln.startswith("htc=off")][0]
    assert "n/a" in off_row  # no gate, no gate accuracy
