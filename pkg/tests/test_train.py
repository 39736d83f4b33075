"""Training loop: data loading, determinism, early stopping, checkpoints."""

import json
import logging

import numpy as np
import pytest

from heightbins.config import ModelConfig, OptimizerConfig, RunConfig
from heightbins.errors import ConfigError, DataError, NumericError
from heightbins.head import HeadConfig
from heightbins.losses import LossConfig
from heightbins.synth import SceneSpec, generate_corpus
from heightbins.train import (
    PatchDataset,
    evaluate_split,
    load_model_from_checkpoint,
    run_training,
)


def tiny_run_config(manifest, out_dir, **overrides):
    kwargs = dict(
        manifest=str(manifest),
        out_dir=str(out_dir),
        seed=0,
        levels=("F5",),
        model=ModelConfig(
            widths=(2, 4, 8, 8, 8),
            head=HeadConfig(
                n_bins=4, token_count=2, patch_size=4, embed_dim=8, depth=1, n_heads=2
            ),
        ),
        loss=LossConfig(lambdas=(1.0,)),
        optimizer=OptimizerConfig(lr=1e-3),
        batch_size=8,
        max_epochs=2,
        patience=10,
    )
    kwargs.update(overrides)
    return RunConfig(**kwargs)


def test_dataset_loads_each_split(tiny_corpus):
    train = PatchDataset.from_manifest(tiny_corpus, "train")
    val = PatchDataset.from_manifest(tiny_corpus, "val")
    test = PatchDataset.from_manifest(tiny_corpus, "test")
    assert len(train) == 17 and len(val) == 4 and len(test) == 3
    assert train.image_size == 16
    assert train.images.shape == (17, 1, 16, 16)
    assert train.heights.shape == (17, 1, 16, 16)
    assert train.footprints.shape == (17, 1, 16, 16)


def test_dataset_rejects_missing_split(tiny_corpus, tmp_path):
    with pytest.raises(DataError, match="holdout"):
        PatchDataset.from_manifest(tiny_corpus, "holdout")
    generate_corpus(tmp_path / "d", SceneSpec(seed=1, size=16), 4, (1.0, 0.0, 0.0))
    with pytest.raises(DataError):
        PatchDataset.from_manifest(tmp_path / "d" / "manifest.json", "val")


def test_training_smoke_writes_history_and_checkpoint(tiny_corpus, tmp_path):
    cfg = tiny_run_config(tiny_corpus, tmp_path / "run")
    result = run_training(cfg)
    assert len(result.history) == 2
    assert (tmp_path / "run" / "best.ckpt").exists()
    hist = json.loads((tmp_path / "run" / "history.json").read_text())
    assert [h["epoch"] for h in hist] == [1, 2]
    rec = result.history[0]
    assert np.isfinite(rec.train_loss) and rec.val_rmse >= 0
    assert set(rec.components) == {"F5/l1", "F5/chamfer", "F5/htc", "F5/dc", "total"}
    assert result.best_val_rmse == min(r.val_rmse for r in result.history)


def test_identical_config_reproduces_identical_loss_curve(tiny_corpus, tmp_path):
    a = run_training(tiny_run_config(tiny_corpus, tmp_path / "a"))
    b = run_training(tiny_run_config(tiny_corpus, tmp_path / "b"))
    assert a.loss_curve() == b.loss_curve()
    assert [r.val_rmse for r in a.history] == [r.val_rmse for r in b.history]


def test_different_seed_changes_the_curve(tiny_corpus, tmp_path):
    a = run_training(tiny_run_config(tiny_corpus, tmp_path / "a"))
    b = run_training(tiny_run_config(tiny_corpus, tmp_path / "b", seed=1))
    assert a.loss_curve() != b.loss_curve()


def test_max_steps_caps_the_run(tiny_corpus, tmp_path):
    result = run_training(tiny_run_config(tiny_corpus, tmp_path / "run"), max_steps=1)
    assert len(result.history) == 1


def test_early_stopping_matches_recorded_history(tiny_corpus, tmp_path):
    cfg = tiny_run_config(
        tiny_corpus, tmp_path / "run",
        optimizer=OptimizerConfig(lr=5e-2), max_epochs=25, patience=2,
    )
    result = run_training(cfg)
    assert result.stopped_early
    assert len(result.history) < 25
    assert all(not r.improved for r in result.history[-2:])
    assert result.best_epoch == max(r.epoch for r in result.history if r.improved)


def test_divergent_run_aborts_with_numeric_error(tiny_corpus, tmp_path):
    cfg = tiny_run_config(
        tiny_corpus, tmp_path / "run",
        optimizer=OptimizerConfig(lr=1e6), max_epochs=50, patience=50,
    )
    with np.errstate(all="ignore"), pytest.raises(NumericError, match="epoch|diverged"):
        run_training(cfg)


def test_checkpoint_round_trip_reproduces_metrics(tiny_corpus, tmp_path):
    result = run_training(tiny_run_config(tiny_corpus, tmp_path / "run"))
    first = evaluate_split(result.checkpoint_path, "test")
    second = evaluate_split(result.checkpoint_path, "test")
    assert first.to_dict() == second.to_dict()
    model, cfg, meta = load_model_from_checkpoint(result.checkpoint_path)
    assert meta["image_size"] == 16
    assert cfg.levels == ("F5",)
    assert model.image_size == 16


def test_val_split_falls_back_to_train(tmp_path, caplog):
    generate_corpus(tmp_path / "d", SceneSpec(seed=2, size=16), 8, (1.0, 0.0, 0.0))
    cfg = tiny_run_config(tmp_path / "d" / "manifest.json", tmp_path / "run", max_epochs=1)
    with caplog.at_level(logging.INFO, logger="heightbins.train"):
        result = run_training(cfg)
    assert "no val split" in caplog.text
    assert result.best_epoch == 1


def test_eval_rejects_mismatched_patch_size(tiny_corpus, tmp_path):
    result = run_training(tiny_run_config(tiny_corpus, tmp_path / "run", max_epochs=1))
    generate_corpus(tmp_path / "d32", SceneSpec(seed=3, size=32), 4)
    with pytest.raises(ConfigError, match="16px"):
        evaluate_split(result.checkpoint_path, "train", manifest=str(tmp_path / "d32" / "manifest.json"))


def test_missing_checkpoint_is_a_data_error(tmp_path):
    with pytest.raises(DataError, match="cannot read"):
        load_model_from_checkpoint(tmp_path / "absent.ckpt")
