"""Full network: encoder-decoder backbone with one adaptive-bin head per
attached pyramid level.  Training supervises every level; inference reads
heights (and the foreground gate) off the finest attached level."""

from __future__ import annotations

import numpy as np

from .backbone import LEVEL_NAMES, UNetBackbone
from .config import ModelConfig
from .errors import ConfigError
from .head import AdaBinsHead, HeadOutput
from .tensor import Tensor
from .nn import Module

__all__ = ["HTCDCNet", "level_extent"]


def level_extent(level: str, image_size: int) -> int:
    """Spatial side length of a pyramid level for a square input."""
    if level not in LEVEL_NAMES:
        raise ConfigError(f"unknown level {level!r}; valid levels: {list(LEVEL_NAMES)}")
    return image_size // 2 ** (len(LEVEL_NAMES) - 1 - LEVEL_NAMES.index(level))


class HTCDCNet(Module):
    """Backbone + per-level heads over square inputs of a fixed size.

    Args:
        rng: parameter initializer.
        image_size: input side length in pixels (divisible by 16).
        cfg: backbone widths and shared head shape.
        levels: pyramid levels to attach heads to, coarse to fine.
    """

    def __init__(self, rng, image_size: int, cfg: ModelConfig, levels=("F5",)):
        cfg.validate()
        if image_size % 16 != 0:
            raise ConfigError(f"image_size must be divisible by 16, got {image_size}")
        if not levels:
            raise ConfigError("at least one head level is required")
        self.image_size = image_size
        self.levels = tuple(levels)
        self.cfg = cfg
        self.backbone = UNetBackbone(rng, in_channels=cfg.in_channels, widths=cfg.widths)
        self.heads = {}
        for level in self.levels:
            side = level_extent(level, image_size)
            self.heads[level] = AdaBinsHead(
                rng,
                in_channels=self.backbone.level_channels(level),
                grid_hw=(side, side),
                cfg=cfg.head,
            )

    def __call__(self, images: Tensor) -> dict[str, HeadOutput]:
        if images.shape[-1] != self.image_size or images.shape[-2] != self.image_size:
            raise ConfigError(
                f"model built for {self.image_size}px inputs, got {images.shape}"
            )
        pyramid = self.backbone(images)
        return {level: self.heads[level](pyramid[level]) for level in self.levels}

    @property
    def finest_level(self) -> str:
        return self.levels[-1]

    def predict(self, images: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        """Inference heights (B,1,H,W) and gate probabilities from the finest level.

        Runs without a tape; returns plain arrays.
        """
        outputs = self(Tensor(np.asarray(images, dtype=np.float64)))
        out = outputs[self.finest_level]
        fg = None if out.fg_prob is None else out.fg_prob.data.copy()
        return out.heights.data.copy(), fg
