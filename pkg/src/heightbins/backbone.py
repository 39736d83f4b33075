"""Multi-level encoder-decoder producing feature maps F_1..F_5.

A small U-Net: four stride-2 downsamples with skip connections and two
3x3 convolutions per stage, GELU activations throughout.  The decoder
emits one feature map per resolution; F_1 is the coarsest (H/16), F_5
the finest (full resolution).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .nn import Conv2d, Module
from .tensor import Tensor, concat, gelu, upsample2x

__all__ = ["FeaturePyramid", "UNetBackbone", "LEVEL_NAMES"]

LEVEL_NAMES = ("F1", "F2", "F3", "F4", "F5")


@dataclass
class FeaturePyramid:
    """Decoded feature maps, coarse to fine.

    Attributes:
        levels: [F1, F2, F3, F4, F5]; F_i has spatial extent H0/2^(5-i).
    """

    levels: list[Tensor]

    def __getitem__(self, name: str) -> Tensor:
        if name not in LEVEL_NAMES:
            raise ContractViolation(f"unknown pyramid level '{name}'")
        return self.levels[LEVEL_NAMES.index(name)]

    def validate(self, h0: int, w0: int) -> None:
        if len(self.levels) != 5:
            raise ContractViolation(f"pyramid must have 5 levels, got {len(self.levels)}")
        for i, f in enumerate(self.levels):
            scale = 2 ** (4 - i)
            want = (h0 // scale, w0 // scale)
            got = f.shape[-2:]
            if got != want:
                raise ContractViolation(
                    f"level F{i+1} has spatial extent {got}, expected {want}"
                )


class _Stage(Module):
    """Two 3x3 convs with GELU after each."""

    def __init__(self, rng, c_in: int, c_out: int):
        self.conv1 = Conv2d(rng, c_in, c_out, 3, padding=1)
        self.conv2 = Conv2d(rng, c_out, c_out, 3, padding=1)

    def __call__(self, x: Tensor) -> Tensor:
        return gelu(self.conv2(gelu(self.conv1(x))))


class UNetBackbone(Module):
    """Encoder-decoder with 4 downsamples and skip connections.

    Args:
        rng: parameter initializer.
        in_channels: input image channels (1 or 3).
        widths: channel count per level ordered F5..F1; default (8,16,32,64,64).
    """

    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int = 3,
        widths: tuple[int, ...] = (8, 16, 32, 64, 64),
    ):
        if len(widths) != 5:
            raise ContractViolation(f"backbone needs 5 widths, got {len(widths)}")
        if in_channels not in (1, 3):
            raise ContractViolation(f"backbone expects 1 or 3 input channels, got {in_channels}")
        self.in_channels = in_channels
        self.widths = tuple(int(w) for w in widths)
        w5, w4, w3, w2, w1 = self.widths
        self.enc0 = _Stage(rng, in_channels, w5)
        self.down1 = Conv2d(rng, w5, w4, 3, stride=2, padding=1)
        self.enc1 = _Stage(rng, w4, w4)
        self.down2 = Conv2d(rng, w4, w3, 3, stride=2, padding=1)
        self.enc2 = _Stage(rng, w3, w3)
        self.down3 = Conv2d(rng, w3, w2, 3, stride=2, padding=1)
        self.enc3 = _Stage(rng, w2, w2)
        self.down4 = Conv2d(rng, w2, w1, 3, stride=2, padding=1)
        self.enc4 = _Stage(rng, w1, w1)
        # decoder: upsample, concat skip, fuse
        self.dec3 = _Stage(rng, w1 + w2, w2)
        self.dec2 = _Stage(rng, w2 + w3, w3)
        self.dec1 = _Stage(rng, w3 + w4, w4)
        self.dec0 = _Stage(rng, w4 + w5, w5)

    def __call__(self, image: Tensor) -> FeaturePyramid:
        """Extract the feature pyramid from a batch of images.

        Args:
            image: (B, C, H, W) with H, W divisible by 16.

        Returns:
            FeaturePyramid with F1 at H/16 ... F5 at H.
        """
        if image.ndim != 4:
            raise ContractViolation(f"backbone input must be 4-d, got {image.ndim}-d")
        _, c, h, w = image.shape
        if c != self.in_channels:
            raise ContractViolation(
                f"backbone built for {self.in_channels} channels, got {c}"
            )
        if h % 16 or w % 16:
            raise ContractViolation(
                f"input spatial extent {h}x{w} must be divisible by 16"
            )
        e0 = self.enc0(image)  # H
        e1 = self.enc1(gelu(self.down1(e0)))  # H/2
        e2 = self.enc2(gelu(self.down2(e1)))  # H/4
        e3 = self.enc3(gelu(self.down3(e2)))  # H/8
        f1 = self.enc4(gelu(self.down4(e3)))  # H/16, coarsest
        f2 = self.dec3(concat([upsample2x(f1), e3], axis=1))
        f3 = self.dec2(concat([upsample2x(f2), e2], axis=1))
        f4 = self.dec1(concat([upsample2x(f3), e1], axis=1))
        f5 = self.dec0(concat([upsample2x(f4), e0], axis=1))
        pyramid = FeaturePyramid(levels=[f1, f2, f3, f4, f5])
        pyramid.validate(h, w)
        return pyramid

    def level_channels(self, name: str) -> int:
        """Channel count of a named level (F1..F5)."""
        if name not in LEVEL_NAMES:
            raise ContractViolation(f"unknown pyramid level '{name}'")
        # widths are ordered F5..F1
        return self.widths[4 - LEVEL_NAMES.index(name)]
