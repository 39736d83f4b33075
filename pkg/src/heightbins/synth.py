"""Seeded synthetic height scenes with a long-tailed height histogram.

A scene is a triple of rasters: a rendered single-channel image, a
height map, and a building footprint mask.  Ground stays below 1 m,
canopy blobs add tall pixels without footprint, and flat-roofed
rectangular buildings draw their heights from a clamped log-normal,
which produces the long right tail.  Everything is a pure function of
(spec, seed), so corpora are reproducible bit for bit.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .raster import ManifestEntry, RasterPatch, write_manifest, write_raster

__all__ = ["SceneSpec", "generate_corpus", "generate_scene"]


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    size: int = 32
    gsd: float = 3.0
    building_count: tuple[int, int] = (6, 12)
    footprint_size: tuple[int, int] = (4, 12)
    building_height_mu: float = 2.2
    building_height_sigma: float = 0.7
    min_building_height: float = 1.5
    h_max: float = 100.0
    ground_amplitude: float = 0.6
    canopy_count: tuple[int, int] = (0, 3)
    canopy_radius: tuple[float, float] = (1.5, 4.0)
    canopy_height: tuple[float, float] = (1.5, 8.0)
    image_noise: float = 0.02

    def validate(self) -> None:
        if self.size < 4:
            raise ConfigError(f"size must be >= 4, got {self.size}")
        if self.gsd <= 0:
            raise ConfigError(f"gsd must be positive, got {self.gsd}")
        for name in ("building_count", "footprint_size", "canopy_count"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ConfigError(f"{name} must satisfy 0 <= lo <= hi, got ({lo}, {hi})")
        for name in ("canopy_radius", "canopy_height"):
            lo, hi = getattr(self, name)
            if lo <= 0 or hi < lo:
                raise ConfigError(f"{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        if self.footprint_size[1] > self.size:
            raise ConfigError(
                f"footprint_size up to {self.footprint_size[1]} px does not fit a "
                f"{self.size} px patch"
            )
        if not 1.0 <= self.min_building_height <= self.h_max:
            raise ConfigError(
                "min_building_height must lie in [1, h_max] so footprint pixels "
                f"stay foreground, got {self.min_building_height}"
            )
        if self.building_height_sigma <= 0:
            raise ConfigError("building_height_sigma must be positive")
        if not 0 <= self.ground_amplitude < 1.0:
            raise ConfigError(
                f"ground_amplitude must be in [0, 1) meters, got {self.ground_amplitude}"
            )
        if self.h_max <= 1.0:
            raise ConfigError(f"h_max must exceed the 1 m threshold, got {self.h_max}")
        if self.image_noise < 0:
            raise ConfigError(f"image_noise must be >= 0, got {self.image_noise}")


def _smooth(field: np.ndarray, passes: int = 2) -> np.ndarray:
    out = field
    for _ in range(passes):
        acc = out.copy()
        acc[1:, :] += out[:-1, :]
        acc[:-1, :] += out[1:, :]
        acc[:, 1:] += out[:, :-1]
        acc[:, :-1] += out[:, 1:]
        out = acc / 5.0
    return out


def _render_image(height: np.ndarray, footprint: np.ndarray, spec: SceneSpec, rng) -> np.ndarray:
    gy, gx = np.gradient(height)
    # lambertian shading, light from the northwest
    lx, ly, lz = -0.5, -0.5, 1.0
    norm = np.sqrt(gx**2 + gy**2 + 1.0) * np.sqrt(lx**2 + ly**2 + lz**2)
    shade = np.clip((-gx * lx - gy * ly + lz) / norm, 0.0, 1.0)
    tone = np.log1p(height) / np.log1p(spec.h_max)
    albedo = 0.3 + 0.15 * footprint
    img = 0.4 * shade + 0.45 * tone + albedo * 0.3
    img += rng.normal(0.0, spec.image_noise, size=height.shape)
    return np.clip(img, 0.0, 1.0)


def generate_scene(spec: SceneSpec) -> tuple[RasterPatch, RasterPatch, RasterPatch]:
    """Render one (image, height, footprint) triple, deterministic in spec.seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.size
    height = _smooth(rng.uniform(0.0, 1.0, (n, n))) * spec.ground_amplitude
    footprint = np.zeros((n, n))

    yy, xx = np.mgrid[0:n, 0:n]
    n_canopy = int(rng.integers(spec.canopy_count[0], spec.canopy_count[1] + 1))
    for _ in range(n_canopy):
        cy, cx = rng.uniform(0, n, 2)
        radius = rng.uniform(*spec.canopy_radius)
        peak = rng.uniform(*spec.canopy_height)
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        bump = peak * np.exp(-d2 / (2.0 * (radius / 1.7) ** 2))
        height = np.maximum(height, np.where(d2 <= radius**2 * 4, bump, 0.0))

    n_buildings = int(rng.integers(spec.building_count[0], spec.building_count[1] + 1))
    lo, hi = spec.footprint_size
    for _ in range(n_buildings):
        bw = int(rng.integers(lo, hi + 1))
        bh = int(rng.integers(lo, hi + 1))
        x0 = int(rng.integers(0, n - bw + 1))
        y0 = int(rng.integers(0, n - bh + 1))
        roof = float(
            np.clip(
                rng.lognormal(spec.building_height_mu, spec.building_height_sigma),
                spec.min_building_height,
                spec.h_max,
            )
        )
        height[y0 : y0 + bh, x0 : x0 + bw] = roof
        footprint[y0 : y0 + bh, x0 : x0 + bw] = 1.0

    height = np.clip(height, 0.0, spec.h_max)
    image = _render_image(height, footprint, spec, rng)

    def patch(kind, values):
        return RasterPatch(
            width=n, height=n, channels=1, gsd=spec.gsd, kind=kind,
            values=values[None].astype(np.float32),
        )

    return patch("image", image), patch("height", height), patch("footprint", footprint)


def _patch_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1, np.uint64)[0])


def generate_corpus(
    out_dir: str | Path,
    spec: SceneSpec,
    count: int,
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
) -> list[ManifestEntry]:
    """Write `count` scene triples plus manifest.json; returns the manifest entries."""
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    if any(f < 0 for f in split_fractions) or abs(sum(split_fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be >= 0 and sum to 1, got {split_fractions}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_train = round(count * split_fractions[0])
    n_val = round(count * split_fractions[1])
    entries = []
    for i in range(count):
        triple = generate_scene(dataclasses.replace(spec, seed=_patch_seed(spec.seed, i)))
        split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        paths = {}
        for p in triple:
            path = out / f"patch_{i:05d}_{p.kind}.hmr"
            write_raster(p, path)
            paths[p.kind] = path
        entries.append(
            ManifestEntry(
                image=paths["image"], height=paths["height"],
                footprint=paths["footprint"], split=split,
            )
        )
    write_manifest(out / "manifest.json", entries)
    return entries
