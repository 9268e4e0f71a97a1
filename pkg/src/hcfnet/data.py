"""Synthetic infrared-style scenes and PGM dataset storage.

Each sample is a smooth low-frequency background with mild clutter blobs and
a handful of small bright disks; only the disks enter the mask.  Intensities
are quantized to 256 levels so a sample is bitwise identical whether it is
used in memory or written to PGM and read back.  Generation is a pure
function of (config, index).
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FileFormatError
from .ops import _interp_matrix

__all__ = [
    "SyntheticConfig",
    "Sample",
    "generate_sample",
    "generate_dataset",
    "write_pgm",
    "read_pgm",
    "save_dataset",
    "load_dataset",
]


@dataclass(frozen=True)
class SyntheticConfig:
    height: int = 64
    width: int = 64
    min_objects: int = 1
    max_objects: int = 3
    radius_range: tuple[float, float] = (1.0, 3.0)
    boost_range: tuple[float, float] = (0.3, 0.8)
    max_coverage: float = 0.005
    seed: int = 0

    def validate(self) -> None:
        if self.height < 8 or self.width < 8:
            raise ConfigError(f"image extents must be >= 8, got {self.height}x{self.width}")
        if not 0 <= self.min_objects <= self.max_objects:
            raise ConfigError(
                f"need 0 <= min_objects <= max_objects, got {self.min_objects}, {self.max_objects}"
            )
        lo, hi = self.radius_range
        if not 0.5 <= lo <= hi:
            raise ConfigError(f"radius_range must satisfy 0.5 <= lo <= hi, got {self.radius_range}")
        blo, bhi = self.boost_range
        if not 0.0 < blo <= bhi <= 1.0:
            raise ConfigError(f"boost_range must lie inside (0, 1], got {self.boost_range}")
        if not 0.0 < self.max_coverage < 1.0:
            raise ConfigError(f"max_coverage must lie in (0, 1), got {self.max_coverage}")


@dataclass
class Sample:
    """One scene: image in [0, 1] and binary mask, both [1, H, W] float64."""

    image: np.ndarray
    mask: np.ndarray
    sample_id: str


def _smooth_field(rng: np.random.Generator, height: int, width: int, knots: int) -> np.ndarray:
    coarse = rng.uniform(0.0, 1.0, (knots, knots))
    up_rows = _interp_matrix(knots, height)
    up_cols = _interp_matrix(knots, width)
    return up_rows @ coarse @ up_cols.T


def generate_sample(config: SyntheticConfig, index: int) -> Sample:
    config.validate()
    rng = np.random.default_rng([config.seed, index])
    h, w = config.height, config.width
    base = rng.uniform(0.05, 0.2)
    scene = base + 0.15 * _smooth_field(rng, h, w, 5)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(int(rng.integers(0, 4))):
        cy, cx = rng.uniform(0, h - 1), rng.uniform(0, w - 1)
        sigma = rng.uniform(2.0, 6.0)
        amp = rng.uniform(0.05, 0.15)
        scene += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma * sigma))
    mask = np.zeros((h, w), dtype=bool)
    budget = int(config.max_coverage * h * w)
    count = int(rng.integers(config.min_objects, config.max_objects + 1))
    for _ in range(count):
        radius = rng.uniform(*config.radius_range)
        boost = rng.uniform(*config.boost_range)
        cy = rng.uniform(radius, h - 1 - radius)
        cx = rng.uniform(radius, w - 1 - radius)
        room = budget - int(mask.sum())
        disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius
        while int((disk & ~mask).sum()) > room and radius > 0.5:
            radius *= 0.8
            disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius
        added = disk & ~mask
        if int(added.sum()) == 0 or int(added.sum()) > room:
            continue
        scene[disk] = np.minimum(scene[disk] + boost, 1.0)
        mask |= disk
    scene = np.round(np.clip(scene, 0.0, 1.0) * 255.0) / 255.0
    return Sample(
        image=scene[None].astype(np.float64),
        mask=mask[None].astype(np.float64),
        sample_id=f"sample-{config.seed}-{index:05d}",
    )


def generate_dataset(config: SyntheticConfig, count: int) -> list[Sample]:
    if count < 1:
        raise ConfigError(f"dataset size must be >= 1, got {count}")
    return [generate_sample(config, i) for i in range(count)]


def write_pgm(path: str, values: np.ndarray) -> None:
    """Write a 2-D uint8 array as binary PGM (P5, maxval 255)."""
    arr = np.asarray(values)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise ConfigError(f"write_pgm expects a 2-D uint8 array, got {arr.dtype} {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_pgm(path: str) -> np.ndarray:
    """Read a binary PGM (P5, maxval <= 255) into a 2-D uint8 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P5"):
        raise FileFormatError(f"{path}: not a binary PGM (P5) file")
    pos, fields = 2, []
    while len(fields) < 3:
        match = re.compile(rb"\s*(?:#[^\n]*\n)*\s*(\d+)").match(blob, pos)
        if match is None:
            raise FileFormatError(f"{path}: malformed PGM header")
        fields.append(int(match.group(1)))
        pos = match.end()
    width, height, maxval = fields
    if not 0 < maxval <= 255:
        raise FileFormatError(f"{path}: unsupported PGM maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    payload = blob[pos : pos + width * height]
    if len(payload) != width * height:
        raise FileFormatError(f"{path}: truncated PGM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def save_dataset(samples: list[Sample], directory: str) -> None:
    """Write <id>.pgm / <id>_mask.pgm pairs."""
    os.makedirs(directory, exist_ok=True)
    for sample in samples:
        image = np.round(sample.image[0] * 255.0).astype(np.uint8)
        mask = (sample.mask[0] > 0.5).astype(np.uint8) * 255
        write_pgm(os.path.join(directory, f"{sample.sample_id}.pgm"), image)
        write_pgm(os.path.join(directory, f"{sample.sample_id}_mask.pgm"), mask)


def load_dataset(directory: str) -> list[Sample]:
    """Read every image/mask PGM pair in a directory, sorted by name."""
    names = sorted(
        f[:-4]
        for f in os.listdir(directory)
        if f.endswith(".pgm") and not f.endswith("_mask.pgm")
    )
    if not names:
        raise FileFormatError(f"no image PGM files found in {directory}")
    samples = []
    for name in names:
        mask_path = os.path.join(directory, f"{name}_mask.pgm")
        if not os.path.exists(mask_path):
            raise FileFormatError(f"missing mask file for '{name}'")
        image = read_pgm(os.path.join(directory, f"{name}.pgm")).astype(np.float64) / 255.0
        mask = (read_pgm(mask_path) > 127).astype(np.float64)
        samples.append(Sample(image=image[None], mask=mask[None], sample_id=name))
    return samples
