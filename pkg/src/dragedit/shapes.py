"""Synthetic ring/disk images with exact geometric ground truth.

Images are single-channel, values in [-1, 1] with background -1.
Rendering is anti-aliased: each pixel's brightness follows its coverage
by the shape, approximated by a one-pixel linear ramp of the signed
distance to the boundary (a radius-r disk contributes
clip(r - d + 0.5, 0, 1) at distance d from the center).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ShapeSpec", "gen_shape_image", "gen_dataset"]


@dataclass(frozen=True)
class ShapeSpec:
    kind: str                      # "ring" or "disk"
    center: tuple[float, float]    # (cx, cy) pixels
    radius: float                  # outer radius
    thickness: float = 0.0         # ring band width (ring only)
    intensity: float = 1.0         # peak value in [-1, 1]

    def validate(self, size: int) -> None:
        if self.kind not in ("ring", "disk"):
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.kind == "ring" and not (0 < self.thickness <= self.radius):
            raise ValueError("ring needs radius >= thickness > 0")
        cx, cy = self.center
        if min(cx, cy) - self.radius < 2 or max(cx, cy) + self.radius > size - 3:
            raise ValueError(
                f"shape (center={self.center}, radius={self.radius}) not fully "
                f"inside a {size}x{size} image with a 2 px margin")


def _disk_coverage(dist: np.ndarray, radius: float) -> np.ndarray:
    if radius <= 0:
        return np.zeros_like(dist)
    return np.clip(radius - dist + 0.5, 0.0, 1.0)


def gen_shape_image(spec: ShapeSpec, size: int, antialias: bool = True) -> np.ndarray:
    """Render a spec to a [1, size, size] float32 image in [-1, 1]."""
    spec.validate(size)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    dist = np.hypot(xs - spec.center[0], ys - spec.center[1])
    if antialias:
        cov = _disk_coverage(dist, spec.radius)
        if spec.kind == "ring":
            cov = cov - _disk_coverage(dist, spec.radius - spec.thickness)
    else:
        cov = (dist <= spec.radius).astype(np.float64)
        if spec.kind == "ring":
            cov -= (dist <= spec.radius - spec.thickness).astype(np.float64)
    img = -1.0 + cov * (spec.intensity + 1.0)
    return img[None].astype(np.float32)


def gen_dataset(n: int, seed: int, size: int = 32, kind: str = "ring",
                radius_range: tuple[float, float] | None = None,
                thickness_range: tuple[float, float] | None = None,
                ) -> tuple[np.ndarray, list[ShapeSpec]]:
    """Deterministic dataset of ``n`` shapes: images [n,1,size,size] plus specs.

    Default radius/thickness ranges are (6, 12) and (2, 4) pixels at
    size 32 and scale linearly with the image size.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    s = size / 32.0
    if radius_range is None:
        radius_range = (6.0 * s, 12.0 * s)
    if thickness_range is None:
        thickness_range = (2.0 * s, 4.0 * s)
    rng = np.random.default_rng(seed)
    images = np.empty((n, 1, size, size), dtype=np.float32)
    specs: list[ShapeSpec] = []
    for i in range(n):
        radius = float(rng.uniform(*radius_range))
        thickness = float(rng.uniform(*thickness_range)) if kind == "ring" else 0.0
        lo, hi = radius + 2.0, size - 3.0 - radius
        center = (float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi)))
        spec = ShapeSpec(kind=kind, center=center, radius=radius, thickness=thickness)
        specs.append(spec)
        images[i] = gen_shape_image(spec, size)
    return images, specs
