"""Geometric primitives of the deployment: waveguides, boxes and shadow regions."""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.typing import NDArray

Vec3 = NDArray[np.float64]


class GeometryError(Exception):
    """Degenerate or inconsistent deployment geometry."""
    pass


def as_vec3(point) -> Vec3:
    vec = np.asarray(point, dtype=float).reshape(3)
    if not np.all(np.isfinite(vec)):
        raise GeometryError(f"Non-finite coordinates: {vec}")
    return vec


@dataclass(frozen=True, eq=False)
class Waveguide:
    """Dielectric waveguide fed at x = 0 and running along +x at height d."""
    index: int
    feed_y: float
    length: float
    height: float

    def __post_init__(self):
        if self.length <= 0 or self.height <= 0:
            raise GeometryError(
                f"Waveguide {self.index}: length and height must be positive "
                f"(got L={self.length}, d={self.height})"
            )

    @property
    def feed_point(self) -> Vec3:
        return np.array([0.0, self.feed_y, self.height])

    def pa_points(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        """Positions of PAs activated at the given axial coordinates, shape (len(x), 3)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        points = np.empty((x.size, 3))
        points[:, 0] = x
        points[:, 1] = self.feed_y
        points[:, 2] = self.height
        return points


@dataclass(frozen=True, eq=False)
class Blockage:
    """Axis-aligned box [x0,x1] x [y0,y1] x [0,height]."""
    x0: float
    x1: float
    y0: float
    y1: float
    height: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0 and self.height > 0):
            raise GeometryError(
                f"Empty blockage box [{self.x0},{self.x1}]x[{self.y0},{self.y1}]x[0,{self.height}]"
            )

    @property
    def lower(self) -> Vec3:
        return np.array([self.x0, self.y0, 0.0])

    @property
    def upper(self) -> Vec3:
        return np.array([self.x1, self.y1, self.height])

    @property
    def center(self) -> Vec3:
        return 0.5 * (self.lower + self.upper)

    def contains(self, point, tol: float = 1e-12) -> bool:
        """Closed containment test."""
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lower - tol) and np.all(p <= self.upper + tol))

    def footprint(self) -> Tuple[float, float, float, float, float]:
        return (self.x0, self.x1, self.y0, self.y1, self.height)


@dataclass(frozen=True, eq=False)
class BlockedRegion:
    """Convex set {p : normals @ p - offsets <= 0} shadowed from one observer.

    Normals are unit length, so clearance values are distances in meters.
    """
    observer: Vec3
    normals: NDArray[np.float64]
    offsets: NDArray[np.float64]

    @property
    def n_planes(self) -> int:
        return int(self.offsets.size)

    def contains(self, point) -> bool:
        return bool(np.max(self.normals @ np.asarray(point, dtype=float) - self.offsets) <= 0.0)
