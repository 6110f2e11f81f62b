"""Shadow regions of box blockages, clearance metrics and smoothed blockage gains.

A box seen from an observer shadows the convex set of points whose segment to
the observer crosses the box. That set is the cone spanned from the observer
through the box silhouette, cut by the planes of the box faces the observer can
see, so the region starts at the box rather than at the observer.
"""

import logging
from typing import List, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from .shapes import Blockage, BlockedRegion, GeometryError, Waveguide, as_vec3

logger = logging.getLogger(__name__)

_VISIBLE_EPS = 1e-12
_AXIS_PAIRS = ((0, 1), (0, 2), (1, 2))


def _face_bound(blockage: Blockage, axis: int, side: int) -> float:
    return float((blockage.upper if side else blockage.lower)[axis])


def shadow_region(blockage: Blockage, observer) -> BlockedRegion:
    """Half-space description of the points whose LoS to ``observer`` the box obstructs.

    Args:
        blockage: Axis-aligned box obstacle
        observer: Ground user or eavesdropper antenna position

    Returns:
        BlockedRegion with unit normals, planes sorted lexicographically

    Raises:
        GeometryError: If the observer lies inside (or on) the box
    """
    phi = as_vec3(observer)
    if blockage.contains(phi):
        raise GeometryError(f"Observer {phi} lies inside blockage {blockage.footprint()}")

    lo, hi = blockage.lower, blockage.upper
    center = blockage.center
    normals: List[NDArray[np.float64]] = []
    offsets: List[float] = []

    # Faces whose outer side holds the observer; faces coplanar with it count as hidden
    visible = {}
    for axis in range(3):
        for side in (0, 1):
            sign = 1.0 if side else -1.0
            bound = _face_bound(blockage, axis, side)
            visible[(axis, side)] = sign * (phi[axis] - bound) > _VISIBLE_EPS
            if visible[(axis, side)]:
                normal = np.zeros(3)
                normal[axis] = sign
                normals.append(normal)
                offsets.append(sign * bound)

    # Silhouette edges separate a visible face from a hidden one
    scale = max(float(np.linalg.norm(hi - lo)), float(np.linalg.norm(phi - center)))
    for a, b in _AXIS_PAIRS:
        c = 3 - a - b
        for s in (0, 1):
            for t in (0, 1):
                if visible[(a, s)] == visible[(b, t)]:
                    continue
                start = np.empty(3)
                start[a] = _face_bound(blockage, a, s)
                start[b] = _face_bound(blockage, b, t)
                end = start.copy()
                start[c], end[c] = lo[c], hi[c]
                normal = np.cross(start - phi, end - phi)
                norm = float(np.linalg.norm(normal))
                if norm <= 1e-12 * scale * scale:
                    continue  # observer collinear with the edge
                normal /= norm
                if normal @ (center - phi) > 0:
                    normal = -normal
                normals.append(normal)
                offsets.append(float(normal @ phi))

    planes = np.column_stack([np.array(normals), np.array(offsets)])
    planes = np.unique(np.round(planes, 12), axis=0)
    return BlockedRegion(observer=phi, normals=planes[:, :3].copy(), offsets=planes[:, 3].copy())


def regions_for_observer(observer, blockages: Sequence[Blockage]) -> List[BlockedRegion]:
    return [shadow_region(blockage, observer) for blockage in blockages]


def clearance(point, region: BlockedRegion):
    """Largest signed plane violation; positive means the point is not shadowed.

    Accepts a single point or an array of points with trailing dimension 3.
    """
    points = np.asarray(point, dtype=float)
    values = points @ region.normals.T - region.offsets
    return values.max(axis=-1)


def min_clearance_points(points, regions: Sequence[BlockedRegion]):
    """Minimum clearance over all regions; +inf without blockages."""
    points = np.asarray(points, dtype=float)
    result = np.full(points.shape[:-1], np.inf)
    for region in regions:
        result = np.minimum(result, clearance(points, region))
    return result


def min_clearance(pa, user_index: int, scenario) -> float:
    """Minimum clearance of a PA position against every shadow region of a user."""
    return float(min_clearance_points(as_vec3(pa), scenario.user_regions[user_index]))


def smoothed_gain(pa, target, clearance_min: float, theta: float) -> float:
    """Sigmoid blockage gain 1 / (1 + exp(-theta * clearance / distance)).

    Raises:
        GeometryError: If PA and target coincide
    """
    distance = float(np.linalg.norm(as_vec3(target) - as_vec3(pa)))
    if distance == 0.0:
        raise GeometryError("Blockage gain undefined for coincident PA and target")
    if np.isposinf(clearance_min):
        return 1.0
    return float(expit(theta * clearance_min / distance))


def smoothed_gains(clearances, distances, theta: float) -> NDArray[np.float64]:
    """Vectorized smoothed_gain over link arrays of clearance and distance."""
    clearances = np.asarray(clearances, dtype=float)
    distances = np.asarray(distances, dtype=float)
    if np.any(distances <= 0.0):
        raise GeometryError("Blockage gain undefined for coincident PA and target")
    with np.errstate(invalid="ignore"):
        ratio = np.where(np.isposinf(clearances), np.inf, clearances / distances)
    return expit(theta * ratio)


def segment_blocked(start, ends, blockage: Blockage) -> NDArray[np.bool_]:
    """Exact slab test: does the segment start -> end meet the closed box?

    ``ends`` may hold many points (trailing dimension 3); the result has the
    matching leading shape.
    """
    s = as_vec3(start)
    ends = np.asarray(ends, dtype=float)
    d = ends - s
    lo, hi = blockage.lower, blockage.upper
    parallel = np.abs(d) < 1e-15
    inside_slab = (s >= lo) & (s <= hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - s) / d
        t2 = (hi - s) / d
    t_near = np.minimum(t1, t2)
    t_far = np.maximum(t1, t2)
    t_near = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), t_near)
    t_far = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), t_far)
    t_in = t_near.max(axis=-1)
    t_out = t_far.min(axis=-1)
    return (t_in <= t_out) & (t_out >= 0.0) & (t_in <= 1.0)


def _region_interval(region: BlockedRegion, waveguide: Waveguide) -> Tuple[float, float]:
    """Interval of x on the PA line inside a convex region (possibly empty)."""
    lower, upper = 0.0, waveguide.length
    for normal, offset in zip(region.normals, region.offsets):
        constant = normal[1] * waveguide.feed_y + normal[2] * waveguide.height - offset
        if abs(normal[0]) < 1e-15:
            if constant > 0.0:
                return (1.0, 0.0)
            continue
        root = -constant / normal[0]
        if normal[0] > 0:
            upper = min(upper, root)
        else:
            lower = max(lower, root)
    return (lower, upper)


def blocked_intervals(waveguide: Waveguide, observer, scenario) -> List[Tuple[float, float]]:
    """Sorted disjoint x-intervals of [0, L] where a PA has no LoS to the observer."""
    intervals = []
    for region in regions_for_observer(observer, scenario.blockages):
        lower, upper = _region_interval(region, waveguide)
        if upper > lower:
            intervals.append((lower, upper))
    intervals.sort()
    merged: List[Tuple[float, float]] = []
    for lower, upper in intervals:
        if merged and lower <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], upper))
        else:
            merged.append((lower, upper))
    return merged
