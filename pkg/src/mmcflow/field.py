"""Grids, label fields, relaxed partitions and the discrete energy ingredients.

The computational box carries one label per cell in {1..N+1}; phase N+1 is the
exterior.  The discrete anisotropic perimeter is the forward-difference total
variation

    P_phi(u) = sum_cells h^(d-1) * phi(D u(x)),   D = undivided forward diffs,

with differences that would cross the grid boundary skipped (free edges), so a
mask filling the whole box has empty boundary, matching the distance-transform
sentinel convention.  Every inter-phase facet is therefore seen once from each
side, each side weighted by its own anisotropy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .norms import NormFamily, NormSpec, eval_norm


class FieldError(ValueError):
    """Inconsistent grid/field construction or mismatched operands."""


@dataclass(frozen=True)
class Grid:
    """Uniform cell grid; cell (i, j[, k]) has center origin + (i+1/2, ...)*h."""

    shape: tuple[int, ...]
    h: float
    origin: tuple[float, ...] | None = None

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if len(shape) not in (2, 3) or any(s < 2 for s in shape):
            raise FieldError("grid needs 2 or 3 axes with at least 2 cells each")
        if not self.h > 0:
            raise FieldError("grid spacing must be positive")
        origin = self.origin if self.origin is not None else (0.0,) * len(shape)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "origin", tuple(float(o) for o in origin))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def centers(self) -> np.ndarray:
        """Cell-center coordinates, shape (*shape, dim)."""
        axes = [self.origin[a] + (np.arange(self.shape[a]) + 0.5) * self.h for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def key(self) -> tuple:
        return (self.shape, self.h, self.origin)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class LabelField:
    """Partition snapshot: one label in {1..N+1} per cell, exterior = N+1."""

    grid: Grid
    labels: np.ndarray
    n_phases: int  # N: number of bounded phases

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.shape != self.grid.shape:
            raise FieldError("label array shape does not match the grid")
        if self.n_phases < 1:
            raise FieldError("need at least one bounded phase")
        if lab.min() < 1 or lab.max() > self.n_phases + 1:
            raise FieldError(f"labels must lie in 1..{self.n_phases + 1}")
        object.__setattr__(self, "labels", _readonly(lab.astype(np.int32)))

    @property
    def n_labels(self) -> int:
        return self.n_phases + 1

    def phase_mask(self, i: int) -> np.ndarray:
        return self.labels == i

    def phase_volumes(self) -> np.ndarray:
        """h^d * cell count per phase, indexed 0..N (phase i at index i-1)."""
        counts = np.bincount(self.labels.ravel(), minlength=self.n_labels + 1)[1:]
        return counts * self.grid.cell_volume

    def with_labels(self, labels: np.ndarray) -> "LabelField":
        return LabelField(self.grid, labels, self.n_phases)

    def __eq__(self, other):
        return (
            isinstance(other, LabelField)
            and self.grid == other.grid
            and self.n_phases == other.n_phases
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True)
class SoftPartition:
    """Relaxed partition: per-cell simplex weights, shape (N+1, *grid.shape)."""

    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape[1:] != self.grid.shape or w.ndim != self.grid.dim + 1:
            raise FieldError("weights must have shape (N+1, *grid.shape)")
        if w.min() < -1e-8 or w.max() > 1 + 1e-8:
            raise FieldError("weights must lie in [0, 1]")
        if np.max(np.abs(w.sum(axis=0) - 1.0)) > 1e-8:
            raise FieldError("weights must sum to 1 at every cell")
        object.__setattr__(self, "weights", _readonly(w))

    def argmax_labels(self) -> np.ndarray:
        """Per-cell argmax with lowest-index tie-breaking, as labels 1..N+1."""
        return np.argmax(self.weights, axis=0).astype(np.int32) + 1


@dataclass(frozen=True)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise FieldError("scalar field shape does not match the grid")
        object.__setattr__(self, "values", _readonly(v))


@dataclass(frozen=True)
class Forcing:
    """Bulk driving forces H_1..H_{N+1} with H_i >= H_{N+1} outside B_R(0)."""

    fields: tuple[ScalarField, ...]
    support_radius: float = 0.0

    def __post_init__(self):
        fields = tuple(self.fields)
        if len(fields) < 2:
            raise FieldError("forcing needs one field per phase (N+1 entries)")
        g = fields[0].grid
        if any(f.grid != g for f in fields):
            raise FieldError("forcing fields must share one grid")
        if self.support_radius < 0:
            raise FieldError("support radius must be nonnegative")
        r = np.linalg.norm(g.centers(), axis=-1)
        outside = r > self.support_radius
        ext = fields[-1].values
        for i, f in enumerate(fields[:-1]):
            if np.any(f.values[outside] < ext[outside] - 1e-12):
                raise FieldError(
                    f"H_{i + 1} < H_{{N+1}} outside B_R violates the forcing condition"
                )
        object.__setattr__(self, "fields", fields)

    @property
    def grid(self) -> Grid:
        return self.fields[0].grid

    @property
    def n_labels(self) -> int:
        return len(self.fields)

    def net(self, i: int) -> np.ndarray:
        """H_i - H_{N+1} for a bounded phase i (1-based); zeros for i = N+1."""
        if i == self.n_labels:
            return np.zeros(self.grid.shape)
        return self.fields[i - 1].values - self.fields[-1].values

    @staticmethod
    def zero(grid: Grid, n_labels: int) -> "Forcing":
        z = ScalarField(grid, np.zeros(grid.shape))
        return Forcing(fields=(z,) * n_labels, support_radius=0.0)

    def is_zero(self) -> bool:
        return all(np.all(f.values == 0.0) for f in self.fields)


def forward_diffs(u: np.ndarray) -> np.ndarray:
    """Undivided forward differences, free edges; shape (*u.shape, dim)."""
    d = np.zeros(u.shape + (u.ndim,))
    for a in range(u.ndim):
        sl_lo = [slice(None)] * u.ndim
        sl_hi = [slice(None)] * u.ndim
        sl_lo[a] = slice(None, -1)
        sl_hi[a] = slice(1, None)
        d[tuple(sl_lo) + (a,)] = u[tuple(sl_hi)] - u[tuple(sl_lo)]
    return d


def perimeter_phi(indicator: np.ndarray, norm: NormSpec, grid: Grid) -> float:
    """Discrete phi-perimeter of a relaxed indicator (values in [0, 1])."""
    u = np.asarray(indicator, dtype=float)
    if u.shape != grid.shape:
        raise FieldError("indicator shape does not match the grid")
    if norm.dim != grid.dim:
        raise FieldError("norm dimension does not match the grid")
    d = forward_diffs(u)
    return float(np.sum(eval_norm(norm, d)) * grid.h ** (grid.dim - 1))


def per_phi(partition: LabelField, anisotropies: NormFamily) -> tuple[float, list[float]]:
    """Phi-perimeter of the partition: sum_i P_{phi_i}(chi_i), with breakdown."""
    if len(anisotropies) != partition.n_labels:
        raise FieldError("anisotropy family length must equal N+1")
    breakdown = []
    for i in range(1, partition.n_labels + 1):
        chi = partition.phase_mask(i).astype(float)
        breakdown.append(perimeter_phi(chi, anisotropies[i - 1], partition.grid))
    return float(sum(breakdown)), breakdown


def sym_diff_volume(a: LabelField, b: LabelField) -> tuple[float, list[float]]:
    """L^1 partition distance sum_j |A_j delta B_j| over all N+1 phases.

    Every cell where the two fields disagree is counted once for each of the
    two labels involved, matching the bounded-partition distance.
    """
    if a.grid != b.grid or a.n_phases != b.n_phases:
        raise FieldError("sym_diff_volume needs fields on one grid with equal N")
    vol = a.grid.cell_volume
    breakdown = []
    for j in range(1, a.n_labels + 1):
        breakdown.append(float(np.sum(a.phase_mask(j) != b.phase_mask(j))) * vol)
    return float(sum(breakdown)), breakdown


def force_integral(partition: LabelField, forcing: Forcing) -> float:
    """sum_{j<=N} integral over A_j of (H_j - H_{N+1}).

    The partition-independent term integral of H_{N+1} is dropped; it cancels
    in every energy difference the scheme uses.
    """
    if forcing.grid != partition.grid or forcing.n_labels != partition.n_labels:
        raise FieldError("forcing does not match the partition")
    total = 0.0
    for j in range(1, partition.n_phases + 1):
        mask = partition.phase_mask(j)
        if mask.any():
            total += float(np.sum(forcing.net(j)[mask]))
    return total * partition.grid.cell_volume


# -- convex hull confinement mask -------------------------------------------


def _ball_points(dim: int, radius: float, segments: int = 256) -> np.ndarray:
    if radius <= 0:
        return np.zeros((0, dim))
    if dim == 2:
        th = 2 * np.pi * np.arange(segments) / segments
        return radius * np.stack([np.cos(th), np.sin(th)], axis=-1)
    # coarse icosphere-style sample is enough: the mask is used with >= 2h slack
    m = 24
    th = np.pi * np.arange(m + 1) / m
    ph = 2 * np.pi * np.arange(2 * m) / (2 * m)
    T, P = np.meshgrid(th, ph, indexing="ij")
    d = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1)
    return radius * d.reshape(-1, 3)


def _dist_to_hull_2d(points: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Euclidean distance from query points to conv(points); 0 inside."""
    from scipy.spatial import ConvexHull, QhullError

    if len(points) == 1:
        return np.linalg.norm(query - points[0], axis=-1)
    try:
        hull = ConvexHull(points)
        verts = points[hull.vertices]
    except QhullError:  # collinear point set: treat as a polyline
        t = points - points.mean(axis=0)
        d = t[np.argmax(np.linalg.norm(t, axis=1))]
        proj = t @ d
        verts = points[[int(np.argmin(proj)), int(np.argmax(proj))]]
    nv = len(verts)
    dmin = np.full(len(query), np.inf)
    inside = np.ones(len(query), dtype=bool)
    for k in range(nv):
        p0 = verts[k]
        p1 = verts[(k + 1) % nv]
        e = p1 - p0
        ee = float(e @ e)
        t = ((query - p0) @ e) / ee if ee > 0 else np.zeros(len(query))
        t = np.clip(t, 0.0, 1.0)
        proj = p0 + t[:, None] * e
        dmin = np.minimum(dmin, np.linalg.norm(query - proj, axis=-1))
        if nv >= 3:
            cross = e[0] * (query[:, 1] - p0[1]) - e[1] * (query[:, 0] - p0[0])
            inside &= cross >= -1e-12  # ConvexHull vertices are CCW in 2D
        else:
            inside = np.zeros(len(query), dtype=bool)
    return np.where(inside, 0.0, dmin)


def _dist_to_hull_3d(points: np.ndarray, query: np.ndarray) -> np.ndarray:
    from scipy.spatial import ConvexHull, QhullError

    try:
        hull = ConvexHull(points)
    except QhullError:
        # degenerate (planar/collinear) hulls: fall back to point-cloud distance
        # inflated by nothing; fine for the slack-qualified confinement check
        d = np.full(len(query), np.inf)
        for p in points:
            d = np.minimum(d, np.linalg.norm(query - p, axis=-1))
        return d
    A, b = hull.equations[:, :-1], hull.equations[:, -1]
    viol = query @ A.T + b  # <= 0 inside
    inside = np.all(viol <= 1e-12, axis=1)
    dmin = np.full(len(query), np.inf)
    for simplex in hull.simplices:
        tri = points[simplex]
        dmin = np.minimum(dmin, _point_triangle_dist(query, tri))
    return np.where(inside, 0.0, dmin)


def _point_triangle_dist(q: np.ndarray, tri: np.ndarray) -> np.ndarray:
    a, b, c = tri
    ab, ac, ap = b - a, c - a, q - a
    d1, d2 = ap @ ab, ap @ ac
    bp = q - b
    d3, d4 = bp @ ab, bp @ ac
    cp = q - c
    d5, d6 = cp @ ab, cp @ ac
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(np.abs(denom) > 1e-300, vb / denom, 0.0)
        w = np.where(np.abs(denom) > 1e-300, vc / denom, 0.0)
    v = np.clip(v, 0.0, 1.0)
    w = np.clip(w, 0.0, 1.0 - v)
    proj = a + np.outer(v, ab) + np.outer(w, ac)
    d = np.linalg.norm(q - proj, axis=-1)
    # clamp against the three edges to be safe in obtuse configurations
    for p0, p1 in ((a, b), (a, c), (b, c)):
        e = p1 - p0
        t = np.clip(((q - p0) @ e) / float(e @ e), 0.0, 1.0)
        d = np.minimum(d, np.linalg.norm(q - (p0 + t[:, None] * e), axis=-1))
    return d


def convex_hull_mask(
    partition: LabelField, extra_radius: float, forcing_radius: float | None = None
) -> np.ndarray:
    """Cells whose centers lie within extra_radius of conv(bounded cells [+ B_R]).

    With active forcing the ball B_R(0) is united with the bounded-phase
    centers before hulling.  The ball is approximated by a fine inscribed
    polygon; the error is far below the grid spacing.
    """
    grid = partition.grid
    centers = grid.centers().reshape(-1, grid.dim)
    bounded = (partition.labels < partition.n_labels).ravel()
    pts = [centers[bounded]]
    if forcing_radius and forcing_radius > 0:
        pts.append(_ball_points(grid.dim, forcing_radius))
    points = np.vstack(pts)
    if len(points) == 0:
        return np.zeros(grid.shape, dtype=bool)
    if grid.dim == 2:
        d = _dist_to_hull_2d(points, centers)
    else:
        d = _dist_to_hull_3d(points, centers)
    return (d <= extra_radius + 1e-12).reshape(grid.shape)
