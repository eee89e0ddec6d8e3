"""Anisotropic signed distance transforms on the grid.

Distances are measured to boundary-facet midpoints through a widened-stencil
shortest-path metric (Dijkstra), evaluated on the half-step lattice whose
nodes are cell centers, facet midpoints and cell corners.  Two seed families
are used:

    S+ = {nodes all of whose cells belong to the mask} u {facet midpoints}
    S- = {nodes all of whose cells are outside the mask} u {facet midpoints}

and the signed distance at a cell center x is

    sdist(x) = dist_graph(x, S+) - dist_graph(x, S-),

negative inside the mask.  Both seed families are monotone under mask
inclusion as *sets*, so inclusion monotonicity (A ⊆ B implies sdist to the
boundary of A >= sdist to the boundary of B, cellwise) and complement
antisymmetry hold exactly, independent of the mobility and of the stencil.
Axis-aligned boundaries are exact; oblique directions carry the documented
angular stencil error (<= 3% for the 2D 16-neighborhood with euclidean
mobility, <= 8% guaranteed).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra

from .field import FieldError, Grid, LabelField
from .norms import NormFamily, NormSpec, eval_norm


class DistanceError(ValueError):
    """Misuse of a distance field (for instance arithmetic on a sentinel)."""


def stencil_offsets(dim: int) -> np.ndarray:
    """Widened neighborhood: 16 offsets in 2D, axis/diagonal/knight set in 3D."""
    if dim == 2:
        return np.array(
            [
                (1, 0), (-1, 0), (0, 1), (0, -1),
                (1, 1), (1, -1), (-1, 1), (-1, -1),
                (1, 2), (1, -2), (-1, 2), (-1, -2),
                (2, 1), (2, -1), (-2, 1), (-2, -1),
            ]
        )
    offs = []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                if (dx, dy, dz) != (0, 0, 0):
                    offs.append((dx, dy, dz))
    from itertools import permutations

    knights = set()
    for perm in permutations((2, 1, 0)):
        for sx in (1, -1):
            for sy in (1, -1):
                for sz in (1, -1):
                    v = (perm[0] * sx, perm[1] * sy, perm[2] * sz)
                    if v != (0, 0, 0):
                        knights.add(v)
    offs = sorted(set(offs) | knights)
    return np.array(offs)


@lru_cache(maxsize=32)
def _fine_edges(fine_shape: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(rows, cols, offset_id) for the fine-lattice stencil graph."""
    dim = len(fine_shape)
    offs = stencil_offsets(dim)
    idx = np.arange(int(np.prod(fine_shape))).reshape(fine_shape)
    rows, cols, oid = [], [], []
    for k, off in enumerate(offs):
        src_sl, dst_sl = [], []
        for a in range(dim):
            d = int(off[a])
            n = fine_shape[a]
            src_sl.append(slice(max(0, -d), min(n, n - d)))
            dst_sl.append(slice(max(0, -d) + d, min(n, n - d) + d))
        src = idx[tuple(src_sl)].ravel()
        dst = idx[tuple(dst_sl)].ravel()
        rows.append(src)
        cols.append(dst)
        oid.append(np.full(src.size, k, dtype=np.int32))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(oid)


_MATRIX_CACHE: dict[tuple, csr_matrix] = {}


def _fine_graph(grid: Grid, mobility: NormSpec) -> csr_matrix:
    fine_shape = tuple(2 * s + 1 for s in grid.shape)
    key = (fine_shape, grid.h, mobility.key())
    mat = _MATRIX_CACHE.get(key)
    if mat is None:
        rows, cols, oid = _fine_edges(fine_shape)
        offs = stencil_offsets(grid.dim) * (grid.h / 2.0)
        w = eval_norm(mobility, offs)[oid]
        n = int(np.prod(fine_shape))
        mat = csr_matrix((w, (rows, cols)), shape=(n, n))
        if len(_MATRIX_CACHE) > 24:
            _MATRIX_CACHE.clear()
        _MATRIX_CACHE[key] = mat
    return mat


def _node_classes(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    """Fine-node seed families (S+, S-) for a boolean cell mask.

    A fine node touches 1, 2, 4 or 8 cells; it joins S+ when every touched
    cell is inside the mask, S- when every touched cell is outside, and both
    when it is the midpoint of a boundary facet.
    """
    dim = mask.ndim
    fine_shape = tuple(2 * s + 1 for s in mask.shape)
    # per-axis candidate cell indices (lo, hi) for each fine coordinate
    gathers = []
    for a in range(dim):
        p = np.arange(fine_shape[a])
        lo = np.where(p % 2 == 0, p // 2 - 1, (p - 1) // 2)
        hi = np.where(p % 2 == 0, p // 2, (p - 1) // 2)
        lo = np.clip(lo, 0, mask.shape[a] - 1)
        hi = np.clip(hi, 0, mask.shape[a] - 1)
        gathers.append((lo, hi))
    all_in = np.ones(fine_shape, dtype=bool)
    all_out = np.ones(fine_shape, dtype=bool)
    for combo in range(2**dim):
        sel = tuple(gathers[a][(combo >> a) & 1] for a in range(dim))
        grids = np.ix_(*sel)
        cells = mask[grids]
        all_in &= cells
        all_out &= ~cells
    midpoints = np.zeros(fine_shape, dtype=bool)
    any_facet = False
    for a in range(dim):
        sl_lo = [slice(None)] * dim
        sl_hi = [slice(None)] * dim
        sl_lo[a] = slice(None, -1)
        sl_hi[a] = slice(1, None)
        facets = mask[tuple(sl_lo)] != mask[tuple(sl_hi)]
        if facets.any():
            any_facet = True
            fine_idx = [slice(1, None, 2)] * dim  # odd: cell-center coordinate
            fine_idx[a] = slice(2, -1, 2)  # even: on the dividing plane
            midpoints[tuple(fine_idx)] |= facets
    return all_in | midpoints, all_out | midpoints, any_facet


@dataclass(frozen=True, eq=False)
class SignedDistanceField:
    """Per-cell signed psi-distance to a mask boundary, negative inside."""

    grid: Grid
    values: np.ndarray
    empty_boundary: bool
    inside_sign: int = 0  # -1: mask was everything, +1: mask was empty

    def finite_values(self) -> np.ndarray:
        if self.empty_boundary:
            raise DistanceError("arithmetic on an empty-boundary sentinel field")
        return self.values

    def magnitudes(self) -> np.ndarray:
        return np.abs(self.finite_values())


def _sentinel(grid: Grid, mobility: NormSpec) -> float:
    span = np.asarray(grid.shape, dtype=float) * grid.h
    return 2.0 * float(eval_norm(mobility, span))


def signed_dist(mask: np.ndarray, mobility: NormSpec, grid: Grid) -> SignedDistanceField:
    """Signed psi-distance from cell centers to the mask's facet boundary."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != grid.shape:
        raise FieldError("mask shape does not match the grid")
    if mobility.dim != grid.dim:
        raise FieldError("mobility dimension does not match the grid")
    s_in, s_out, any_facet = _node_classes(mask)
    if not any_facet:
        sign = -1 if mask.all() else +1
        values = np.full(grid.shape, sign * _sentinel(grid, mobility))
        return SignedDistanceField(grid, values, empty_boundary=True, inside_sign=sign)
    graph = _fine_graph(grid, mobility)
    src_in = np.flatnonzero(s_in.ravel())
    src_out = np.flatnonzero(s_out.ravel())
    F = _csgraph_dijkstra(graph, directed=True, indices=src_in, min_only=True)
    G = _csgraph_dijkstra(graph, directed=True, indices=src_out, min_only=True)
    sd = (F - G).reshape(s_in.shape)
    centers = (slice(1, None, 2),) * grid.dim
    return SignedDistanceField(grid, sd[centers].copy(), empty_boundary=False)


def phase_signed_dists(
    partition: LabelField, mobilities: NormFamily
) -> list[SignedDistanceField]:
    """Signed distance of each phase of the partition under its own mobility."""
    if len(mobilities) != partition.n_labels:
        raise FieldError("mobility family length must equal N+1")
    out = []
    for i in range(1, partition.n_labels + 1):
        out.append(signed_dist(partition.phase_mask(i), mobilities[i - 1], partition.grid))
    return out


def dissipation(
    partition_prev: LabelField,
    candidate: LabelField,
    mobilities: NormFamily,
    sdists: list[SignedDistanceField] | None = None,
) -> float:
    """sigma_Psi(candidate, prev): distance-weighted symmetric-difference volume.

    Uses the magnitudes of the previous partition's signed distances; returns
    +inf when a phase with empty boundary changes (the sigma-bar convention).
    """
    if partition_prev.grid != candidate.grid or partition_prev.n_phases != candidate.n_phases:
        raise FieldError("dissipation needs fields on one grid with equal N")
    if sdists is None:
        sdists = phase_signed_dists(partition_prev, mobilities)
    vol = partition_prev.grid.cell_volume
    total = 0.0
    for i in range(1, partition_prev.n_labels + 1):
        changed = partition_prev.phase_mask(i) != candidate.phase_mask(i)
        if not changed.any():
            continue
        sd = sdists[i - 1]
        if sd.empty_boundary:
            return float("inf")
        total += float(np.sum(sd.magnitudes()[changed])) * vol
    return total
