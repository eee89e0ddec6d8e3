"""Greedy single-cell repair sweeps (numba kernels).

A sweep visits cells in row-major scan order and relabels a cell whenever the
best strictly-improving label lowers the exact step energy.  The perimeter
part is looked up in per-phase stencil tables: ``tables[p, bits]`` is
h^(dim-1) * phi_p of the forward-difference vector of the indicator bit
pattern, with missing (out-of-grid) neighbors replicating the center bit.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, fastmath=False)
def _stencil_term_2d(labels, nx, ny, ix, iy, p, tables):
    b0 = 1 if labels[ix, iy] == p else 0
    if ix + 1 < nx:
        b1 = 1 if labels[ix + 1, iy] == p else 0
    else:
        b1 = b0
    if iy + 1 < ny:
        b2 = 1 if labels[ix, iy + 1] == p else 0
    else:
        b2 = b0
    return tables[p - 1, b0 + 2 * b1 + 4 * b2]


@njit(cache=True, fastmath=False)
def _local_perimeter_2d(labels, nx, ny, ix, iy, pa, pb, tables):
    tot = 0.0
    for dx in range(-1, 1):
        jx = ix + dx
        if jx < 0:
            continue
        tot += _stencil_term_2d(labels, nx, ny, jx, iy, pa, tables)
        tot += _stencil_term_2d(labels, nx, ny, jx, iy, pb, tables)
    jy = iy - 1
    if jy >= 0:
        tot += _stencil_term_2d(labels, nx, ny, ix, jy, pa, tables)
        tot += _stencil_term_2d(labels, nx, ny, ix, jy, pb, tables)
    return tot


@njit(cache=True, fastmath=False)
def repair_sweep_2d(labels, active, tables, lincost):
    """One scan-order sweep; returns the number of relabeled cells."""
    nx, ny = labels.shape
    changes = 0
    for ix in range(nx):
        for iy in range(ny):
            cur = labels[ix, iy]
            best_delta = -1e-12
            best_label = cur
            for k in range(active.size):
                cand = active[k]
                if cand == cur:
                    continue
                delta = lincost[cand - 1, ix, iy] - lincost[cur - 1, ix, iy]
                before = _local_perimeter_2d(labels, nx, ny, ix, iy, cur, cand, tables)
                labels[ix, iy] = cand
                after = _local_perimeter_2d(labels, nx, ny, ix, iy, cur, cand, tables)
                labels[ix, iy] = cur
                delta += after - before
                if delta < best_delta:
                    best_delta = delta
                    best_label = cand
            if best_label != cur:
                labels[ix, iy] = best_label
                changes += 1
    return changes


@njit(cache=True, fastmath=False)
def _stencil_term_3d(labels, nx, ny, nz, ix, iy, iz, p, tables):
    b0 = 1 if labels[ix, iy, iz] == p else 0
    if ix + 1 < nx:
        b1 = 1 if labels[ix + 1, iy, iz] == p else 0
    else:
        b1 = b0
    if iy + 1 < ny:
        b2 = 1 if labels[ix, iy + 1, iz] == p else 0
    else:
        b2 = b0
    if iz + 1 < nz:
        b3 = 1 if labels[ix, iy, iz + 1] == p else 0
    else:
        b3 = b0
    return tables[p - 1, b0 + 2 * b1 + 4 * b2 + 8 * b3]


@njit(cache=True, fastmath=False)
def _local_perimeter_3d(labels, nx, ny, nz, ix, iy, iz, pa, pb, tables):
    tot = 0.0
    for dx in range(-1, 1):
        jx = ix + dx
        if jx < 0:
            continue
        tot += _stencil_term_3d(labels, nx, ny, nz, jx, iy, iz, pa, tables)
        tot += _stencil_term_3d(labels, nx, ny, nz, jx, iy, iz, pb, tables)
    if iy - 1 >= 0:
        tot += _stencil_term_3d(labels, nx, ny, nz, ix, iy - 1, iz, pa, tables)
        tot += _stencil_term_3d(labels, nx, ny, nz, ix, iy - 1, iz, pb, tables)
    if iz - 1 >= 0:
        tot += _stencil_term_3d(labels, nx, ny, nz, ix, iy, iz - 1, pa, tables)
        tot += _stencil_term_3d(labels, nx, ny, nz, ix, iy, iz - 1, pb, tables)
    return tot


@njit(cache=True, fastmath=False)
def repair_sweep_3d(labels, active, tables, lincost):
    nx, ny, nz = labels.shape
    changes = 0
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                cur = labels[ix, iy, iz]
                best_delta = -1e-12
                best_label = cur
                for k in range(active.size):
                    cand = active[k]
                    if cand == cur:
                        continue
                    delta = lincost[cand - 1, ix, iy, iz] - lincost[cur - 1, ix, iy, iz]
                    before = _local_perimeter_3d(
                        labels, nx, ny, nz, ix, iy, iz, cur, cand, tables
                    )
                    labels[ix, iy, iz] = cand
                    after = _local_perimeter_3d(
                        labels, nx, ny, nz, ix, iy, iz, cur, cand, tables
                    )
                    labels[ix, iy, iz] = cur
                    delta += after - before
                    if delta < best_delta:
                        best_delta = delta
                        best_label = cand
                if best_label != cur:
                    labels[ix, iy, iz] = best_label
                    changes += 1
    return changes
