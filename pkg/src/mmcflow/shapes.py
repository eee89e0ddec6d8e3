"""Named initial partitions, rasterized by cell-center membership tests."""

from __future__ import annotations

import math

import numpy as np

from .field import FieldError, Grid, LabelField
from .norms import NormSpec, eval_norm


def _base(grid: Grid, n_phases: int) -> np.ndarray:
    return np.full(grid.shape, n_phases + 1, dtype=np.int32)


def disk(grid: Grid, n_phases: int, center, radius: float, phase: int = 1) -> LabelField:
    lab = _base(grid, n_phases)
    d = np.linalg.norm(grid.centers() - np.asarray(center, dtype=float), axis=-1)
    lab[d <= radius] = phase
    return LabelField(grid, lab, n_phases)


def square(grid: Grid, n_phases: int, center, side: float, phase: int = 1) -> LabelField:
    lab = _base(grid, n_phases)
    d = np.max(np.abs(grid.centers() - np.asarray(center, dtype=float)), axis=-1)
    lab[d <= side / 2.0] = phase
    return LabelField(grid, lab, n_phases)


def wulff(grid: Grid, n_phases: int, center, radius: float, norm: NormSpec, phase: int = 1) -> LabelField:
    """Wulff shape {phi((x - c)) <= radius} of the given anisotropy."""
    lab = _base(grid, n_phases)
    v = grid.centers() - np.asarray(center, dtype=float)
    lab[eval_norm(norm, v) <= radius] = phase
    return LabelField(grid, lab, n_phases)


def stripes(grid: Grid, n_phases: int, count: int, axis: int = 0) -> LabelField:
    """count stripes along the axis, labels cycling through 1..N+1."""
    if count < 2:
        raise FieldError("need at least two stripes")
    n = grid.shape[axis]
    idx = np.arange(n) * count // n
    lab = np.take((idx % (n_phases + 1)) + 1, np.indices(grid.shape)[axis]).astype(np.int32)
    return LabelField(grid, lab, n_phases)


def tricolor_disk(grid: Grid, n_phases: int, center, radius: float) -> LabelField:
    """Disk split into three 120-degree sectors of phases 1, 2, 3."""
    if n_phases < 3:
        raise FieldError("tricolor disk needs at least 3 bounded phases")
    if grid.dim != 2:
        raise FieldError("tricolor disk is 2D")
    lab = _base(grid, n_phases)
    v = grid.centers() - np.asarray(center, dtype=float)
    d = np.linalg.norm(v, axis=-1)
    ang = np.arctan2(v[..., 1], v[..., 0])  # [-pi, pi)
    sector = ((ang + math.pi) // (2 * math.pi / 3)).astype(np.int32)
    sector = np.clip(sector, 0, 2)
    inside = d <= radius
    lab[inside] = sector[inside] + 1
    return LabelField(grid, lab, n_phases)


def t_junction(grid: Grid, n_phases: int, center, size: float) -> LabelField:
    """Square block: top half phase 1, lower-left phase 2, lower-right phase 3."""
    if n_phases < 3:
        raise FieldError("T-junction needs at least 3 bounded phases")
    if grid.dim != 2:
        raise FieldError("T-junction is 2D")
    lab = _base(grid, n_phases)
    c = np.asarray(center, dtype=float)
    v = grid.centers() - c
    inside = np.max(np.abs(v), axis=-1) <= size / 2.0
    top = v[..., 1] > 0
    left = v[..., 0] <= 0
    lab[inside & top] = 1
    lab[inside & ~top & left] = 2
    lab[inside & ~top & ~left] = 3
    return LabelField(grid, lab, n_phases)


def make_shape(grid: Grid, n_phases: int, spec: dict, norms=None) -> LabelField:
    """Build a named shape from a configuration mapping."""
    kind = spec.get("type")
    if kind == "disk":
        return disk(grid, n_phases, spec["center"], spec["radius"], spec.get("phase", 1))
    if kind == "square":
        return square(grid, n_phases, spec["center"], spec["side"], spec.get("phase", 1))
    if kind == "wulff":
        idx = int(spec.get("norm_index", 0))
        if norms is None:
            raise FieldError("wulff shape needs the anisotropy family")
        return wulff(grid, n_phases, spec["center"], spec["radius"], norms[idx], spec.get("phase", 1))
    if kind == "stripes":
        return stripes(grid, n_phases, int(spec["count"]), int(spec.get("axis", 0)))
    if kind == "tricolor-junction":
        return tricolor_disk(grid, n_phases, spec["center"], spec["radius"])
    if kind == "t-junction":
        return t_junction(grid, n_phases, spec["center"], spec["size"])
    raise FieldError(f"unknown initial shape {kind!r}")
