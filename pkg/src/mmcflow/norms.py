"""Anisotropies and mobilities: evaluable symmetric convex 1-homogeneous norms.

Three closed-form kinds are supported so that duals, Wulff shapes and the
discrete-solver dual sets stay exact:

* ``euclidean``          phi(v) = |v|
* ``diagonal-weighted``  phi(v) = sqrt(sum_i (w_i v_i)^2), w_i > 0
* ``polyhedral``         phi(v) = max_j <a_j, v>, centrally symmetric covectors

A family (one norm per phase, exterior included) carries the uniform bounds
c <= phi_i(nu) <= C on the unit sphere and the pairwise sup-distance constant
kappa = min_{i<j} sup_{|nu|=1} |phi_i(nu) - phi_j(nu)| that the multiphase
theory needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

EUCLIDEAN = "euclidean"
DIAGONAL = "diagonal-weighted"
POLYHEDRAL = "polyhedral"

_KINDS = (EUCLIDEAN, DIAGONAL, POLYHEDRAL)


class NormError(ValueError):
    """Malformed norm specification (rejected at construction)."""


@dataclass(frozen=True, eq=False)
class NormSpec:
    """One anisotropy or mobility.

    ``weights`` is used by the diagonal-weighted kind, ``covectors`` (shape
    (m, dim)) by the polyhedral kind.  The covector list must be centrally
    symmetric and span R^dim, otherwise the gauge would be degenerate.
    """

    kind: str
    dim: int
    weights: np.ndarray | None = None
    covectors: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise NormError(f"unknown norm kind {self.kind!r}")
        if self.dim not in (2, 3):
            raise NormError("only dimensions 2 and 3 are supported")
        if self.kind == DIAGONAL:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (self.dim,) or not np.all(w > 0):
                raise NormError("diagonal-weighted norm needs positive per-axis weights")
            object.__setattr__(self, "weights", w)
        elif self.kind == POLYHEDRAL:
            A = np.atleast_2d(np.asarray(self.covectors, dtype=float))
            if A.size == 0 or A.shape[1] != self.dim:
                raise NormError("polyhedral norm needs a nonempty (m, dim) covector list")
            if not _centrally_symmetric(A):
                raise NormError("polyhedral covector list must be centrally symmetric")
            if np.linalg.matrix_rank(A) < self.dim:
                raise NormError("polyhedral covectors must span R^dim")
            object.__setattr__(self, "covectors", A)

    # value-based identity so families and caches can compare norms
    def key(self) -> tuple:
        if self.kind == DIAGONAL:
            return (self.kind, self.dim, tuple(self.weights))
        if self.kind == POLYHEDRAL:
            return (self.kind, self.dim, tuple(map(tuple, self.covectors)))
        return (self.kind, self.dim)

    def __eq__(self, other):
        return isinstance(other, NormSpec) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __call__(self, v) -> np.ndarray | float:
        return eval_norm(self, v)

    @cached_property
    def _dual_facets(self) -> tuple[np.ndarray, np.ndarray]:
        """Facet form (normals, offsets) of conv{a_j}; gauge = max <n,.>/b."""
        from scipy.spatial import ConvexHull

        hull = ConvexHull(self.covectors)
        eq = hull.equations  # n.x + d <= 0 inside, d < 0 since 0 is interior
        normals, off = eq[:, :-1], eq[:, -1]
        if np.any(off > -1e-12):
            raise NormError("polyhedral covector hull does not contain the origin")
        return normals, -off


def _centrally_symmetric(A: np.ndarray, tol: float = 1e-12) -> bool:
    for a in A:
        if not np.any(np.all(np.abs(A + a) <= tol, axis=1)):
            return False
    return True


def eval_norm(norm: NormSpec, v) -> np.ndarray | float:
    """phi(v) for a single vector or an array of vectors (last axis = dim)."""
    v = np.asarray(v, dtype=float)
    scalar = v.ndim == 1
    if norm.kind == EUCLIDEAN:
        out = np.sqrt(np.sum(v * v, axis=-1))
    elif norm.kind == DIAGONAL:
        out = np.sqrt(np.sum((norm.weights * v) ** 2, axis=-1))
    else:
        out = np.max(v @ norm.covectors.T, axis=-1)
    return float(out) if scalar else out


def dual_eval(norm: NormSpec, xi) -> np.ndarray | float:
    """Dual norm phi°(xi) = sup{<xi,v> : phi(v) <= 1}, exact per kind."""
    xi = np.asarray(xi, dtype=float)
    scalar = xi.ndim == 1
    if norm.kind == EUCLIDEAN:
        out = np.sqrt(np.sum(xi * xi, axis=-1))
    elif norm.kind == DIAGONAL:
        out = np.sqrt(np.sum((xi / norm.weights) ** 2, axis=-1))
    else:
        normals, b = norm._dual_facets
        out = np.max((xi @ normals.T) / b, axis=-1)
    return float(out) if scalar else out


@dataclass(frozen=True)
class NormFamily:
    """Ordered anisotropy or mobility family, one entry per phase (length N+1)."""

    members: tuple[NormSpec, ...]
    role: str = "anisotropies"

    def __post_init__(self):
        members = tuple(self.members)
        if len(members) < 2:
            raise NormError("a norm family needs at least 2 members")
        dims = {m.dim for m in members}
        if len(dims) != 1:
            raise NormError("all family members must share one dimension")
        object.__setattr__(self, "members", members)

    def __len__(self):
        return len(self.members)

    def __getitem__(self, i) -> NormSpec:
        return self.members[i]

    def __iter__(self):
        return iter(self.members)

    @property
    def dim(self) -> int:
        return self.members[0].dim

    def all_equal(self) -> bool:
        return all(m == self.members[0] for m in self.members[1:])


@dataclass(frozen=True)
class FamilyBounds:
    """Uniform sphere bounds c_lower <= phi_i <= c_upper and pairwise gap kappa."""

    c_lower: float
    c_upper: float
    kappa: float

    def __post_init__(self):
        if not (0 < self.c_lower <= self.c_upper):
            raise NormError("family bounds must satisfy 0 < c_lower <= c_upper")
        if not (0 <= self.kappa <= 2 * self.c_upper + 1e-12):
            raise NormError("kappa out of range [0, 2*c_upper]")


def unit_directions(dim: int, samples: int) -> np.ndarray:
    """Nested deterministic sphere sampling (doubling samples refines the set)."""
    if samples < 64:
        raise ValueError("need samples >= 64")
    if dim == 2:
        th = 2 * np.pi * np.arange(samples) / samples
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    # 3D: (polar, azimuth) product grid with power-of-two resolution, so the
    # direction set is nested under doubling of the sample budget
    m = 1 << max(2, int(np.floor(np.log2(np.sqrt(samples / 2.0)))))
    th = np.pi * np.arange(m + 1) / m
    ph = 2 * np.pi * np.arange(2 * m) / (2 * m)
    T, P = np.meshgrid(th, ph, indexing="ij")
    d = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1)
    return d.reshape(-1, 3)


def _member_sphere_range(norm: NormSpec, dirs: np.ndarray) -> tuple[float, float]:
    if norm.kind == EUCLIDEAN:
        return 1.0, 1.0
    if norm.kind == DIAGONAL:
        return float(norm.weights.min()), float(norm.weights.max())
    vals = eval_norm(norm, dirs)
    # sup over the sphere of max_j <a_j, nu> is attained at nu = a_j/|a_j|: exact
    upper = float(np.max(np.linalg.norm(norm.covectors, axis=1)))
    return float(vals.min()), upper


def _pair_kappa(ni: NormSpec, nj: NormSpec, dirs: np.ndarray) -> float:
    if ni == nj:
        return 0.0
    diag_like = {EUCLIDEAN, DIAGONAL}
    if ni.kind in diag_like and nj.kind in diag_like:
        wi = ni.weights if ni.kind == DIAGONAL else np.ones(ni.dim)
        wj = nj.weights if nj.kind == DIAGONAL else np.ones(nj.dim)
        # sup_{S^{n-1}} |sqrt(sum wi^2 x^2) - sqrt(sum wj^2 x^2)| = max_i |wi - wj|
        return float(np.max(np.abs(wi - wj)))
    return float(np.max(np.abs(eval_norm(ni, dirs) - eval_norm(nj, dirs))))


def family_bounds(family: NormFamily, samples: int = 4096) -> FamilyBounds:
    """Sampled (exact where closed forms exist) c_lower, c_upper and kappa.

    Sphere extremization uses nested uniform angular sampling with O(1/samples)
    error; euclidean and diagonal-weighted members are evaluated exactly.
    """
    dirs = unit_directions(family.dim, samples)
    lo, hi = np.inf, 0.0
    for m in family:
        a, b = _member_sphere_range(m, dirs)
        lo, hi = min(lo, a), max(hi, b)
    n = len(family)
    kappa = np.inf
    for i in range(n):
        for j in range(i + 1, n):
            kappa = min(kappa, _pair_kappa(family[i], family[j], dirs))
    return FamilyBounds(c_lower=lo, c_upper=hi, kappa=min(float(kappa), 2 * hi))


def check_multiphase_condition(bounds: FamilyBounds, N: int) -> tuple[bool, float]:
    """Gap condition kappa < 2 c_lower / N for N bounded phases; returns margin."""
    if N < 1:
        raise ValueError("need N >= 1")
    margin = 2.0 * bounds.c_lower / N - bounds.kappa
    return margin > 0, margin


def wulff_boundary(norm: NormSpec, k: int) -> np.ndarray:
    """k angularly ordered points on the frontier {phi = 1} (2D only)."""
    if norm.dim != 2:
        raise ValueError("wulff_boundary is 2D only")
    if k < 8 and k != 4:
        raise ValueError("need k >= 8 (k = 4 allowed for axis checks)")
    th = 2 * np.pi * np.arange(k) / k
    d = np.stack([np.cos(th), np.sin(th)], axis=-1)
    vals = eval_norm(norm, d)
    return d / vals[:, None]


# ---------------------------------------------------------------------------
# Stencil dual sets for the coarea-faithful discrete perimeter.
#
# The binary discrete perimeter sums, per cell, phi of the forward-difference
# vector of the indicator.  Differences of a binary stencil only realize the
# directions 0, +-e_i, +-(e_i+e_j), +-(1,...,1); the tight convex extension of
# the stencil term (its Lovasz extension; each 2D term is submodular by the
# triangle inequality) is the support function of the "slab polytope"
#     S(phi) = { xi : |<xi, d>| <= phi(d) for every achievable direction d }.
# Running the primal-dual solver with S(phi) as the dual constraint set makes
# thresholding a relaxed minimizer an exact binary minimizer.
# ---------------------------------------------------------------------------


def stencil_directions(dim: int) -> np.ndarray:
    """Achievable forward-difference directions of a binary stencil (one sign)."""
    if dim == 2:
        return np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    return np.array(
        [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 0.0],
            [1.0, 0.0, 1.0],
            [0.0, 1.0, 1.0],
            [1.0, 1.0, 1.0],
        ]
    )


@dataclass(frozen=True)
class StencilDualSet:
    """Slab polytope S(phi) with vertex list and exact-coarea flag."""

    directions: np.ndarray  # (k, dim), one representative per +- pair
    bounds: np.ndarray  # (k,) phi(direction)
    vertices: np.ndarray  # (v, dim)
    coarea_exact: bool

    def support(self, v: np.ndarray) -> np.ndarray:
        """max_{xi in S} <xi, v> for an array of vectors (last axis = dim)."""
        return np.max(v @ self.vertices.T, axis=-1)

    def gauge_rescale(self, xi: np.ndarray) -> np.ndarray:
        """Scale xi (last axis = dim) into S along rays; exact feasibility."""
        r = np.abs(xi @ self.directions.T) / self.bounds
        s = np.maximum(1.0, np.max(r, axis=-1))
        return xi / s[..., None]


def _hexagon_vertices(a: float, b: float, c: float) -> np.ndarray:
    # {|x|<=a, |y|<=b, |x+y|<=c}; the triangle inequality of phi guarantees
    # |a-b| <= c <= a+b, so all six corners below are feasible (possibly
    # coincident in degenerate cases), listed counterclockwise
    c = min(c, a + b)
    return np.array(
        [
            [a, c - a],
            [c - b, b],
            [-a, b],
            [-a, a - c],
            [b - c, -b],
            [a, -b],
        ]
    )


def stencil_dual_set(norm: NormSpec) -> StencilDualSet:
    """Build S(phi) for the norm's dimension (cached on the NormSpec)."""
    cache = getattr(norm, "_stencil_cache", None)
    if cache is not None:
        return cache
    dirs = stencil_directions(norm.dim)
    bounds = np.array([eval_norm(norm, d) for d in dirs])
    if norm.dim == 2:
        a, b, c = bounds
        verts = _hexagon_vertices(float(a), float(b), float(c))
        exact = True
    else:
        from scipy.spatial import HalfspaceIntersection

        halves = np.vstack(
            [
                np.hstack([dirs, -bounds[:, None]]),
                np.hstack([-dirs, -bounds[:, None]]),
            ]
        )
        hs = HalfspaceIntersection(halves, np.zeros(3))
        verts = np.unique(np.round(hs.intersections, 12), axis=0)
        support = np.max(verts @ dirs.T, axis=0)
        # tight iff the binary stencil term is submodular; then thresholding
        # the relaxation is exact, otherwise only descent is certified
        exact = bool(np.all(support >= bounds - 1e-9))
    out = StencilDualSet(directions=dirs, bounds=bounds, vertices=verts, coarea_exact=exact)
    object.__setattr__(norm, "_stencil_cache", out)
    return out


def project_dual_2d(px: np.ndarray, py: np.ndarray, dual: StencilDualSet):
    """Exact euclidean projection onto the 2D slab hexagon, vectorized."""
    a, b, c = dual.bounds
    inside = (np.abs(px) <= a) & (np.abs(py) <= b) & (np.abs(px + py) <= c)
    verts = dual.vertices
    nv = len(verts)
    best_d = np.full(px.shape, np.inf)
    best_x = np.zeros_like(px)
    best_y = np.zeros_like(py)
    for k in range(nv):
        x0, y0 = verts[k]
        x1, y1 = verts[(k + 1) % nv]
        ex, ey = x1 - x0, y1 - y0
        ee = ex * ex + ey * ey
        if ee < 1e-30:
            t = np.zeros_like(px)
        else:
            t = np.clip(((px - x0) * ex + (py - y0) * ey) / ee, 0.0, 1.0)
        cx = x0 + t * ex
        cy = y0 + t * ey
        d = (cx - px) ** 2 + (cy - py) ** 2
        m = d < best_d
        best_d = np.where(m, d, best_d)
        best_x = np.where(m, cx, best_x)
        best_y = np.where(m, cy, best_y)
    return np.where(inside, px, best_x), np.where(inside, py, best_y)


def project_dual_3d(xi: np.ndarray, dual: StencilDualSet, cycles: int = 24) -> np.ndarray:
    """Dykstra projection onto the 3D slab polytope + exact gauge rescale.

    The rescale guarantees strict feasibility so duality-gap evaluations stay
    valid; the Dykstra loop makes the point near-orthogonal-projected.
    """
    dirs, bounds = dual.directions, dual.bounds
    nn = np.sum(dirs * dirs, axis=1)
    x = xi.copy()
    corr = np.zeros(xi.shape[:-1] + (len(dirs),) + (xi.shape[-1],))
    for _ in range(cycles):
        for k in range(len(dirs)):
            y = x + corr[..., k, :]
            t = y @ dirs[k]
            t_clip = np.clip(t, -bounds[k], bounds[k])
            proj = y + ((t_clip - t) / nn[k])[..., None] * dirs[k]
            corr[..., k, :] = y - proj
            x = proj
    return dual.gauge_rescale(x)
