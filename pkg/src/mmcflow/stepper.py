"""One minimizing-movement step.

Each step minimizes, over partitions of the box,

    Per_Phi(candidate) + force(candidate) + lambda * sigma_Psi(candidate, prev).

The dissipation is linearized exactly through the previous partition's signed
distances, so the step is an anisotropic-TV-plus-linear problem.  Its convex
relaxation is solved by a Chambolle-Pock primal-dual iteration whose dual
variables live in the stencil slab polytope of each anisotropy (the tight,
coarea-faithful extension of the binary perimeter).  In 2D every stencil term
is submodular, the relaxation value equals the binary minimum, and
thresholding a relaxed minimizer at any level is exact; the two-phase solver
exploits this, the multiphase solver adds a greedy repair sweep and an energy
guard that certifies descent.

Exhaustive enumeration on tiny grids provides the verification oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .disttrans import SignedDistanceField, dissipation, phase_signed_dists
from .field import FieldError, Forcing, Grid, LabelField, force_integral, per_phi
from .norms import NormFamily, StencilDualSet, project_dual_2d, project_dual_3d, stencil_dual_set


class StepError(ValueError):
    pass


class TooLarge(StepError):
    """Oracle enumeration would exceed the allowed active-cell budget."""


@dataclass
class StepReport:
    """Energy breakdown and solver bookkeeping for one step."""

    energy_perimeter: float
    energy_force: float
    energy_dissipation: float
    lam: float
    total: float
    iterations: int = 0
    duality_gap: float = 0.0
    repaired: bool = False
    accepted: bool = True
    converged: bool = True
    repair_limit: bool = False

    def __post_init__(self):
        if math.isfinite(self.total):
            recon = self.energy_perimeter + self.energy_force + self.lam * self.energy_dissipation
            if abs(recon - self.total) > 1e-9 * (1.0 + abs(self.total)):
                raise StepError("StepReport total does not match its breakdown")


@dataclass(frozen=True, eq=False)
class StepProblem:
    """Frozen inputs of one minimizing-movement step."""

    prev: LabelField
    anisotropies: NormFamily
    mobilities: NormFamily
    forcing: Forcing
    lam: float
    gap_tol_factor: float = 1e-7  # duality-gap tolerance per cell
    max_iters: int = 20000

    def __post_init__(self):
        if self.lam < 1.0:
            raise StepError("lambda must be >= 1")
        n_labels = self.prev.n_labels
        if len(self.anisotropies) != n_labels or len(self.mobilities) != n_labels:
            raise StepError("family lengths must equal N+1 of the previous field")
        if self.anisotropies.dim != self.prev.grid.dim:
            raise StepError("norm dimension does not match the grid")
        if self.forcing.grid != self.prev.grid or self.forcing.n_labels != n_labels:
            raise StepError("forcing does not match the previous field")

    @property
    def grid(self) -> Grid:
        return self.prev.grid

    @property
    def n_labels(self) -> int:
        return self.prev.n_labels

    @cached_property
    def sdists(self) -> list[SignedDistanceField]:
        return phase_signed_dists(self.prev, self.mobilities)

    @cached_property
    def frozen(self) -> np.ndarray:
        """Phases with empty previous boundary (any change costs +inf)."""
        return np.array([sd.empty_boundary for sd in self.sdists])

    @cached_property
    def active_labels(self) -> np.ndarray:
        return np.flatnonzero(~self.frozen).astype(np.int32) + 1

    @cached_property
    def sd_magnitudes(self) -> np.ndarray:
        """(N+1, *shape) |sdist| per phase, +inf rows for frozen phases."""
        out = np.empty((self.n_labels,) + self.grid.shape)
        for i, sd in enumerate(self.sdists):
            out[i] = np.inf if sd.empty_boundary else sd.magnitudes()
        return out

    @cached_property
    def net_forcing(self) -> np.ndarray:
        return np.stack([self.forcing.net(i) for i in range(1, self.n_labels + 1)])

    @cached_property
    def linear_costs(self) -> np.ndarray:
        """Exact per-cell label costs:  h^d (lam (|sd_l| + |sd_prev|) [l != prev] + Hnet_l)."""
        vol = self.grid.cell_volume
        prev0 = self.prev.labels - 1
        sd_prev = np.take_along_axis(self.sd_magnitudes, prev0[None], axis=0)[0]
        move = self.sd_magnitudes + sd_prev[None]
        same = prev0[None] == np.arange(self.n_labels).reshape((-1,) + (1,) * self.grid.dim)
        cost = np.where(same, 0.0, self.lam * move) + self.net_forcing
        return vol * cost

    @cached_property
    def pattern_tables(self) -> np.ndarray:
        """(N+1, 2^(d+1)) stencil perimeter terms, h^(d-1) phi(diff pattern)."""
        d = self.grid.dim
        n_pat = 1 << (d + 1)
        tables = np.empty((self.n_labels, n_pat))
        scale = self.grid.h ** (d - 1)
        for i in range(self.n_labels):
            phi = self.anisotropies[i]
            for bits in range(n_pat):
                b0 = bits & 1
                diffs = [((bits >> (a + 1)) & 1) - b0 for a in range(d)]
                tables[i, bits] = scale * phi(np.array(diffs, dtype=float))
        return tables

    @cached_property
    def dual_sets(self) -> list[StencilDualSet]:
        return [stencil_dual_set(n) for n in self.anisotropies]

    @cached_property
    def gap_tol(self) -> float:
        # per-cell factor weighted by the facet energy quantum h^(d-1): a
        # dimensionless per-cell tolerance stalls fine grids, where one-cell
        # interface moves change the energy by O(h^(d-1)) only
        return self.gap_tol_factor * self.grid.n_cells * self.grid.h ** (self.grid.dim - 1)

    def dissipation_constant(self) -> float:
        """Constant linking the linearized costs to the true dissipation."""
        vol = self.grid.cell_volume
        total = 0.0
        for i in self.active_labels:
            sd = self.sdists[i - 1]
            mask = self.prev.phase_mask(int(i))
            total -= float(np.sum(sd.finite_values()[mask])) * vol
        return self.lam * total


def step_energy(candidate: LabelField, problem: StepProblem) -> StepReport:
    """Exact discrete evaluation of Per_Phi + force + lambda*sigma_Psi."""
    if candidate.grid != problem.grid or candidate.n_phases != problem.prev.n_phases:
        raise StepError("candidate does not match the problem")
    perim, _ = per_phi(candidate, problem.anisotropies)
    force = force_integral(candidate, problem.forcing)
    diss = dissipation(problem.prev, candidate, problem.mobilities, sdists=problem.sdists)
    total = perim + force + problem.lam * diss
    return StepReport(
        energy_perimeter=perim,
        energy_force=force,
        energy_dissipation=diss,
        lam=problem.lam,
        total=total,
    )


# -- primal-dual machinery ----------------------------------------------------


def _axis_slices(dim: int, axis: int):
    lo = [slice(None)] * dim
    hi = [slice(None)] * dim
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    return tuple(lo), tuple(hi)


def _grad(u: np.ndarray) -> np.ndarray:
    d = np.zeros(u.shape + (u.ndim,))
    for a in range(u.ndim):
        lo, hi = _axis_slices(u.ndim, a)
        d[lo + (a,)] = u[hi] - u[lo]
    return d


def _div_T(xi: np.ndarray) -> np.ndarray:
    """Adjoint of _grad (so that <xi, Du> = <divT xi, u>), free edges."""
    dim = xi.shape[-1]
    out = np.zeros(xi.shape[:-1])
    for a in range(dim):
        lo, hi = _axis_slices(dim, a)
        comp = xi[..., a]
        out[lo] -= comp[lo]
        out[hi] += comp[lo]
    return out


def _zero_edge_duals(xi: np.ndarray) -> None:
    dim = xi.shape[-1]
    for a in range(dim):
        sl = [slice(None)] * dim
        sl[a] = slice(-1, None)
        xi[tuple(sl) + (a,)] = 0.0


def _project_dual(xi: np.ndarray, dual: StencilDualSet, dim: int) -> np.ndarray:
    if dim == 2:
        px, py = project_dual_2d(xi[..., 0], xi[..., 1], dual)
        return np.stack([px, py], axis=-1)
    return project_dual_3d(xi, dual, cycles=24)


def _simplex_project(w: np.ndarray) -> np.ndarray:
    """Project per-cell vectors (axis 0) onto the probability simplex."""
    k = w.shape[0]
    vs = np.sort(w, axis=0)[::-1]
    cs = np.cumsum(vs, axis=0) - 1.0
    idx = np.arange(1, k + 1).reshape((k,) + (1,) * (w.ndim - 1))
    cond = vs - cs / idx > 0
    rho = np.maximum(cond.sum(axis=0), 1)
    theta = np.take_along_axis(cs, (rho - 1)[None], axis=0)[0] / rho
    return np.maximum(w - theta[None], 0.0)


def _relaxation_solve(problem: StepProblem) -> tuple[np.ndarray, int, float, bool]:
    """Chambolle-Pock on the simplex-constrained relaxation.

    Returns (weights over active labels, iterations, full-energy duality gap,
    converged flag).  Works for any number of active labels >= 2; with two it
    reduces to the exactly-thresholdable two-phase relaxation.
    """
    grid = problem.grid
    dim = grid.dim
    act = problem.active_labels
    k = len(act)
    scale = grid.h ** (dim - 1)
    # normalized linear costs: full energy = scale * (sum hH(Du) + sum g~ u) + const
    g = np.stack([problem.linear_costs[i - 1] for i in act]) / scale
    duals = [problem.dual_sets[i - 1] for i in act]

    u = np.stack([(problem.prev.labels == i).astype(float) for i in act])
    ubar = u.copy()
    xi = [np.zeros(grid.shape + (dim,)) for _ in range(k)]
    tau = sigma = 1.0 / (2.0 * math.sqrt(dim))

    const = problem.dissipation_constant() + 0.0
    tol = problem.gap_tol
    gap = np.inf
    it = 0
    check_every = 16
    while it < problem.max_iters:
        it += 1
        div_sum = np.zeros((k,) + grid.shape)
        for j in range(k):
            xi[j] += sigma * _grad(ubar[j])
            xi[j] = _project_dual(xi[j], duals[j], dim)
            _zero_edge_duals(xi[j])
            div_sum[j] = _div_T(xi[j])
        u_new = _simplex_project(u - tau * (div_sum + g))
        ubar = 2.0 * u_new - u
        u = u_new
        if it % check_every == 0 or it == problem.max_iters:
            primal = 0.0
            for j in range(k):
                primal += float(np.sum(duals[j].support(_grad(u[j]))))
            primal += float(np.sum(g * u))
            r = div_sum + g
            dual_val = float(np.sum(np.min(r, axis=0)))
            gap = scale * (primal - dual_val)
            total_scale = abs(scale * primal + const)
            if gap <= tol * (1.0 + total_scale):
                return u, it, gap, True
            if it >= 4096:
                check_every = 64
    return u, it, gap, False


def _labels_from_weights(problem: StepProblem, w: np.ndarray) -> np.ndarray:
    act = problem.active_labels
    winner = np.argmax(w, axis=0)  # first maximum: lowest active index wins ties
    return act[winner].astype(np.int32)


def _identity_report(problem: StepProblem, iterations=0, gap=0.0) -> tuple[LabelField, StepReport]:
    rep = step_energy(problem.prev, problem)
    rep.iterations = iterations
    rep.duality_gap = gap
    return problem.prev, rep


def _guard(
    problem: StepProblem,
    cand: LabelField,
    iterations: int,
    gap: float,
    converged: bool,
    repaired: bool,
    repair_limit: bool = False,
) -> tuple[LabelField, StepReport]:
    """Energy guard: keep the candidate only if it does not increase energy."""
    prev_rep = step_energy(problem.prev, problem)
    cand_rep = step_energy(cand, problem)
    if cand_rep.total <= prev_rep.total:
        out, rep, accepted = cand, cand_rep, True
    else:
        out, rep, accepted = problem.prev, prev_rep, False
    rep.iterations = iterations
    rep.duality_gap = gap
    rep.converged = converged
    rep.repaired = repaired
    rep.accepted = accepted
    rep.repair_limit = repair_limit
    return out, rep


def step_two_phase(problem: StepProblem) -> tuple[LabelField, StepReport]:
    """Exact two-phase step: coarea-faithful relaxation, threshold at 1/2, guard.

    The scalar unknown is the phase-1 indicator; the effective anisotropy is
    phi_1 + phi_2 and the linear cost lam*(sdist_psi1 + sdist_psi2) + H1 - H2,
    both measured against the previous phase-1 set.
    """
    if problem.n_labels != 2:
        raise StepError("step_two_phase needs N = 1")
    if len(problem.active_labels) < 2:
        return _identity_report(problem)
    grid = problem.grid
    dim = grid.dim
    scale = grid.h ** (dim - 1)

    sd1 = problem.sdists[0].finite_values()
    sd2 = problem.sdists[1].finite_values()
    g_full = grid.cell_volume * (problem.lam * (sd1 - sd2) + problem.net_forcing[0])
    g = g_full / scale

    phi1, phi2 = problem.anisotropies[0], problem.anisotropies[1]
    d1, d2 = stencil_dual_set(phi1), stencil_dual_set(phi2)
    dirs = d1.directions
    bounds = d1.bounds + d2.bounds
    if dim == 2:
        from .norms import _hexagon_vertices

        verts = _hexagon_vertices(*map(float, bounds))
        dual = StencilDualSet(dirs, bounds, verts, d1.coarea_exact and d2.coarea_exact)
    else:
        from scipy.spatial import HalfspaceIntersection

        halves = np.vstack(
            [np.hstack([dirs, -bounds[:, None]]), np.hstack([-dirs, -bounds[:, None]])]
        )
        hs = HalfspaceIntersection(halves, np.zeros(3))
        verts = np.unique(np.round(hs.intersections, 12), axis=0)
        support = np.max(verts @ dirs.T, axis=0)
        dual = StencilDualSet(dirs, bounds, verts, bool(np.all(support >= bounds - 1e-9)))

    u = (problem.prev.labels == 1).astype(float)
    ubar = u.copy()
    xi = np.zeros(grid.shape + (dim,))
    tau = sigma = 1.0 / (2.0 * math.sqrt(dim))
    const = problem.dissipation_constant()
    tol = problem.gap_tol
    gap = np.inf
    converged = False
    it = 0
    check_every = 16
    while it < problem.max_iters:
        it += 1
        xi += sigma * _grad(ubar)
        xi = _project_dual(xi, dual, dim)
        _zero_edge_duals(xi)
        div = _div_T(xi)
        u_new = np.clip(u - tau * (div + g), 0.0, 1.0)
        ubar = 2.0 * u_new - u
        u = u_new
        if it % check_every == 0 or it == problem.max_iters:
            primal = float(np.sum(dual.support(_grad(u)))) + float(np.sum(g * u))
            dual_val = float(np.sum(np.minimum(0.0, div + g)))
            gap = scale * (primal - dual_val)
            if gap <= tol * (1.0 + abs(scale * primal + const)):
                converged = True
                break
            if it >= 4096:
                check_every = 64
    labels = np.where(u >= 0.5, np.int32(1), np.int32(2))
    cand = problem.prev.with_labels(labels)
    return _guard(problem, cand, it, gap, converged, repaired=False)


def _run_repair(problem: StepProblem, labels: np.ndarray) -> tuple[np.ndarray, bool, bool]:
    from ._repair import repair_sweep_2d, repair_sweep_3d

    sweep = repair_sweep_2d if problem.grid.dim == 2 else repair_sweep_3d
    lincost = np.ascontiguousarray(problem.linear_costs)
    tables = np.ascontiguousarray(problem.pattern_tables)
    act = np.ascontiguousarray(problem.active_labels)
    work = labels.copy()
    max_sweeps = 10 * problem.grid.n_cells
    sweeps = 0
    changed_any = False
    while sweeps < max_sweeps:
        sweeps += 1
        if sweep(work, act, tables, lincost) == 0:
            return work, changed_any, False
        changed_any = True
    return work, changed_any, True


def step_multiphase(problem: StepProblem) -> tuple[LabelField, StepReport]:
    """Simplex relaxation + argmax threshold + repair sweep + energy guard.

    Phases with empty previous boundary are frozen (excluded from the label
    alphabet).  Accepts N = 1 as well, where it coincides with the two-phase
    relaxation up to a doubling of the objective; comparison runs use this so
    both legs share one solver.
    """
    if len(problem.active_labels) < 2:
        return _identity_report(problem)
    w, it, gap, converged = _relaxation_solve(problem)
    labels = _labels_from_weights(problem, w)
    labels, repaired, limit = _run_repair(problem, labels)
    cand = problem.prev.with_labels(labels)
    return _guard(problem, cand, it, gap, converged, repaired, repair_limit=limit)


def step_auto(problem: StepProblem) -> tuple[LabelField, StepReport]:
    """Two-phase solver when N = 1, multiphase solver otherwise."""
    return step_two_phase(problem) if problem.n_labels == 2 else step_multiphase(problem)


# -- exhaustive oracle ---------------------------------------------------------


def _batched_energies(problem: StepProblem, labels_batch: np.ndarray) -> np.ndarray:
    """Exact step energies of a batch of full label arrays, vectorized."""
    B = labels_batch.shape[0]
    grid = problem.grid
    tables = problem.pattern_tables
    dim = grid.dim
    total = np.zeros(B)
    for i in range(problem.n_labels):
        chi = labels_batch == (i + 1)
        bits = chi.astype(np.int64).copy()
        for a in range(dim):
            lo, hi = _axis_slices(dim, a)
            nb = chi.copy()
            nb[(slice(None),) + lo] = chi[(slice(None),) + hi]  # missing -> replicate
            bits += (1 << (a + 1)) * nb.astype(np.int64)
        total += tables[i][bits].reshape(B, -1).sum(axis=1)
    idx = (labels_batch - 1).reshape(B, -1)
    lin_flat = problem.linear_costs.reshape(problem.n_labels, -1)
    total += np.take_along_axis(lin_flat, idx, axis=0).sum(axis=1)
    return total


def oracle_minimize(problem: StepProblem, max_cells: int = 20) -> tuple[LabelField, float]:
    """Exhaustive minimizer over all labelings of the active cells.

    Ties are broken by lexicographic label order (the enumeration order).
    Raises TooLarge when the active-cell count exceeds max_cells.
    """
    act = problem.active_labels
    frozen_phase_cells = np.isin(problem.prev.labels, np.flatnonzero(problem.frozen) + 1)
    active_cells = np.flatnonzero(~frozen_phase_cells.ravel())
    n_active = active_cells.size
    if n_active > max_cells:
        raise TooLarge(f"{n_active} active cells exceed the oracle budget {max_cells}")
    k = len(act)
    if k == 0 or n_active == 0:
        rep = step_energy(problem.prev, problem)
        return problem.prev, rep.total

    n_total = k**n_active
    if n_total > (1 << 26):
        raise TooLarge(f"{n_total} labelings exceed the enumeration ceiling")
    base = problem.prev.labels.ravel().copy()
    best_energy = np.inf
    best_labels = None
    chunk = max(1, min(n_total, 1 << 14))
    # mixed-radix enumeration, last active cell varies fastest (lexicographic)
    radix = (k ** np.arange(n_active - 1, -1, -1)).astype(np.int64)
    start = 0
    while start < n_total:
        stop = min(n_total, start + chunk)
        ids = np.arange(start, stop, dtype=np.int64)
        digits = (ids[:, None] // radix[None, :]) % k
        batch = np.repeat(base[None, :], stop - start, axis=0)
        batch[:, active_cells] = act[digits]
        batch = batch.reshape((stop - start,) + problem.grid.shape)
        energies = _batched_energies(problem, batch)
        j = int(np.argmin(energies))
        if energies[j] < best_energy:  # strict: first minimum is lexicographic
            best_energy = float(energies[j])
            best_labels = batch[j].copy()
        start = stop
    out = problem.prev.with_labels(best_labels)
    return out, best_energy
