"""Discrete flows: iterated steps, lambda sweeps, and paired comparison runs.

A flow at rate lambda performs steps k = 1..ceil(lambda*T) and exposes the
piecewise-constant trajectory through checkpoints: the checkpoint at time t
stores the partition after step floor(lambda*t).  Lambda sweeps quantify the
Cauchy behaviour of checkpoints in the L^1 partition distance; comparison
runs evolve a two-phase flow seeded inside one phase in lockstep with the
multiphase flow and record the cells violating the discrete inclusion
principle.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .disttrans import signed_dist
from .field import (
    Forcing,
    LabelField,
    convex_hull_mask,
    sym_diff_volume,
)
from .norms import NormFamily
from .stepper import StepProblem, StepReport, step_auto, step_multiphase


class FlowConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FlowProblem:
    """Time-independent ingredients of a flow."""

    anisotropies: NormFamily
    mobilities: NormFamily
    forcing: Forcing


@dataclass(frozen=True)
class FlowParams:
    lam: float
    horizon: float
    checkpoint_times: tuple[float, ...]
    gap_tol_factor: float = 1e-7
    max_iters: int = 20000

    def __post_init__(self):
        if self.lam < 1.0:
            raise FlowConfigError("lambda must be >= 1")
        if self.horizon < 0:
            raise FlowConfigError("horizon must be nonnegative")
        ts = tuple(float(t) for t in self.checkpoint_times)
        if any(t < 0 or t > self.horizon + 1e-12 for t in ts):
            raise FlowConfigError("checkpoint times must lie in [0, T]")
        object.__setattr__(self, "checkpoint_times", ts)

    def n_steps(self) -> int:
        return int(math.ceil(self.lam * self.horizon - 1e-12))

    def step_of_time(self, t: float) -> int:
        return min(int(math.floor(self.lam * t + 1e-12)), self.n_steps())


@dataclass
class FlowTrace:
    params: FlowParams
    initial: LabelField
    checkpoints: list[tuple[float, LabelField]] = field(default_factory=list)
    reports: list[StepReport] = field(default_factory=list)
    displacements: list[float] = field(default_factory=list)  # per step, 0 if unchanged

    def series(self) -> dict[str, np.ndarray]:
        """Per-step scalar series (k = 1..K) of the energy breakdown."""
        return {
            "per_phi": np.array([r.energy_perimeter for r in self.reports]),
            "force": np.array([r.energy_force for r in self.reports]),
            "dissipation": np.array([r.energy_dissipation for r in self.reports]),
            "gap": np.array([r.duality_gap for r in self.reports]),
            "accepted": np.array([r.accepted for r in self.reports]),
            "repaired": np.array([r.repaired for r in self.reports]),
        }

    def checkpoint_at(self, t: float) -> LabelField:
        for tc, f in self.checkpoints:
            if abs(tc - t) <= 1e-12:
                return f
        raise KeyError(f"no checkpoint at t = {t}")


def _max_displacement(problem: StepProblem, out: LabelField) -> float:
    """Max over relabeled cells of the mobility distance to the old boundary.

    For two phases this is d_psi = dist_psi1 + dist_psi2 to the previous
    interface, the quantity the L-infinity displacement bound controls.
    """
    changed = problem.prev.labels != out.labels
    if not changed.any():
        return 0.0
    mags = problem.sd_magnitudes
    old = problem.prev.labels[changed] - 1
    new = out.labels[changed] - 1
    cells = np.flatnonzero(changed.ravel())
    flat = mags.reshape(mags.shape[0], -1)
    d = flat[old, cells] + flat[new, cells]
    return float(np.max(d))


def run_flow(initial: LabelField, problem: FlowProblem, params: FlowParams) -> FlowTrace:
    """Iterate minimizing-movement steps and record checkpoints and series."""
    _warn_margin(initial, problem)
    trace = FlowTrace(params=params, initial=initial)
    n_steps = params.n_steps()
    want = {}
    for t in params.checkpoint_times:
        want.setdefault(params.step_of_time(t), []).append(t)
    state = initial
    for t in want.get(0, []):
        trace.checkpoints.append((t, state))
    for k in range(1, n_steps + 1):
        sp = StepProblem(
            prev=state,
            anisotropies=problem.anisotropies,
            mobilities=problem.mobilities,
            forcing=problem.forcing,
            lam=params.lam,
            gap_tol_factor=params.gap_tol_factor,
            max_iters=params.max_iters,
        )
        state, rep = step_auto(sp)
        trace.reports.append(rep)
        trace.displacements.append(_max_displacement(sp, state))
        for t in want.get(k, []):
            trace.checkpoints.append((t, state))
    trace.checkpoints.sort(key=lambda p: p[0])
    return trace


def _warn_margin(initial: LabelField, problem: FlowProblem) -> None:
    r = problem.forcing.support_radius if not problem.forcing.is_zero() else None
    mask = convex_hull_mask(initial, 2 * initial.grid.h, forcing_radius=r)
    rim = np.zeros(initial.grid.shape, dtype=bool)
    for a in range(initial.grid.dim):
        sl = [slice(None)] * initial.grid.dim
        sl[a] = 0
        rim[tuple(sl)] = True
        sl[a] = -1
        rim[tuple(sl)] = True
    if bool(np.any(mask & rim)):
        warnings.warn(
            "confinement prediction touches the grid boundary; "
            "enlarge the box or shrink the initial data",
            stacklevel=3,
        )


@dataclass
class GmmResult:
    lambdas: tuple[float, ...]
    traces: list[FlowTrace]  # aligned with lambdas
    checkpoint_times: tuple[float, ...]
    cauchy: np.ndarray  # (L, L, T) symmetric distance matrix
    converged: bool
    threshold: float

    @property
    def candidate(self) -> FlowTrace:
        return self.traces[-1]


def extract_gmm(
    initial: LabelField,
    problem: FlowProblem,
    lambdas,
    checkpoint_times,
    horizon: float | None = None,
    threshold: float = 1e-2,
    gap_tol_factor: float = 1e-7,
    max_iters: int = 20000,
) -> GmmResult:
    """Run the flow per lambda and assemble the Cauchy distance matrix.

    A GMM candidate (the finest-lambda trace) is declared converged when the
    distance between the two finest traces is below the threshold at every
    checkpoint.  Convergence is reported, never asserted.
    """
    lambdas = tuple(float(x) for x in lambdas)
    if len(lambdas) < 1 or list(lambdas) != sorted(lambdas):
        raise FlowConfigError("lambdas must be nondecreasing")
    times = tuple(float(t) for t in checkpoint_times)
    T = horizon if horizon is not None else (max(times) if times else 0.0)
    traces = []
    for lam in lambdas:
        params = FlowParams(
            lam=lam,
            horizon=T,
            checkpoint_times=times,
            gap_tol_factor=gap_tol_factor,
            max_iters=max_iters,
        )
        traces.append(run_flow(initial, problem, params))
    L = len(lambdas)
    cauchy = np.zeros((L, L, len(times)))
    for i in range(L):
        for j in range(i + 1, L):
            for kt, t in enumerate(times):
                d, _ = sym_diff_volume(
                    traces[i].checkpoint_at(t), traces[j].checkpoint_at(t)
                )
                cauchy[i, j, kt] = cauchy[j, i, kt] = d
    converged = L >= 2 and bool(np.all(cauchy[L - 2, L - 1, :] <= threshold))
    return GmmResult(
        lambdas=lambdas,
        traces=traces,
        checkpoint_times=times,
        cauchy=cauchy,
        converged=converged,
        threshold=threshold,
    )


@dataclass
class ComparisonStep:
    k: int
    violations: int
    band_cells: int
    violation_fraction: float
    sign_condition_min: float  # min over cells and j of 2e - g_i + g_j (before the step)
    two_phase_alive: bool
    multi_phase_alive: bool


@dataclass
class ComparisonResult:
    phase: int
    multi_trace: FlowTrace
    two_trace: FlowTrace
    steps: list[ComparisonStep]

    def max_violation_fraction(self) -> float:
        return max((s.violation_fraction for s in self.steps), default=0.0)


def _interface_band(masks: list[np.ndarray], width: int = 2) -> np.ndarray:
    """Cells within `width` cells (Chebyshev) of any mask's facet boundary."""
    from scipy import ndimage

    dim = masks[0].ndim
    band = np.zeros(masks[0].shape, dtype=bool)
    for m in masks:
        for a in range(dim):
            lo = [slice(None)] * dim
            hi = [slice(None)] * dim
            lo[a] = slice(None, -1)
            hi[a] = slice(1, None)
            facets = m[tuple(lo)] != m[tuple(hi)]
            band[tuple(lo)] |= facets
            band[tuple(hi)] |= facets
    struct = np.ones((3,) * dim, dtype=bool)
    return ndimage.binary_dilation(band, structure=struct, iterations=width)


def run_comparison(
    initial: LabelField,
    seed_mask: np.ndarray,
    phase: int,
    problem: FlowProblem,
    params: FlowParams,
) -> ComparisonResult:
    """Lockstep multiphase flow vs two-phase flow seeded inside one phase.

    Hypotheses of the comparison theory are enforced: equal anisotropies,
    equal mobilities, zero forcing, and cellwise seed inclusion in the chosen
    phase (for the exterior phase the seed complement must stay off the grid
    rim).  Both legs run through the multiphase stepper so they share one
    discrete energy and one tie-breaking rule.
    """
    grid = initial.grid
    seed_mask = np.asarray(seed_mask, dtype=bool)
    if seed_mask.shape != grid.shape:
        raise FlowConfigError("seed mask shape does not match the grid")
    if not problem.anisotropies.all_equal() or not problem.mobilities.all_equal():
        raise FlowConfigError("comparison mode needs equal anisotropies and mobilities")
    if not problem.forcing.is_zero():
        raise FlowConfigError("comparison mode needs zero forcing")
    if not (1 <= phase <= initial.n_labels):
        raise FlowConfigError("phase index out of range")
    if not np.all(~seed_mask | initial.phase_mask(phase)):
        raise FlowConfigError("seed must be included in the chosen phase")
    exterior_leg = phase == initial.n_labels
    if exterior_leg:
        comp = ~seed_mask
        rim = np.zeros(grid.shape, dtype=bool)
        for a in range(grid.dim):
            sl = [slice(None)] * grid.dim
            sl[a] = 0
            rim[tuple(sl)] = True
            sl[a] = -1
            rim[tuple(sl)] = True
        if np.any(comp & rim):
            raise FlowConfigError("exterior-phase seed complement must be bounded")

    phi = problem.anisotropies[0]
    psi = problem.mobilities[0]
    two_fam_a = NormFamily((phi, phi))
    two_fam_m = NormFamily((psi, psi))
    # two-phase leg: phase 1 is the tracked bounded set
    leg_initial_mask = ~seed_mask if exterior_leg else seed_mask
    leg_labels = np.where(leg_initial_mask, np.int32(1), np.int32(2))
    leg_state = LabelField(grid, leg_labels, 1)
    leg_forcing = Forcing.zero(grid, 2)

    multi_trace = FlowTrace(params=params, initial=initial)
    two_trace = FlowTrace(params=params, initial=leg_state)
    steps: list[ComparisonStep] = []
    state = initial
    n_steps = params.n_steps()

    def tracked_set(leg: LabelField) -> np.ndarray:
        return leg.phase_mask(2) if exterior_leg else leg.phase_mask(1)

    for k in range(1, n_steps + 1):
        sign_min = _sign_condition_min(state, tracked_set(leg_state), phase, psi)
        sp_multi = StepProblem(
            prev=state,
            anisotropies=problem.anisotropies,
            mobilities=problem.mobilities,
            forcing=problem.forcing,
            lam=params.lam,
            gap_tol_factor=params.gap_tol_factor,
            max_iters=params.max_iters,
        )
        state, rep_m = step_multiphase(sp_multi)
        sp_two = StepProblem(
            prev=leg_state,
            anisotropies=two_fam_a,
            mobilities=two_fam_m,
            forcing=leg_forcing,
            lam=params.lam,
            gap_tol_factor=params.gap_tol_factor,
            max_iters=params.max_iters,
        )
        leg_state, rep_t = step_multiphase(sp_two)
        multi_trace.reports.append(rep_m)
        two_trace.reports.append(rep_t)
        multi_trace.displacements.append(_max_displacement(sp_multi, state))
        two_trace.displacements.append(_max_displacement(sp_two, leg_state))

        tracked = tracked_set(leg_state)
        inside = state.phase_mask(phase)
        viol = int(np.sum(tracked & ~inside))
        band = _interface_band([tracked, inside])
        nb = int(band.sum())
        steps.append(
            ComparisonStep(
                k=k,
                violations=viol,
                band_cells=nb,
                violation_fraction=viol / nb if nb else 0.0,
                sign_condition_min=sign_min,
                two_phase_alive=bool(tracked.any()),
                multi_phase_alive=bool(inside.any()),
            )
        )
    return ComparisonResult(phase=phase, multi_trace=multi_trace, two_trace=two_trace, steps=steps)


def _sign_condition_min(
    partition: LabelField, seed_set: np.ndarray, phase: int, psi
) -> float:
    """min over cells and competing phases j of 2e - g_i + g_j (Lemma-style check).

    e is the signed distance to the seed set's boundary, g_i to phase i, g_j
    to phase j, all under the common mobility.  Nonnegative whenever the seed
    is included in phase i, by inclusion monotonicity of the transform.
    """
    grid = partition.grid
    e_f = signed_dist(seed_set, psi, grid)
    if e_f.empty_boundary:
        return float("inf")
    e = e_f.finite_values()
    gi_f = signed_dist(partition.phase_mask(phase), psi, grid)
    gi = gi_f.finite_values() if not gi_f.empty_boundary else None
    best = np.inf
    for j in range(1, partition.n_labels + 1):
        if j == phase:
            continue
        gj_f = signed_dist(partition.phase_mask(j), psi, grid)
        if gj_f.empty_boundary or gi is None:
            continue
        best = min(best, float(np.min(2 * e - gi + gj_f.finite_values())))
    return best
