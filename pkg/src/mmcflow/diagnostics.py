"""Constant calculators and quantitative checks for computed flows.

Everything here audits, rather than assumes: density ratios, the
volume-distance inequality, Holder fits of the trajectory, displacement
scaling in lambda, extinction times and the two-phase/multiphase inclusion
principle.  Discrete minimizers are almost-minimizers only up to O(h/r)
discretization slack, so ball-based reports carry violation fractions
instead of hard assertions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .disttrans import signed_dist
from .field import Forcing, Grid, LabelField, convex_hull_mask, perimeter_phi, sym_diff_volume
from .flow import ComparisonResult, FlowTrace
from .norms import FamilyBounds, NormFamily, NormSpec, eval_norm


def unit_ball_volume(n: int) -> float:
    if n == 2:
        return math.pi
    if n == 3:
        return 4.0 * math.pi / 3.0
    raise ValueError("only dimensions 2 and 3 are supported")


# -- density-estimate constants ------------------------------------------------


@dataclass(frozen=True)
class DensityBounds:
    """Constants of the uniform density estimates for almost-minimizers.

    ``family_size`` is the number of norms in the family (the partition's
    N+1 when applied to the scheme's minimizers).  The exponents default to
    (alpha1, alpha2) = (1, 1 - 1/p), the pair the scheme produces.
    """

    gamma_N: float
    c_sharp: float
    upper_vol_bound: float
    upper_per_bound: float
    r_hat: float
    r_tilde: float
    family_size: int
    n: int

    @staticmethod
    def from_inputs(
        n: int,
        family_size: int,
        c_phi: float,
        C_phi: float,
        kappa: float,
        lambda1: float,
        lambda2: float,
        r0: float = 1.0,
        p: float | None = None,
        alpha1: float = 1.0,
        alpha2: float | None = None,
    ) -> "DensityBounds":
        if family_size < 2:
            raise ValueError("density estimates need at least two phases")
        if alpha2 is None:
            if p is None:
                raise ValueError("provide either alpha2 or the forcing exponent p")
            alpha2 = 1.0 - 1.0 / p
        wn = unit_ball_volume(n)
        m = family_size - 1

        def beta(alpha: float, lam: float) -> float:
            if lam <= 0:
                return math.inf
            expo = 1.0 / (n * alpha - n + 1.0)
            return (c_phi * n * wn ** (1.0 - alpha) / (2.0 ** (1.0 + alpha) * lam)) ** expo

        b1 = beta(alpha1, lambda1)
        b2 = beta(alpha2, lambda2)
        gamma = (c_phi - m * kappa / 2.0) / (2.0 * c_phi + 2.0 * m * C_phi - m * kappa)
        r_hat = min(r0, b1, b2)
        gap = c_phi / m - kappa / 2.0
        if gap > 0:
            r_tilde = min(
                r0,
                gap ** (1.0 / (n * alpha1 - n + 1.0)) * b1,
                gap ** (1.0 / (n * alpha2 - n + 1.0)) * b2,
            )
        else:
            r_tilde = 0.0
        c_sharp = n * wn * (2.0 ** (1.0 / n) - 1.0) / 2.0 ** (1.0 + 1.0 / n) * gamma ** (n - 1)
        return DensityBounds(
            gamma_N=gamma,
            c_sharp=c_sharp,
            upper_vol_bound=1.0 - (c_phi / (2.0 * (c_phi + C_phi))) ** n,
            upper_per_bound=(C_phi / c_phi + 0.5) * n * wn,
            r_hat=r_hat,
            r_tilde=r_tilde,
            family_size=family_size,
            n=n,
        )


@dataclass(frozen=True)
class SchemeConstants:
    """Closed-form constants of the two-phase scheme theory.

    C3 is the printed constant; it does not satisfy the auxiliary identity
    (2 C_psi x + C1) x = n c_phi / 2 that the density-radius window uses, so
    the consistent root is carried separately as C3_radius_scale and used for
    radius windows r < C3_radius_scale / sqrt(lambda).
    """

    C1: float
    C2: float
    C3: float
    C3_radius_scale: float
    C4: float
    C5: float
    C6: float
    lambda1: float
    lambda2: float
    n: int
    p: float

    @staticmethod
    def compute(
        n: int,
        phi_bounds: FamilyBounds,
        psi_bounds: FamilyBounds,
        lam: float,
        hull_vertices: np.ndarray,
        mobilities: NormFamily,
        forcing: Forcing,
        p: float | None = None,
        hull_distance: np.ndarray | None = None,
    ) -> "SchemeConstants":
        if p is None:
            p = 2.0 * n
        if p <= n:
            raise ValueError("the forcing exponent must satisfy p > n")
        cphi, Cphi = phi_bounds.c_lower, phi_bounds.c_upper
        cpsi, Cpsi = psi_bounds.c_lower, psi_bounds.c_upper
        wn = unit_ball_volume(n)

        C1 = 8.0 * Cpsi * math.sqrt((4.0 * Cphi) ** (n + 1) * n / (2.0 * cpsi * cphi**n))
        grid = forcing.grid
        vol = grid.cell_volume
        if hull_distance is None:
            hull_distance = np.zeros(grid.shape)
        in_D = hull_distance <= 1e-12
        in_D1 = hull_distance <= 1.0 + 1e-12
        H_two = forcing.net(1)  # H_1 - H_{N+1}: the two-phase driving force
        int_H_p = float(np.sum(np.abs(H_two[in_D]) ** p)) * vol
        C2 = (
            (n * cphi) ** (2.0 * p / (n - p))
            * (C1 / (2.0 * Cpsi)) ** 2
            * (int_H_p / wn) ** (2.0 / (p - n))
        )
        disc = math.sqrt(C1 * C1 + 4.0 * n * cphi * Cpsi)
        C3 = 2.0 * n * cphi / (C1 + disc)
        C3_rs = n * cphi / (C1 + disc)
        C4 = n * wn * (2.0 ** (1.0 / n) - 1.0) / 2.0 ** (n + 1.0 / n) * (cphi / (4.0 * Cphi)) ** (
            n - 1
        )
        C5 = max(
            C2,
            C3**2 * (n * cphi / 2.0) ** (2.0 * p / (n - p)) * (int_H_p / wn) ** (2.0 / (p - n)),
        )
        C6 = 5.0**n * wn / (2.0 * C4 * cphi) + 1.0 / (2.0 * cpsi)

        lam1 = 0.0
        for psi in mobilities:
            lam1 = max(lam1, _polytope_diameter(psi, hull_vertices) + 2.0)
        lam1 *= lam
        n_bounded = forcing.n_labels - 1
        lam2 = 0.0
        for j in range(1, n_bounded + 1):
            lam2 = max(lam2, float(np.sum(np.abs(forcing.net(j)[in_D1]) ** p)) * vol)
        lam2 = n_bounded ** (1.0 / p) * lam2 ** (1.0 / p)
        return SchemeConstants(
            C1=C1, C2=C2, C3=C3, C3_radius_scale=C3_rs, C4=C4, C5=C5, C6=C6,
            lambda1=lam1, lambda2=lam2, n=n, p=p,
        )


def _polytope_diameter(psi: NormSpec, vertices: np.ndarray) -> float:
    if len(vertices) == 0:
        return 0.0
    diffs = vertices[:, None, :] - vertices[None, :, :]
    return float(np.max(eval_norm(psi, diffs)))


# -- ball statistics -----------------------------------------------------------


def _ball_kernel(grid: Grid, r: float) -> np.ndarray:
    m = int(math.floor(r / grid.h + 1e-12))
    ax = np.arange(-m, m + 1) * grid.h
    mesh = np.meshgrid(*([ax] * grid.dim), indexing="ij")
    dist2 = sum(c * c for c in mesh)
    return (dist2 < r * r - 1e-12).astype(float)


def _facet_kernels(grid: Grid, r: float) -> list[np.ndarray]:
    """Per axis: kernel over facet offsets (midpoint at offset + h/2 on the axis)."""
    m = int(math.floor(r / grid.h + 2))
    ax = np.arange(-m, m + 1) * grid.h
    kernels = []
    for a in range(grid.dim):
        shifted = [ax + (grid.h / 2 if b == a else 0.0) for b in range(grid.dim)]
        mesh = np.meshgrid(*shifted, indexing="ij")
        dist2 = sum(c * c for c in mesh)
        kernels.append((dist2 < r * r - 1e-12).astype(float))
    return kernels


def boundary_cells(mask: np.ndarray) -> np.ndarray:
    """Cells adjacent to an in-grid facet of the mask (either side)."""
    out = np.zeros(mask.shape, dtype=bool)
    for a in range(mask.ndim):
        lo = [slice(None)] * mask.ndim
        hi = [slice(None)] * mask.ndim
        lo[a] = slice(None, -1)
        hi[a] = slice(1, None)
        f = mask[tuple(lo)] != mask[tuple(hi)]
        out[tuple(lo)] |= f
        out[tuple(hi)] |= f
    return out


def ball_ratios(mask: np.ndarray, grid: Grid, r: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(volume ratio, perimeter ratio, boundary-cell selector) at radius r.

    Volume ratio: fraction of ball cells inside the mask, ratio of discrete
    counts.  Perimeter ratio: euclidean facet count times h^(d-1) over
    r^(d-1), facet midpoints strictly inside the ball.
    """
    kern = _ball_kernel(grid, r)
    counts = ndimage.convolve(mask.astype(float), kern, mode="constant", cval=0.0)
    # cells of the discrete ball that lie inside the grid, per center
    in_ball = ndimage.convolve(np.ones(mask.shape), kern, mode="constant", cval=0.0)
    vol_ratio = counts / in_ball
    per = np.zeros(mask.shape)
    for a, k in enumerate(_facet_kernels(grid, r)):
        lo = [slice(None)] * mask.ndim
        hi = [slice(None)] * mask.ndim
        lo[a] = slice(None, -1)
        hi[a] = slice(1, None)
        fac = np.zeros(mask.shape)
        fac[tuple(lo)] = (mask[tuple(lo)] != mask[tuple(hi)]).astype(float)
        per += ndimage.correlate(fac, k, mode="constant", cval=0.0)
    per_ratio = per * grid.h ** (grid.dim - 1) / r ** (grid.dim - 1)
    return vol_ratio, per_ratio, boundary_cells(mask)


@dataclass
class PhaseDensityReport:
    phase: int
    radii: list[float]
    min_vol_ratio: float
    max_vol_ratio: float
    min_per_ratio: float
    max_per_ratio: float
    lower_vol_violation_fraction: float
    upper_vol_violation_fraction: float
    lower_per_violation_fraction: float
    upper_per_violation_fraction: float
    window_empty: bool
    samples: int


def density_report(
    partition: LabelField,
    bounds: DensityBounds,
    radii,
    phases=None,
) -> list[PhaseDensityReport]:
    """Ball volume/perimeter ratio extremes per phase, checked against bounds.

    Lower bounds are audited for radii <= r_tilde, upper bounds for radii
    <= r_hat; radii below 2h are not resolvable and are dropped.  When no
    admissible radius survives the report says so instead of guessing.
    """
    grid = partition.grid
    n = grid.dim
    out = []
    phases = list(phases) if phases is not None else list(range(1, partition.n_labels + 1))
    for i in phases:
        mask = partition.phase_mask(i)
        if not mask.any() or mask.all():
            out.append(
                PhaseDensityReport(i, [], math.nan, math.nan, math.nan, math.nan,
                                   0.0, 0.0, 0.0, 0.0, True, 0)
            )
            continue
        rs = [float(r) for r in radii if r >= 2 * grid.h - 1e-12]
        rs_lower = [r for r in rs if r <= bounds.r_tilde + 1e-12]
        rs_upper = [r for r in rs if r <= bounds.r_hat + 1e-12]
        stats = {"vmin": [], "vmax": [], "pmin": [], "pmax": []}
        viol = {"lv": 0, "uv": 0, "lp": 0, "up": 0}
        tot = {"lower": 0, "upper": 0}
        for r in rs:
            vr, pr, bc = ball_ratios(mask, grid, r)
            v, p = vr[bc], pr[bc]
            if v.size == 0:
                continue
            stats["vmin"].append(v.min())
            stats["vmax"].append(v.max())
            stats["pmin"].append(p.min())
            stats["pmax"].append(p.max())
            if r in rs_lower:
                tot["lower"] += v.size
                viol["lv"] += int(np.sum(v < bounds.gamma_N**n))
                viol["lp"] += int(np.sum(p < bounds.c_sharp))
            if r in rs_upper:
                tot["upper"] += v.size
                viol["uv"] += int(np.sum(v > bounds.upper_vol_bound))
                viol["up"] += int(np.sum(p > bounds.upper_per_bound))
        samples = tot["lower"] + tot["upper"]
        out.append(
            PhaseDensityReport(
                phase=i,
                radii=rs,
                min_vol_ratio=float(min(stats["vmin"])) if stats["vmin"] else math.nan,
                max_vol_ratio=float(max(stats["vmax"])) if stats["vmax"] else math.nan,
                min_per_ratio=float(min(stats["pmin"])) if stats["pmin"] else math.nan,
                max_per_ratio=float(max(stats["pmax"])) if stats["pmax"] else math.nan,
                lower_vol_violation_fraction=viol["lv"] / tot["lower"] if tot["lower"] else 0.0,
                upper_vol_violation_fraction=viol["uv"] / tot["upper"] if tot["upper"] else 0.0,
                lower_per_violation_fraction=viol["lp"] / tot["lower"] if tot["lower"] else 0.0,
                upper_per_violation_fraction=viol["up"] / tot["upper"] if tot["upper"] else 0.0,
                window_empty=(not rs_lower) and (not rs_upper),
                samples=samples,
            )
        )
    return out


def measured_theta(mask: np.ndarray, grid: Grid, radii) -> float:
    """Worst perimeter density ratio over boundary cells; the theta of the
    volume-distance comparison."""
    theta = math.inf
    for r in radii:
        if r < 2 * grid.h - 1e-12:
            continue
        _, pr, bc = ball_ratios(mask, grid, r)
        if bc.any():
            theta = min(theta, float(pr[bc].min()))
    return theta


@dataclass
class VolumeDistanceCheck:
    lhs: float
    rhs: float
    holds: bool
    hypothesis_ok: bool
    theta: float
    ell: float


def check_volume_distance(
    a: np.ndarray,
    b: np.ndarray,
    grid: Grid,
    theta: float,
    r0: float,
    ell: float,
    check_radii=None,
) -> VolumeDistanceCheck:
    """|a delta b| <= (5^n w_n / theta) max(1, (l/r0)^(n-1)) P(a) l
                      + (1/l) integral_{a delta b} dist(., boundary a).

    The perimeter density hypothesis theta r^(n-1) <= P(a, B_r) is verified
    first on the supplied radii and reported, never assumed.
    """
    n = grid.dim
    wn = unit_ball_volume(n)
    if check_radii is None:
        check_radii = [r for r in (2 * grid.h, 4 * grid.h, r0) if 2 * grid.h <= r <= r0 + 1e-12]
    measured = measured_theta(a, grid, check_radii)
    hypothesis_ok = measured >= theta - 1e-12
    sym = a != b
    lhs = float(np.sum(sym)) * grid.cell_volume
    per_a = float(np.sum(boundary_facet_count(a))) * grid.h ** (n - 1)
    eu = NormSpec("euclidean", n)
    sd = signed_dist(a, eu, grid)
    if sd.empty_boundary:
        integral = math.inf if sym.any() else 0.0
    else:
        integral = float(np.sum(sd.magnitudes()[sym])) * grid.cell_volume
    rhs = (5.0**n * wn / theta) * max(1.0, (ell / r0) ** (n - 1)) * per_a * ell + integral / ell
    return VolumeDistanceCheck(
        lhs=lhs, rhs=rhs, holds=lhs <= rhs + 1e-12, hypothesis_ok=hypothesis_ok,
        theta=theta, ell=ell,
    )


def boundary_facet_count(mask: np.ndarray) -> np.ndarray:
    """Facet count per cell (facets owned by the lower cell), euclidean perimeter."""
    out = np.zeros(mask.shape)
    for a in range(mask.ndim):
        lo = [slice(None)] * mask.ndim
        hi = [slice(None)] * mask.ndim
        lo[a] = slice(None, -1)
        hi[a] = slice(1, None)
        out[tuple(lo)] += (mask[tuple(lo)] != mask[tuple(hi)]).astype(float)
    return out


# -- trajectory checks -----------------------------------------------------------


@dataclass
class HolderFit:
    exponent: float
    constant: float
    n_pairs: int
    stationary: bool
    c6_bound_ok: bool | None = None
    c6_worst_ratio: float | None = None


def holder_fit(
    trace: FlowTrace,
    c6: float | None = None,
    per_phi_initial: float | None = None,
    max_dt: float = 1.0,
) -> HolderFit:
    """Log-log fit of |M(t) delta M(t')| against |t - t'| over checkpoint pairs.

    Pairs need both times positive, |t - t'| < max_dt, and may not straddle
    extinction of all bounded phases.  When c6 and Per_Phi of the initial
    datum are supplied, the explicit bound c6 * Per * |t-t'|^(1/2) is checked
    pairwise as well.
    """
    pts = [(t, f) for t, f in trace.checkpoints if t > 0]
    alive = [bool(np.any(f.labels < f.n_labels)) for _, f in pts]
    dists, dts = [], []
    c6_ok, c6_worst = True, 0.0
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            dt = abs(pts[j][0] - pts[i][0])
            if dt <= 0 or dt >= max_dt:
                continue
            if alive[i] != alive[j]:
                continue  # straddles extinction
            d, _ = sym_diff_volume(pts[i][1], pts[j][1])
            if c6 is not None and per_phi_initial is not None:
                bound = c6 * per_phi_initial * math.sqrt(dt)
                c6_worst = max(c6_worst, d / bound if bound > 0 else math.inf)
                c6_ok &= d <= bound + 1e-12
            if d > 0:
                dists.append(d)
                dts.append(dt)
    if len(dists) < 2:
        return HolderFit(
            exponent=math.nan, constant=math.nan, n_pairs=len(dists), stationary=True,
            c6_bound_ok=c6_ok if c6 is not None else None,
            c6_worst_ratio=c6_worst if c6 is not None else None,
        )
    slope, intercept = np.polyfit(np.log(dts), np.log(dists), 1)
    return HolderFit(
        exponent=float(slope),
        constant=float(math.exp(intercept)),
        n_pairs=len(dists),
        stationary=False,
        c6_bound_ok=c6_ok if c6 is not None else None,
        c6_worst_ratio=c6_worst if c6 is not None else None,
    )


@dataclass
class DisplacementScaling:
    slope: float
    lambdas: list[float]
    maxima: list[float]
    c1_bound_ok: list[bool] | None


def displacement_scaling(
    traces: dict[float, FlowTrace], c1: float | None = None, c2: float | None = None
) -> DisplacementScaling:
    """Regress log(max per-step mobility displacement) against log(lambda).

    Identity steps contribute no displacement and are excluded; traces whose
    steps all were identities are dropped from the regression and reported
    with maximum 0.
    """
    lams, maxima = [], []
    for lam in sorted(traces):
        if c2 is not None and lam <= c2:
            continue
        d = [x for x in traces[lam].displacements if x > 0]
        lams.append(lam)
        maxima.append(max(d) if d else 0.0)
    pos = [(l, m) for l, m in zip(lams, maxima) if m > 0]
    if len(pos) < 2:
        slope = math.nan
    else:
        slope = float(np.polyfit(np.log([p[0] for p in pos]), np.log([p[1] for p in pos]), 1)[0])
    c1_ok = None
    if c1 is not None:
        c1_ok = [m <= c1 / math.sqrt(l) + 1e-12 for l, m in zip(lams, maxima)]
    return DisplacementScaling(slope=slope, lambdas=lams, maxima=maxima, c1_bound_ok=c1_ok)


def extinction_time(trace: FlowTrace, phase: int) -> float | None:
    """First checkpoint time at which the phase is empty; None if it survives."""
    for t, f in sorted(trace.checkpoints, key=lambda p: p[0]):
        if not f.phase_mask(phase).any():
            return t
    return None


@dataclass
class InclusionSeries:
    fractions: list[float]
    max_fraction: float
    sign_condition_min: float
    persistence_violations: int  # steps with the two-phase set alive but the phase dead


def check_inclusion_series(comp: ComparisonResult) -> InclusionSeries:
    """Aggregate the per-step inclusion violations of a paired comparison run."""
    fr = [s.violation_fraction for s in comp.steps]
    sign_min = min((s.sign_condition_min for s in comp.steps), default=math.inf)
    persist = sum(1 for s in comp.steps if s.two_phase_alive and not s.multi_phase_alive)
    return InclusionSeries(
        fractions=fr,
        max_fraction=max(fr, default=0.0),
        sign_condition_min=sign_min,
        persistence_violations=persist,
    )


@dataclass
class SubmodularityCheck:
    submodular_ok: bool
    submodular_slack: float
    truncation_ok: bool
    truncation_slack: float
    truncation_allowance: float


def check_submodularity_and_truncation(
    E: np.ndarray,
    F: np.ndarray,
    convex_mask: np.ndarray,
    norm: NormSpec,
    grid: Grid,
    c_upper: float | None = None,
) -> SubmodularityCheck:
    """P(E ∩ F) + P(E ∪ F) <= P(E) + P(F), and hull truncation with O(h) slack.

    The truncation inequality P(E ∩ C) <= P(E) holds exactly in the
    continuum for convex C; a staircased convex mask can violate it by O(h)
    per hull facet, so the check carries the documented allowance
    4 * C_phi * h * (hull facet count).
    """
    pe = perimeter_phi(E.astype(float), norm, grid)
    pf = perimeter_phi(F.astype(float), norm, grid)
    pi = perimeter_phi((E & F).astype(float), norm, grid)
    pu = perimeter_phi((E | F).astype(float), norm, grid)
    sub_slack = pi + pu - pe - pf
    trunc = perimeter_phi((E & convex_mask).astype(float), norm, grid)
    if c_upper is None:
        from .norms import unit_directions

        c_upper = float(np.max(eval_norm(norm, unit_directions(grid.dim, 256))))
    facets = float(np.sum(boundary_facet_count(convex_mask)))
    allowance = 4.0 * c_upper * grid.h * facets
    return SubmodularityCheck(
        submodular_ok=sub_slack <= 1e-9,
        submodular_slack=float(sub_slack),
        truncation_ok=trunc <= pe + allowance + 1e-9,
        truncation_slack=float(trunc - pe),
        truncation_allowance=allowance,
    )


def _cut_locus_cells(vals: np.ndarray, h: float, kink_tol: float = 0.03) -> np.ndarray:
    """Cells at or next to ridges of the distance field (discrete cut locus).

    The transform returns distances to the discrete facet-midpoint set, a
    union of exact psi-cones glued along the Voronoi diagram of the seeds;
    the eikonal residual is only meaningful off that ridge set.  Ridges are
    detected as large second differences.
    """
    flag = np.zeros(vals.shape, dtype=bool)
    for a in range(vals.ndim):
        second = np.zeros(vals.shape)
        lo = [slice(None)] * vals.ndim
        mid = [slice(None)] * vals.ndim
        hi = [slice(None)] * vals.ndim
        lo[a] = slice(None, -2)
        mid[a] = slice(1, -1)
        hi[a] = slice(2, None)
        second[tuple(mid)] = vals[tuple(hi)] - 2 * vals[tuple(mid)] + vals[tuple(lo)]
        flag |= np.abs(second) > kink_tol * h
    # a forward difference touches the kink from one cell behind as well
    grown = flag.copy()
    for a in range(vals.ndim):
        sl_lo = [slice(None)] * vals.ndim
        sl_hi = [slice(None)] * vals.ndim
        sl_lo[a] = slice(None, -1)
        sl_hi[a] = slice(1, None)
        grown[tuple(sl_lo)] |= flag[tuple(sl_hi)]
        grown[tuple(sl_hi)] |= flag[tuple(sl_lo)]
    return grown


def eikonal_residual_halfplanes(
    grid: Grid,
    mobility: NormSpec | None = None,
    normals=((1, 0), (0, 1), (1, 1), (1, 2), (2, 1)),
    depth_cells: int = 7,
) -> float:
    """Worst |phi°(grad sdist) - 1| on half-plane masks, off boundary/cut locus.

    Half-planes with rational-slope normals have periodic facet staircases;
    away from the seed Voronoi ridges the transform is a union of exact
    psi-cones, so the surviving residual is the angular stencil error (<= 3%
    measured, <= 0.08 documented, for the 2D 16-neighborhood with euclidean
    mobility).
    """
    from .norms import dual_eval

    if mobility is None:
        mobility = NormSpec("euclidean", grid.dim)
    worst = 0.0
    c = np.asarray(grid.shape) * grid.h / 2.0
    centers = grid.centers()
    for nrm in normals:
        v = np.zeros(grid.dim)
        v[: len(nrm)] = nrm
        v = v / np.linalg.norm(v)
        mask = np.tensordot(centers - c, v, axes=([-1], [0])) < 0
        sd = signed_dist(mask, mobility, grid)
        if sd.empty_boundary:
            continue
        vals = sd.finite_values()
        grads = []
        for a in range(grid.dim):
            d = np.diff(vals, axis=a) / grid.h
            sl = [slice(None, -1)] * grid.dim
            sl[a] = slice(None)
            grads.append(d[tuple(sl)])
        gvec = np.stack(grads, axis=-1)
        dual = dual_eval(mobility, gvec)
        base = (slice(None, -1),) * grid.dim
        core = np.abs(vals[base]) > depth_cells * grid.h
        core &= ~_cut_locus_cells(vals, grid.h)[base]
        # stay away from the box rim where the stencil cone is clipped
        margin = 3
        sl = tuple(slice(margin, -margin) for _ in range(grid.dim))
        sel = np.zeros_like(core)
        sel[sl] = True
        core &= sel
        if core.any():
            worst = max(worst, float(np.max(np.abs(dual[core] - 1.0))))
    return worst


# -- whole-trace invariants -------------------------------------------------------


@dataclass
class TraceAudit:
    monotone_ok: bool
    worst_monotone_slack: float
    dissipation_sum: float
    dissipation_bound: float
    dissipation_ok: bool
    confinement_ok: bool
    confinement_violations: int


def audit_trace(
    trace: FlowTrace,
    anisotropies: NormFamily,
    forcing: Forcing,
    initial_per_phi: float,
) -> TraceAudit:
    """Monotonicity, dissipation summability, and confinement, per trace.

    Monotonicity: Per_Phi + force is non-increasing over accepted steps,
    exactly.  Summability: lambda * sum_k dissipation(k) is bounded by the
    telescoped energy drop (exact) and hence by mu_0-style bounds.
    Confinement: bounded phases stay in the hull mask dilated by 2h (plus
    B_R under forcing).
    """
    reps = trace.reports
    worst = 0.0
    prev_energy = None
    diss_sum = 0.0
    for r in reps:
        if not r.accepted:
            continue
        e = r.energy_perimeter + r.energy_force
        if prev_energy is not None:
            worst = max(worst, e - prev_energy)
        prev_energy = e
        diss_sum += r.lam * r.energy_dissipation
    # telescoping dar_monoton: lambda * sum_k sigma(k) <= [Per+force](initial)
    # - [Per+force](final) <= Per_Phi(initial) + 2 ||H||_L1  (the mu_0 bound)
    bound = initial_per_phi + 2.0 * _forcing_l1(forcing)
    r = forcing.support_radius if not forcing.is_zero() else None
    allowed = convex_hull_mask(trace.initial, 2 * trace.initial.grid.h, forcing_radius=r)
    violations = 0
    for _, f in trace.checkpoints:
        bounded = f.labels < f.n_labels
        violations += int(np.sum(bounded & ~allowed))
    return TraceAudit(
        monotone_ok=worst <= 1e-9,
        worst_monotone_slack=worst,
        dissipation_sum=diss_sum,
        dissipation_bound=bound,
        dissipation_ok=diss_sum <= bound + 1e-9,
        confinement_ok=violations == 0,
        confinement_violations=violations,
    )


def _forcing_l1(forcing: Forcing) -> float:
    vol = forcing.grid.cell_volume
    tot = 0.0
    for j in range(1, forcing.n_labels):
        tot += float(np.sum(np.abs(forcing.net(j)))) * vol
    return tot
