import math

import numpy as np
import pytest

from conftest import make_norm
from mmcflow import shapes
from mmcflow.diagnostics import (
    DensityBounds,
    SchemeConstants,
    check_submodularity_and_truncation,
    check_volume_distance,
    density_report,
    displacement_scaling,
    eikonal_residual_halfplanes,
    extinction_time,
    holder_fit,
    measured_theta,
    unit_ball_volume,
)
from mmcflow.field import Forcing, Grid, LabelField, convex_hull_mask
from mmcflow.flow import FlowParams, FlowProblem, FlowTrace, run_flow
from mmcflow.norms import FamilyBounds, NormFamily, NormSpec, family_bounds

EU = NormSpec("euclidean", 2)


def test_density_bounds_spot_check():
    """n=2, three equal euclidean phases, kappa=0: gamma = 1/6 exactly."""
    db = DensityBounds.from_inputs(
        n=2, family_size=3, c_phi=1.0, C_phi=1.0, kappa=0.0,
        lambda1=0.0, lambda2=0.0, r0=1.0, p=4.0,
    )
    assert db.gamma_N == pytest.approx(1.0 / 6.0, abs=1e-16)
    assert db.upper_vol_bound == pytest.approx(1 - 0.25**2, abs=1e-15)
    assert db.upper_per_bound == pytest.approx(1.5 * 2 * math.pi, abs=1e-12)
    assert db.r_tilde <= db.r_hat <= 1.0
    c_expected = 2 * math.pi * (2**0.5 - 1) / 2**1.5 * (1 / 6.0)
    assert db.c_sharp == pytest.approx(c_expected, rel=1e-12)


def test_density_bounds_positivity_threshold():
    good = DensityBounds.from_inputs(2, 3, 1.0, 1.0, kappa=0.9, lambda1=1.0, lambda2=0.0, p=4.0)
    assert good.gamma_N > 0 and good.r_tilde > 0
    bad = DensityBounds.from_inputs(2, 3, 1.0, 1.0, kappa=1.1, lambda1=1.0, lambda2=0.0, p=4.0)
    assert bad.gamma_N < 0 and bad.r_tilde == 0.0


def test_scheme_constants_hand_check():
    """n=2, all bounds 1, no forcing: closed formulas evaluated by hand."""
    g = Grid((8, 8), 1.0, origin=(-4.0, -4.0))
    fb = FamilyBounds(1.0, 1.0, 0.0)
    mobs = NormFamily((EU, EU))
    forcing = Forcing.zero(g, 2)
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    sc = SchemeConstants.compute(
        n=2, phi_bounds=fb, psi_bounds=fb, lam=4.0, hull_vertices=verts,
        mobilities=mobs, forcing=forcing, p=4.0, hull_distance=np.full(g.shape, 2.0),
    )
    # C1 = 8 * sqrt(4^3 * 2 / 2) = 8 * 8
    assert sc.C1 == pytest.approx(64.0, abs=1e-12)
    assert sc.C2 == 0.0 and sc.C5 == 0.0  # no forcing
    disc = math.sqrt(64.0**2 + 4 * 2 * 1 * 1)
    assert sc.C3 == pytest.approx(2 * 2 * 1 / (64 + disc), rel=1e-12)
    assert sc.C3_radius_scale == pytest.approx(sc.C3 / 2, rel=1e-12)
    # C4 = 2 pi (2^(1/2)-1)/2^(2.5) * (1/4)
    c4 = 2 * math.pi * (2**0.5 - 1) / 2**2.5 * 0.25
    assert sc.C4 == pytest.approx(c4, rel=1e-12)
    assert sc.C6 == pytest.approx(25 * math.pi / (2 * c4) + 0.5, rel=1e-12)
    # lambda1 = lam * (diam(D) + 2), euclidean diameter of the triangle = sqrt(2)
    assert sc.lambda1 == pytest.approx(4.0 * (math.sqrt(2) + 2.0), rel=1e-12)
    assert sc.lambda2 == 0.0


def test_unit_ball_volumes():
    assert unit_ball_volume(2) == math.pi
    assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)
    with pytest.raises(ValueError):
        unit_ball_volume(4)


def _half_plane_field(n=48):
    g = Grid((n, n), 1.0 / n)
    lab = np.full(g.shape, 2, dtype=np.int32)
    lab[: n // 2, :] = 1
    return LabelField(g, lab, 1)


def test_density_report_half_plane():
    f = _half_plane_field()
    db = DensityBounds.from_inputs(2, 2, 1.0, 1.0, 0.0, 0.0, 0.0, r0=0.2, p=4.0)
    reports = density_report(f, db, radii=[4 / 48, 6 / 48], phases=[1])
    r = reports[0]
    assert not r.window_empty
    assert 0.35 <= r.min_vol_ratio <= r.max_vol_ratio <= 0.65
    assert r.lower_vol_violation_fraction == 0.0
    assert r.upper_vol_violation_fraction == 0.0


def test_density_report_single_cell_flagged():
    g = Grid((9, 9), 1.0)
    lab = np.full(g.shape, 2, dtype=np.int32)
    lab[4, 4] = 1
    f = LabelField(g, lab, 1)
    db = DensityBounds.from_inputs(2, 2, 1.0, 1.0, 0.0, 0.0, 0.0, r0=4.0, p=4.0)
    rep = density_report(f, db, radii=[2.0], phases=[1])[0]
    # one cell inside the 9-cell discrete ball of radius 2h, reported as-is
    # and compared against gamma^n
    assert rep.min_vol_ratio == pytest.approx(1.0 / 9.0, abs=1e-15)
    flagged = rep.min_vol_ratio < db.gamma_N**2
    assert (rep.lower_vol_violation_fraction > 0) == flagged


def test_density_report_empty_phase_window():
    g = Grid((8, 8), 1.0)
    f = LabelField(g, np.full(g.shape, 2, dtype=np.int32), 1)
    db = DensityBounds.from_inputs(2, 2, 1.0, 1.0, 0.0, 0.0, 0.0, r0=4.0, p=4.0)
    rep = density_report(f, db, radii=[2.0], phases=[1])[0]
    assert rep.window_empty


def test_volume_distance_trivial_and_ring():
    n = 32
    g = Grid((n, n), 1.0 / n)
    disk = shapes.disk(g, 1, (0.5, 0.5), 0.3).phase_mask(1)
    theta = measured_theta(disk, g, [2 / n, 3 / n, 4 / n])
    assert theta > 0
    chk = check_volume_distance(disk, disk, g, theta=theta, r0=4 / n, ell=1 / n)
    assert chk.lhs == 0.0 and chk.holds and chk.hypothesis_ok
    from scipy import ndimage

    dil = ndimage.binary_dilation(disk)
    chk = check_volume_distance(disk, dil, g, theta=theta, r0=4 / n, ell=1 / n)
    assert chk.holds


def test_holder_fit_stationary():
    g = Grid((8, 8), 1.0)
    f = LabelField(g, np.full(g.shape, 2, dtype=np.int32), 1)
    params = FlowParams(lam=4.0, horizon=1.0, checkpoint_times=(0.25, 0.5))
    tr = FlowTrace(params=params, initial=f, checkpoints=[(0.25, f), (0.5, f)])
    fit = holder_fit(tr)
    assert fit.stationary


def test_holder_fit_shrinking_disk():
    g = Grid((48, 48), 1.0 / 48)
    init = shapes.disk(g, 1, (0.5, 0.5), 0.3)
    fam = NormFamily((EU, EU))
    prob = FlowProblem(fam, fam, Forcing.zero(g, 2))
    lam = 256.0
    ts = tuple(k / lam for k in range(10))
    tr = run_flow(init, prob, FlowParams(lam=lam, horizon=ts[-1], checkpoint_times=ts))
    fit = holder_fit(tr)
    assert not fit.stationary
    assert fit.exponent >= 0.5  # area map is Lipschitz away from extinction


def test_holder_c6_bound_checked():
    g = Grid((32, 32), 1.0 / 32)
    init = shapes.disk(g, 1, (0.5, 0.5), 0.3)
    fam = NormFamily((EU, EU))
    prob = FlowProblem(fam, fam, Forcing.zero(g, 2))
    lam = 128.0
    ts = tuple(k / lam for k in range(6))
    tr = run_flow(init, prob, FlowParams(lam=lam, horizon=ts[-1], checkpoint_times=ts))
    from mmcflow.field import per_phi

    fit = holder_fit(tr, c6=342.0, per_phi_initial=per_phi(init, fam)[0])
    assert fit.c6_bound_ok


def test_displacement_scaling_regression():
    lams = [64.0, 256.0, 1024.0, 4096.0]
    traces = {}
    g = Grid((4, 4), 1.0)
    f = LabelField(g, np.full(g.shape, 2, dtype=np.int32), 1)
    for lam in lams:
        params = FlowParams(lam=lam, horizon=0.0, checkpoint_times=())
        tr = FlowTrace(params=params, initial=f)
        tr.displacements = [2.0 / math.sqrt(lam), 1.0 / math.sqrt(lam), 0.0]
        traces[lam] = tr
    ds = displacement_scaling(traces, c1=2.5)
    assert ds.slope == pytest.approx(-0.5, abs=1e-12)
    assert all(ds.c1_bound_ok)


def test_extinction_time_examples():
    g = Grid((8, 8), 1.0)
    empty = LabelField(g, np.full(g.shape, 2, dtype=np.int32), 1)
    lab = np.full(g.shape, 2, dtype=np.int32)
    lab[3, 3] = 1
    alive = LabelField(g, lab, 1)
    params = FlowParams(lam=4.0, horizon=1.0, checkpoint_times=(0.0, 0.5))
    tr = FlowTrace(params=params, initial=empty, checkpoints=[(0.0, empty), (0.5, empty)])
    assert extinction_time(tr, 1) == 0.0
    tr2 = FlowTrace(params=params, initial=alive, checkpoints=[(0.0, alive), (0.5, alive)])
    assert extinction_time(tr2, 1) is None
    tr3 = FlowTrace(params=params, initial=alive, checkpoints=[(0.0, alive), (0.5, empty)])
    assert extinction_time(tr3, 1) == 0.5


def test_submodularity_and_truncation(rng):
    g = Grid((12, 12), 1.0)
    disk = shapes.disk(g, 1, (6.0, 6.0), 4.2).phase_mask(1)
    for kind in ("euclidean", "diagonal-weighted", "polyhedral"):
        norm = make_norm(kind, rng)
        E = rng.random(g.shape) < 0.5
        F = rng.random(g.shape) < 0.5
        chk = check_submodularity_and_truncation(E, F, disk, norm, g)
        assert chk.submodular_ok
        assert chk.truncation_ok
        # E = F: equality in submodularity
        chk2 = check_submodularity_and_truncation(E, E, disk, norm, g)
        assert abs(chk2.submodular_slack) <= 1e-12
        # disjoint E, F: equality as well
        E2 = np.zeros(g.shape, dtype=bool)
        E2[1:3, 1:3] = True
        F2 = np.zeros(g.shape, dtype=bool)
        F2[8:10, 8:10] = True
        chk3 = check_submodularity_and_truncation(E2, F2, disk, norm, g)
        assert abs(chk3.submodular_slack) <= 1e-12


def test_eikonal_residual_within_tolerance():
    assert eikonal_residual_halfplanes(Grid((64, 64), 1 / 64)) <= 0.08


def test_confinement_of_shrinking_disk():
    g = Grid((32, 32), 1.0 / 32)
    init = shapes.disk(g, 1, (0.5, 0.5), 0.3)
    fam = NormFamily((EU, EU))
    prob = FlowProblem(fam, fam, Forcing.zero(g, 2))
    lam = 64.0
    ts = tuple(k / lam for k in range(3))
    tr = run_flow(init, prob, FlowParams(lam=lam, horizon=ts[-1], checkpoint_times=ts))
    allowed = convex_hull_mask(init, 2 * g.h)
    for _, f in tr.checkpoints:
        assert not np.any(f.phase_mask(1) & ~allowed)


def test_family_bounds_feed_density_bounds():
    fam = NormFamily((EU, EU, EU))
    fb = family_bounds(fam)
    db = DensityBounds.from_inputs(
        2, 3, fb.c_lower, fb.c_upper, fb.kappa, lambda1=10.0, lambda2=0.0, p=4.0
    )
    assert db.gamma_N == pytest.approx(1 / 6, abs=1e-15)
