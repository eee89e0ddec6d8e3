import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_norm, random_norm
from mmcflow.norms import (
    NormError,
    NormFamily,
    NormSpec,
    check_multiphase_condition,
    dual_eval,
    eval_norm,
    family_bounds,
    project_dual_2d,
    stencil_dual_set,
    unit_directions,
    wulff_boundary,
)

L1 = NormSpec("polyhedral", 2, covectors=[[1, 1], [1, -1], [-1, 1], [-1, -1]])


def test_eval_examples():
    eu = NormSpec("euclidean", 2)
    assert eval_norm(eu, (3.0, 4.0)) == pytest.approx(5.0, abs=1e-12)
    assert eval_norm(L1, (1.0, -2.0)) == pytest.approx(3.0, abs=1e-12)
    dw = NormSpec("diagonal-weighted", 2, weights=[2.0, 1.0])
    assert eval_norm(dw, (1.0, 1.0)) == pytest.approx(np.sqrt(5.0), abs=1e-12)


def test_dual_examples():
    eu = NormSpec("euclidean", 2)
    assert dual_eval(eu, (0.0, 2.0)) == pytest.approx(2.0, abs=1e-12)
    dw = NormSpec("diagonal-weighted", 2, weights=[2.0, 1.0])
    assert dual_eval(dw, (2.0, 0.0)) == pytest.approx(1.0, abs=1e-12)
    assert dual_eval(L1, (1.0, 1.0)) == pytest.approx(1.0, abs=1e-10)


def test_construction_rejects_malformed():
    with pytest.raises(NormError):
        NormSpec("polyhedral", 2, covectors=[[1, 0], [0, 1]])  # not symmetric
    with pytest.raises(NormError):
        NormSpec("polyhedral", 2, covectors=np.zeros((0, 2)))
    with pytest.raises(NormError):
        NormSpec("polyhedral", 2, covectors=[[1, 0], [-1, 0]])  # does not span
    with pytest.raises(NormError):
        NormSpec("diagonal-weighted", 2, weights=[1.0, -1.0])
    with pytest.raises(NormError):
        NormSpec("euclidean", 4)


def test_norm_properties_bulk(rng):
    """Triangle inequality and homogeneity on 10^6 random pairs per kind."""
    n = 1_000_000
    for kind in ("euclidean", "diagonal-weighted", "polyhedral"):
        norm = make_norm(kind, rng)
        v = rng.normal(0, 1, (n, 2))
        w = rng.normal(0, 1, (n, 2))
        t = rng.normal(0, 2, n)
        fv, fw = eval_norm(norm, v), eval_norm(norm, w)
        fvw = eval_norm(norm, v + w)
        scale = 1.0 + fv + fw
        assert np.all(fvw <= fv + fw + 1e-12 * scale)
        fts = eval_norm(norm, t[:, None] * v)
        assert np.max(np.abs(fts - np.abs(t) * fv) / (1.0 + fts)) < 1e-12
        assert eval_norm(norm, (0.0, 0.0)) == 0.0
        assert np.all(fv[np.any(v != 0, axis=1)] > 0)


def test_self_duality_euclidean(rng):
    eu = NormSpec("euclidean", 2)
    v = rng.normal(0, 3, (1000, 2))
    assert np.max(np.abs(dual_eval(eu, v) - eval_norm(eu, v))) < 1e-10


def test_dual_is_dual_by_sampling(rng):
    """phi°(xi) equals sup over sampled phi-unit vectors of <xi, v>."""
    dirs = unit_directions(2, 16384)
    for kind in ("euclidean", "diagonal-weighted", "polyhedral"):
        norm = make_norm(kind, rng)
        ball = dirs / eval_norm(norm, dirs)[:, None]
        for _ in range(10):
            xi = rng.normal(0, 2, 2)
            lower = float(np.max(ball @ xi))
            val = dual_eval(norm, xi)
            assert lower - 1e-9 <= val <= lower * (1 + 2e-3) + 1e-12


def test_family_bounds_examples():
    eu = NormSpec("euclidean", 2)
    fb = family_bounds(NormFamily((eu, eu)))
    assert fb.kappa == 0.0
    scaled = NormSpec("diagonal-weighted", 2, weights=[1.25, 1.25])
    fb = family_bounds(NormFamily((eu, scaled)))
    assert fb.kappa == pytest.approx(0.25, abs=1e-14)
    fb = family_bounds(NormFamily((eu, L1)), samples=1 << 14)
    assert fb.kappa == pytest.approx(np.sqrt(2) - 1, abs=1e-6)
    assert fb.c_lower == pytest.approx(1.0, abs=1e-6)
    assert fb.c_upper == pytest.approx(np.sqrt(2), abs=1e-9)


def test_family_bounds_monotone_in_sampling(rng):
    fam = NormFamily((random_norm(rng), random_norm(rng), random_norm(rng)))
    prev = family_bounds(fam, samples=64)
    for s in (128, 256, 512, 1024):
        cur = family_bounds(fam, samples=s)
        assert cur.c_lower <= prev.c_lower + 1e-15
        assert cur.c_upper >= prev.c_upper - 1e-15
        prev = cur


def test_family_bounds_monotone_in_sampling_3d(rng):
    fam = NormFamily((make_norm("polyhedral", rng, 3), NormSpec("euclidean", 3)))
    prev = family_bounds(fam, samples=64)
    for s in (128, 256, 512):
        cur = family_bounds(fam, samples=s)
        assert cur.c_lower <= prev.c_lower + 1e-15
        assert cur.c_upper >= prev.c_upper - 1e-15
        prev = cur


def test_kappa_identical_members_exact_zero(rng):
    n = make_norm("polyhedral", rng)
    fb = family_bounds(NormFamily((n, n)))
    assert fb.kappa == 0.0


def test_check_multiphase_condition():
    from mmcflow.norms import FamilyBounds

    ok, margin = check_multiphase_condition(FamilyBounds(1.0, 1.0, 0.0), 3)
    assert ok and margin == pytest.approx(2.0 / 3.0, abs=1e-15)
    ok, margin = check_multiphase_condition(FamilyBounds(1.0, np.sqrt(2), 0.41421), 2)
    assert ok and margin == pytest.approx(0.58579, abs=1e-5)
    ok, margin = check_multiphase_condition(FamilyBounds(1.0, np.sqrt(2), 0.41421), 5)
    assert not ok and margin == pytest.approx(-0.01421, abs=1e-5)


def test_wulff_boundary_examples():
    eu = NormSpec("euclidean", 2)
    pts = wulff_boundary(eu, 4)
    assert np.allclose(pts, [[1, 0], [0, 1], [-1, 0], [0, -1]], atol=1e-12)
    pts = wulff_boundary(L1, 4)
    assert np.allclose(pts, [[1, 0], [0, 1], [-1, 0], [0, -1]], atol=1e-12)
    dw = NormSpec("diagonal-weighted", 2, weights=[2.0, 1.0])
    pts = wulff_boundary(dw, 4)
    assert np.allclose(pts, [[0.5, 0], [0, 1], [-0.5, 0], [0, -1]], atol=1e-12)


def test_wulff_boundary_on_frontier(rng):
    for kind in ("euclidean", "diagonal-weighted", "polyhedral"):
        norm = make_norm(kind, rng)
        pts = wulff_boundary(norm, 64)
        assert np.max(np.abs(eval_norm(norm, pts) - 1.0)) <= 1e-10
        ang = np.arctan2(pts[:, 1], pts[:, 0])
        assert np.all(np.diff(np.unwrap(ang)) > 0)


def test_stencil_dual_set_2d_supports(rng):
    for kind in ("euclidean", "diagonal-weighted", "polyhedral"):
        norm = make_norm(kind, rng)
        ds = stencil_dual_set(norm)
        assert ds.coarea_exact
        for d, b in zip(ds.directions, ds.bounds):
            assert ds.support(d) == pytest.approx(b, abs=1e-12)
            assert ds.support(-d) == pytest.approx(b, abs=1e-12)


def test_project_dual_2d_matches_reference_qp(rng):
    from scipy.optimize import minimize

    for _ in range(8):
        norm = random_norm(rng)
        ds = stencil_dual_set(norm)
        a, b, c = ds.bounds
        pts = rng.normal(0, 2 * max(ds.bounds), (12, 2))
        px, py = project_dual_2d(pts[:, 0].copy(), pts[:, 1].copy(), ds)
        for (x0, y0), x1, y1 in zip(pts, px, py):
            cons = [
                {"type": "ineq", "fun": lambda z, s=s: a - s * z[0]}
                for s in (1, -1)
            ] + [
                {"type": "ineq", "fun": lambda z, s=s: b - s * z[1]}
                for s in (1, -1)
            ] + [
                {"type": "ineq", "fun": lambda z, s=s: c - s * (z[0] + z[1])}
                for s in (1, -1)
            ]
            ref = minimize(
                lambda z: (z[0] - x0) ** 2 + (z[1] - y0) ** 2,
                x0=np.zeros(2),
                constraints=cons,
                method="SLSQP",
                options={"ftol": 1e-14, "maxiter": 200},
            )
            assert (x1 - x0) ** 2 + (y1 - y0) ** 2 <= ref.fun + 1e-8
            # and feasible
            assert abs(x1) <= a + 1e-10 and abs(y1) <= b + 1e-10
            assert abs(x1 + y1) <= c + 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_norm_triangle_hypothesis(seed):
    rng = np.random.default_rng(seed)
    norm = random_norm(rng)
    v = rng.normal(0, 5, 2)
    w = rng.normal(0, 5, 2)
    assert eval_norm(norm, v + w) <= eval_norm(norm, v) + eval_norm(norm, w) + 1e-12
