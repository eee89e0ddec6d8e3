import numpy as np
import pytest

from mmcflow.field import Forcing, Grid, LabelField, ScalarField
from mmcflow.norms import NormFamily, NormSpec
from mmcflow.stepper import StepProblem


def make_norm(kind: str, rng: np.random.Generator, dim: int = 2) -> NormSpec:
    if kind == "euclidean":
        return NormSpec("euclidean", dim)
    if kind == "diagonal-weighted":
        return NormSpec("diagonal-weighted", dim, weights=rng.uniform(0.5, 2.0, dim))
    m = int(rng.integers(2, 4))
    A = rng.uniform(-1.5, 1.5, (m, dim))
    A = np.vstack([A, -A, 0.4 * np.eye(dim), -0.4 * np.eye(dim)])
    return NormSpec("polyhedral", dim, covectors=A)


NORM_KINDS = ("euclidean", "diagonal-weighted", "polyhedral")


def random_norm(rng: np.random.Generator, dim: int = 2) -> NormSpec:
    return make_norm(NORM_KINDS[rng.integers(0, 3)], rng, dim)


def random_problem(
    rng: np.random.Generator,
    shape=(3, 3),
    n_phases: int = 1,
    lam_range=(1.0, 8.0),
    h: float = 1.0,
    forcing_scale: float = 1.0,
) -> StepProblem:
    g = Grid(shape, h)
    lab = rng.integers(1, n_phases + 2, size=shape).astype(np.int32)
    lf = LabelField(g, lab, n_phases)
    anis = NormFamily(tuple(random_norm(rng) for _ in range(n_phases + 1)))
    mobs = NormFamily(tuple(random_norm(rng) for _ in range(n_phases + 1)))
    fields = tuple(
        ScalarField(g, rng.normal(0.0, forcing_scale, shape)) for _ in range(n_phases + 1)
    )
    forcing = Forcing(fields, support_radius=1e9)
    lam = float(rng.uniform(*lam_range))
    return StepProblem(prev=lf, anisotropies=anis, mobilities=mobs, forcing=forcing, lam=lam)


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
