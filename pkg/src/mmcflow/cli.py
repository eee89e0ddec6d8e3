"""Configuration parsing, validation, and run orchestration.

One YAML configuration file describes a run; subcommands execute it:

    mmcflow step     --config cfg.yaml --out dir     one minimizing-movement step
    mmcflow flow     --config cfg.yaml --out dir     full flow per lambda
    mmcflow gmm      --config cfg.yaml --out dir     lambda sweep + Cauchy matrix
    mmcflow compare  --config cfg.yaml --out dir     paired multiphase/two-phase run
    mmcflow diagnose --config cfg.yaml --trace dir   checks on a stored trace
    mmcflow verify   --config cfg.yaml               built-in property suites

Exit codes: 0 all checks pass, 1 audit findings only, 2 validation or check
failure, 3 a solver failed to reach its duality-gap tolerance (results are
still written).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import diagnostics as diag
from . import io as mio
from . import shapes
from .disttrans import dissipation, signed_dist
from .field import FieldError, Forcing, Grid, LabelField, ScalarField, per_phi, perimeter_phi
from .flow import FlowParams, FlowProblem, extract_gmm, run_comparison, run_flow
from .norms import (
    NormError,
    NormFamily,
    NormSpec,
    check_multiphase_condition,
    dual_eval,
    family_bounds,
)
from .stepper import StepProblem, oracle_minimize, step_auto, step_energy


class ConfigError(ValueError):
    pass


def _norm_from_dict(d: dict, dim: int) -> NormSpec:
    kind = d.get("kind")
    if kind == "euclidean":
        return NormSpec("euclidean", dim, label=d.get("label", ""))
    if kind == "diagonal-weighted":
        return NormSpec("diagonal-weighted", dim, weights=np.asarray(d["weights"], float),
                        label=d.get("label", ""))
    if kind == "polyhedral":
        return NormSpec("polyhedral", dim, covectors=np.asarray(d["covectors"], float),
                        label=d.get("label", ""))
    raise ConfigError(f"unknown norm kind {kind!r}")


@dataclass
class RunConfig:
    raw: dict
    grid: Grid
    n_phases: int
    anisotropies: NormFamily
    mobilities: NormFamily
    forcing: Forcing
    initial: LabelField
    lambdas: list[float]
    horizon: float
    checkpoint_times: list[float]
    gap_tol_factor: float
    max_iters: int
    gmm_threshold: float
    comparison: dict | None
    out_dir: Path
    seed: int

    @property
    def hash(self) -> str:
        return mio.config_hash(self.raw)

    def flow_problem(self) -> FlowProblem:
        return FlowProblem(self.anisotropies, self.mobilities, self.forcing)

    def flow_params(self, lam: float) -> FlowParams:
        return FlowParams(
            lam=lam,
            horizon=self.horizon,
            checkpoint_times=tuple(self.checkpoint_times),
            gap_tol_factor=self.gap_tol_factor,
            max_iters=self.max_iters,
        )


def _build_forcing(spec: dict | None, grid: Grid, n_labels: int) -> Forcing:
    if not spec or spec.get("type") in (None, "none"):
        return Forcing.zero(grid, n_labels)
    kind = spec["type"]
    if kind == "constant":
        vals = spec["values"]
        if len(vals) != n_labels:
            raise ConfigError("constant forcing needs one value per phase")
        fields = tuple(ScalarField(grid, np.full(grid.shape, float(v))) for v in vals)
        return Forcing(fields, support_radius=float(spec.get("radius", 0.0)))
    if kind == "radial":
        amps = spec["amplitudes"]
        R = float(spec["radius"])
        if len(amps) != n_labels:
            raise ConfigError("radial forcing needs one amplitude per phase")
        r = np.linalg.norm(grid.centers(), axis=-1)
        bump = np.maximum(0.0, 1.0 - r / R)
        fields = tuple(ScalarField(grid, float(a) * bump) for a in amps)
        return Forcing(fields, support_radius=R)
    if kind == "file":
        fields = tuple(mio.read_scalar_field(p, origin=grid.origin) for p in spec["paths"])
        return Forcing(fields, support_radius=float(spec.get("radius", 0.0)))
    raise ConfigError(f"unknown forcing type {kind!r}")


def load_config(path: Path | str, out_override: str | None = None) -> RunConfig:
    raw = yaml.safe_load(Path(path).read_text())
    try:
        gspec = raw["grid"]
        grid = Grid(tuple(gspec["shape"]), float(gspec["h"]), tuple(gspec.get("origin", [])) or None)
        n_phases = int(raw["phases"])
        n_labels = n_phases + 1
        anis = NormFamily(tuple(_norm_from_dict(d, grid.dim) for d in raw["anisotropies"]))
        mobs = NormFamily(tuple(_norm_from_dict(d, grid.dim) for d in raw["mobilities"]))
        if len(anis) != n_labels or len(mobs) != n_labels:
            raise ConfigError("norm families must have N+1 entries")
        forcing = _build_forcing(raw.get("forcing"), grid, n_labels)
        ispec = raw["initial"]
        if ispec.get("type") == "file":
            initial = mio.read_label_field(ispec["path"], origin=grid.origin)
            if initial.grid != grid or initial.n_phases != n_phases:
                raise ConfigError("initial field file does not match the configured grid")
        else:
            initial = shapes.make_shape(grid, n_phases, ispec, norms=anis)
        fspec = raw.get("flow", {})
        lambdas = [float(x) for x in fspec.get("lambdas", [1.0])]
        if lambdas != sorted(lambdas) or len(set(lambdas)) != len(lambdas):
            raise ConfigError("lambdas must be strictly increasing")
        if any(l < 1 for l in lambdas):
            raise ConfigError("lambda must be >= 1")
        horizon = float(fspec.get("horizon", 0.0))
        cps = fspec.get("checkpoints", "every-step")
        if cps == "every-step":
            lam_max = max(lambdas)
            ks = int(np.floor(lam_max * horizon + 1e-12))
            times = [k / lam_max for k in range(0, ks + 1)]
        else:
            times = [float(t) for t in cps]
        solver = raw.get("solver", {})
        # multiphase admissibility (kappa gap) checked when N >= 2
        if n_phases >= 2:
            fb = family_bounds(anis)
            ok, margin = check_multiphase_condition(fb, n_phases)
            if not ok:
                raise ConfigError(
                    f"anisotropy family violates the multiphase gap condition "
                    f"(margin {margin:.6g})"
                )
        comparison = raw.get("comparison")
        if comparison is not None:
            if not anis.all_equal() or not mobs.all_equal():
                raise ConfigError("comparison mode needs equal anisotropies and mobilities")
            if not forcing.is_zero():
                raise ConfigError("comparison mode needs zero forcing")
        return RunConfig(
            raw=raw,
            grid=grid,
            n_phases=n_phases,
            anisotropies=anis,
            mobilities=mobs,
            forcing=forcing,
            initial=initial,
            lambdas=lambdas,
            horizon=horizon,
            checkpoint_times=times,
            gap_tol_factor=float(solver.get("gap_tol_factor", 1e-7)),
            max_iters=int(solver.get("max_iters", 20000)),
            gmm_threshold=float(raw.get("gmm", {}).get("threshold", 1e-2)),
            comparison=comparison,
            out_dir=Path(out_override or raw.get("output", "out")),
            seed=int(raw.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _write_run_stamp(cfg: RunConfig) -> None:
    stamp = {"config_hash": cfg.hash, "config": cfg.raw}
    mio.atomic_write_text(cfg.out_dir / "run.json", json.dumps(stamp, indent=2, default=str))


def _exit_code_for(reports) -> int:
    return 3 if any(not r.converged for r in reports) else 0


def cmd_step(cfg: RunConfig) -> int:
    problem = StepProblem(
        prev=cfg.initial,
        anisotropies=cfg.anisotropies,
        mobilities=cfg.mobilities,
        forcing=cfg.forcing,
        lam=cfg.lambdas[0],
        gap_tol_factor=cfg.gap_tol_factor,
        max_iters=cfg.max_iters,
    )
    out, rep = step_auto(problem)
    _write_run_stamp(cfg)
    mio.write_label_field(cfg.out_dir / "step.mmlf", out)
    lines = ["field,value"]
    for k in ("energy_perimeter", "energy_force", "energy_dissipation", "total",
              "iterations", "duality_gap", "repaired", "accepted", "converged"):
        lines.append(f"{k},{getattr(rep, k)!r}")
    mio.atomic_write_text(cfg.out_dir / "step_report.csv", "\n".join(lines) + "\n")
    if cfg.raw.get("solver", {}).get("oracle"):
        _, exact = oracle_minimize(problem)
        print(f"oracle minimum energy: {exact!r}")
        print(f"solver energy:         {rep.total!r}")
    return _exit_code_for([rep])


def _run_one_lambda(args):
    initial, problem, params = args
    return run_flow(initial, problem, params)


def cmd_flow(cfg: RunConfig, threads: int = 1) -> int:
    _write_run_stamp(cfg)
    jobs = [(cfg.initial, cfg.flow_problem(), cfg.flow_params(lam)) for lam in cfg.lambdas]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            traces = list(ex.map(_run_one_lambda, jobs))
    else:
        traces = [_run_one_lambda(j) for j in jobs]
    for trace in traces:
        mio.write_trace(cfg.out_dir, trace)
    return _exit_code_for([r for t in traces for r in t.reports])


def cmd_gmm(cfg: RunConfig, threads: int = 1) -> int:
    if len(cfg.lambdas) < 1:
        raise ConfigError("gmm mode needs at least one lambda")
    _write_run_stamp(cfg)
    res = extract_gmm(
        cfg.initial,
        cfg.flow_problem(),
        cfg.lambdas,
        cfg.checkpoint_times,
        horizon=cfg.horizon,
        threshold=cfg.gmm_threshold,
        gap_tol_factor=cfg.gap_tol_factor,
        max_iters=cfg.max_iters,
    )
    for trace in res.traces:
        mio.write_trace(cfg.out_dir, trace)
    lines = ["lambda_i,lambda_j,t,distance"]
    L = len(res.lambdas)
    for i in range(L):
        for j in range(i + 1, L):
            for kt, t in enumerate(res.checkpoint_times):
                lines.append(
                    f"{res.lambdas[i]:g},{res.lambdas[j]:g},{t!r},{res.cauchy[i, j, kt]!r}"
                )
    mio.atomic_write_text(cfg.out_dir / "cauchy.csv", "\n".join(lines) + "\n")
    print(f"gmm candidate converged: {res.converged} (threshold {res.threshold:g})")
    reports = [r for t in res.traces for r in t.reports]
    return _exit_code_for(reports)


def cmd_compare(cfg: RunConfig) -> int:
    if cfg.comparison is None:
        raise ConfigError("compare mode needs a comparison section")
    phase = int(cfg.comparison["phase"])
    seed_spec = dict(cfg.comparison["seed"])
    seed_field = shapes.make_shape(cfg.grid, cfg.n_phases, seed_spec, norms=cfg.anisotropies)
    seed_mask = seed_field.phase_mask(seed_spec.get("phase", 1))
    _write_run_stamp(cfg)
    res = run_comparison(
        cfg.initial, seed_mask, phase, cfg.flow_problem(), cfg.flow_params(cfg.lambdas[0])
    )
    mio.write_trace(cfg.out_dir / "multi", res.multi_trace)
    mio.write_trace(cfg.out_dir / "two", res.two_trace)
    lines = ["k,violations,band_cells,fraction,sign_condition_min"]
    for s in res.steps:
        lines.append(
            f"{s.k},{s.violations},{s.band_cells},{s.violation_fraction!r},"
            f"{s.sign_condition_min!r}"
        )
    mio.atomic_write_text(cfg.out_dir / "inclusion.csv", "\n".join(lines) + "\n")
    print(f"max violation fraction: {res.max_violation_fraction():.6f}")
    reports = res.multi_trace.reports + res.two_trace.reports
    return _exit_code_for(reports)


def cmd_diagnose(cfg: RunConfig, trace_dir: Path) -> int:
    trace_dir = Path(trace_dir)
    cps = mio.read_trace_checkpoints(trace_dir, origin=cfg.grid.origin)
    if not cps:
        print(f"no checkpoints found under {trace_dir}", file=sys.stderr)
        return 2
    lines = []
    ok = True
    # confinement of every checkpoint against the initial hull
    from .field import convex_hull_mask

    r = cfg.forcing.support_radius if not cfg.forcing.is_zero() else None
    allowed = convex_hull_mask(cfg.initial, 2 * cfg.grid.h, forcing_radius=r)
    viol = 0
    for _, f in cps:
        viol += int(np.sum((f.labels < f.n_labels) & ~allowed))
    lines.append(f"confinement: {'PASS' if viol == 0 else 'FAIL'} ({viol} cells outside)")
    ok &= viol == 0
    # monotonicity from series.csv when present
    series = trace_dir / "series.csv"
    if series.exists():
        rows = series.read_text().strip().splitlines()[1:]
        vals = [tuple(map(float, row.split(",")[1:4])) for row in rows]
        accepted = [row.split(",")[5] == "1" for row in rows]
        energies = [p + f for (p, f, _), a in zip(vals, accepted) if a]
        mono = all(b <= a + 1e-9 for a, b in zip(energies, energies[1:]))
        lines.append(f"monotonicity: {'PASS' if mono else 'FAIL'} ({len(energies)} accepted steps)")
        ok &= mono
    # Holder fit over checkpoints
    from .flow import FlowTrace

    tr = FlowTrace(params=cfg.flow_params(cfg.lambdas[0]), initial=cfg.initial, checkpoints=cps)
    fit = diag.holder_fit(tr)
    if fit.stationary:
        lines.append("holder: AUDIT stationary/too-few pairs")
    else:
        lines.append(f"holder: exponent {fit.exponent:.4f} over {fit.n_pairs} pairs")
    report = "\n".join(lines) + "\n"
    mio.atomic_write_text(cfg.out_dir / "diagnose.txt", report)
    print(report, end="")
    return 0 if ok else 2


def _verify_suites(cfg: RunConfig) -> tuple[list[str], int]:
    from .norms import eval_norm

    rng = np.random.default_rng(cfg.seed)
    lines: list[str] = []
    hard_fail = False
    audit = False
    vcfg = cfg.raw.get("verify", {})

    def norm_kinds(dim):
        yield NormSpec("euclidean", dim)
        yield NormSpec("diagonal-weighted", dim, weights=rng.uniform(0.5, 2.0, dim))
        m = 3
        A = rng.uniform(-1.5, 1.5, (m, dim))
        A = np.vstack([A, -A, 0.4 * np.eye(dim), -0.4 * np.eye(dim)])
        yield NormSpec("polyhedral", dim, covectors=A)

    # oracle equivalence (two-phase exactness)
    trials = int(vcfg.get("oracle_trials", 40))
    fails = 0
    for t in range(trials):
        shape = (3, 3) if t % 2 == 0 else (4, 4)
        g = Grid(shape, 1.0)
        lab = rng.integers(1, 3, size=shape).astype(np.int32)
        prev = LabelField(g, lab, 1)
        kinds = list(norm_kinds(2))
        anis = NormFamily((kinds[t % 3], kinds[(t + 1) % 3]))
        mobs = NormFamily((kinds[(t + 2) % 3], kinds[t % 3]))
        fields = tuple(ScalarField(g, rng.normal(0, 1, shape)) for _ in range(2))
        forcing = Forcing(fields, support_radius=1e9)
        sp = StepProblem(prev=prev, anisotropies=anis, mobilities=mobs, forcing=forcing,
                         lam=float(rng.uniform(1, 6)))
        _, rep = step_auto(sp)
        _, exact = oracle_minimize(sp)
        if abs(rep.total - exact) > 1e-6:
            fails += 1
    lines.append(f"oracle-equivalence: {'PASS' if fails == 0 else 'FAIL'} ({trials - fails}/{trials})")
    hard_fail |= fails > 0

    # submodularity
    trials = int(vcfg.get("submodularity_trials", 300))
    g = Grid((8, 8), 1.0)
    bad = 0
    for norm in norm_kinds(2):
        for _ in range(trials):
            E = rng.random(g.shape) < rng.uniform(0.2, 0.8)
            F = rng.random(g.shape) < rng.uniform(0.2, 0.8)
            pe = perimeter_phi(E.astype(float), norm, g)
            pf = perimeter_phi(F.astype(float), norm, g)
            pi = perimeter_phi((E & F).astype(float), norm, g)
            pu = perimeter_phi((E | F).astype(float), norm, g)
            if pi + pu > pe + pf + 1e-9:
                bad += 1
    lines.append(f"submodularity: {'PASS' if bad == 0 else 'FAIL'} ({bad} violations)")
    hard_fail |= bad > 0

    # distance monotonicity + antisymmetry
    trials = int(vcfg.get("monotonicity_trials", 200))
    g = Grid((16, 16), 1.0)
    bad = 0
    for t in range(trials):
        norm = list(norm_kinds(2))[t % 3]
        B = rng.random(g.shape) < rng.uniform(0.3, 0.7)
        A = B & (rng.random(g.shape) < rng.uniform(0.5, 0.95))
        if A.all() or not A.any() or B.all() or not B.any():
            continue
        sa = signed_dist(A, norm, g).finite_values()
        sb = signed_dist(B, norm, g).finite_values()
        if np.any(sb - sa > 1e-9):
            bad += 1
        sc = signed_dist(~A, norm, g).finite_values()
        if np.max(np.abs(sa + sc)) > 1e-12:
            bad += 1
    lines.append(f"distance-monotonicity: {'PASS' if bad == 0 else 'FAIL'} ({bad} violations)")
    hard_fail |= bad > 0

    # constants spot-checks
    db = diag.DensityBounds.from_inputs(
        n=2, family_size=3, c_phi=1.0, C_phi=1.0, kappa=0.0,
        lambda1=0.0, lambda2=0.0, r0=1.0, p=4.0,
    )
    spot = abs(db.gamma_N - 1.0 / 6.0) < 1e-15
    ok2, margin = check_multiphase_condition(
        family_bounds(NormFamily((NormSpec("euclidean", 2), NormSpec("euclidean", 2)))), 3
    )
    spot &= ok2 and abs(margin - 2.0 / 3.0) < 1e-12
    lines.append(f"constants-spot-checks: {'PASS' if spot else 'FAIL'}")
    hard_fail |= not spot

    # eikonal residual on smooth test masks (rational-slope half-planes)
    worst = diag.eikonal_residual_halfplanes(Grid((48, 48), 1.0 / 48.0))
    if worst <= 0.08:
        lines.append(f"eikonal-residual: PASS (max {worst:.4f} <= 0.08)")
    else:
        lines.append(f"eikonal-residual: FAIL (max {worst:.4f} > 0.08)")
        hard_fail = True

    code = 2 if hard_fail else (1 if audit else 0)
    return lines, code


def cmd_verify(cfg: RunConfig) -> int:
    lines, code = _verify_suites(cfg)
    print("\n".join(lines))
    return code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="mmcflow")
    ap.add_argument("command", choices=["step", "flow", "gmm", "compare", "diagnose", "verify"])
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", default=None)
    ap.add_argument("--trace", default=None, help="trace directory for diagnose")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config, out_override=args.out)
        if args.seed is not None:
            cfg.seed = args.seed
    except (ConfigError, NormError, FieldError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "step":
            return cmd_step(cfg)
        if args.command == "flow":
            return cmd_flow(cfg, threads=args.threads)
        if args.command == "gmm":
            return cmd_gmm(cfg, threads=args.threads)
        if args.command == "compare":
            return cmd_compare(cfg)
        if args.command == "diagnose":
            if not args.trace:
                print("diagnose needs --trace", file=sys.stderr)
                return 2
            return cmd_diagnose(cfg, Path(args.trace))
        if args.command == "verify":
            return cmd_verify(cfg)
    except (ConfigError, NormError, FieldError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
