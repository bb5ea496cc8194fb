"""Experiment driver: JSON config in, CSV/JSON artifacts out.

Numbers in CSV files use the shortest round-trip representation, so a
fixed config (and seed) reproduces byte-identical tables.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import elliptic, evolution, small_aspect, steady
from .errors import (
    ConfigError,
    DegenerateGeometryError,
    GridTooCoarseError,
    NoSteadyStateError,
    NonConvergenceError,
    SingularSystemError,
)
from .evolution import ModelParams
from .numerics import Grid1D, Grid2D
from .transform import MembraneState, random_admissible_state

__all__ = ["ExperimentConfig", "parse_config", "run_experiment", "main"]

KINDS = ("evolve", "steady", "continuation", "pullin", "limit-study", "validate")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_TOUCHDOWN = 4

_SOLVER_ERRORS = (
    NonConvergenceError,
    NoSteadyStateError,
    SingularSystemError,
    DegenerateGeometryError,
    GridTooCoarseError,
)


@dataclass
class ExperimentConfig:
    kind: str
    params: ModelParams
    n_x: int = 128
    n_eta: int = 128
    ic_kind: str = "zero"  # zero | parabola | custom-csv
    ic_depth: float = 0.0
    ic_path: str | None = None
    out_dir: str = "."
    seed: int = 0
    thin_every: int = 10
    record_energy: bool = False
    require_survival: bool = False
    dump_profiles: bool = False
    lambda_max: float = 2.0
    dlambda0: float = 0.05
    eps_list: list[float] = field(default_factory=lambda: [0.2, 0.1, 0.05])
    tau: float = 1.0
    tol_lambda: float = 1e-4
    threads: int = 1


_DEFAULTS = {
    "lambda": 0.0,
    "eps": 0.1,
    "mode": "quasilinear",
    "dt": 1e-3,
    "touchdown_floor": 0.05,
    "equilibrium_tol": 1e-9,
    "max_time": 50.0,
    "n_x": 128,
    "n_eta": 128,
    "initial_condition": "zero",
    "out_dir": ".",
    "seed": 0,
    "thin_every": 10,
    "record_energy": False,
    "require_survival": False,
    "dump_profiles": False,
    "lambda_max": 2.0,
    "dlambda0": 0.05,
    "eps_list": [0.2, 0.1, 0.05],
    "tau": 1.0,
    "tol_lambda": 1e-4,
}


def parse_config(path) -> ExperimentConfig:
    """Read and validate a JSON experiment config, filling defaults."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"parse error at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")

    known = set(_DEFAULTS) | {"kind"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    if "kind" not in raw:
        raise ConfigError("missing required field 'kind'")
    kind = raw["kind"]
    if kind not in KINDS:
        raise ConfigError(f"invalid kind {kind!r}; expected one of {KINDS}")

    cfg = dict(_DEFAULTS)
    cfg.update(raw)

    def fail(name, why):
        raise ConfigError(f"invalid field {name!r}: {why}")

    for name in ("n_x", "n_eta", "seed", "thin_every"):
        if not isinstance(cfg[name], int) or isinstance(cfg[name], bool):
            fail(name, "must be an integer")
    if cfg["n_x"] < 8 or cfg["n_eta"] < 8:
        fail("n_x/n_eta", "grid sizes must be at least 8")
    if cfg["thin_every"] < 1:
        fail("thin_every", "must be at least 1")

    ic = cfg["initial_condition"]
    ic_kind, ic_depth, ic_path = "zero", 0.0, None
    if ic == "zero":
        pass
    elif isinstance(ic, dict) and set(ic) == {"parabola"}:
        ic_kind, ic_depth = "parabola", float(ic["parabola"])
        if not 0.0 <= ic_depth < 1.0:
            fail("initial_condition", "parabola depth must lie in [0, 1)")
    elif isinstance(ic, dict) and set(ic) == {"csv"}:
        ic_kind, ic_path = "custom-csv", str(ic["csv"])
        if not Path(ic_path).exists():
            fail("initial_condition", f"csv path {ic_path!r} does not exist")
    else:
        fail("initial_condition", "expected 'zero', {'parabola': depth} or {'csv': path}")

    try:
        params = ModelParams(
            eps=float(cfg["eps"]),
            lam=float(cfg["lambda"]),
            mode=cfg["mode"],
            dt=float(cfg["dt"]),
            touchdown_floor=float(cfg["touchdown_floor"]),
            equilibrium_tol=float(cfg["equilibrium_tol"]),
            max_time=float(cfg["max_time"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model parameters: {exc}") from exc

    if not isinstance(cfg["eps_list"], list) or not cfg["eps_list"]:
        fail("eps_list", "must be a non-empty list")
    eps_list = [float(e) for e in cfg["eps_list"]]
    if any(e <= 0 for e in eps_list):
        fail("eps_list", "entries must be positive")
    if float(cfg["tau"]) <= 0:
        fail("tau", "must be positive")
    if float(cfg["tol_lambda"]) <= 0:
        fail("tol_lambda", "must be positive")
    if float(cfg["dlambda0"]) <= 0:
        fail("dlambda0", "must be positive")

    return ExperimentConfig(
        kind=kind,
        params=params,
        n_x=cfg["n_x"],
        n_eta=cfg["n_eta"],
        ic_kind=ic_kind,
        ic_depth=ic_depth,
        ic_path=ic_path,
        out_dir=str(cfg["out_dir"]),
        seed=cfg["seed"],
        thin_every=cfg["thin_every"],
        record_energy=bool(cfg["record_energy"]),
        require_survival=bool(cfg["require_survival"]),
        dump_profiles=bool(cfg["dump_profiles"]),
        lambda_max=float(cfg["lambda_max"]),
        dlambda0=float(cfg["dlambda0"]),
        eps_list=eps_list,
        tau=float(cfg["tau"]),
        tol_lambda=float(cfg["tol_lambda"]),
    )


def _initial_state(cfg: ExperimentConfig, grid: Grid1D) -> MembraneState:
    if cfg.ic_kind == "zero":
        return MembraneState.zero(grid)
    if cfg.ic_kind == "parabola":
        x = grid.nodes
        return MembraneState(grid, -cfg.ic_depth * (1.0 - x * x))
    u = np.loadtxt(cfg.ic_path, delimiter=",", ndmin=1)
    if u.ndim != 1 or u.size != grid.n_nodes:
        raise ConfigError(
            f"custom initial condition must hold {grid.n_nodes} values, got shape {u.shape}"
        )
    if max(abs(u[0]), abs(u[-1])) > 1e-12:
        raise ConfigError("custom initial condition must vanish at the clamped ends")
    u[0] = u[-1] = 0.0
    return MembraneState(grid, u)


def _fmt(value) -> str:
    return repr(float(value))


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if not isinstance(v, str) else v for v in row) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _params_dict(p: ModelParams) -> dict:
    return {
        "eps": p.eps,
        "lambda": p.lam,
        "mode": p.mode,
        "dt": p.dt,
        "touchdown_floor": p.touchdown_floor,
        "equilibrium_tol": p.equilibrium_tol,
        "max_time": p.max_time,
    }


def _run_evolve(cfg: ExperimentConfig, out: Path, say) -> int:
    grid = Grid1D.uniform(cfg.n_x)
    grid2d = Grid2D.uniform(cfg.n_x, cfg.n_eta)
    u0 = _initial_state(cfg, grid)
    t0 = time.perf_counter()
    traj = evolution.run(
        u0, cfg.params, grid2d, thin_every=cfg.thin_every, record_energy=cfg.record_energy
    )
    wall = time.perf_counter() - t0

    header = ["time"] + [f"x={_fmt(x)}" for x in grid.nodes]
    _write_csv(out / "trajectory.csv", header, ([s.time] + list(s.u) for s in traj.states))
    if traj.energy_series is not None:
        _write_csv(out / "energy.csv", ["time", "energy"], traj.energy_series)
    _write_json(
        out / "run.json",
        {
            "kind": "evolve",
            "params": _params_dict(cfg.params),
            "n_x": cfg.n_x,
            "n_eta": cfg.n_eta,
            "outcome": traj.outcome,
            "touchdown_time": traj.touchdown_time,
            "final_time": traj.final.time,
            "states_stored": len(traj.states),
            "wall_time_s": wall,
        },
    )
    say(f"evolve: outcome={traj.outcome} final_time={traj.final.time:g}")
    if cfg.require_survival and traj.outcome == "touchdown":
        print(
            f"mems-fbp: ERROR[touchdown] evolution: touchdown at t={traj.touchdown_time:g} "
            "before the horizon",
            file=sys.stderr,
        )
        return EXIT_TOUCHDOWN
    return EXIT_OK


def _run_steady(cfg: ExperimentConfig, out: Path, say) -> int:
    grid = Grid1D.uniform(cfg.n_x)
    grid2d = Grid2D.uniform(cfg.n_x, cfg.n_eta)
    guess = _initial_state(cfg, grid)
    t0 = time.perf_counter()
    state = steady.solve_steady(cfg.params.lam, cfg.params.eps, guess, grid2d=grid2d)
    wall = time.perf_counter() - t0
    res = steady.steady_residual(state, cfg.params.lam, cfg.params.eps, grid2d)
    _write_csv(out / "profile.csv", ["x", "u"], zip(grid.nodes, state.u))
    _write_json(
        out / "steady.json",
        {
            "kind": "steady",
            "lambda": cfg.params.lam,
            "eps": cfg.params.eps,
            "n_x": cfg.n_x,
            "n_eta": cfg.n_eta,
            "residual_inf": float(np.max(np.abs(res))),
            "min_gap": state.min_gap,
            "max_deflection": float(np.max(np.abs(state.u))),
            "wall_time_s": wall,
        },
    )
    say(f"steady: min_gap={state.min_gap:g}")
    return EXIT_OK


def _branch_rows(branch):
    for pt in branch.points:
        yield [pt.lam, pt.min_gap, float(np.max(np.abs(pt.state.u))), pt.newton_iters]


def _run_continuation(cfg: ExperimentConfig, out: Path, say) -> int:
    eps_values = cfg.eps_list if len(cfg.eps_list) > 1 else [cfg.params.eps]

    def one(eps):
        return steady.continue_branch(
            eps, cfg.lambda_max, cfg.dlambda0, n_x=cfg.n_x, n_eta=cfg.n_eta
        )

    if cfg.threads > 1 and len(eps_values) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            branches = list(pool.map(one, eps_values))
    else:
        branches = [one(eps) for eps in eps_values]

    meta = {}
    for eps, branch in zip(eps_values, branches):
        tag = "" if len(eps_values) == 1 else f"_eps{_fmt(eps)}"
        _write_csv(
            out / f"branch{tag}.csv",
            ["lambda", "min_gap", "max_deflection", "newton_iters"],
            _branch_rows(branch),
        )
        if cfg.dump_profiles:
            prof_dir = out / f"profiles{tag}"
            prof_dir.mkdir(exist_ok=True)
            for idx, pt in enumerate(branch.points):
                _write_csv(
                    prof_dir / f"point_{idx:03d}.csv",
                    ["x", "u"],
                    zip(pt.state.grid.nodes, pt.state.u),
                )
        meta[_fmt(eps)] = {
            "points": len(branch.points),
            "last_lambda": branch.points[-1].lam,
            "fold_estimate": branch.fold_estimate,
            "fold_interval": list(branch.fold_interval) if branch.fold_interval else None,
            "nonexistence_bound": steady.nonexistence_bound(eps),
        }
        say(f"continuation eps={eps:g}: {len(branch.points)} points, fold={branch.fold_estimate}")
    _write_json(out / "branch.json", {"kind": "continuation", "branches": meta})
    return EXIT_OK


def _run_pullin(cfg: ExperimentConfig, out: Path, say) -> int:
    t0 = time.perf_counter()
    result = small_aspect.pullin0_detail(cfg.tol_lambda, n_x=cfg.n_x)
    wall = time.perf_counter() - t0
    _write_csv(
        out / "pullin.csv",
        ["lambda_star", "bracket_lo", "bracket_hi", "shooting_oracle"],
        [[result.lambda_star, result.bracket[0], result.bracket[1], result.shooting_value]],
    )
    _write_json(
        out / "pullin.json",
        {
            "kind": "pullin",
            "lambda_star": result.lambda_star,
            "bracket": list(result.bracket),
            "shooting_oracle": result.shooting_value,
            "tol_lambda": cfg.tol_lambda,
            "n_x": cfg.n_x,
            "wall_time_s": wall,
        },
    )
    say(f"pullin: lambda*={result.lambda_star:.6f} bracket={result.bracket}")
    return EXIT_OK


def _run_limit_study(cfg: ExperimentConfig, out: Path, say) -> int:
    grid = Grid1D.uniform(cfg.n_x)
    u0 = _initial_state(cfg, grid)
    import warnings as _warnings

    with _warnings.catch_warnings(record=True) as caught:
        _warnings.simplefilter("always")
        comp = small_aspect.limit_study(
            u0,
            cfg.params.lam,
            cfg.eps_list,
            cfg.tau,
            n_eta=cfg.n_eta,
            dt=cfg.params.dt,
            touchdown_floor=cfg.params.touchdown_floor,
            workers=cfg.threads,
        )
    shortened = comp.tau < cfg.tau - 1e-12
    sample_times = sorted({t for series in comp.potential_errors for t, _ in series})
    header = ["eps", "sup_error"] + [f"potential_error@t={_fmt(t)}" for t in sample_times]
    rows = []
    for eps, sup, series in zip(comp.eps_values, comp.sup_errors, comp.potential_errors):
        by_time = dict(series)
        rows.append([eps, sup] + [by_time.get(t, float("nan")) for t in sample_times])
    _write_csv(out / "limit_study.csv", header, rows)
    _write_json(
        out / "limit_study.json",
        {
            "kind": "limit-study",
            "lambda": cfg.params.lam,
            "eps_list": comp.eps_values,
            "tau_requested": cfg.tau,
            "tau_used": comp.tau,
            "horizon_shortened": shortened,
            "warnings": [str(w.message) for w in caught],
        },
    )
    say(f"limit-study: tau_used={comp.tau:g} sup_errors={comp.sup_errors}")
    if cfg.require_survival and shortened:
        print(
            f"mems-fbp: ERROR[touchdown] limit-study: horizon shortened to t={comp.tau:g}",
            file=sys.stderr,
        )
        return EXIT_TOUCHDOWN
    return EXIT_OK


def _validate_checks(cfg: ExperimentConfig):
    """Invariant suite: (name, callable -> (ok, detail)) pairs."""
    rng = np.random.default_rng(cfg.seed)
    grid = Grid1D.uniform(32)
    grid2d = Grid2D.uniform(32, 32)

    def mms():
        result = elliptic.mms_convergence(0.1, (16, 32, 64))
        ok = 1.9 <= result.field_order <= 2.1
        return ok, f"field order {result.field_order:.3f}"

    def unit_source_at_rest():
        worst = 0.0
        for eps in (0.01, 0.1, 1.0, 10.0):
            g = elliptic.g_eps(MembraneState.zero(grid), eps, grid2d)
            worst = max(worst, float(np.max(np.abs(g - 1.0))))
        return worst <= 1e-10, f"max |g-1| = {worst:.2e}"

    def potential_symmetry():
        worst = 0.0
        for _ in range(5):
            v = random_admissible_state(grid, rng)
            u_even = 0.5 * (v.u + v.u[::-1])
            phi = elliptic.solve_potential(MembraneState(grid, u_even), 0.5, grid2d).phi
            worst = max(worst, float(np.max(np.abs(phi - phi[::-1, :]))))
        return worst <= 1e-10, f"max asymmetry {worst:.2e}"

    def split_agreement():
        worst = 0.0
        for _ in range(5):
            v = random_admissible_state(grid, rng)
            a = elliptic.solve_potential(v, 0.7, grid2d).phi
            b = elliptic.solve_potential_split(v, 0.7, grid2d).phi
            worst = max(worst, float(np.max(np.abs(a - b))))
        return worst <= 1e-8, f"max split gap {worst:.2e}"

    def sign_preservation():
        x = grid.nodes
        u0 = MembraneState(grid, -0.1 * (1.0 - x * x))
        p = ModelParams(eps=0.1, lam=0.5, dt=1e-3, max_time=0.05)
        traj = evolution.run(u0, p, grid2d, thin_every=1)
        ok = evolution.check_sign_preservation(traj)
        return ok, f"{len(traj.states)} states checked"

    def flat_limit_consistency():
        x = grid.nodes
        u = MembraneState(grid, -0.2 * (1.0 - x * x))
        p = ModelParams(eps=0.1, lam=0.5, dt=1e-3)
        worst = 0.0
        a = b = u
        for _ in range(50):
            a = small_aspect.step0(a, p)
            b = small_aspect.degenerate_step(b, p)
            worst = max(worst, float(np.max(np.abs(a.u - b.u))))
        return worst <= 1e-12, f"max stepwise gap {worst:.2e}"

    return [
        ("elliptic_mms_order", mms),
        ("unit_source_at_rest", unit_source_at_rest),
        ("potential_symmetry", potential_symmetry),
        ("dual_formulation_agreement", split_agreement),
        ("sign_preservation", sign_preservation),
        ("flat_limit_consistency", flat_limit_consistency),
    ]


def _run_validate(cfg: ExperimentConfig, out: Path, say) -> int:
    rows = []
    report = {}
    all_ok = True
    for name, check in _validate_checks(cfg):
        ok, detail = check()
        all_ok &= ok
        rows.append([name, "pass" if ok else "fail", detail])
        report[name] = {"passed": ok, "detail": detail}
        say(f"validate: {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    _write_csv(out / "validate.csv", ["check", "status", "detail"], rows)
    _write_json(out / "validate.json", {"kind": "validate", "checks": report, "all_passed": all_ok})
    if not all_ok:
        print("mems-fbp: ERROR[solver] validate: one or more checks failed", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


_RUNNERS = {
    "evolve": _run_evolve,
    "steady": _run_steady,
    "continuation": _run_continuation,
    "pullin": _run_pullin,
    "limit-study": _run_limit_study,
    "validate": _run_validate,
}


def run_experiment(cfg: ExperimentConfig, quiet: bool = False) -> int:
    """Dispatch one experiment; returns the process exit status."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def say(msg):
        if not quiet:
            print(msg)

    try:
        return _RUNNERS[cfg.kind](cfg, out, say)
    except _SOLVER_ERRORS as exc:
        print(
            f"mems-fbp: ERROR[solver] {type(exc).__name__}: {exc}",
            file=sys.stderr,
        )
        return EXIT_SOLVER


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mems-fbp",
        description="Membrane/potential free-boundary experiments from a JSON config.",
    )
    parser.add_argument("config", help="path to the JSON experiment config")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"mems-fbp: ERROR[config] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out is not None:
        cfg.out_dir = args.out
    cfg.threads = max(1, args.threads)
    return run_experiment(cfg, quiet=args.quiet)


if __name__ == "__main__":
    sys.exit(main())
