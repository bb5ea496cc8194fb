"""Vanishing-aspect-ratio model and the convergence study toward it.

In the flat limit the potential is explicit, (1+z)/(1+u), and the
membrane obeys a semilinear heat equation with source -lambda/(1+u)^2.
This module solves that model and measures how the full solver
approaches it as the aspect ratio shrinks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, minimize_scalar

from .elliptic import solve_potential
from .errors import DegenerateGeometryError, NoSteadyStateError, NonConvergenceError
from .evolution import ModelParams, Trajectory, _run_loop, imex_step, step as step_eps
from .numerics import Grid1D, Grid2D, solve_tridiagonal, trapezoid_2d
from .transform import MembraneState

__all__ = [
    "LimitComparison",
    "psi0",
    "psi0_membrane_trace",
    "step0",
    "degenerate_step",
    "run0",
    "steady0",
    "pullin0",
    "pullin0_detail",
    "PullinResult",
    "shooting_pullin",
    "limit_study",
]


@dataclass
class LimitComparison:
    """Per-aspect-ratio deviation of the full model from the flat limit.

    ``potential_errors[i]`` holds (time, L2 error) samples for
    ``eps_values[i]``; ``sup_errors[i]`` is the max deflection gap over
    the common horizon ``tau``.
    """

    eps_values: list[float]
    sup_errors: list[float]
    potential_errors: list[list[tuple[float, float]]]
    tau: float

    @property
    def potential_sup_errors(self) -> list[float]:
        """Largest sampled potential error per aspect ratio."""
        return [max(err for _, err in series) for series in self.potential_errors]


def psi0(u0: MembraneState, grid: Grid2D) -> np.ma.MaskedArray:
    """Explicit flat-limit potential on the strip -1 < z < 0.

    The vertical axis of ``grid`` is read as z = eta - 1.  Nodes above
    the membrane (z > u0(x)) are masked: the potential is only defined
    in the gap region.
    """
    if u0.min_gap <= 0.0:
        raise DegenerateGeometryError(
            f"membrane touches the ground plate (min gap {u0.min_gap:.3e})"
        )
    w = 1.0 + u0.interp(grid.gx.nodes)
    eta = grid.eta_nodes  # = 1 + z
    values = eta[None, :] / w[:, None]
    outside = eta[None, :] > w[:, None]
    return np.ma.MaskedArray(values, mask=outside)


def psi0_membrane_trace(u: MembraneState) -> np.ndarray:
    """Vertical derivative of the explicit potential on the membrane: 1/(1+u)."""
    return 1.0 / (1.0 + u.u)


def _flat_diffusion(u: MembraneState) -> np.ndarray:
    return np.ones(u.grid.n_nodes - 2)


def step0(u: MembraneState, p: ModelParams) -> MembraneState:
    """One step of the flat-limit model (no potential solve needed)."""
    forcing = -p.lam / (1.0 + u.u) ** 2
    return imex_step(u, p.dt, _flat_diffusion(u), forcing)


def degenerate_step(u: MembraneState, p: ModelParams) -> MembraneState:
    """Full-model stepping kernel driven with flat-limit inputs.

    Uses unit diffusion and the squared membrane trace of the explicit
    potential as source; should reproduce ``step0`` to roundoff.
    """
    tr = psi0_membrane_trace(u)
    forcing = -p.lam * tr * tr
    return imex_step(u, p.dt, _flat_diffusion(u), forcing)


def run0(u0: MembraneState, p: ModelParams, thin_every: int = 10) -> Trajectory:
    """Run the flat-limit model until equilibrium, touchdown or the horizon."""
    return _run_loop(u0, p, lambda s: step0(s, p), thin_every)


def steady0(
    lam: float,
    tol: float = 1e-10,
    n_x: int = 512,
    guess: MembraneState | None = None,
    max_iter: int = 50,
    floor: float = 0.05,
) -> MembraneState:
    """Newton solve of the flat-limit steady problem.

    The Jacobian is tridiagonal (diffusion stencil plus a diagonal from
    the source), so each iteration is a Thomas solve.
    """
    if lam < 0.0:
        raise ValueError("lambda must be nonnegative")
    if guess is None:
        grid = Grid1D.uniform(n_x)
        u = np.zeros(grid.n_nodes - 2)
    else:
        grid = guess.grid
        u = guess.u[1:-1].copy()
    h2 = grid.h * grid.h

    def residual(u_int):
        full = np.zeros(grid.n_nodes)
        full[1:-1] = u_int
        d2 = (full[2:] - 2.0 * full[1:-1] + full[:-2]) / h2
        return d2 - lam / (1.0 + u_int) ** 2

    r = residual(u)
    for _ in range(max_iter):
        rnorm = float(np.max(np.abs(r)))
        if rnorm <= tol:
            full = np.zeros(grid.n_nodes)
            full[1:-1] = u
            return MembraneState(grid, full)
        diag = -2.0 / h2 + 2.0 * lam / (1.0 + u) ** 3
        off = np.full(u.size - 1, 1.0 / h2)
        newton_step = solve_tridiagonal(off, diag, off, -r)

        accepted = False
        any_admissible = False
        alpha = 1.0
        for _ in range(9):
            u_try = u + alpha * newton_step
            if float(np.min(1.0 + u_try)) > floor:
                any_admissible = True
                r_try = residual(u_try)
                if float(np.max(np.abs(r_try))) < rnorm:
                    u, r = u_try, r_try
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            if not any_admissible:
                raise DegenerateGeometryError(
                    f"flat-limit Newton iterates touch down at lambda={lam:g}"
                )
            raise NoSteadyStateError(
                f"flat-limit Newton stalled at lambda={lam:g} (residual {rnorm:.3e})",
                residual=rnorm,
            )
    rnorm = float(np.max(np.abs(r)))
    if rnorm <= tol:
        full = np.zeros(grid.n_nodes)
        full[1:-1] = u
        return MembraneState(grid, full)
    raise NoSteadyStateError(
        f"no flat-limit steady state at lambda={lam:g} (residual {rnorm:.3e})",
        residual=rnorm,
    )


@dataclass(frozen=True)
class PullinResult:
    lambda_star: float
    bracket: tuple[float, float]
    shooting_value: float | None


def shooting_pullin(tol: float, depth_bounds=(0.05, 0.95)) -> float:
    """Pull-in voltage of the flat-limit model by shooting.

    For a given center depth the two-point problem is integrated as an
    initial value problem from the symmetry axis; the voltage matching
    the clamped end is found by bisection, and pull-in is the largest
    such voltage over all depths.
    """

    def endpoint(lam: float, depth: float) -> float:
        def rhs(_, y):
            return [y[1], lam / (1.0 + y[0]) ** 2]

        def crashed(_, y):
            return y[0] + 0.999

        crashed.terminal = True
        sol = solve_ivp(
            rhs, (0.0, 1.0), [-depth, 0.0], rtol=1e-9, atol=1e-11, events=crashed
        )
        if sol.t[-1] < 1.0:
            return -1.0  # touched down before the clamp: voltage too large
        return float(sol.y[0, -1])

    def lam_of_depth(depth: float) -> float:
        hi = 0.1
        while endpoint(hi, depth) < 0.0:
            hi *= 2.0
            if hi > 64.0:
                raise NonConvergenceError("shooting bracket search failed")
        return float(brentq(lambda lam: endpoint(lam, depth), 1e-12, hi, xtol=tol))

    result = minimize_scalar(
        lambda b: -lam_of_depth(b),
        bounds=depth_bounds,
        method="bounded",
        options={"xatol": 1e-3},
    )
    return float(-result.fun)


def pullin0_detail(
    tol_lambda: float, n_x: int = 512, cross_validate: bool = True
) -> PullinResult:
    """Bisection on flat-limit steady solvability, with oracle cross-check."""
    if tol_lambda <= 0.0:
        raise ValueError("tol_lambda must be positive")
    grid = Grid1D.uniform(n_x)
    lo, sol_lo = 0.0, MembraneState.zero(grid)
    hi = 1.0
    try:
        sol_lo = steady0(hi, guess=sol_lo)
        lo = hi
        hi = 2.0  # extremely defensive; the threshold sits well below 1
    except (NoSteadyStateError, DegenerateGeometryError):
        pass
    while hi - lo > tol_lambda:
        mid = 0.5 * (lo + hi)
        try:
            sol_lo = steady0(mid, guess=sol_lo)
            lo = mid
        except (NoSteadyStateError, DegenerateGeometryError):
            hi = mid
    lam_star = 0.5 * (lo + hi)

    shooting_value = None
    if cross_validate:
        shooting_value = shooting_pullin(tol_lambda / 10.0)
        if abs(lam_star - shooting_value) > 2.0 * tol_lambda:
            raise NonConvergenceError(
                f"pull-in bisection ({lam_star:.6f}) disagrees with the shooting "
                f"oracle ({shooting_value:.6f}) beyond 2*tol",
                residual=abs(lam_star - shooting_value),
            )
    return PullinResult(lam_star, (lo, hi), shooting_value)


def pullin0(tol_lambda: float, n_x: int = 512) -> float:
    """Flat-limit pull-in voltage, bracketed to ``tol_lambda``."""
    return pullin0_detail(tol_lambda, n_x).lambda_star


def _potential_l2_error(
    u_eps: MembraneState,
    u_flat: MembraneState,
    eps: float,
    solver_grid: Grid2D,
    comparison_grid: Grid2D,
) -> float:
    """L2 distance of the two potentials over the strip -1 < z < 0.

    The full-model potential is pulled back to physical coordinates by
    composing with the map and interpolating bilinearly; points outside
    either gap region do not contribute.
    """
    phi = solve_potential(u_eps, eps, solver_grid).phi
    xs = comparison_grid.gx.nodes
    eta_c = comparison_grid.eta_nodes  # = 1 + z on the strip

    w_eps = 1.0 + u_eps.interp(xs)
    w_flat = 1.0 + u_flat.interp(xs)
    inside_eps = eta_c[None, :] <= w_eps[:, None]
    inside_flat = eta_c[None, :] <= w_flat[:, None]
    both = inside_eps & inside_flat

    # transformed vertical coordinate of each strip node, clipped to the
    # rectangle for the (masked-out) points above the membrane
    eta_query = np.clip(eta_c[None, :] / w_eps[:, None], 0.0, 1.0)

    sol_eta = solver_grid.eta_nodes
    psi_eps = np.empty_like(eta_query)
    x_idx = np.searchsorted(solver_grid.gx.nodes, xs).clip(0, solver_grid.gx.n_nodes - 1)
    for row, i in enumerate(x_idx):  # columns share x-nodes: linear interp in eta
        psi_eps[row] = np.interp(eta_query[row], sol_eta, phi[i])

    psi_flat = eta_c[None, :] / w_flat[:, None]
    integrand = np.where(both, (psi_eps - psi_flat) ** 2, 0.0)
    return float(np.sqrt(trapezoid_2d(integrand, xs, eta_c - 1.0)))


def limit_study(
    u0: MembraneState,
    lam: float,
    eps_list,
    tau: float,
    n_eta: int | None = None,
    dt: float = 1e-3,
    touchdown_floor: float = 0.05,
    sample_times=None,
    workers: int = 1,
) -> LimitComparison:
    """Lockstep comparison of the full model against the flat limit.

    All runs share the spatial grid and time step so that only the
    aspect ratio varies.  If any run reaches the touchdown floor before
    ``tau``, the horizon shrinks to the span every run survives (with a
    warning).
    """
    if float(np.max(u0.u)) > 0.0:
        raise ValueError("initial deflection must be nonpositive for the limit study")
    eps_list = list(eps_list)
    n_steps = int(round(tau / dt))
    if sample_times is None:
        sample_times = [tau * frac for frac in (0.25, 0.5, 0.75, 1.0)]
    sample_steps = sorted({max(1, int(round(t / dt))) for t in sample_times})

    grid = u0.grid
    n_eta = n_eta if n_eta is not None else grid.n_cells
    solver_grid = Grid2D.uniform(grid.n_cells, n_eta)
    comparison_grid = Grid2D.uniform(grid.n_cells, n_eta)

    # flat-limit reference, every step stored
    p_flat = ModelParams(eps=1.0, lam=lam, dt=dt, touchdown_floor=touchdown_floor)
    flat_states = [u0]
    u = u0
    flat_alive = n_steps
    for k in range(1, n_steps + 1):
        u = step0(u, p_flat)
        flat_states.append(u)
        if u.min_gap <= touchdown_floor:
            flat_alive = k - 1
            break

    def run_one(eps: float):
        p = ModelParams(eps=eps, lam=lam, dt=dt, touchdown_floor=touchdown_floor)
        u = u0
        err_series = [0.0]
        samples = []
        alive = min(n_steps, len(flat_states) - 1)
        for k in range(1, n_steps + 1):
            if k >= len(flat_states):
                break
            u = step_eps(u, p, solver_grid)
            if u.min_gap <= touchdown_floor:
                alive = k - 1
                break
            err_series.append(float(np.max(np.abs(u.u - flat_states[k].u))))
            if k in sample_steps:
                samples.append(
                    (
                        k * dt,
                        _potential_l2_error(u, flat_states[k], eps, solver_grid, comparison_grid),
                    )
                )
        return alive, err_series, samples

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, eps_list))
    else:
        results = [run_one(eps) for eps in eps_list]

    common_alive = min([flat_alive] + [alive for alive, _, _ in results])
    if common_alive < n_steps:
        warnings.warn(
            f"touchdown before the horizon; comparison shortened to t={common_alive * dt:g}",
            stacklevel=2,
        )
    sup_errors = [
        float(np.max(series[: common_alive + 1])) for _, series, _ in results
    ]
    potential_errors = [
        [(t, e) for t, e in samples if t <= common_alive * dt + 1e-12]
        for _, _, samples in results
    ]
    return LimitComparison(eps_list, sup_errors, potential_errors, common_alive * dt)
