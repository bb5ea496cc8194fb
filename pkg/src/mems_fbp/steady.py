"""Steady states, continuation in the voltage parameter, and the
closed-form non-existence threshold.

The steady equation balances the linearized curvature term against the
electrostatic source; Newton iteration uses a dense finite-difference
Jacobian (the shape derivative of the potential trace has no cheap
closed form, and interior dimensions stay small here).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elliptic import solve_potential, trace_top
from .errors import DegenerateGeometryError, NoSteadyStateError, NonConvergenceError
from .numerics import Grid1D, Grid2D, d1_central, d2_central
from .transform import MembraneState

__all__ = [
    "BranchPoint",
    "SteadyBranch",
    "steady_residual",
    "solve_steady",
    "continue_branch",
    "nonexistence_bound",
    "trace_lower_bound_check",
]


@dataclass(frozen=True, eq=False)
class BranchPoint:
    lam: float
    state: MembraneState
    min_gap: float
    newton_iters: int


@dataclass
class SteadyBranch:
    """Continuation points ordered by increasing voltage parameter."""

    points: list[BranchPoint]
    fold_estimate: float | None = None
    fold_interval: tuple[float, float] | None = None

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([pt.lam for pt in self.points])


def _square_grid2d(grid: Grid1D) -> Grid2D:
    return Grid2D(
        gx=grid,
        n_eta=grid.n_cells,
        eta_nodes=np.linspace(0.0, 1.0, grid.n_cells + 1),
        h_eta=1.0 / grid.n_cells,
    )


def _h_eps(u: MembraneState, eps: float, grid2d: Grid2D) -> np.ndarray:
    """Steady-state source: squared trace with the (1+eps^2 u_x^2)^(5/2)
    curvature factor over the squared gap."""
    tr = trace_top(solve_potential(u, eps, grid2d)).dphi_top
    dv = d1_central(u.u, u.grid)
    return (1.0 + eps * eps * dv * dv) ** 2.5 / (1.0 + u.u) ** 2 * tr * tr


def steady_residual(
    u: MembraneState, lam: float, eps: float, grid2d: Grid2D | None = None
) -> np.ndarray:
    """Residual of the steady balance at the interior nodes."""
    grid2d = grid2d or _square_grid2d(u.grid)
    d2u = d2_central(u.u, u.grid)[1:-1]
    return d2u - lam * _h_eps(u, eps, grid2d)[1:-1]


def _newton(
    lam: float,
    eps: float,
    guess: MembraneState,
    tol: float,
    grid2d: Grid2D,
    max_iter: int,
    floor: float,
    fd_scale: float = 1e-6,
) -> tuple[MembraneState, int]:
    """Damped Newton iteration; returns (state, iterations used)."""
    grid = guess.grid
    n_int = grid.n_nodes - 2

    def residual(u_int: np.ndarray) -> np.ndarray:
        full = np.zeros(grid.n_nodes)
        full[1:-1] = u_int
        return steady_residual(MembraneState(grid, full, guess.time), lam, eps, grid2d)

    u = guess.u[1:-1].copy()
    if float(np.min(1.0 + u)) <= floor:
        raise DegenerateGeometryError("initial guess already below the touchdown floor")
    r = residual(u)
    for it in range(1, max_iter + 1):
        rnorm = float(np.max(np.abs(r)))
        if rnorm <= tol:
            full = np.zeros(grid.n_nodes)
            full[1:-1] = u
            return MembraneState(grid, full, guess.time), it - 1

        delta = fd_scale * (1.0 + float(np.max(np.abs(u))))
        jac = np.empty((n_int, n_int))
        for j in range(n_int):
            u_pert = u.copy()
            u_pert[j] += delta
            jac[:, j] = (residual(u_pert) - r) / delta
        try:
            newton_step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise NoSteadyStateError(
                f"singular Jacobian at lambda={lam:g}", residual=rnorm
            ) from exc

        accepted = False
        any_admissible = False
        alpha = 1.0
        for _ in range(9):  # full step plus up to 8 halvings
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
                    f"Newton iterates touch down at lambda={lam:g}"
                )
            raise NoSteadyStateError(
                f"Newton stalled at lambda={lam:g} (residual {rnorm:.3e})",
                residual=rnorm,
            )

    rnorm = float(np.max(np.abs(r)))
    if rnorm <= tol:
        full = np.zeros(grid.n_nodes)
        full[1:-1] = u
        return MembraneState(grid, full, guess.time), max_iter
    raise NoSteadyStateError(
        f"no steady state found at lambda={lam:g} after {max_iter} iterations "
        f"(residual {rnorm:.3e})",
        residual=rnorm,
    )


def solve_steady(
    lam: float,
    eps: float,
    guess: MembraneState,
    tol: float = 1e-10,
    grid2d: Grid2D | None = None,
    max_iter: int = 50,
    floor: float = 0.05,
) -> MembraneState:
    """Steady deflection at the given voltage parameter, seeded from ``guess``."""
    if lam < 0.0:
        raise ValueError("lambda must be nonnegative")
    grid2d = grid2d or _square_grid2d(guess.grid)
    state, _ = _newton(lam, eps, guess, tol, grid2d, max_iter, floor)
    return state


def continue_branch(
    eps: float,
    lambda_max: float,
    dlambda0: float,
    n_x: int = 64,
    n_eta: int | None = None,
    tol: float = 1e-10,
    max_iter: int = 15,
    floor: float = 0.05,
) -> SteadyBranch:
    """Natural continuation of the minimal branch from zero voltage.

    The voltage step halves on every Newton failure; the branch ends at
    ``lambda_max`` or once the step drops below dlambda0 / 2^10, which
    brackets the fold.  The fold estimate is the bracket midpoint.
    """
    if dlambda0 <= 0.0:
        raise ValueError("dlambda0 must be positive")
    grid = Grid1D.uniform(n_x)
    grid2d = Grid2D.uniform(n_x, n_eta if n_eta is not None else n_x)

    u = MembraneState.zero(grid)
    points = [BranchPoint(0.0, u, 1.0, 0)]
    lam = 0.0
    step = dlambda0
    last_failed_step = None

    while lam < lambda_max:
        if step < dlambda0 / 2**10:
            break
        lam_try = min(lam + step, lambda_max)
        try:
            u_new, iters = _newton(lam_try, eps, u, tol, grid2d, max_iter, floor)
        except (NoSteadyStateError, DegenerateGeometryError, NonConvergenceError):
            last_failed_step = lam_try - lam
            step *= 0.5
            continue
        u = u_new
        lam = lam_try
        points.append(BranchPoint(lam, u, u.min_gap, iters))

    fold_estimate = fold_interval = None
    if lam < lambda_max and last_failed_step is not None:
        fold_interval = (lam, lam + last_failed_step)
        fold_estimate = lam + 0.5 * last_failed_step
    return SteadyBranch(points, fold_estimate, fold_interval)


def nonexistence_bound(eps: float) -> float:
    """Closed-form voltage threshold above which no steady state exists.

    min{2 J(eps), 2/3} / eps with J(r) = r (2r^2 + 3) / (3 (r^2 + 1)^{3/2});
    tends to 2 as the aspect ratio vanishes.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    j = eps * (2.0 * eps * eps + 3.0) / (3.0 * (eps * eps + 1.0) ** 1.5)
    return min(2.0 * j, 2.0 / 3.0) / eps


def trace_lower_bound_check(
    u: MembraneState, eps: float, grid2d: Grid2D | None = None
) -> float:
    """Smallest physical normal derivative of the potential on the membrane.

    The transformed trace divided by the local gap; for steady
    (negative, convex) profiles this should not drop below 1 beyond
    discretization error.
    """
    grid2d = grid2d or _square_grid2d(u.grid)
    tr = trace_top(solve_potential(u, eps, grid2d)).dphi_top
    return float(np.min(tr / (1.0 + u.u)))
