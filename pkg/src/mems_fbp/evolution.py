"""Time stepping for the quasilinear membrane equation.

One semi-implicit step treats the diffusion implicitly with the
curvature coefficient frozen at the current state and the electrostatic
source explicitly, so each step costs one tridiagonal solve plus one
potential solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .elliptic import g_eps, solve_potential
from .numerics import Grid2D, d1_central, d2_central, solve_tridiagonal, trapezoid_2d
from .transform import MembraneState

__all__ = [
    "ModelParams",
    "Trajectory",
    "default_grid2d",
    "imex_step",
    "rhs",
    "step",
    "run",
    "total_energy",
    "check_sign_preservation",
    "check_evenness_preservation",
]

MODES = ("quasilinear", "linearized")


@dataclass(frozen=True)
class ModelParams:
    """Physical and numerical parameters of a membrane run.

    ``eps`` is the device aspect ratio, ``lam`` the dimensionless
    voltage parameter.  ``mode`` selects the full curvature operator or
    its linearized-stretching variant (the source term is unchanged).
    """

    eps: float
    lam: float
    mode: str = "quasilinear"
    dt: float = 1e-3
    touchdown_floor: float = 0.05
    equilibrium_tol: float = 1e-9
    max_time: float = 50.0

    def __post_init__(self):
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        if self.lam < 0.0:
            raise ValueError("lambda must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if not 0.0 < self.touchdown_floor < 1.0:
            raise ValueError("touchdown_floor must lie in (0, 1)")
        if self.max_time <= 0.0:
            raise ValueError("max_time must be positive")


@dataclass
class Trajectory:
    """Stored (possibly thinned) states of a run plus its outcome."""

    states: list[MembraneState]
    outcome: str  # converged | touchdown | max_time_reached
    touchdown_time: float | None = None
    energy_series: list[tuple[float, float]] | None = field(default=None)

    @property
    def final(self) -> MembraneState:
        return self.states[-1]


def default_grid2d(u: MembraneState) -> Grid2D:
    """Square rectangle discretization matching the membrane grid."""
    return Grid2D(
        gx=u.grid,
        n_eta=u.grid.n_cells,
        eta_nodes=np.linspace(0.0, 1.0, u.grid.n_cells + 1),
        h_eta=1.0 / u.grid.n_cells,
    )


def _diffusion_interior(u: MembraneState, p: ModelParams) -> np.ndarray:
    if p.mode == "linearized":
        return np.ones(u.grid.n_nodes - 2)
    dv = d1_central(u.u, u.grid)[1:-1]
    return (1.0 + p.eps * p.eps * dv * dv) ** -1.5


def imex_step(u: MembraneState, dt: float, diffusion_int: np.ndarray, forcing: np.ndarray) -> MembraneState:
    """One implicit-diffusion / explicit-forcing step with clamped ends.

    Solves (I - dt * D * d_xx) u_new = u + dt * forcing on the interior
    nodes.  ``forcing`` is a full nodal array; its end values are unused.
    """
    h = u.grid.h
    r = dt * diffusion_int / (h * h)
    rhs_int = u.u[1:-1] + dt * forcing[1:-1]
    sol = solve_tridiagonal(-r[1:], 1.0 + 2.0 * r, -r[:-1], rhs_int)
    u_new = np.zeros_like(u.u)
    u_new[1:-1] = sol
    return MembraneState(u.grid, u_new, u.time + dt)


def rhs(u: MembraneState, p: ModelParams, grid2d: Grid2D | None = None) -> np.ndarray:
    """Instantaneous right-hand side at the interior nodes."""
    grid2d = grid2d or default_grid2d(u)
    d2u = d2_central(u.u, u.grid)[1:-1]
    g = g_eps(u, p.eps, grid2d)[1:-1]
    return _diffusion_interior(u, p) * d2u - p.lam * g


def step(u: MembraneState, p: ModelParams, grid2d: Grid2D | None = None) -> MembraneState:
    """Advance one time step; the potential is re-solved at the current state."""
    grid2d = grid2d or default_grid2d(u)
    forcing = -p.lam * g_eps(u, p.eps, grid2d)
    return imex_step(u, p.dt, _diffusion_interior(u, p), forcing)


def _run_loop(u0, p, step_fn, thin_every, energy_fn=None) -> Trajectory:
    """Shared driver: iterate until equilibrium, touchdown or the horizon."""
    states = [u0]
    energies = [(u0.time, energy_fn(u0))] if energy_fn else None
    if u0.min_gap <= p.touchdown_floor:
        return Trajectory(states, "touchdown", u0.time, energies)

    u = u0
    k = 0
    while True:
        u_new = step_fn(u)
        k += 1
        if u_new.min_gap <= p.touchdown_floor:
            outcome, touchdown_time, stop = "touchdown", u_new.time, True
        elif float(np.max(np.abs(u_new.u - u.u))) / p.dt <= p.equilibrium_tol:
            outcome, touchdown_time, stop = "converged", None, True
        elif u_new.time >= p.max_time - 1e-12:
            outcome, touchdown_time, stop = "max_time_reached", None, True
        else:
            stop = False
        if stop or k % thin_every == 0:
            states.append(u_new)
            if energy_fn:
                energies.append((u_new.time, energy_fn(u_new)))
        if stop:
            return Trajectory(states, outcome, touchdown_time, energies)
        u = u_new


def run(
    u0: MembraneState,
    p: ModelParams,
    grid2d: Grid2D | None = None,
    thin_every: int = 10,
    record_energy: bool = False,
) -> Trajectory:
    """Run the membrane until equilibrium, touchdown or ``max_time``."""
    grid2d = grid2d or default_grid2d(u0)
    energy_fn = (lambda s: total_energy(s, p, grid2d)) if record_energy else None
    return _run_loop(u0, p, lambda s: step(s, p, grid2d), thin_every, energy_fn)


def total_energy(u: MembraneState, p: ModelParams, grid2d: Grid2D | None = None) -> float:
    """Stretching energy minus the weighted electrostatic field energy.

    The field integral over the physical gap region is evaluated on the
    rectangle: the change of variables contributes the local gap width
    as Jacobian, and the physical gradient of the potential is rebuilt
    from the transformed one.
    """
    x = u.grid.nodes
    dv = d1_central(u.u, u.grid)
    e2 = p.eps * p.eps
    elastic = float(np.trapezoid(np.sqrt(1.0 + e2 * dv * dv) - 1.0, x))
    if p.lam == 0.0:
        return elastic

    grid2d = grid2d or default_grid2d(u)
    phi = solve_potential(u, p.eps, grid2d).phi
    w = 1.0 + u.u
    eta = grid2d.eta_nodes

    # phi derivatives on the rectangle (2nd-order, one-sided at edges)
    dphi_x = np.empty_like(phi)
    hx = u.grid.h
    dphi_x[1:-1, :] = (phi[2:, :] - phi[:-2, :]) / (2.0 * hx)
    dphi_x[0, :] = (-3.0 * phi[0, :] + 4.0 * phi[1, :] - phi[2, :]) / (2.0 * hx)
    dphi_x[-1, :] = (3.0 * phi[-1, :] - 4.0 * phi[-2, :] + phi[-3, :]) / (2.0 * hx)
    dphi_e = np.empty_like(phi)
    he = grid2d.h_eta
    dphi_e[:, 1:-1] = (phi[:, 2:] - phi[:, :-2]) / (2.0 * he)
    dphi_e[:, 0] = (-3.0 * phi[:, 0] + 4.0 * phi[:, 1] - phi[:, 2]) / (2.0 * he)
    dphi_e[:, -1] = (3.0 * phi[:, -1] - 4.0 * phi[:, -2] + phi[:, -3]) / (2.0 * he)

    # physical gradient through the map: d_z = d_eta / (1+v),
    # d_x picks up the slope term -eta v_x/(1+v) d_eta
    psi_z = dphi_e / w[:, None]
    psi_x = dphi_x - (dv / w)[:, None] * eta[None, :] * dphi_e
    integrand = (e2 * psi_x**2 + psi_z**2) * w[:, None]
    electro = trapezoid_2d(integrand, x, eta)
    return elastic - 0.5 * p.lam * electro


def check_sign_preservation(traj: Trajectory, tol: float = 1e-12) -> bool:
    """True when no stored state pokes above the undeflected plane."""
    return all(float(np.max(s.u)) <= tol for s in traj.states)


def check_evenness_preservation(traj: Trajectory, tol: float = 1e-10) -> bool:
    """True when every stored state is even in x to within ``tol``."""
    return all(float(np.max(np.abs(s.u - s.u[::-1]))) <= tol for s in traj.states)
