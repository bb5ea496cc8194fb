"""Mapping between the physical membrane domain and the fixed rectangle.

The region between ground plate and membrane {(x, z): -1 < z < v(x)} is
pulled onto [-1,1] x [0,1] by (x, z) -> (x, (1+z)/(1+v(x))).  Under this
map the Laplacian becomes a v-dependent operator with a mixed-derivative
term and a first-order vertical drift; this module assembles its
coefficient fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError
from .numerics import Grid1D, Grid2D, d1_central, d2_central, grids_match

__all__ = [
    "MembraneState",
    "OperatorCoefficients",
    "map_to_rect",
    "map_from_rect",
    "assemble_coefficients",
    "source_f_v",
    "random_admissible_state",
]


@dataclass(frozen=True, eq=False)
class MembraneState:
    """Deflection profile on a 1-D grid at a given time.

    Clamped at both ends: u[0] = u[-1] = 0.
    """

    grid: Grid1D
    u: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        if u.size != self.grid.n_nodes:
            raise ValueError(f"deflection length {u.size} != node count {self.grid.n_nodes}")
        if max(abs(u[0]), abs(u[-1])) > 1e-12:
            raise ValueError("membrane must be clamped: u(-1) = u(1) = 0")
        if not np.all(np.isfinite(u)):
            raise ValueError("deflection contains non-finite values")
        if u[0] != 0.0 or u[-1] != 0.0:
            u = u.copy()  # snap roundoff-level end values (e.g. sin(k*pi))
            u[0] = u[-1] = 0.0
        object.__setattr__(self, "u", u)

    @property
    def min_gap(self) -> float:
        """Smallest distance 1 + u to the ground plate."""
        return float(np.min(1.0 + self.u))

    def interp(self, x) -> np.ndarray:
        """Piecewise-linear interpolation of the deflection."""
        return np.interp(x, self.grid.nodes, self.u)

    @classmethod
    def zero(cls, grid: Grid1D, time: float = 0.0) -> "MembraneState":
        return cls(grid, np.zeros(grid.n_nodes), time)


@dataclass(frozen=True, eq=False)
class OperatorCoefficients:
    """Nodal coefficient fields of the mapped elliptic operator.

    The operator is
        a_xx d_xx + a_xeta d_x d_eta + a_etaeta d_etaeta + b_eta d_eta
    with a_xx = eps^2 constant.
    """

    grid: Grid2D
    a_xx: np.ndarray
    a_xeta: np.ndarray
    a_etaeta: np.ndarray
    b_eta: np.ndarray


def _interp_v(x, v: MembraneState):
    x = np.asarray(x, dtype=float)
    if np.any(x < -1.0) or np.any(x > 1.0):
        raise ValueError("x outside [-1, 1]")
    return v.interp(x)


def map_to_rect(x, z, v: MembraneState):
    """Map a physical point (x, z) with -1 <= z <= v(x) to (x, eta)."""
    vx = _interp_v(x, v)
    z = np.asarray(z, dtype=float)
    if np.any(z < -1.0) or np.any(z > vx):
        raise ValueError("z outside [-1, v(x)]")
    eta = (1.0 + z) / (1.0 + vx)
    return x, eta


def map_from_rect(x, eta, v: MembraneState):
    """Inverse map: (x, eta) in [-1,1] x [0,1] back to the physical (x, z)."""
    eta = np.asarray(eta, dtype=float)
    if np.any(eta < 0.0) or np.any(eta > 1.0):
        raise ValueError("eta outside [0, 1]")
    vx = _interp_v(x, v)
    return x, (1.0 + vx) * eta - 1.0


def _check_admissible(v: MembraneState):
    if v.min_gap <= 0.0:
        raise DegenerateGeometryError(
            f"membrane touches the ground plate (min gap {v.min_gap:.3e})"
        )


def _slope_fields(v: MembraneState):
    """Return (dv/(1+v), d2v/(1+v)) sampled at the x-nodes."""
    w = 1.0 + v.u
    dv = d1_central(v.u, v.grid)
    d2v = d2_central(v.u, v.grid)
    return dv, dv / w, d2v / w


def _b_eta_field(v: MembraneState, eps: float, grid: Grid2D) -> np.ndarray:
    _, s, q = _slope_fields(v)
    # eps^2 * eta * (2 s^2 - q), outer product over (x, eta)
    return eps * eps * np.outer(2.0 * s * s - q, grid.eta_nodes)


def assemble_coefficients(v: MembraneState, eps: float, grid: Grid2D) -> OperatorCoefficients:
    """Evaluate the four coefficient fields of the mapped operator on ``grid``."""
    if eps <= 0.0:
        raise ValueError("aspect ratio must be positive")
    if not grids_match(grid.gx, v.grid):
        raise ValueError("2-D grid does not share the membrane's x-nodes")
    _check_admissible(v)

    eta = grid.eta_nodes
    w = 1.0 + v.u
    dv, s, _ = _slope_fields(v)
    e2 = eps * eps

    shape = grid.shape
    a_xx = np.full(shape, e2)
    a_xeta = -2.0 * e2 * np.outer(s, eta)
    a_etaeta = (1.0 + e2 * np.outer(dv * dv, eta * eta)) / (w * w)[:, None]
    b_eta = _b_eta_field(v, eps, grid)
    return OperatorCoefficients(grid, a_xx, a_xeta, a_etaeta, b_eta)


def source_f_v(v: MembraneState, eps: float, grid: Grid2D) -> np.ndarray:
    """Source produced by applying the mapped operator to eta itself.

    Equals the b_eta coefficient field nodewise (the eta-derivative of
    eta is one, all other derivatives vanish).
    """
    if eps <= 0.0:
        raise ValueError("aspect ratio must be positive")
    if not grids_match(grid.gx, v.grid):
        raise ValueError("2-D grid does not share the membrane's x-nodes")
    _check_admissible(v)
    return _b_eta_field(v, eps, grid)


def random_admissible_state(
    grid: Grid1D,
    rng: np.random.Generator,
    min_gap: float = 0.3,
    modes: int = 6,
    amplitude: float = 0.3,
) -> MembraneState:
    """Random smooth clamped deflection with min(1+u) >= min_gap.

    A low-order sine series with decaying random coefficients, rescaled
    when it dips too close to the plate.  Used for randomized solver
    cross-checks.
    """
    x = grid.nodes
    u = np.zeros_like(x)
    for k in range(1, modes + 1):
        u += rng.normal(0.0, amplitude / (k * k)) * np.sin(k * np.pi * (x + 1.0) / 2.0)
    u[0] = u[-1] = 0.0  # sin(k*pi) is only zero up to roundoff
    depth = float(np.max(-u))
    if depth > 1.0 - min_gap:
        u *= (1.0 - min_gap) / depth
    return MembraneState(grid, u)
