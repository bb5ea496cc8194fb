"""Grids, finite-difference kernels and linear solvers used by all modules.

Everything here is pure and operates on plain numpy arrays; grid objects
are immutable after construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, splu

from .errors import NonConvergenceError, SingularSystemError

__all__ = [
    "Grid1D",
    "Grid2D",
    "SparseSystem",
    "grids_match",
    "solve_tridiagonal",
    "solve_sparse",
    "d1_central",
    "d2_central",
    "fit_exponential_rate",
    "trapezoid_2d",
]


@dataclass(frozen=True, eq=False)
class Grid1D:
    """Uniform node grid on the interval [-1, 1]."""

    n_cells: int
    nodes: np.ndarray
    h: float

    @classmethod
    def uniform(cls, n_cells: int) -> "Grid1D":
        if n_cells < 3:
            raise ValueError(f"need at least 3 cells, got {n_cells}")
        nodes = np.linspace(-1.0, 1.0, n_cells + 1)
        return cls(n_cells=n_cells, nodes=nodes, h=2.0 / n_cells)

    @property
    def n_nodes(self) -> int:
        return self.n_cells + 1


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Tensor-product grid on the rectangle [-1, 1] x [0, 1].

    ``gx`` spans the lateral direction, ``eta_nodes`` the vertical one.
    Nodal fields are stored as arrays of shape (gx.n_nodes, n_eta + 1)
    indexed ``[i, j]`` for node (x_i, eta_j).
    """

    gx: Grid1D
    n_eta: int
    eta_nodes: np.ndarray
    h_eta: float

    @classmethod
    def uniform(cls, n_x: int, n_eta: int) -> "Grid2D":
        if n_eta < 3:
            raise ValueError(f"need at least 3 vertical cells, got {n_eta}")
        return cls(
            gx=Grid1D.uniform(n_x),
            n_eta=n_eta,
            eta_nodes=np.linspace(0.0, 1.0, n_eta + 1),
            h_eta=1.0 / n_eta,
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.gx.n_nodes, self.n_eta + 1)

    @property
    def n_interior(self) -> int:
        return (self.gx.n_cells - 1) * (self.n_eta - 1)


def grids_match(a: Grid1D, b: Grid1D) -> bool:
    return a.n_cells == b.n_cells and np.array_equal(a.nodes, b.nodes)


@dataclass(frozen=True, eq=False)
class SparseSystem:
    """A row-compressed linear system A x = rhs with a solve tolerance."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    tol: float = 1e-10


def solve_tridiagonal(lower, diag, upper, rhs) -> np.ndarray:
    """Thomas algorithm for a tridiagonal system.

    ``lower``/``upper`` may be scalars (broadcast) or arrays of length
    n-1; ``diag`` and ``rhs`` have length n.  Intended for strictly
    diagonally dominant or SPD matrices; no pivoting is performed.
    """
    diag = np.asarray(diag, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n = diag.size
    if rhs.size != n:
        raise ValueError(f"rhs length {rhs.size} != diagonal length {n}")
    if np.isscalar(lower) or np.ndim(lower) == 0:
        lower = np.full(n - 1, float(lower))
    else:
        lower = np.asarray(lower, dtype=float)
    if np.isscalar(upper) or np.ndim(upper) == 0:
        upper = np.full(n - 1, float(upper))
    else:
        upper = np.asarray(upper, dtype=float)
    if lower.size != n - 1 or upper.size != n - 1:
        raise ValueError("off-diagonals must have length n-1")

    cp = np.empty(n - 1)
    x = np.empty(n)
    piv = diag[0]
    if piv == 0.0:
        raise SingularSystemError("zero pivot at row 0")
    x[0] = rhs[0] / piv
    for i in range(1, n):
        cp[i - 1] = upper[i - 1] / piv
        piv = diag[i] - lower[i - 1] * cp[i - 1]
        if piv == 0.0:
            raise SingularSystemError(f"zero pivot at row {i}")
        x[i] = (rhs[i] - lower[i - 1] * x[i - 1]) / piv
    for i in range(n - 2, -1, -1):
        x[i] -= cp[i] * x[i + 1]
    return x


def solve_sparse(system: SparseSystem) -> np.ndarray:
    """Direct sparse solve of ``system`` with a residual check.

    Deterministic for fixed inputs.  Raises SingularSystemError on a
    (numerically) singular matrix and NonConvergenceError if the
    residual exceeds ``tol * ||rhs||_2``.
    """
    A = system.matrix.tocsc()
    b = system.rhs
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            # the stencil pattern is structurally symmetric, so the
            # AT+A ordering roughly halves the LU fill of the default
            x = splu(A, permc_spec="MMD_AT_PLUS_A").solve(b)
        except (RuntimeError, MatrixRankWarning) as exc:
            raise SingularSystemError(f"singular system: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("singular system: non-finite solution")
    residual = float(np.linalg.norm(A @ x - b))
    bound = system.tol * float(np.linalg.norm(b))
    if residual > bound + 1e-300:
        raise NonConvergenceError(
            f"sparse solve residual {residual:.3e} exceeds {bound:.3e}",
            residual=residual,
        )
    return x


def _check_length(f: np.ndarray, grid: Grid1D) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.size != grid.n_nodes:
        raise ValueError(f"array length {f.size} != node count {grid.n_nodes}")
    return f


def d1_central(f, grid: Grid1D) -> np.ndarray:
    """First derivative: 2nd-order central inside, 3-point one-sided at the ends."""
    f = _check_length(f, grid)
    h = grid.h
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2.0 * h)
    # difference form of (-3 f0 + 4 f1 - f2): exact zero on constants
    out[0] = (4.0 * (f[1] - f[0]) - (f[2] - f[0])) / (2.0 * h)
    out[-1] = -(4.0 * (f[-2] - f[-1]) - (f[-3] - f[-1])) / (2.0 * h)
    return out


def d2_central(f, grid: Grid1D) -> np.ndarray:
    """Second derivative: 2nd-order central inside, 4-point one-sided at the ends.

    The endpoint stencil (2, -5, 4, -1)/h^2 keeps second order and is
    exact on quadratics, like the interior formula.
    """
    f = _check_length(f, grid)
    h2 = grid.h * grid.h
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / h2
    # (2, -5, 4, -1) written as twice the first second-difference minus
    # the next one: exact zero on constants
    out[0] = (2.0 * (f[0] - 2.0 * f[1] + f[2]) - (f[1] - 2.0 * f[2] + f[3])) / h2
    out[-1] = (2.0 * (f[-1] - 2.0 * f[-2] + f[-3]) - (f[-2] - 2.0 * f[-3] + f[-4])) / h2
    return out


def fit_exponential_rate(times, values) -> tuple[float, float]:
    """Least-squares rate of exponential decay/growth.

    Fits log(values) = rate * t + c and returns (rate, r_squared).
    For constant data r^2 is undefined and reported as 0.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.size != v.size:
        raise ValueError("times and values must have equal length")
    if v.size < 5:
        raise ValueError(f"need at least 5 samples, got {v.size}")
    if np.any(v <= 0.0):
        raise ValueError("values must be strictly positive")
    y = np.log(v)
    rate, intercept = np.polyfit(t, y, 1)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 0.0, 0.0
    ss_res = float(np.sum((y - (rate * t + intercept)) ** 2))
    return float(rate), 1.0 - ss_res / ss_tot


def trapezoid_2d(field: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    """Trapezoid-rule integral of a nodal field over a tensor grid."""
    return float(np.trapezoid(np.trapezoid(field, y, axis=1), x))
