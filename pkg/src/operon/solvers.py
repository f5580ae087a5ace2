"""Finite-difference ground truth for the two periodic benchmark PDEs.

Both solvers use Crank-Nicolson in time and second-order central
differences in space on a periodic grid over [0, 1]. Each implicit step is
a cyclic tridiagonal solve, done by Sherman-Morrison reduction to an
ordinary tridiagonal (Thomas) system.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import NumericError, ParameterError


@dataclass(frozen=True)
class SolverGrid:
    """Space-time grid; ``substeps`` Crank-Nicolson steps are taken per output level."""

    nx: int = 201
    nt: int = 201
    substeps: int = 2

    def __post_init__(self):
        if self.nx < 4 or self.nt < 2:
            raise ParameterError(f"solver grid needs nx >= 4 and nt >= 2, got {self.nx}x{self.nt}")
        if self.substeps < 1:
            raise ParameterError(f"substeps must be >= 1, got {self.substeps}")

    @property
    def dx(self):
        return 1.0 / (self.nx - 1)

    @property
    def dt(self):
        return 1.0 / (self.nt - 1)

    @property
    def step(self):
        return self.dt / self.substeps

    @property
    def x(self):
        return np.linspace(0.0, 1.0, self.nx)

    @property
    def t(self):
        return np.linspace(0.0, 1.0, self.nt)


@dataclass
class SolutionField:
    """Solution values on the space-time grid; ``values[k, j] = s(x_j, t_k)``."""

    grid: SolverGrid
    values: np.ndarray


class TridiagonalFactor:
    """Thomas-algorithm factorization of a tridiagonal matrix.

    ``sub[i]`` is entry (i+1, i) and ``sup[i]`` is entry (i, i+1).
    The elimination coefficients are computed once; :meth:`solve` only
    performs the forward and backward sweeps.
    """

    def __init__(self, sub, diag, sup):
        n = len(diag)
        sub = [float(s) for s in sub]
        diag = [float(d) for d in diag]
        sup = [float(s) for s in sup]
        if len(sub) != n - 1 or len(sup) != n - 1:
            raise ParameterError(f"off-diagonals must have {n - 1} entries")
        scale = max(abs(d) for d in diag) or 1.0
        tiny = 1e-14 * scale
        inv_pivot = [0.0] * n
        upper = [0.0] * max(n - 1, 0)
        pivot = diag[0]
        for i in range(n):
            if i > 0:
                pivot = diag[i] - sub[i - 1] * upper[i - 1]
            if abs(pivot) <= tiny:
                raise NumericError(f"zero pivot at row {i} in tridiagonal elimination")
            inv_pivot[i] = 1.0 / pivot
            if i < n - 1:
                upper[i] = sup[i] * inv_pivot[i]
        self.n = n
        self._sub = sub
        self._upper = upper
        self._inv_pivot = inv_pivot

    def solve(self, rhs):
        n = self.n
        sub, upper, inv_pivot = self._sub, self._upper, self._inv_pivot
        y = [float(r) for r in rhs]
        if len(y) != n:
            raise ParameterError(f"right-hand side has {len(y)} entries, expected {n}")
        y[0] *= inv_pivot[0]
        for i in range(1, n):
            y[i] = (y[i] - sub[i - 1] * y[i - 1]) * inv_pivot[i]
        for i in range(n - 2, -1, -1):
            y[i] -= upper[i] * y[i + 1]
        return np.array(y)


class CyclicTridiagonalFactor:
    """Reusable solver for a periodic tridiagonal system.

    The matrix has ``diag`` on the diagonal, ``sub``/``sup`` on the first
    off-diagonals (length n-1 each), ``corner_hi`` at (0, n-1) and
    ``corner_lo`` at (n-1, 0). Writing it as ``T + u v^T`` with ``T``
    tridiagonal, each solve costs two sweeps plus a rank-one correction
    whose vector ``T^-1 u`` is computed once at construction.
    """

    def __init__(self, sub, diag, sup, corner_lo, corner_hi):
        diag = np.array(diag, dtype=np.float64)
        n = len(diag)
        if n < 3:
            raise ParameterError(f"cyclic system needs n >= 3, got {n}")
        gamma = -diag[0] if diag[0] != 0.0 else -1.0
        modified = diag.copy()
        modified[0] -= gamma
        modified[-1] -= corner_lo * corner_hi / gamma
        self._tri = TridiagonalFactor(sub, modified, sup)
        u = np.zeros(n)
        u[0] = gamma
        u[-1] = corner_lo
        self._v0 = 1.0
        self._vn = corner_hi / gamma
        self._z = self._tri.solve(u)
        denom = 1.0 + self._v0 * self._z[0] + self._vn * self._z[-1]
        if abs(denom) <= 1e-14 * max(1.0, np.abs(self._z).max()):
            raise NumericError("cyclic system is singular (Sherman-Morrison denominator vanished)")
        self._denom = denom
        self.n = n

    def solve(self, rhs):
        y = self._tri.solve(rhs)
        factor = (self._v0 * y[0] + self._vn * y[-1]) / self._denom
        return y - factor * self._z


def solve_cyclic_tridiagonal(sub, diag, sup, corner_lo, corner_hi, rhs):
    """Solve a periodic tridiagonal system (see :class:`CyclicTridiagonalFactor`)."""
    return CyclicTridiagonalFactor(sub, diag, sup, corner_lo, corner_hi).solve(rhs)


def _check_inputs(a, v, grid):
    a = np.asarray(a, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if a.shape != (grid.nx,) or v.shape != (grid.nx,):
        raise ParameterError(
            f"coefficient and initial values need {grid.nx} entries, got {a.shape} and {v.shape}"
        )
    if not np.all(a > 0):
        raise ParameterError(f"diffusion coefficient must be positive, min is {a.min()}")
    if not np.all(np.isfinite(v)):
        raise ParameterError("initial condition contains non-finite values")
    if abs(v[0] - v[-1]) > 1e-10 * max(1.0, np.abs(v).max()):
        raise ParameterError(f"initial condition is not periodic: v(0)={v[0]}, v(1)={v[-1]}")
    return a, v


def _crank_nicolson(lower, center, upper, v, grid):
    # (dt/2) L s_j = lower_j s_{j-1} + center_j s_j + upper_j s_{j+1} on periodic nodes 0..n-1
    n = grid.nx - 1
    step = CyclicTridiagonalFactor(
        sub=-lower[1:], diag=1.0 - center, sup=-upper[:-1],
        corner_lo=-upper[-1], corner_hi=-lower[0],
    )
    out = np.empty((grid.nt, grid.nx))
    s = v[:n].copy()
    out[0, :n] = s
    for k in range(1, grid.nt):
        for _ in range(grid.substeps):
            rhs = s + center * s + lower * np.roll(s, 1) + upper * np.roll(s, -1)
            s = step.solve(rhs)
        out[k, :n] = s
    out[:, n] = out[:, 0]
    if not np.all(np.isfinite(out)):
        raise NumericError("solver produced non-finite values")
    return out


def solve_diffusion(a, v, grid):
    """Solve ``s_t = a(x) s_xx`` on [0, 1] x [0, 1] with periodic boundaries."""
    a, v = _check_inputs(a, v, grid)
    n = grid.nx - 1
    r = a[:n] * grid.step / (2.0 * grid.dx ** 2)
    values = _crank_nicolson(r, -2.0 * r, r, v, grid)
    return SolutionField(grid, values)


def solve_advection_diffusion(a, v, grid):
    """Solve ``s_t + s_x = a(x) s_xx`` with periodic boundaries (unit advection speed)."""
    a, v = _check_inputs(a, v, grid)
    n = grid.nx - 1
    r = a[:n] * grid.step / (2.0 * grid.dx ** 2)
    c = grid.step / (4.0 * grid.dx)
    values = _crank_nicolson(r + c, -2.0 * r, r - c, v, grid)
    return SolutionField(grid, values)


def _fractional_index(coord, n_points, name):
    coord = np.asarray(coord, dtype=np.float64)
    if np.any((coord < 0.0) | (coord > 1.0)) or not np.all(np.isfinite(coord)):
        raise ParameterError(f"query {name} outside [0, 1]")
    f = coord * (n_points - 1)
    nearest = np.rint(f)
    f = np.where(np.abs(f - nearest) < 1e-9, nearest, f)
    i = np.minimum(np.floor(f).astype(np.int64), n_points - 2)
    return i, f - i


def sample_query(field, x, t):
    """Bilinear interpolation of ``field`` at ``(x, t)``; scalars or arrays.

    Exact at grid nodes and for fields that are linear in x and t.
    """
    grid = field.grid
    i, wx = _fractional_index(x, grid.nx, "x")
    k, wt = _fractional_index(t, grid.nt, "t")
    s = field.values
    out = ((1.0 - wt) * ((1.0 - wx) * s[k, i] + wx * s[k, i + 1])
           + wt * ((1.0 - wx) * s[k + 1, i] + wx * s[k + 1, i + 1]))
    return float(out) if np.ndim(out) == 0 else out
