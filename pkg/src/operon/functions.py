"""Random input functions on [0, 1] sampled at fixed sensor locations."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import NumericError, ParameterError


@dataclass(frozen=True)
class SensorGrid:
    """``m`` equally spaced sensors ``x_j = j / (m - 1)`` covering [0, 1]."""

    m: int

    def __post_init__(self):
        if self.m < 2:
            raise ParameterError(f"sensor count must be >= 2, got {self.m}")

    @property
    def locations(self):
        return np.linspace(0.0, 1.0, self.m)


@dataclass
class FunctionSample:
    """A function evaluated on a sensor grid, optionally also on a finer grid."""

    values: np.ndarray
    dense_values: np.ndarray = None


@dataclass(frozen=True)
class GrfSpec:
    length_scale: float = 0.2
    variance: float = 1.0
    jitter: float = 1e-10

    def __post_init__(self):
        if self.length_scale <= 0 or self.variance <= 0 or self.jitter < 0:
            raise ParameterError(
                f"invalid GRF spec: length_scale={self.length_scale}, "
                f"variance={self.variance}, jitter={self.jitter}"
            )


@dataclass(frozen=True)
class FourierSpec:
    n_modes: int = 5
    decay: float = 2.0

    def __post_init__(self):
        if self.n_modes < 1:
            raise ParameterError(f"n_modes must be >= 1, got {self.n_modes}")


def rbf_kernel(x, x2, length_scale, variance):
    d = x[:, None] - x2[None, :]
    return variance * np.exp(-(d * d) / (2.0 * length_scale ** 2))


@lru_cache(maxsize=32)
def _cholesky_factor(length_scale, variance, jitter, m):
    x = np.linspace(0.0, 1.0, m)
    k = rbf_kernel(x, x, length_scale, variance)
    # jitter is relative to the variance so tiny-variance fields stay tiny
    k[np.diag_indices_from(k)] += jitter * variance
    try:
        factor = np.linalg.cholesky(k)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"RBF covariance not positive definite (m={m}, length_scale={length_scale}, "
            f"jitter={jitter}); increase jitter"
        ) from exc
    factor.setflags(write=False)
    return factor


def _subsample_stride(grid, dense):
    if (dense.m - 1) % (grid.m - 1):
        raise ParameterError(
            f"dense grid of {dense.m} points does not contain the {grid.m} sensors"
        )
    return (dense.m - 1) // (grid.m - 1)


def sample_grf(spec, grid, seed, dense=None, clamp=True):
    """Draw a mean-zero Gaussian random field with an RBF kernel.

    The field is drawn as ``L @ z`` with ``L`` the Cholesky factor of the
    kernel matrix and ``z`` standard normal, then clamped to [-1, 1]. When
    ``dense`` is given the draw happens on that finer grid and the sensor
    values are its subsample, so both views describe the same function.
    """
    rng = np.random.default_rng(seed)
    target = dense if dense is not None else grid
    factor = _cholesky_factor(spec.length_scale, spec.variance, spec.jitter, target.m)
    values = factor @ rng.standard_normal(target.m)
    if clamp:
        np.clip(values, -1.0, 1.0, out=values)
    if dense is None:
        return FunctionSample(values)
    stride = _subsample_stride(grid, dense)
    return FunctionSample(values[::stride].copy(), values)


def fourier_series(x, sin_coef, cos_coef, decay):
    k = np.arange(1, len(sin_coef) + 1)
    phase = 2.0 * np.pi * np.outer(x, k)
    weight = k ** (-float(decay))
    return np.sin(phase) @ (weight * sin_coef) + np.cos(phase) @ (weight * cos_coef)


def sample_periodic_fourier(spec, grid, seed, dense=None, coefficients=None):
    """Draw a 1-periodic, zero-mean truncated Fourier series.

    ``v(x) = sum_k k**-decay * (a_k sin(2 pi k x) + b_k cos(2 pi k x))`` with
    ``a_k, b_k ~ N(0, 1)``. Pass ``coefficients=(a, b)`` to fix them.
    """
    if coefficients is None:
        rng = np.random.default_rng(seed)
        coef = rng.standard_normal((2, spec.n_modes))
        sin_coef, cos_coef = coef[0], coef[1]
    else:
        sin_coef, cos_coef = (np.asarray(c, dtype=np.float64) for c in coefficients)
        if sin_coef.shape != (spec.n_modes,) or cos_coef.shape != (spec.n_modes,):
            raise ParameterError(f"coefficients must each have {spec.n_modes} entries")
    values = fourier_series(grid.locations, sin_coef, cos_coef, spec.decay)
    # both endpoints see phase 0 (mod 2 pi); make the identity exact
    values[-1] = values[0]
    dense_values = None
    if dense is not None:
        dense_values = fourier_series(dense.locations, sin_coef, cos_coef, spec.decay)
        dense_values[-1] = dense_values[0]
    return FunctionSample(values, dense_values)


def _symmetrized(u, base, scale, floor):
    return np.maximum(floor, base + scale * (u + u[::-1]) / 2.0)


def diffusion_coefficient(u, base, scale, floor=0.02):
    """Location-dependent coefficient ``max(floor, base + scale * (u(x) + u(1-x)) / 2)``.

    The grid must be symmetric under ``x -> 1 - x``, which any equally
    spaced grid on [0, 1] is, so ``u(1 - x_j)`` is ``u[m - 1 - j]``.
    """
    if floor <= 0:
        raise ParameterError(f"coefficient floor must be positive, got {floor}")
    values = _symmetrized(np.asarray(u.values, dtype=np.float64), base, scale, floor)
    dense_values = None
    if u.dense_values is not None:
        dense_values = _symmetrized(u.dense_values, base, scale, floor)
    return FunctionSample(values, dense_values)
