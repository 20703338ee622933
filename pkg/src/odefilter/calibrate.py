"""Quasi-maximum-likelihood calibration of the prior's diffusion magnitude.

Four schemes: time-varying or time-constant, scalar or per-dimension
vector. Time-varying estimates rescale the process noise of the current
step before the covariance is propagated; time-constant estimates are
accumulated over the whole solve at unit diffusion and applied to the
covariances post hoc (the filter means do not depend on a constant global
scale, so no second pass is needed).
"""

from __future__ import annotations

import dataclasses
from collections.abc import Callable

import numpy as np

# diffusion estimates below this are floored when scaling process noise,
# keeping innovations nonsingular on exactly-linear problems
GAMMA_SQ_FLOOR = 1e-14


@dataclasses.dataclass(frozen=True)
class DiffusionSpec:
    """Which calibration runs, and the fixed left covariance factor.

    gamma_breve is the per-dimension factor of the prior covariance: None
    means identity, a vector means diagonal, a matrix is allowed for scalar
    calibration only. gamma_breve_inv_quad computes x -> x^T (Gamma)^-1 x
    and may be supplied externally when a cheap inverse is known.
    """

    variability: str = "time-varying"
    shape: str = "scalar"
    gamma_breve: np.ndarray | None = None
    gamma_breve_inv_quad: Callable[[np.ndarray], float] | None = None

    def __post_init__(self):
        if self.variability not in ("time-varying", "time-constant"):
            raise ValueError(f"unknown variability {self.variability!r}")
        if self.shape not in ("scalar", "vector"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.gamma_breve is not None:
            gb = np.asarray(self.gamma_breve, dtype=float)
            object.__setattr__(self, "gamma_breve", gb)
            if self.shape == "vector" and gb.ndim != 1:
                raise ValueError("vector-shaped calibration requires a diagonal gamma_breve")

    def inv_quad(self, x: np.ndarray) -> float:
        if self.gamma_breve_inv_quad is not None:
            return float(self.gamma_breve_inv_quad(x))
        if self.gamma_breve is None:
            return float(x @ x)
        if self.gamma_breve.ndim == 1:
            return float(x @ (x / self.gamma_breve))
        return float(x @ np.linalg.solve(self.gamma_breve, x))


def calibrate_local_scalar(
    z: np.ndarray, sigma_meas: np.ndarray, spec: DiffusionSpec | None = None
) -> float:
    """Single-step scalar diffusion estimate.

    With a diagonal measurement covariance this is the mean of
    z_i^2 / sigma_meas[i]; with a shared left factor Gamma it is the
    O(d) quadratic form z^T Gamma^-1 z / (d * sigma_scalar).
    """
    z = np.asarray(z, dtype=float)
    sigma_meas = np.asarray(sigma_meas, dtype=float)
    if np.any(sigma_meas <= 0):
        raise ValueError("sigma_meas entries must be positive")
    if spec is not None and (spec.gamma_breve is not None or spec.gamma_breve_inv_quad is not None):
        return spec.inv_quad(z) / (z.shape[0] * float(sigma_meas.reshape(-1)[0]))
    ratios = z * z / sigma_meas
    return float(ratios.sum() / ratios.size)


def calibrate_local_vector(z: np.ndarray, sigma_meas: np.ndarray) -> np.ndarray:
    """Single-step per-dimension diffusion estimates z_i^2 / sigma_meas[i]."""
    z = np.asarray(z, dtype=float)
    sigma_meas = np.asarray(sigma_meas, dtype=float)
    if np.any(sigma_meas <= 0):
        raise ValueError("sigma_meas entries must be positive")
    return z * z / sigma_meas


@dataclasses.dataclass
class CalibrationAccumulator:
    """Running mean of per-step squared-residual ratios at unit diffusion."""

    count: int = 0
    sums: np.ndarray | float = 0.0

    def finalize(self):
        if self.count == 0:
            raise ValueError("cannot finalize a calibration over zero steps")
        if isinstance(self.sums, np.ndarray):
            return self.sums / self.count
        return self.sums / self.count


def accumulate_time_constant(
    acc: CalibrationAccumulator,
    z: np.ndarray,
    s_unit: np.ndarray,
    spec: DiffusionSpec | None = None,
) -> CalibrationAccumulator:
    """Fold one step's residual into a time-constant estimate.

    s_unit must be the measurement variance of the unit-diffusion process
    noise (the constant factor cancels multiplicatively, so accumulating at
    unit scale and averaging recovers the quasi-MLE).
    """
    z = np.asarray(z, dtype=float)
    s_unit = np.asarray(s_unit, dtype=float)
    if np.any(s_unit <= 0):
        raise ValueError("s_unit entries must be positive")
    if spec is not None and spec.shape == "scalar":
        ratio = calibrate_local_scalar(z, s_unit, spec)
        return CalibrationAccumulator(count=acc.count + 1, sums=acc.sums + ratio)
    ratios = z * z / s_unit
    sums = ratios if acc.count == 0 else acc.sums + ratios
    return CalibrationAccumulator(count=acc.count + 1, sums=sums)


def rescale_posthoc(states, gamma_sq):
    """Scale covariance square roots of finished states by sqrt(gamma_sq).

    gamma_sq is a scalar (applied to the Kronecker right factor or the
    whole square root) or a length-d vector (applied per dimension block).
    Means are untouched.
    """
    from odefilter import structmat
    from odefilter.stepper import GaussianState

    out = []
    for state in states:
        cov = state.cov_sqrt
        if np.ndim(gamma_sq) == 0:
            factor = float(np.sqrt(gamma_sq))
            if isinstance(cov, structmat.Kronecker):
                new_cov = structmat.Kronecker(cov.left, factor * cov.right)
            elif isinstance(cov, structmat.BlockDiagonal):
                new_cov = structmat.BlockDiagonal(factor * cov.blocks)
            else:
                new_cov = structmat.Dense(factor * cov.entries)
        else:
            factors = np.sqrt(np.asarray(gamma_sq, dtype=float))
            if isinstance(cov, structmat.BlockDiagonal):
                if factors.shape[0] != cov.num_blocks:
                    raise ValueError(
                        f"got {factors.shape[0]} scale factors for {cov.num_blocks} blocks"
                    )
                new_cov = structmat.BlockDiagonal(factors[:, None, None] * cov.blocks)
            elif isinstance(cov, structmat.Dense):
                r = cov.entries.shape[0] // factors.shape[0]
                new_cov = structmat.Dense(np.repeat(factors, r)[:, None] * cov.entries)
            else:
                raise ValueError("per-dimension rescaling is incompatible with a Kronecker factor")
        out.append(GaussianState(t=state.t, mean=state.mean, cov_sqrt=new_cov))
    return out
