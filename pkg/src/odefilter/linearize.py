"""Linearizations of the ODE information operator.

The measurement conditions the local defect, first derivative minus vector
field, to zero. Its linearization at a point xi is kept implicit: instead of
materializing the measurement matrix, we store f(xi), xi, and the Jacobian
data (none for EK0, the diagonal for the diagonal EK1, the full matrix for
the dense EK1) and let the stepper contract them blockwise.
"""

from __future__ import annotations

import dataclasses
import enum
import warnings

import numpy as np

from odefilter.problems import OdeProblem


class LinearizationStrategy(str, enum.Enum):
    EK0 = "ek0"
    DIAGONAL_EK1 = "diagonal-ek1"
    DENSE_EK1 = "dense-ek1"


class NonFiniteEvaluationError(ValueError):
    """The vector field or its Jacobian produced nan or inf."""


@dataclasses.dataclass(frozen=True)
class Linearization:
    """Vector field data at the linearization point.

    Exactly one of jac_diag / jac_dense is set, or neither for EK0. The
    residual of a state mean m under this linearization is
    row1(m) - fval - F_y (row0(m) - point).
    """

    point: np.ndarray
    fval: np.ndarray
    jac_diag: np.ndarray | None = None
    jac_dense: np.ndarray | None = None

    def residual(self, mean_grid: np.ndarray) -> np.ndarray:
        z = mean_grid[:, 1] - self.fval
        shift = mean_grid[:, 0] - self.point
        if self.jac_diag is not None:
            z = z - self.jac_diag * shift
        elif self.jac_dense is not None:
            z = z - self.jac_dense @ shift
        return z


def linearize_at(
    strategy: LinearizationStrategy,
    problem: OdeProblem,
    eta_state_row: np.ndarray,
    t: float,
) -> Linearization:
    """Linearize the information operator at xi = eta_state_row.

    eta_state_row is the zeroth-derivative row of the predicted mean. At
    that point the residual reduces to row1 - f(xi) for every strategy; the
    Jacobian affects only the measurement covariance and gain.
    """
    xi = np.asarray(eta_state_row, dtype=float)
    fval = np.asarray(problem.f(t, xi), dtype=float)
    if not np.all(np.isfinite(fval)):
        raise NonFiniteEvaluationError(f"vector field returned non-finite values at t={t}")
    if strategy == LinearizationStrategy.EK0:
        return Linearization(point=xi, fval=fval)
    if strategy == LinearizationStrategy.DIAGONAL_EK1:
        if problem.jac_diag is not None:
            diag = np.asarray(problem.jac_diag(t, xi), dtype=float)
        elif problem.jac_dense is not None:
            warnings.warn(
                "extracting the Jacobian diagonal from a dense callback costs O(d^2) per step",
                stacklevel=2,
            )
            diag = np.diag(np.asarray(problem.jac_dense(t, xi), dtype=float)).copy()
        else:
            raise ValueError(
                f"problem {problem.name!r} supplies no Jacobian; the diagonal EK1 needs "
                "jac_diag (or jac_dense, or an explicit finite-difference wrapper)"
            )
        return Linearization(point=xi, fval=fval, jac_diag=diag)
    if problem.jac_dense is None:
        raise ValueError(f"problem {problem.name!r} supplies no dense Jacobian for the dense EK1")
    dense = np.asarray(problem.jac_dense(t, xi), dtype=float)
    return Linearization(point=xi, fval=fval, jac_dense=dense)
