"""Local-error norms and proportional-integral step-size control.

The error estimate fed in here is the calibrated standard deviation of
the local defect, one entry per ODE dimension. The controller is the
usual PI rule on the scaled RMS norm: accept when the norm is at most
one, and propose the next step from the current and previous norms.
"""

from __future__ import annotations

import dataclasses

import numpy as np


class StepSizeUnderflowError(RuntimeError):
    """Raised when rejections push the step below the controller minimum."""

    def __init__(self, t: float, h: float):
        super().__init__(f"step size underflow at t={t!r} (h={h!r} is at the controller minimum)")
        self.t = t
        self.h = h


@dataclasses.dataclass(frozen=True)
class StepController:
    """Tolerances and PI gains for adaptive stepping.

    The PI exponents default to 0.7/order and 0.4/order; order_for_control
    should be the prior's number of integrations.
    """

    rtol: float
    atol: float
    order_for_control: int = 1
    safety: float = 0.9
    factor_min: float = 0.2
    factor_max: float = 10.0
    h_min: float = 1e-12
    h_max: float = np.inf
    pi_alpha: float | None = None
    pi_beta: float | None = None

    def __post_init__(self):
        # rtol may be zero for purely absolute control; atol must not be
        if self.rtol < 0 or not self.atol > 0:
            raise ValueError("need rtol >= 0 and atol > 0")
        if not 0 < self.safety < 1:
            raise ValueError("safety factor must lie in (0, 1)")
        if not 0 < self.factor_min < 1 < self.factor_max:
            raise ValueError("need factor_min < 1 < factor_max")
        if self.order_for_control < 1:
            raise ValueError("order_for_control must be at least 1")
        if not 0 < self.h_min <= self.h_max:
            raise ValueError("need 0 < h_min <= h_max")
        if self.pi_alpha is None:
            object.__setattr__(self, "pi_alpha", 0.7 / self.order_for_control)
        if self.pi_beta is None:
            object.__setattr__(self, "pi_beta", 0.4 / self.order_for_control)


def error_norm(
    err: np.ndarray, y_prev: np.ndarray, y_new: np.ndarray, ctrl: StepController
) -> float:
    """RMS of the error estimate over the mixed absolute/relative scale."""
    err = np.asarray(err, dtype=float)
    scale = ctrl.atol + ctrl.rtol * np.maximum(np.abs(y_prev), np.abs(y_new))
    ratio = err / scale
    return float(np.sqrt(np.mean(ratio * ratio)))


def propose(
    h: float, norm: float, prev_norm: float, ctrl: StepController
) -> tuple[bool, float]:
    """Accept/reject the step of size h and propose the next size.

    The growth factor safety * norm^-alpha * prev_norm^beta is clipped to
    [factor_min, factor_max] before applying, and the result to
    [h_min, h_max]. A zero norm maps to the maximum growth.
    """
    if not np.isfinite(norm):
        raise ValueError(f"error norm must be finite, got {norm!r}")
    accept = norm <= 1.0
    if norm == 0.0:
        factor = ctrl.factor_max
    else:
        factor = ctrl.safety * norm ** (-ctrl.pi_alpha) * prev_norm**ctrl.pi_beta
        factor = min(max(factor, ctrl.factor_min), ctrl.factor_max)
    h_next = min(max(h * factor, ctrl.h_min), ctrl.h_max)
    return accept, h_next


def initial_step(t0: float, t_max: float) -> float:
    """First trial step: one percent of the integration span."""
    if not t_max > t0:
        raise ValueError("t_max must exceed t0")
    return 0.01 * (t_max - t0)
