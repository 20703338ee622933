"""Derivative initialization from a short bootstrap trajectory.

A few explicit Runge-Kutta steps near t0 pin down the higher derivative
coordinates of the state by exact Gaussian conditioning: the stacked state at
t0 starts diffuse, each bootstrap point contributes a noise-free position
observation and a noise-free slope observation (the vector field evaluated
there), and the posterior at t0 is recovered in one square-root conditioning
pass. The observation geometry is identical for every dimension, so one gain
matrix and one posterior right factor serve all of them, and the result is
exactly Kronecker (hence exactly block-diagonal).
"""

from __future__ import annotations

import dataclasses
import functools
import math

import numpy as np

from odefilter import prior as prior_mod
from odefilter import structmat
from odefilter.problems import OdeProblem
from odefilter.stepper import GaussianState


@dataclasses.dataclass(frozen=True)
class InitPlan:
    """Knobs for the bootstrap conditioning.

    n_points defaults to nu+1 (the only admissible count: one point per
    derivative coordinate); passing anything else is an error. dt=None picks
    a spacing from the problem's time span and stiffness, see default_dt.
    c0_scale is the nominal diffuse variance of the unobserved coordinates;
    since the noise-free observations determine those coordinates exactly,
    any value this side of overflow yields the same posterior to machine
    precision, and the conditioning is evaluated in its large-c0 limit.
    """

    n_points: int | None = None
    dt: float | None = None
    rk_order: int = 4
    c0_scale: float = 1e6
    substeps: int | None = None

    def __post_init__(self):
        if self.dt is not None and not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if self.rk_order not in (1, 2, 4):
            raise ValueError(f"rk_order must be 1, 2, or 4, got {self.rk_order}")
        if not (np.isfinite(self.c0_scale) and self.c0_scale > 0):
            raise ValueError(f"c0_scale must be positive, got {self.c0_scale}")
        if self.substeps is not None and self.substeps < 1:
            raise ValueError(f"substeps must be >= 1, got {self.substeps}")


def stiffness_rate(problem: OdeProblem) -> float | None:
    """Jacobian norm at the initial point, or None without a Jacobian."""
    if problem.jac_dense is not None:
        jac = np.asarray(problem.jac_dense(problem.t0, problem.y0), dtype=float)
        jnorm = float(np.abs(jac).sum(axis=1).max())
    elif problem.jac_diag is not None:
        diag = np.asarray(problem.jac_diag(problem.t0, problem.y0), dtype=float)
        jnorm = float(np.abs(diag).max())
    else:
        return None
    if np.isfinite(jnorm) and jnorm > 0:
        return jnorm
    return None


def default_dt(problem: OdeProblem, nu: int) -> float:
    """Bootstrap spacing: grows with nu, capped by span and stiffness.

    Extracting derivative q from the data amplifies machine-epsilon noise by
    roughly 1/dt^q, so higher nu wants wider spacing; the operator-side
    truncation that argues for small dt is pushed down separately by taking
    integrator substeps inside each interval. On a problem with Jacobian
    norm L the conditioning truncation on derivative q is a relative
    (L dt)^(2 nu + 2 - q), so dt is capped at 0.02 / L: at 0.5 / L the
    second-derivative coordinate of Van der Pol at mu = 1e5 comes out a
    few percent off, the defect of the very first filter step then decays
    only linearly in h, and no step is ever accepted.
    """
    span = problem.tmax - problem.t0
    dt = 10.0 ** (-3.0 + 0.7 * (nu - 2))
    dt = min(dt, 0.1, 0.05 * span / max(nu, 1))
    rate = stiffness_rate(problem)
    if rate is not None:
        dt = min(dt, 0.02 / rate)
    return max(dt, 1e-8)


def default_substeps(nu: int, dt: float, rk_order: int, rate: float | None = None) -> int:
    """Substep count pushing bootstrap truncation to the roundoff floor.

    One order-p step of size dt/M per substep leaves a window-wide error of
    about nu dt (dt/M)^p; M is chosen so that lands near 1e-17, below the
    representation noise of the data itself. On stiff problems the absolute
    target misjudges the scale, so a second bound drives the relative
    window error nu (L dt/M)^(p+1) M / (p+1)! below 1e-16. Both are capped
    because low-order bootstraps would otherwise ask for astronomical
    counts.
    """
    target = 1e-17
    m = (max(nu, 1) * dt / target) ** (1.0 / rk_order) * dt
    if rate is not None:
        p = rk_order
        m_rel = (
            max(nu, 1) * (dt * rate) ** (p + 1) * 1e16 / math.factorial(p + 1)
        ) ** (1.0 / p)
        m = max(m, m_rel)
    return int(np.clip(np.ceil(m), 1, 1000))


def _rk_step(f, t: float, y: np.ndarray, h: float, order: int) -> np.ndarray:
    if order == 1:
        return y + h * f(t, y)
    if order == 2:
        k1 = f(t, y)
        k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
        return y + h * k2
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def bootstrap_values(
    problem: OdeProblem, nu: int, dt: float, rk_order: int, substeps: int = 1
) -> np.ndarray:
    """Rows m = 0..nu hold the explicit solution estimate at t0 + m dt."""
    out = np.empty((nu + 1, problem.dim))
    y = np.array(problem.y0, dtype=float)
    out[0] = y
    h = dt / substeps
    for m in range(1, nu + 1):
        base = problem.t0 + (m - 1) * dt
        for k in range(substeps):
            y = _rk_step(problem.f, base + k * h, y, h, rk_order)
        if not np.all(np.isfinite(y)):
            raise ValueError(
                f"bootstrap trajectory left the finite range at "
                f"t = {problem.t0 + m * dt!r} (dt = {dt!r}); try a smaller dt"
            )
        out[m] = y
    return out


def conditioning_operator(nu: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Gain and posterior factor for the bootstrap conditioning.

    Internally the chain carries 2 nu + 2 derivative coordinates, twice the
    solver's stack: each of the nu later grid points contributes a position
    observation and a slope observation, and those 2 nu noise-free
    observations determine a chain whose conditional mean reproduces
    polynomials up to degree 2 nu + 1. That is what buys derivative-q
    accuracy O(dt^(2 nu + 2 - q)); a chain of the solver's own length leaves
    an O(dt) bias on the top coordinate, and no dt satisfies both that bias
    and the 1/dt^q roundoff amplification in double precision. The posterior
    is marginalized to the solver's nu+1 coordinates at the end.

    With exactly as many noise-free observations as free coordinates, the
    diffuse-prior posterior mean is plain Hermite interpolation: the gain is
    the inverse of the observation operator on the free coordinates, and the
    finite diffuse scale only enters at relative order 1/c0_scale, far below
    double precision. The linear systems are solved in scaled coordinates
    (coordinate q carries dt^q/q!, slope rows carry dt) so the matrices stay
    Vandermonde-conditioned instead of dt-graded.

    Returns (gain, post_sqrt): gain is (nu+1, 2 nu) and maps the stacked
    residuals (position, slope, position, slope, ...) to mean updates;
    post_sqrt is the shared lower-triangular posterior factor over one
    dimension's nu+1 coordinates. Everything is dimension-independent.
    """
    return _conditioning_operator_cached(int(nu), float(dt))


@functools.lru_cache(maxsize=64)
def _conditioning_operator_cached(nu: int, dt: float):
    order = 2 * nu + 1
    big = order + 1
    n_obs = 2 * nu
    r = nu + 1
    qs = np.arange(2, order + 1)
    ms = np.arange(1, nu + 1)

    # Scaled observation operator: position rows m^q, slope rows q m^(q-1).
    a_pre = np.zeros((n_obs, n_obs))
    a_pre[0::2] = ms[:, None] ** qs[None, :]
    a_pre[1::2] = qs[None, :] * ms[:, None] ** (qs[None, :] - 1)

    # Scaled noise map: the increment of subinterval k reaches observation
    # pair m through m - k further transitions.
    tm = prior_mod.discretize(prior_mod.IwpPrior(nu=order, dim=1), dt)
    sq = tm.sigma_sqrt
    noise = np.zeros((n_obs, nu * big))
    for m in range(1, nu + 1):
        for k in range(1, m + 1):
            ph = _phi_rows01(order, (m - k) * dt)
            cols = slice((k - 1) * big, k * big)
            noise[2 * (m - 1), cols] = ph[0] @ sq
            noise[2 * (m - 1) + 1, cols] = dt * (ph[1] @ sq)

    unscale = np.array([math.factorial(q) / dt**q for q in qs])
    row_scales = np.tile([1.0, dt], nu)
    a_inv = np.linalg.inv(a_pre)
    gain_free = unscale[:, None] * (a_inv * row_scales[None, :])
    sqrt_free = unscale[:, None] * (a_inv @ noise)

    gain = np.zeros((r, n_obs))
    gain[2:] = gain_free[: r - 2]
    post_sqrt = np.zeros((r, r))
    if r > 2:
        kept = sqrt_free[: r - 2]
        post_sqrt[2:, 2:] = np.linalg.qr(kept.T, mode="r").T
    return gain, post_sqrt


def _phi_rows01(order: int, step: float) -> np.ndarray:
    """First two rows of the chain transition over `step` (which may be 0)."""
    out = np.zeros((2, order + 1))
    out[0, 0] = 1.0
    out[1, 1] = 1.0
    for j in range(1, order + 1):
        out[0, j] = out[0, j - 1] * step / j
    for j in range(2, order + 1):
        out[1, j] = out[1, j - 1] * step / (j - 1)
    return out


def initialize(
    problem: OdeProblem, prior: prior_mod.IwpPrior, plan: InitPlan | None = None
) -> GaussianState:
    """Posterior state at t0 given the bootstrap trajectory.

    Coordinates 0 and 1 carry y0 and f(t0, y0) exactly (zero prior variance,
    so the conditioning never touches them); coordinates 2..nu are inferred
    from the nu later bootstrap points. The covariance comes back as
    Kronecker(I_d, right) with one shared right factor; callers re-pack it
    into whatever structure the solve uses without loss.
    """
    if plan is None:
        plan = InitPlan()
    nu, d, r = prior.nu, prior.dim, prior.nu + 1
    if problem.dim != d:
        raise ValueError(f"problem dim {problem.dim} != prior dim {d}")
    if plan.n_points is not None and plan.n_points != r:
        raise ValueError(f"n_points must equal nu+1 = {r}, got {plan.n_points}")
    dt = plan.dt if plan.dt is not None else default_dt(problem, nu)
    if plan.substeps is not None:
        substeps = plan.substeps
    else:
        substeps = default_substeps(nu, dt, plan.rk_order, rate=stiffness_rate(problem))

    traj = bootstrap_values(problem, nu, dt, plan.rk_order, substeps)
    f0 = np.asarray(problem.f(problem.t0, problem.y0), dtype=float)
    slopes = np.stack(
        [np.asarray(problem.f(problem.t0 + m * dt, traj[m]), dtype=float) for m in range(1, nu + 1)]
    )
    if not np.all(np.isfinite(slopes)):
        raise ValueError("bootstrap slopes left the finite range; try a smaller dt")

    gain, post_sqrt = conditioning_operator(nu, dt)

    # The prior mean is zero beyond rows (y0, f0), so the predicted
    # observations reduce to the first-order Taylor step y0 + m dt f0.
    mean = np.zeros((d, r))
    mean[:, 0] = problem.y0
    mean[:, 1] = f0
    resid = np.empty((2 * nu, d))
    for m in range(1, nu + 1):
        resid[2 * (m - 1)] = traj[m] - (problem.y0 + m * dt * f0)
        resid[2 * (m - 1) + 1] = slopes[m - 1] - f0
    mean += (gain @ resid).T

    if not np.all(np.isfinite(mean)):
        raise ValueError("initialization produced a non-finite mean")
    return GaussianState(t=problem.t0, mean=mean, cov_sqrt=structmat.Kronecker(np.eye(d), post_sqrt))
