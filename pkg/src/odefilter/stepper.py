"""One filter step in square-root form: predict, measure, calibrate, correct.

The reference implementations here handle all three covariance structures
with identical math; the Kronecker and block-diagonal modes additionally
have fused compiled loops (FusedKroneckerStepper, FusedBlockDiagStepper)
used by the solve driver and the step benchmark when the problem ships
compiled callbacks. Means are (d, nu+1) grids, one row per ODE dimension, one
column per derivative; covariance square roots are StructuredMatrix
values over the row-major flattening of that grid.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from odefilter import calibrate, prior, structmat
from odefilter.linearize import Linearization, LinearizationStrategy, linearize_at
from odefilter.problems import OdeProblem


@dataclasses.dataclass(frozen=True)
class GaussianState:
    t: float
    mean: np.ndarray
    cov_sqrt: structmat.StructuredMatrix

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        object.__setattr__(self, "mean", mean)
        if mean.ndim != 2:
            raise ValueError(f"mean must be a (d, nu+1) grid, got shape {mean.shape}")
        if self.cov_sqrt.dims[0] != mean.size:
            raise ValueError(
                f"covariance dim {self.cov_sqrt.dims[0]} does not match mean grid of size {mean.size}"
            )


@dataclasses.dataclass(frozen=True)
class Measurement:
    """Innovation z, its covariance s, and the process-noise projection.

    s is a (d,) vector in block-diagonal mode, a scalar in Kronecker mode
    (the shared left factor divides out of the gain), and a (d, d) matrix
    in dense mode. sigma_meas[i] is the unit-diffusion value of the
    measurement applied to the current step's process noise, used by
    calibration and error estimation. w caches the contraction of the
    measurement with the predicted covariance square root.
    """

    z: np.ndarray
    s: np.ndarray | float
    sigma_meas: np.ndarray
    w: np.ndarray


def predict(state: GaussianState, tm: prior.TransitionModel, gamma_sq=None) -> GaussianState:
    """Extrapolate mean and covariance square root through one step.

    gamma_sq scales the process noise: None or a scalar for any structure,
    a length-d vector for per-dimension diffusion (block-diagonal and
    dense structures only).
    """
    mean = state.mean @ tm.phi.T
    cov = state.cov_sqrt
    d = mean.shape[0]
    noise_scale = _noise_scales(gamma_sq, d, cov)
    if isinstance(cov, structmat.BlockDiagonal):
        tops = np.transpose(cov.blocks, (0, 2, 1)) @ tm.phi.T
        bottoms = noise_scale[:, None, None] * np.broadcast_to(
            tm.sigma_sqrt.T, (d, *tm.sigma_sqrt.shape)
        )
        rfac = structmat.blockwise_gram_sqrt(tops, bottoms)
        new_cov = structmat.BlockDiagonal(np.transpose(rfac, (0, 2, 1)))
    elif isinstance(cov, structmat.Kronecker):
        if np.ndim(gamma_sq) == 1:
            raise ValueError("Kronecker covariances take a scalar diffusion only")
        rfac = structmat.gram_sqrt_of_stack(
            cov.right.T @ tm.phi.T, float(noise_scale[0]) * tm.sigma_sqrt.T
        )
        new_cov = structmat.Kronecker(cov.left, rfac.T)
    else:
        r = tm.phi.shape[0]
        top = np.einsum("ndr,qr->ndq", cov.entries.T.reshape(-1, d, r), tm.phi).reshape(
            cov.entries.shape
        )
        bottom = tm.noise_kron_template(d) * np.repeat(noise_scale, r)[:, None]
        rfac = structmat.gram_sqrt_of_stack(top, bottom)
        new_cov = structmat.Dense(rfac.T)
    return GaussianState(t=state.t + tm.step, mean=mean, cov_sqrt=new_cov)


def measure(
    pred: GaussianState,
    lin: Linearization,
    tm: prior.TransitionModel,
    gamma_breve_diag: np.ndarray | None = None,
) -> Measurement:
    """Innovation and innovation covariance at the predicted state."""
    z = lin.residual(pred.mean)
    cov = pred.cov_sqrt
    sig = tm.sigma
    d = pred.mean.shape[0]
    if isinstance(cov, structmat.BlockDiagonal):
        # w_i = H_i sqrtC_i with H_i = e1 - F_i e0, contracted batchwise
        w = np.array(cov.blocks[:, 1, :])
        if lin.jac_diag is not None:
            w -= lin.jac_diag[:, None] * cov.blocks[:, 0, :]
        s = np.einsum("ij,ij->i", w, w)
        sigma_meas = _sigma_meas_diag(lin, sig, d)
    elif isinstance(cov, structmat.Kronecker):
        if lin.jac_diag is not None or lin.jac_dense is not None:
            raise ValueError("Kronecker covariances support the zero-Jacobian strategy only")
        w = np.array(cov.right[1, :])
        s = float(w @ w)
        sigma_meas = np.full(d, sig[1, 1])
    else:
        r = sig.shape[0]
        sqrt_t = cov.entries.T.reshape(-1, d, r)
        w_stack = np.array(sqrt_t[:, :, 1])
        if lin.jac_diag is not None:
            w_stack -= lin.jac_diag[None, :] * sqrt_t[:, :, 0]
        elif lin.jac_dense is not None:
            w_stack -= sqrt_t[:, :, 0] @ lin.jac_dense.T
        w = w_stack.T  # rows: measurement dim, cols: sqrt columns
        s = w @ w.T
        sigma_meas = _sigma_meas_diag(lin, sig, d)
    if gamma_breve_diag is not None:
        sigma_meas = sigma_meas * gamma_breve_diag
    s_diag = np.diag(s) if np.ndim(s) == 2 else np.atleast_1d(s)
    if not np.all(np.isfinite(s_diag)) or np.min(s_diag) <= 0:
        raise ValueError(
            f"singular innovation covariance at t={pred.t}: the predicted covariance is degenerate"
        )
    return Measurement(z=z, s=s, sigma_meas=sigma_meas, w=w)


def correct(pred: GaussianState, meas: Measurement, lin: Linearization) -> GaussianState:
    """Condition the predicted state on a zero local defect.

    The covariance square root is updated the Joseph way, as
    (I - K H) sqrtC, which keeps the square-root form without a second
    triangularization; the result is not triangular, which is fine.
    """
    cov = pred.cov_sqrt
    if isinstance(cov, structmat.BlockDiagonal):
        gain = np.einsum("irk,ik->ir", cov.blocks, meas.w) / meas.s[:, None]
        mean = pred.mean - gain * meas.z[:, None]
        new_blocks = cov.blocks - gain[:, :, None] * meas.w[:, None, :]
        new_cov = structmat.BlockDiagonal(new_blocks)
    elif isinstance(cov, structmat.Kronecker):
        gain = (cov.right @ meas.w) / meas.s
        mean = pred.mean - np.outer(meas.z, gain)
        new_right = cov.right - np.outer(gain, meas.w)
        new_cov = structmat.Kronecker(cov.left, new_right)
    else:
        d, r = pred.mean.shape
        sqrt = cov.entries
        gain = np.linalg.solve(meas.s, w_times_sqrt_t(meas.w, sqrt)).T
        mean = (pred.mean.reshape(-1) - gain @ meas.z).reshape(d, r)
        new_cov = structmat.Dense(sqrt - gain @ meas.w)
    if not np.all(np.isfinite(mean)):
        raise ValueError(f"non-finite corrected mean at t={pred.t}")
    return GaussianState(t=pred.t, mean=mean, cov_sqrt=new_cov)


def w_times_sqrt_t(w: np.ndarray, sqrt: np.ndarray) -> np.ndarray:
    """Rows of the cross covariance H C in sqrt form: (H sqrtC) sqrtC^T."""
    return w @ sqrt.T


def correct_conventional(pred: GaussianState, meas: Measurement, lin: Linearization) -> GaussianState:
    """Dense-mode correction via one triangularization of [sqrtC^T H^T, sqrtC^T].

    Independent of the Joseph-way formulas: the gain and the posterior
    square root are read off the blocks of a single R factor (the posterior
    factor has rank n - d after a noise-free update; it is zero-padded back
    to square). Used as a second oracle for correct().
    """
    if not isinstance(pred.cov_sqrt, structmat.Dense):
        raise ValueError("the conventional correction is implemented for dense covariances only")
    d, r = pred.mean.shape
    n = d * r
    sqrt = pred.cov_sqrt.entries
    stacked = np.concatenate([meas.w.T, sqrt.T], axis=1)
    rfac = np.linalg.qr(stacked, mode="r")
    r_ss, r_sx, r_xx = rfac[:d, :d], rfac[:d, d:], rfac[d:, d:]
    # gain = R_sx^T R_ss^-T
    gain = np.linalg.solve(r_ss, r_sx).T
    mean = (pred.mean.reshape(-1) - gain @ meas.z).reshape(d, r)
    new_sqrt = np.zeros((n, n))
    new_sqrt[:, : n - d] = r_xx.T
    return GaussianState(t=pred.t, mean=mean, cov_sqrt=structmat.Dense(new_sqrt))


def step(state: GaussianState, h: float, cfg, problem: OdeProblem):
    """One full filter step: returns (new state, error estimate, local gamma).

    Phases: discretize, extrapolate the mean, linearize there, estimate the
    local diffusion from the innovation, extrapolate the covariance (scaled
    by the estimate in time-varying modes, unscaled in time-constant
    modes), then measure and correct. The error estimate is the calibrated
    standard deviation of the local defect per dimension.
    """
    spec = cfg.diffusion
    tm = prior.discretize(prior.IwpPrior(nu=cfg.order, dim=problem.dim), h)
    mean_pred = state.mean @ tm.phi.T
    t_new = state.t + h
    lin = linearize_at(cfg.strategy, problem, mean_pred[:, 0], t_new)
    z = lin.residual(mean_pred)

    sigma_base = _sigma_meas_diag(lin, tm.sigma, problem.dim)
    gb_diag = _gamma_breve_diag(spec, problem.dim) if spec.shape == "scalar" else None
    sigma_meas = sigma_base if gb_diag is None else sigma_base * gb_diag
    has_gamma_breve = spec.gamma_breve is not None or spec.gamma_breve_inv_quad is not None
    if spec.shape == "vector":
        # per-dimension estimates absorb the left factor, so no scaling here
        gamma_local = calibrate.calibrate_local_vector(z, sigma_base)
    elif not has_gamma_breve and lin.jac_dense is not None:
        s_noise = _dense_noise_innovation(lin, tm.sigma)
        gamma_local = float(z @ np.linalg.solve(s_noise, z)) / problem.dim
    elif not has_gamma_breve or (spec.gamma_breve is not None and spec.gamma_breve.ndim == 1):
        gamma_local = calibrate.calibrate_local_scalar(z, sigma_meas)
    else:
        # shared non-diagonal left factor: O(d) quadratic form, zero-Jacobian case
        gamma_local = spec.inv_quad(z) / (problem.dim * float(sigma_base[0]))

    if spec.variability == "time-varying":
        gamma_for_predict = np.maximum(gamma_local, calibrate.GAMMA_SQ_FLOOR)
    else:
        gamma_for_predict = 1.0
    pred = predict(state, tm, gamma_sq=gamma_for_predict)
    meas = measure(pred, lin, tm, gamma_breve_diag=gb_diag)
    new_state = correct(pred, meas, lin)
    error_estimate = np.sqrt(gamma_local * sigma_meas)
    return new_state, error_estimate, gamma_local


class FusedKroneckerStepper:
    """Compiled per-step loop for Kronecker EK0 with scalar diffusion.

    Holds the transposed (nu+1, d) mean layout and the (nu+1, nu+1) right
    covariance factor as raw arrays; step_into writes one step's results
    into caller-owned buffers and returns the raw local diffusion
    estimate. Available when the problem carries a compiled in-place
    vector field; the reference step() is the fallback.
    """

    def __init__(self, problem: OdeProblem, nu: int, time_varying: bool):
        from odefilter import _fast

        if problem.f_inplace is None:
            raise ValueError(f"problem {problem.name!r} has no compiled vector field")
        self.problem = problem
        self.nu = nu
        self.r = nu + 1
        self.time_varying = time_varying
        self.kernel = _fast.kron_ek0_step(problem.f_inplace, self.r, time_varying)
        self._prior = prior.IwpPrior(nu=nu, dim=problem.dim)
        self._tm_cache: tuple[float, prior.TransitionModel] | None = None

    def transition(self, h: float) -> prior.TransitionModel:
        if self._tm_cache is None or self._tm_cache[0] != h:
            self._tm_cache = (h, prior.discretize(self._prior, h))
        return self._tm_cache[1]

    def step_into(self, t, h, mean_t, right, out, new_right) -> float:
        """Advance (mean_t, right) by h into (out[:r], new_right).

        out must be (r + 2, d): new mean rows, then innovation scratch,
        then the per-dimension error estimate.
        """
        tm = self.transition(h)
        s_unit = tm.sigma[1, 1]
        return self.kernel(t, h, s_unit, mean_t, right, tm.phi, tm.sigma_sqrt, out, new_right)

    def step_repeated(self, t, h, mean_t, right, out, new_right, k: int) -> float:
        """Run the kernel k times from the same buffers inside one compiled
        call; returns the summed diffusion estimates. Timing use only."""
        from odefilter import _fast

        runner = _fast.kron_ek0_repeat(self.problem.f_inplace, self.r, self.time_varying)
        tm = self.transition(h)
        s_unit = tm.sigma[1, 1]
        return runner(t, h, s_unit, mean_t, right, tm.phi, tm.sigma_sqrt, out, new_right, k)

    def right_buffer(self) -> np.ndarray:
        return np.empty((self.r, self.r))

    def state_to_buffers(self, state: GaussianState):
        if not isinstance(state.cov_sqrt, structmat.Kronecker):
            raise ValueError("expected a Kronecker-structured state")
        mean_t = np.ascontiguousarray(state.mean.T)
        right = np.array(state.cov_sqrt.right)
        return mean_t, right

    def buffers_to_state(self, t, mean_t, right, left=None) -> GaussianState:
        if left is None:
            left = np.eye(self.problem.dim)
        return GaussianState(
            t=t, mean=np.ascontiguousarray(mean_t.T), cov_sqrt=structmat.Kronecker(left, right)
        )


class FusedBlockDiagStepper:
    """Compiled per-step loop over per-dimension covariance blocks.

    Same buffer contract as FusedKroneckerStepper with the shared (r, r)
    right factor replaced by the (d, r, r) block stack. Covers the EK0
    and, when the problem carries a compiled Jacobian diagonal, the
    diagonal EK1, both with scalar diffusion; the reference step() is the
    fallback for everything else.
    """

    def __init__(self, problem: OdeProblem, nu: int, time_varying: bool, use_jacobian: bool = False):
        from odefilter import _fast

        if problem.f_inplace is None:
            raise ValueError(f"problem {problem.name!r} has no compiled vector field")
        jac = None
        if use_jacobian:
            jac = problem.jac_diag_inplace
            if jac is None:
                raise ValueError(f"problem {problem.name!r} has no compiled Jacobian diagonal")
        self.problem = problem
        self.nu = nu
        self.r = nu + 1
        self.time_varying = time_varying
        self.use_jacobian = use_jacobian
        self._jac = jac
        self.kernel = _fast.blockdiag_step(problem.f_inplace, jac, self.r, time_varying)
        self._prior = prior.IwpPrior(nu=nu, dim=problem.dim)
        self._tm_cache: tuple[float, prior.TransitionModel] | None = None

    def transition(self, h: float) -> prior.TransitionModel:
        if self._tm_cache is None or self._tm_cache[0] != h:
            self._tm_cache = (h, prior.discretize(self._prior, h))
        return self._tm_cache[1]

    def step_into(self, t, h, mean_t, blocks, out, new_blocks) -> float:
        """Advance (mean_t, blocks) by h into (out[:r], new_blocks).

        out must be (r + 2, d): new mean rows, then innovation scratch,
        then the per-dimension error estimate.
        """
        tm = self.transition(h)
        sig = tm.sigma
        return self.kernel(
            t, h, sig[0, 0], sig[0, 1], sig[1, 1], mean_t, blocks, tm.phi, tm.sigma_sqrt, out, new_blocks
        )

    def step_repeated(self, t, h, mean_t, blocks, out, new_blocks, k: int) -> float:
        """Run the kernel k times from the same buffers inside one compiled
        call; returns the summed diffusion estimates. Timing use only."""
        from odefilter import _fast

        runner = _fast.blockdiag_repeat(self.problem.f_inplace, self._jac, self.r, self.time_varying)
        tm = self.transition(h)
        sig = tm.sigma
        return runner(
            t, h, sig[0, 0], sig[0, 1], sig[1, 1], mean_t, blocks, tm.phi, tm.sigma_sqrt, out, new_blocks, k
        )

    def right_buffer(self) -> np.ndarray:
        return np.empty((self.problem.dim, self.r, self.r))

    def state_to_buffers(self, state: GaussianState):
        if not isinstance(state.cov_sqrt, structmat.BlockDiagonal):
            raise ValueError("expected a block-diagonal state")
        mean_t = np.ascontiguousarray(state.mean.T)
        blocks = np.array(state.cov_sqrt.blocks)
        return mean_t, blocks

    def buffers_to_state(self, t, mean_t, blocks, left=None) -> GaussianState:
        return GaussianState(
            t=t, mean=np.ascontiguousarray(mean_t.T), cov_sqrt=structmat.BlockDiagonal(blocks)
        )


def _noise_scales(gamma_sq, d: int, cov) -> np.ndarray:
    if gamma_sq is None:
        return np.ones(d)
    gamma_sq = np.asarray(gamma_sq, dtype=float)
    if gamma_sq.ndim == 0:
        return np.full(d, np.sqrt(float(gamma_sq)))
    if gamma_sq.shape != (d,):
        raise ValueError(f"diffusion vector has shape {gamma_sq.shape}, expected ({d},)")
    return np.sqrt(gamma_sq)


def _sigma_meas_diag(lin: Linearization, sig: np.ndarray, d: int) -> np.ndarray:
    if lin.jac_diag is not None:
        fy = lin.jac_diag
        return sig[1, 1] - 2.0 * fy * sig[0, 1] + fy * fy * sig[0, 0]
    if lin.jac_dense is not None:
        fy = lin.jac_dense
        return (
            sig[1, 1]
            - 2.0 * np.diag(fy) * sig[0, 1]
            + np.einsum("ij,ij->i", fy, fy) * sig[0, 0]
        )
    return np.full(d, sig[1, 1])


def _dense_noise_innovation(lin: Linearization, sig: np.ndarray) -> np.ndarray:
    fy = lin.jac_dense
    return sig[1, 1] * np.eye(fy.shape[0]) - sig[0, 1] * (fy + fy.T) + sig[0, 0] * (fy @ fy.T)


def _gamma_breve_diag(spec: calibrate.DiffusionSpec, d: int) -> np.ndarray | None:
    gb = spec.gamma_breve
    if gb is None:
        return None
    if gb.ndim == 1:
        if gb.shape != (d,):
            raise ValueError(f"gamma_breve has shape {gb.shape}, expected ({d},)")
        return gb
    return np.diag(gb).copy()
