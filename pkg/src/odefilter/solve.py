"""Whole-solve driver: configuration, integration loops, serialization.

A solve strings together initialization, repeated filter steps on either
a fixed grid or under adaptive step-size control, time-constant
calibration bookkeeping, and the trajectory record stream. Structure and
linearization are fixed per solve and validated up front; the Kronecker
EK0 and the scalar-diffusion block-diagonal configurations are routed
through compiled fused steps when the problem ships the in-place
callbacks they need.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time

import numpy as np

from odefilter import adapt, calibrate, init, prior, stepper, structmat
from odefilter.linearize import LinearizationStrategy, NonFiniteEvaluationError
from odefilter.problems import OdeProblem

STRUCTURES = ("dense", "block-diagonal", "kronecker")

# fraction of the remaining span below which the solve is considered done
_SPAN_EPS = 1e-12


@dataclasses.dataclass(frozen=True)
class SolverConfig:
    """One solver variant: prior order, linearization, structure, calibration.

    Structure constrains the linearization: the Kronecker factorization
    survives a step only for the EK0 with scalar diffusion, and the
    block-diagonal one only for Jacobians that are (approximated as)
    diagonal. Dense supports every strategy.
    """

    order: int
    strategy: LinearizationStrategy = LinearizationStrategy.EK0
    structure: str = "dense"
    diffusion: calibrate.DiffusionSpec = dataclasses.field(
        default_factory=calibrate.DiffusionSpec
    )
    rtol: float = 1e-6
    atol: float = 1e-6
    grid: np.ndarray | None = None

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be at least 1")
        object.__setattr__(self, "strategy", LinearizationStrategy(self.strategy))
        if self.structure not in STRUCTURES:
            raise ValueError(f"unknown structure {self.structure!r}; known: {STRUCTURES}")
        if self.structure == "kronecker":
            if self.strategy != LinearizationStrategy.EK0:
                raise ValueError("kronecker structure requires the EK0 linearization")
            if self.diffusion.shape != "scalar":
                raise ValueError("kronecker structure requires scalar diffusion")
        if self.structure == "block-diagonal" and self.strategy == LinearizationStrategy.DENSE_EK1:
            raise ValueError("block-diagonal structure cannot carry a dense Jacobian correction")
        if not self.rtol > 0 or not self.atol > 0:
            raise ValueError("rtol and atol must be positive")
        if self.grid is not None:
            grid = np.asarray(self.grid, dtype=float)
            if grid.ndim != 1 or grid.shape[0] < 2:
                raise ValueError("a fixed grid needs at least two time points")
            if not np.all(np.diff(grid) > 0):
                raise ValueError("fixed grid times must be strictly increasing")
            object.__setattr__(self, "grid", grid)


@dataclasses.dataclass
class Solution:
    """Accepted trajectory plus the solve's bookkeeping.

    states holds the filtering posteriors at the visited times, the
    initial state first (just the two endpoints when the solve ran with
    keep_states=False). step_sizes and gammas record every accepted step
    with a leading None and align with states on fully kept solves. For
    time-constant diffusion the states' covariances are already rescaled
    by gamma_final and gammas keeps the raw per-step local estimates.
    """

    states: list
    step_sizes: list
    gammas: list
    gamma_final: object
    n_accepted: int
    n_rejected: int
    status: str
    failure_t: float | None
    wall_seconds: float
    config: SolverConfig
    problem: OdeProblem

    @property
    def ts(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def y_means(self) -> np.ndarray:
        return np.stack([s.mean[:, 0] for s in self.states])

    @property
    def y_stds(self) -> np.ndarray:
        return np.stack([marginal_y_std(s) for s in self.states])


def marginal_y_std(state) -> np.ndarray:
    """Per-dimension standard deviation of the zeroth state coordinate."""
    d, r = state.mean.shape
    cov = state.cov_sqrt
    if isinstance(cov, structmat.Kronecker):
        left_norms = np.sqrt(np.einsum("ij,ij->i", cov.left, cov.left))
        return left_norms * float(np.linalg.norm(cov.right[0]))
    if isinstance(cov, structmat.BlockDiagonal):
        rows = cov.blocks[:, 0, :]
        return np.sqrt(np.einsum("ij,ij->i", rows, rows))
    rows = cov.entries[0::r, :]
    return np.sqrt(np.einsum("ij,ij->i", rows, rows))


def initial_state(problem: OdeProblem, cfg: SolverConfig, plan: init.InitPlan | None = None):
    """Initialize at t0 and project the covariance onto the solve structure.

    The initializer returns an exactly Kronecker covariance, so the
    projection just re-materializes the same matrix in the requested
    layout.
    """
    state = init.initialize(problem, prior.IwpPrior(nu=cfg.order, dim=problem.dim), plan=plan)
    right = state.cov_sqrt.right
    d = problem.dim
    if cfg.structure == "kronecker":
        return state
    if cfg.structure == "block-diagonal":
        cov = structmat.BlockDiagonal(np.repeat(right[None, :, :], d, axis=0))
    else:
        cov = structmat.Dense(np.kron(np.eye(d), right))
    return stepper.GaussianState(t=state.t, mean=state.mean, cov_sqrt=cov)


def _use_fused(problem: OdeProblem, cfg: SolverConfig) -> str | None:
    """Compiled-route selector: "kronecker", "block-diagonal", or None."""
    spec = cfg.diffusion
    if (
        spec.shape != "scalar"
        or spec.gamma_breve is not None
        or spec.gamma_breve_inv_quad is not None
        or problem.f_inplace is None
    ):
        return None
    if cfg.structure == "kronecker" and cfg.strategy == LinearizationStrategy.EK0:
        return "kronecker"
    if cfg.structure == "block-diagonal":
        if cfg.strategy == LinearizationStrategy.EK0:
            return "block-diagonal"
        if (
            cfg.strategy == LinearizationStrategy.DIAGONAL_EK1
            and problem.jac_diag_inplace is not None
        ):
            return "block-diagonal"
    return None


def _make_fused(problem: OdeProblem, cfg: SolverConfig, route: str):
    time_varying = cfg.diffusion.variability == "time-varying"
    if route == "kronecker":
        return stepper.FusedKroneckerStepper(problem, cfg.order, time_varying)
    return stepper.FusedBlockDiagStepper(
        problem,
        cfg.order,
        time_varying,
        use_jacobian=cfg.strategy == LinearizationStrategy.DIAGONAL_EK1,
    )


def _controller(problem: OdeProblem, cfg: SolverConfig) -> adapt.StepController:
    span = problem.tmax - problem.t0
    return adapt.StepController(
        rtol=cfg.rtol, atol=cfg.atol, order_for_control=cfg.order, h_max=span
    )


class _TcAccumulator:
    """Running mean of raw local diffusion estimates over accepted steps."""

    def __init__(self):
        self.count = 0
        self.sums = 0.0

    def add(self, gamma_local):
        self.sums = gamma_local if self.count == 0 else self.sums + gamma_local
        self.count += 1

    def mean(self):
        if self.count == 0:
            return 1.0
        return self.sums / self.count


class _StateKeeper:
    """Trajectory storage: full history, or just the endpoints."""

    def __init__(self, state0, keep_all: bool):
        self.states = [state0]
        self.keep_all = keep_all

    def add(self, state):
        if self.keep_all or len(self.states) == 1:
            self.states.append(state)
        else:
            self.states[-1] = state


def solve(
    problem: OdeProblem,
    cfg: SolverConfig,
    init_plan: init.InitPlan | None = None,
    max_steps: int = 1_000_000,
    use_compiled: bool = True,
    keep_states: bool = True,
) -> Solution:
    """Run one full solve and return the accepted trajectory.

    Adaptive when cfg.grid is None, otherwise the solver visits exactly
    the supplied grid (whose first entry must be the problem's t0). A
    step-size underflow or an exhausted step budget ends the solve early
    with the partial trajectory retained and status set accordingly. With
    keep_states=False only the initial and latest states are retained
    (step counts, sizes and diffusion estimates are always complete),
    which bounds memory on very long solves.
    """
    t_start = time.perf_counter()
    state0 = initial_state(problem, cfg, plan=init_plan)
    route = _use_fused(problem, cfg) if use_compiled else None
    fk = None if route is None else _make_fused(problem, cfg, route)
    keeper = _StateKeeper(state0, keep_states)

    if cfg.grid is not None:
        if abs(float(cfg.grid[0]) - problem.t0) > _SPAN_EPS * max(1.0, abs(problem.t0)):
            raise ValueError("fixed grid must start at the problem's t0")
        if fk is not None:
            out = _run_fixed_fused(problem, cfg, state0, fk, cfg.grid, max_steps, keeper)
        else:
            out = _run_fixed(problem, cfg, state0, cfg.grid, max_steps, keeper)
    else:
        ctrl = _controller(problem, cfg)
        if fk is not None:
            out = _run_adaptive_fused(problem, cfg, state0, fk, ctrl, max_steps, keeper)
        else:
            out = _run_adaptive(problem, cfg, state0, ctrl, max_steps, keeper)
    hs, gammas, n_acc, n_rej, status, failure_t, tc_acc = out
    states = keeper.states

    gamma_final = None
    if cfg.diffusion.variability == "time-constant":
        gamma_final = tc_acc.mean()
        states = calibrate.rescale_posthoc(states, gamma_final)

    return Solution(
        states=states,
        step_sizes=hs,
        gammas=gammas,
        gamma_final=gamma_final,
        n_accepted=n_acc,
        n_rejected=n_rej,
        status=status,
        failure_t=failure_t,
        wall_seconds=time.perf_counter() - t_start,
        config=cfg,
        problem=problem,
    )


def _run_fixed(problem, cfg, state0, grid, max_steps, keeper):
    hs, gammas = [None], [None]
    tc_acc = _TcAccumulator()
    state = state0
    for k in range(1, grid.shape[0]):
        h = float(grid[k] - grid[k - 1])
        state, _err, gamma_local = stepper.step(state, h, cfg, problem)
        state = dataclasses.replace(state, t=float(grid[k]))
        tc_acc.add(gamma_local)
        keeper.add(state)
        hs.append(h)
        gammas.append(gamma_local)
    return hs, gammas, grid.shape[0] - 1, 0, "ok", None, tc_acc


def _run_fixed_fused(problem, cfg, state0, fk, grid, max_steps, keeper):
    d, r = problem.dim, cfg.order + 1
    left = getattr(state0.cov_sqrt, "left", None)
    mean_t, right = fk.state_to_buffers(state0)
    out, new_right = np.empty((r + 2, d)), fk.right_buffer()
    hs, gammas = [None], [None]
    tc_acc = _TcAccumulator()
    for k in range(1, grid.shape[0]):
        h = float(grid[k] - grid[k - 1])
        gamma_local = fk.step_into(float(grid[k - 1]), h, mean_t, right, out, new_right)
        mean_t, right = out[:r].copy(), new_right.copy()
        tc_acc.add(gamma_local)
        keeper.add(fk.buffers_to_state(float(grid[k]), mean_t, right.copy(), left))
        hs.append(h)
        gammas.append(gamma_local)
    return hs, gammas, grid.shape[0] - 1, 0, "ok", None, tc_acc


def _run_adaptive(problem, cfg, state0, ctrl, max_steps, keeper):
    hs, gammas = [None], [None]
    tc_acc = _TcAccumulator()
    state = state0
    tmax = problem.tmax
    span = tmax - problem.t0
    h = min(adapt.initial_step(problem.t0, tmax), ctrl.h_max)
    prev_norm = 1.0
    n_acc = n_rej = 0
    status, failure_t = "ok", None
    while tmax - state.t > _SPAN_EPS * span:
        clamped = h >= tmax - state.t
        h_try = tmax - state.t if clamped else h
        try:
            new_state, err, gamma_local = stepper.step(state, h_try, cfg, problem)
            norm = adapt.error_norm(err, state.mean[:, 0], new_state.mean[:, 0], ctrl)
        except NonFiniteEvaluationError:
            norm = np.inf
        if np.isfinite(norm):
            accept, h_next = adapt.propose(h_try, norm, prev_norm, ctrl)
        else:
            # overflow inside the trial step counts as a rejection at max shrink
            accept, h_next = False, max(h_try * ctrl.factor_min, ctrl.h_min)
        if accept:
            if clamped:
                new_state = dataclasses.replace(new_state, t=tmax)
            state = new_state
            prev_norm = max(norm, 1e-10)
            tc_acc.add(gamma_local)
            keeper.add(state)
            hs.append(h_try)
            gammas.append(gamma_local)
            n_acc += 1
            if n_acc >= max_steps and tmax - state.t > _SPAN_EPS * span:
                status, failure_t = "max-steps", state.t
                break
        else:
            n_rej += 1
            if h_try <= ctrl.h_min * (1 + 1e-12):
                status, failure_t = "step-size-underflow", state.t
                break
        h = h_next
    return hs, gammas, n_acc, n_rej, status, failure_t, tc_acc


def _run_adaptive_fused(problem, cfg, state0, fk, ctrl, max_steps, keeper):
    d, r = problem.dim, cfg.order + 1
    left = getattr(state0.cov_sqrt, "left", None)
    bufs = [np.empty((r + 2, d)), np.empty((r + 2, d))]
    rights = [fk.right_buffer(), fk.right_buffer()]
    mean_t0, right0 = fk.state_to_buffers(state0)
    bufs[0][:r] = mean_t0
    rights[0][:] = right0
    cur = 0
    hs, gammas = [None], [None]
    tc_acc = _TcAccumulator()
    t = state0.t
    tmax = problem.tmax
    span = tmax - problem.t0
    h = min(adapt.initial_step(problem.t0, tmax), ctrl.h_max)
    prev_norm = 1.0
    n_acc = n_rej = 0
    status, failure_t = "ok", None
    while tmax - t > _SPAN_EPS * span:
        clamped = h >= tmax - t
        h_try = tmax - t if clamped else h
        nxt = 1 - cur
        gamma_local = fk.step_into(t, h_try, bufs[cur][:r], rights[cur], bufs[nxt], rights[nxt])
        err = bufs[nxt][r + 1]
        norm = adapt.error_norm(err, bufs[cur][0], bufs[nxt][0], ctrl)
        if np.isfinite(norm):
            accept, h_next = adapt.propose(h_try, norm, prev_norm, ctrl)
        else:
            # overflow inside the trial step counts as a rejection at max shrink
            accept, h_next = False, max(h_try * ctrl.factor_min, ctrl.h_min)
        if accept:
            cur = nxt
            t = tmax if clamped else t + h_try
            prev_norm = max(norm, 1e-10)
            tc_acc.add(gamma_local)
            keeper.add(fk.buffers_to_state(t, bufs[cur][:r], rights[cur].copy(), left))
            hs.append(h_try)
            gammas.append(gamma_local)
            n_acc += 1
            if n_acc >= max_steps and tmax - t > _SPAN_EPS * span:
                status, failure_t = "max-steps", t
                break
        else:
            n_rej += 1
            if h_try <= ctrl.h_min * (1 + 1e-12):
                status, failure_t = "step-size-underflow", t
                break
        h = h_next
    return hs, gammas, n_acc, n_rej, status, failure_t, tc_acc


def iter_records(solution: Solution):
    """Yield one dict per visited time in the trajectory-stream schema."""
    if len(solution.states) != len(solution.step_sizes):
        raise ValueError("record stream needs a solve with keep_states=True")
    tc = solution.config.diffusion.variability == "time-constant"
    for k, state in enumerate(solution.states):
        gamma = solution.gamma_final if tc else solution.gammas[k]
        yield {
            "kind": "state",
            "t": float(state.t),
            "y_mean": [_finite(v) for v in state.mean[:, 0]],
            "y_std": [_finite(v) for v in marginal_y_std(state)],
            "gamma": _jsonable(gamma),
            "h": None if solution.step_sizes[k] is None else float(solution.step_sizes[k]),
            "accepted": True,
        }


def metadata_record(solution: Solution, seed=None, extra=None) -> dict:
    """The trailing metadata line: solver variant and solve bookkeeping."""
    cfg = solution.config
    spec = cfg.diffusion
    meta = {
        "kind": "metadata",
        "problem": solution.problem.name,
        "params": {k: _jsonable(v) for k, v in (solution.problem.params or {}).items()},
        "structure": cfg.structure,
        "strategy": cfg.strategy.value,
        "order": cfg.order,
        "rtol": float(cfg.rtol),
        "atol": float(cfg.atol),
        "diffusion": f"{spec.variability}-{spec.shape}",
        "error_gamma": "local",
        "grid": "fixed" if cfg.grid is not None else "adaptive",
        "seed": _jsonable(seed),
        "n_accepted": solution.n_accepted,
        "n_rejected": solution.n_rejected,
        "status": solution.status,
        "failure_t": _jsonable(solution.failure_t),
        "gamma_final": _jsonable(solution.gamma_final),
        "wall_seconds": float(solution.wall_seconds),
    }
    if extra:
        meta.update(extra)
    return meta


def write_ndjson(path, solution: Solution, seed=None, extra_metadata=None) -> None:
    """Write the record stream plus the trailing metadata line."""
    with open(path, "w") as fh:
        for rec in iter_records(solution):
            fh.write(json.dumps(rec) + "\n")
        fh.write(json.dumps(metadata_record(solution, seed=seed, extra=extra_metadata)) + "\n")


def _finite(value):
    # strict JSON has no NaN/Infinity tokens; diverged solves emit null
    value = float(value)
    return value if math.isfinite(value) else None


def _jsonable(value):
    if value is None:
        return None
    if isinstance(value, np.ndarray):
        return [_finite(v) for v in value]
    if isinstance(value, (np.floating, float)):
        return _finite(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    return value
