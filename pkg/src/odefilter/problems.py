"""Benchmark problems: Lorenz96, Pleiades, a FitzHugh-Nagumo reaction-diffusion
system on a 2-D grid, and Van der Pol, with analytic Jacobians where available.
"""

from __future__ import annotations

import dataclasses
from collections.abc import Callable

import numpy as np

try:
    from odefilter import _fast
except ImportError:  # pragma: no cover - numba is a declared dependency
    _fast = None


@dataclasses.dataclass(frozen=True)
class OdeProblem:
    """First-order system dy/dt = f(t, y) with initial value and time span.

    jac_dense and jac_diag are optional callbacks returning the full Jacobian
    of f with respect to y, or only its diagonal. f_inplace and
    jac_diag_inplace, when present, are compiled (t, y, out) versions of f
    and of the Jacobian diagonal used by the fused solver kernels.
    """

    name: str
    dim: int
    f: Callable[[float, np.ndarray], np.ndarray]
    y0: np.ndarray
    t0: float
    tmax: float
    jac_dense: Callable[[float, np.ndarray], np.ndarray] | None = None
    jac_diag: Callable[[float, np.ndarray], np.ndarray] | None = None
    params: dict[str, float] = dataclasses.field(default_factory=dict)
    f_inplace: Callable | None = None
    jac_diag_inplace: Callable | None = None

    def __post_init__(self):
        y0 = np.asarray(self.y0, dtype=float)
        object.__setattr__(self, "y0", y0)
        if y0.shape != (self.dim,):
            raise ValueError(f"y0 has shape {y0.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(self.f(self.t0, y0))):
            raise ValueError(f"f(t0, y0) is not finite for problem {self.name!r}")


def lorenz96(n: int, forcing: float = 8.0) -> OdeProblem:
    """Cyclic Lorenz96 system of dimension n >= 4.

    dy_i/dt = (y_{i+1} - y_{i-2}) y_{i-1} - y_i + F, with the three
    wrap-around rows written out explicitly. Default initial value is the
    equilibrium y = F with the first component perturbed by 0.01.
    """
    if n < 4:
        raise ValueError(f"lorenz96 needs n >= 4, got {n}")
    forcing = float(forcing)

    def f(t, y):
        out = np.empty_like(y)
        out[0] = (y[1] - y[n - 2]) * y[n - 1] - y[0] + forcing
        out[1] = (y[2] - y[n - 1]) * y[0] - y[1] + forcing
        out[2:-1] = (y[3:] - y[:-3]) * y[1:-2] - y[2:-1] + forcing
        out[n - 1] = (y[0] - y[n - 3]) * y[n - 2] - y[n - 1] + forcing
        return out

    idx = np.arange(n)
    ip1, im1, im2 = (idx + 1) % n, (idx - 1) % n, (idx - 2) % n

    def jac_dense(t, y):
        jac = np.zeros((n, n))
        jac[idx, ip1] += y[im1]
        jac[idx, im2] += -y[im1]
        jac[idx, im1] += y[ip1] - y[im2]
        jac[idx, idx] += -1.0
        return jac

    def jac_diag(t, y):
        # no index wraps onto itself for n >= 4, so the diagonal is constant
        return np.full(n, -1.0)

    y0 = np.full(n, forcing)
    y0[0] += 0.01
    return OdeProblem(
        name="lorenz96",
        dim=n,
        f=f,
        y0=y0,
        t0=0.0,
        tmax=30.0,
        jac_dense=jac_dense,
        jac_diag=jac_diag,
        params={"n": n, "forcing": forcing},
        f_inplace=_fast.lorenz96_rhs(forcing) if _fast is not None else None,
        jac_diag_inplace=_fast.lorenz96_jac_diag() if _fast is not None else None,
    )


_PLEIADES_X0 = np.array([3.0, 3.0, -1.0, -3.0, 2.0, -2.0, 2.0])
_PLEIADES_Y0 = np.array([3.0, -3.0, 2.0, 0.0, 0.0, -4.0, 4.0])
_PLEIADES_V0 = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 1.75, -1.5])
_PLEIADES_W0 = np.array([0.0, 0.0, 0.0, -1.25, 1.0, 0.0, 0.0])
_PLEIADES_MASSES = np.arange(1.0, 8.0)


def pleiades() -> OdeProblem:
    """Seven gravitating stars in the plane, as a 28-dimensional system.

    State layout is (x, y, v, w) with seven entries each; star i has mass i.
    """
    m = _PLEIADES_MASSES

    def f(t, state):
        x, y, v, w = state.reshape(4, 7)
        dx = x[None, :] - x[:, None]
        dy = y[None, :] - y[:, None]
        dist = dx * dx + dy * dy
        np.fill_diagonal(dist, 1.0)
        inv = dist**-1.5
        np.fill_diagonal(inv, 0.0)
        acc_x = (m[None, :] * dx * inv).sum(axis=1)
        acc_y = (m[None, :] * dy * inv).sum(axis=1)
        return np.concatenate([v, w, acc_x, acc_y])

    def jac_dense(t, state):
        x, y, _, _ = state.reshape(4, 7)
        dx = x[None, :] - x[:, None]
        dy = y[None, :] - y[:, None]
        dist = dx * dx + dy * dy
        np.fill_diagonal(dist, 1.0)
        inv3 = dist**-1.5
        inv5 = dist**-2.5
        np.fill_diagonal(inv3, 0.0)
        np.fill_diagonal(inv5, 0.0)
        # d(acc_x_i)/dx_j and the mixed x-y terms, for j != i
        axx = m[None, :] * (inv3 - 3.0 * dx * dx * inv5)
        ayy = m[None, :] * (inv3 - 3.0 * dy * dy * inv5)
        axy = m[None, :] * (-3.0 * dx * dy * inv5)
        np.fill_diagonal(axx, -axx.sum(axis=1))
        np.fill_diagonal(ayy, -ayy.sum(axis=1))
        np.fill_diagonal(axy, -axy.sum(axis=1))
        jac = np.zeros((28, 28))
        jac[0:7, 14:21] = np.eye(7)
        jac[7:14, 21:28] = np.eye(7)
        jac[14:21, 0:7] = axx
        jac[14:21, 7:14] = axy
        jac[21:28, 0:7] = axy
        jac[21:28, 7:14] = ayy
        return jac

    def jac_diag(t, state):
        return np.zeros(28)

    y0 = np.concatenate([_PLEIADES_X0, _PLEIADES_Y0, _PLEIADES_V0, _PLEIADES_W0])
    return OdeProblem(
        name="pleiades",
        dim=28,
        f=f,
        y0=y0,
        t0=0.0,
        tmax=3.0,
        jac_dense=jac_dense,
        jac_diag=jac_diag,
        f_inplace=_fast.pleiades_rhs() if _fast is not None else None,
        jac_diag_inplace=_fast.pleiades_jac_diag() if _fast is not None else None,
    )


def vanderpol(mu: float) -> OdeProblem:
    """Van der Pol oscillator with stiffness parameter mu > 0."""
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    mu = float(mu)

    def f(t, y):
        return np.array([y[1], mu * ((1.0 - y[0] * y[0]) * y[1] - y[0])])

    def jac_dense(t, y):
        return np.array(
            [
                [0.0, 1.0],
                [-mu * (2.0 * y[0] * y[1] + 1.0), mu * (1.0 - y[0] * y[0])],
            ]
        )

    def jac_diag(t, y):
        return np.array([0.0, mu * (1.0 - y[0] * y[0])])

    return OdeProblem(
        name="vanderpol",
        dim=2,
        f=f,
        y0=np.array([2.0, 0.0]),
        t0=0.0,
        tmax=6.3,
        jac_dense=jac_dense,
        jac_diag=jac_diag,
        params={"mu": mu},
        f_inplace=_fast.vanderpol_rhs(mu) if _fast is not None else None,
        jac_diag_inplace=_fast.vanderpol_jac_diag(mu) if _fast is not None else None,
    )


def fhn_pde(
    grid_points_per_axis: int,
    a: float = 208e-4,
    b: float = 5e-3,
    k: float = -5e-3,
    tau: float = 0.1,
    seed: int = 42,
) -> OdeProblem:
    """FitzHugh-Nagumo reaction-diffusion system on the unit square.

    Method-of-lines discretization on a G x G uniform grid (second-order
    5-point Laplacian, zero-flux boundaries via mirrored ghost points),
    giving a 2 G^2-dimensional system: the activator block u, row-major,
    followed by the inhibitor block v. Initial values are uniform(0, 1)
    samples from the given seed.
    """
    g = int(grid_points_per_axis)
    if g < 3:
        raise ValueError(f"grid must have at least 3 points per axis, got {g}")
    a, b, k, tau = float(a), float(b), float(k), float(tau)
    gg = g * g
    dx2 = (1.0 / (g - 1)) ** 2

    def laplacian(field):
        padded = np.pad(field, 1, mode="reflect")
        return (
            padded[:-2, 1:-1]
            + padded[2:, 1:-1]
            + padded[1:-1, :-2]
            + padded[1:-1, 2:]
            - 4.0 * field
        ) / dx2

    def f(t, y):
        u = y[:gg].reshape(g, g)
        v = y[gg:].reshape(g, g)
        du = a * laplacian(u) + u - u**3 - v + k
        dv = (b * laplacian(v) + u - v) / tau
        return np.concatenate([du.reshape(-1), dv.reshape(-1)])

    def jac_diag(t, y):
        u = y[:gg]
        out = np.empty(2 * gg)
        out[:gg] = -4.0 * a / dx2 + 1.0 - 3.0 * u * u
        out[gg:] = (-4.0 * b / dx2 - 1.0) / tau
        return out

    rng = np.random.default_rng(seed)
    y0 = rng.uniform(0.0, 1.0, size=2 * gg)
    return OdeProblem(
        name="fhn",
        dim=2 * gg,
        f=f,
        y0=y0,
        t0=0.0,
        tmax=20.0,
        jac_diag=jac_diag,
        params={"grid": g, "a": a, "b": b, "k": k, "tau": tau, "seed": seed},
        f_inplace=_fast.fhn_rhs(g, a, b, k, tau) if _fast is not None else None,
        jac_diag_inplace=_fast.fhn_jac_diag(g, a, b, tau) if _fast is not None else None,
    )


def fd_jacobian_wrapper(problem: OdeProblem, eps: float) -> OdeProblem:
    """Attach a central-difference diagonal Jacobian to a problem.

    Costs 2 d extra f evaluations per call; explicit opt-in for problems
    without an analytic diagonal.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")

    def jac_diag(t, y):
        out = np.empty(problem.dim)
        for i in range(problem.dim):
            shifted = np.array(y)
            shifted[i] = y[i] + eps
            hi = problem.f(t, shifted)[i]
            shifted[i] = y[i] - eps
            lo = problem.f(t, shifted)[i]
            out[i] = (hi - lo) / (2.0 * eps)
        return out

    # the compiled analytic diagonal, if any, must not shadow the requested one
    return dataclasses.replace(problem, jac_diag=jac_diag, jac_diag_inplace=None)


_BUILDERS = {
    "lorenz96": lambda params: lorenz96(
        int(params.pop("n", 4)), params.pop("forcing", 8.0)
    ),
    "pleiades": lambda params: pleiades(),
    "vanderpol": lambda params: vanderpol(params.pop("mu", 1.0)),
    "fhn": lambda params: fhn_pde(
        int(params.pop("grid", 16)),
        params.pop("a", 208e-4),
        params.pop("b", 5e-3),
        params.pop("k", -5e-3),
        params.pop("tau", 0.1),
        int(params.pop("seed", 42)),
    ),
}


def build_problem(name: str, params: dict[str, float] | None = None) -> OdeProblem:
    """Look up a problem by registry name with parameter overrides."""
    if name not in _BUILDERS:
        raise KeyError(f"unknown problem {name!r}; known: {sorted(_BUILDERS)}")
    params = dict(params or {})
    problem = _BUILDERS[name](params)
    if params:
        raise ValueError(f"unknown parameters for {name!r}: {sorted(params)}")
    return problem
