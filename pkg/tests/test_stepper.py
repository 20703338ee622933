"""Tests for single filter steps against an explicit dense reference."""

import numpy as np
import pytest

import oracle_dense
from odefilter import calibrate, prior, problems, solve, stepper, structmat
from odefilter.linearize import LinearizationStrategy, linearize_at


def make_cov(structure, d, r, rng, left=None):
    if structure == "kronecker":
        if left is None:
            left = np.eye(d)
        right = np.tril(rng.standard_normal((r, r))) + 2.0 * np.eye(r)
        return structmat.Kronecker(left, right)
    if structure == "block-diagonal":
        blocks = 0.4 * rng.standard_normal((d, r, r)) + np.eye(r)
        return structmat.BlockDiagonal(blocks)
    n = d * r
    return structmat.Dense(0.3 * rng.standard_normal((n, n)) + np.eye(n))


def make_state(structure, d, r, seed, left=None):
    rng = np.random.default_rng(seed)
    mean = rng.standard_normal((d, r))
    return stepper.GaussianState(
        t=0.3, mean=mean, cov_sqrt=make_cov(structure, d, r, rng, left)
    )


def cov_of(state):
    sq = state.cov_sqrt.to_dense()
    return sq @ sq.T


class TestFrozenUnitStep:
    """Order-1 zero-Jacobian step from a unit state over h = 1."""

    def unit_pred(self):
        state = stepper.GaussianState(
            t=0.0,
            mean=np.array([[0.7, -0.4]]),
            cov_sqrt=structmat.Kronecker(np.eye(1), np.eye(2)),
        )
        tm = prior.discretize(prior.IwpPrior(nu=1, dim=1), 1.0)
        return stepper.predict(state, tm, gamma_sq=1.0), tm

    def test_predicted_covariance(self):
        pred, _ = self.unit_pred()
        expected = np.array([[7.0 / 3.0, 1.5], [1.5, 2.0]])
        np.testing.assert_allclose(cov_of(pred), expected, atol=1e-14)
        np.testing.assert_allclose(pred.mean[0], [0.3, -0.4], atol=1e-15)

    def test_innovation_variance_and_gain(self):
        pred, tm = self.unit_pred()
        prob = problems.OdeProblem(
            name="still", dim=1, f=lambda t, y: np.zeros(1),
            y0=np.zeros(1), t0=0.0, tmax=2.0,
        )
        lin = linearize_at(LinearizationStrategy.EK0, prob, pred.mean[:, 0], pred.t)
        meas = stepper.measure(pred, lin, tm)
        assert meas.s == pytest.approx(2.0, abs=1e-14)
        assert meas.z[0] == pytest.approx(-0.4)
        new = stepper.correct(pred, meas, lin)
        # gain (3/2, 2)/2 applied to the innovation
        gain = np.array([0.75, 1.0])
        np.testing.assert_allclose(new.mean[0], pred.mean[0] + 0.4 * gain, atol=1e-14)
        expected_cov = np.array([[29.0 / 24.0, 0.0], [0.0, 0.0]])
        np.testing.assert_allclose(cov_of(new), expected_cov, atol=1e-14)


def reference_from(state, h, cfg, problem):
    jac = None
    if cfg.strategy is LinearizationStrategy.DIAGONAL_EK1:
        jac = lambda t, y: np.diag(problem.jac_diag(t, y))
    elif cfg.strategy is LinearizationStrategy.DENSE_EK1:
        jac = problem.jac_dense
    spec = cfg.diffusion
    mean_pred = state.mean @ prior.discretize(
        prior.IwpPrior(nu=cfg.order, dim=problem.dim), h
    ).phi.T
    jac_full = None if jac is None else jac(state.t + h, mean_pred[:, 0])
    return oracle_dense.step_full(
        state.mean,
        cov_of(state),
        state.t,
        h,
        problem.f,
        jac_full,
        time_varying=spec.variability == "time-varying",
        shape=spec.shape,
        gamma_breve=spec.gamma_breve,
        gamma_sq_floor=calibrate.GAMMA_SQ_FLOOR,
    )


STEP_ROUTES = [
    ("ek0", "kronecker", "time-varying", "scalar"),
    ("ek0", "kronecker", "time-constant", "scalar"),
    ("ek0", "block-diagonal", "time-varying", "scalar"),
    ("ek0", "block-diagonal", "time-varying", "vector"),
    ("ek0", "block-diagonal", "time-constant", "vector"),
    ("ek0", "dense", "time-varying", "scalar"),
    ("diagonal-ek1", "block-diagonal", "time-varying", "scalar"),
    ("diagonal-ek1", "block-diagonal", "time-varying", "vector"),
    ("diagonal-ek1", "block-diagonal", "time-constant", "scalar"),
    ("dense-ek1", "dense", "time-varying", "scalar"),
    ("dense-ek1", "dense", "time-constant", "scalar"),
    ("dense-ek1", "dense", "time-varying", "vector"),
]


class TestAgainstDenseReference:
    @pytest.mark.parametrize("strategy,structure,variability,shape", STEP_ROUTES)
    @pytest.mark.parametrize("order", [1, 2, 3])
    def test_step_matches(self, strategy, structure, variability, shape, order):
        problem = problems.lorenz96(4)
        cfg = solve.SolverConfig(
            order=order,
            strategy=strategy,
            structure=structure,
            diffusion=calibrate.DiffusionSpec(variability=variability, shape=shape),
        )
        state = make_state(structure, 4, order + 1, seed=order * 31 + len(structure))
        h = 0.05
        ref = reference_from(state, h, cfg, problem)
        new, err, gamma = stepper.step(state, h, cfg, problem)

        mscale = np.abs(ref["mean"]).max()
        cscale = max(np.abs(ref["cov"]).max(), 1e-12)
        np.testing.assert_allclose(new.mean, ref["mean"], atol=1e-12 * mscale)
        np.testing.assert_allclose(cov_of(new), ref["cov"], atol=1e-10 * cscale)
        np.testing.assert_allclose(gamma, ref["gamma"], rtol=1e-10)
        np.testing.assert_allclose(err, ref["error"], rtol=1e-10)
        assert new.t == pytest.approx(state.t + h)
        assert type(new.cov_sqrt) is type(state.cov_sqrt)

    def test_kronecker_left_factor_passes_through(self):
        # a dense shared left covariance factor rides along unchanged and
        # enters only the diffusion estimate and the error estimate
        rng = np.random.default_rng(7)
        d, order = 3, 2
        lfac = np.tril(rng.standard_normal((d, d))) + 2.0 * np.eye(d)
        gb = lfac @ lfac.T
        problem = problems.OdeProblem(
            name="decay", dim=d, f=lambda t, y: -y,
            y0=np.ones(d), t0=0.0, tmax=2.0,
        )
        cfg = solve.SolverConfig(
            order=order,
            strategy="ek0",
            structure="kronecker",
            diffusion=calibrate.DiffusionSpec(gamma_breve=gb),
        )
        state = make_state("kronecker", d, order + 1, seed=11, left=lfac)
        ref = reference_from(state, 0.04, cfg, problem)
        new, err, gamma = stepper.step(state, 0.04, cfg, problem)

        assert new.cov_sqrt.left is state.cov_sqrt.left
        np.testing.assert_allclose(gamma, ref["gamma"], rtol=1e-10)
        np.testing.assert_allclose(err, ref["error"], rtol=1e-10)
        np.testing.assert_allclose(new.mean, ref["mean"], atol=1e-12)
        np.testing.assert_allclose(
            cov_of(new), ref["cov"], atol=1e-10 * np.abs(ref["cov"]).max()
        )

    def test_diagonal_left_factor_scalar_calibration(self):
        # diagonal fixed factor with scalar estimation: the estimate and
        # the error weights must carry the per-dimension factors
        d, order = 4, 2
        gb = np.array([0.5, 1.0, 2.0, 4.0])
        problem = problems.lorenz96(d)
        cfg = solve.SolverConfig(
            order=order,
            strategy="ek0",
            structure="block-diagonal",
            diffusion=calibrate.DiffusionSpec(gamma_breve=gb),
        )
        state = make_state("block-diagonal", d, order + 1, seed=3)
        tm = prior.discretize(prior.IwpPrior(nu=order, dim=d), 0.05)
        mean_pred = state.mean @ tm.phi.T
        lin = linearize_at(LinearizationStrategy.EK0, problem, mean_pred[:, 0], state.t + 0.05)
        z = lin.residual(mean_pred)
        expected_gamma = np.mean(z * z / (gb * tm.sigma[1, 1]))
        _, err, gamma = stepper.step(state, 0.05, cfg, problem)
        np.testing.assert_allclose(gamma, expected_gamma, rtol=1e-12)
        np.testing.assert_allclose(
            err, np.sqrt(expected_gamma * gb * tm.sigma[1, 1]), rtol=1e-12
        )


class TestCorrectionOracles:
    @pytest.mark.parametrize("strategy", ["ek0", "diagonal-ek1", "dense-ek1"])
    def test_joseph_equals_conventional(self, strategy):
        # the Joseph update and the one-triangularization update are
        # algebraically independent routes to the same posterior
        d, order = 3, 2
        problem = problems.lorenz96(4)
        sub = problems.OdeProblem(
            name="lz", dim=4, f=problem.f, y0=problem.y0, t0=0.0, tmax=1.0,
            jac_dense=problem.jac_dense, jac_diag=problem.jac_diag,
        )
        state = make_state("dense", 4, order + 1, seed=19)
        tm = prior.discretize(prior.IwpPrior(nu=order, dim=4), 0.1)
        pred = stepper.predict(state, tm, gamma_sq=0.7)
        lin = linearize_at(LinearizationStrategy(strategy), sub, pred.mean[:, 0], pred.t)
        meas = stepper.measure(pred, lin, tm)
        joseph = stepper.correct(pred, meas, lin)
        conventional = stepper.correct_conventional(pred, meas, lin)
        np.testing.assert_allclose(joseph.mean, conventional.mean, atol=1e-11)
        scale = np.abs(cov_of(joseph)).max()
        np.testing.assert_allclose(
            cov_of(joseph), cov_of(conventional), atol=1e-11 * scale
        )

    def test_conventional_requires_dense(self):
        state = make_state("block-diagonal", 3, 3, seed=2)
        with pytest.raises(ValueError, match="dense covariances only"):
            stepper.correct_conventional(state, None, None)


class TestPredict:
    @pytest.mark.parametrize("structure", ["dense", "block-diagonal", "kronecker"])
    def test_matches_explicit_propagation(self, structure):
        d, order, h = 3, 2, 0.2
        state = make_state(structure, d, order + 1, seed=5)
        tm = prior.discretize(prior.IwpPrior(nu=order, dim=d), h)
        gamma_sq = 0.37
        pred = stepper.predict(state, tm, gamma_sq=gamma_sq)
        phi_full = np.kron(np.eye(d), tm.phi)
        sigma_full = np.kron(np.eye(d), tm.sigma)
        expected = phi_full @ cov_of(state) @ phi_full.T + gamma_sq * sigma_full
        np.testing.assert_allclose(cov_of(pred), expected, atol=1e-12)
        np.testing.assert_allclose(pred.mean, state.mean @ tm.phi.T, atol=1e-14)

    def test_vector_diffusion_scales_blocks(self):
        d, order, h = 3, 1, 0.5
        state = make_state("block-diagonal", d, order + 1, seed=6)
        tm = prior.discretize(prior.IwpPrior(nu=order, dim=d), h)
        gammas = np.array([0.25, 1.0, 9.0])
        pred = stepper.predict(state, tm, gamma_sq=gammas)
        expected = np.kron(np.eye(d), tm.phi) @ cov_of(state) @ np.kron(
            np.eye(d), tm.phi
        ).T + np.kron(np.diag(gammas), tm.sigma)
        np.testing.assert_allclose(cov_of(pred), expected, atol=1e-13)

    def test_kronecker_rejects_vector_diffusion(self):
        state = make_state("kronecker", 3, 2, seed=8)
        tm = prior.discretize(prior.IwpPrior(nu=1, dim=3), 0.1)
        with pytest.raises(ValueError, match="scalar diffusion"):
            stepper.predict(state, tm, gamma_sq=np.ones(3))

    def test_diffusion_vector_shape_checked(self):
        state = make_state("block-diagonal", 3, 2, seed=9)
        tm = prior.discretize(prior.IwpPrior(nu=1, dim=3), 0.1)
        with pytest.raises(ValueError, match="expected"):
            stepper.predict(state, tm, gamma_sq=np.ones(4))


class TestMeasure:
    def test_kronecker_rejects_jacobians(self):
        prob = problems.vanderpol(2.0)
        state = make_state("kronecker", 2, 3, seed=10)
        tm = prior.discretize(prior.IwpPrior(nu=2, dim=2), 0.1)
        pred = stepper.predict(state, tm, gamma_sq=1.0)
        lin = linearize_at(LinearizationStrategy.DIAGONAL_EK1, prob, pred.mean[:, 0], pred.t)
        with pytest.raises(ValueError, match="zero-Jacobian"):
            stepper.measure(pred, lin, tm)

    def test_degenerate_innovation_raises(self):
        prob = problems.vanderpol(2.0)
        zero_cov = structmat.BlockDiagonal(np.zeros((2, 3, 3)))
        pred = stepper.GaussianState(t=0.1, mean=np.ones((2, 3)), cov_sqrt=zero_cov)
        tm = prior.discretize(prior.IwpPrior(nu=2, dim=2), 0.1)
        lin = linearize_at(LinearizationStrategy.EK0, prob, pred.mean[:, 0], pred.t)
        with pytest.raises(ValueError, match="singular innovation"):
            stepper.measure(pred, lin, tm)


class TestStepInvariants:
    @pytest.mark.parametrize("structure", ["dense", "block-diagonal", "kronecker"])
    def test_covariance_stays_symmetric_psd(self, structure):
        problem = problems.lorenz96(4)
        cfg = solve.SolverConfig(order=2, strategy="ek0", structure=structure)
        state = make_state(structure, 4, 3, seed=12)
        for _ in range(5):
            state, _, _ = stepper.step(state, 0.02, cfg, problem)
        cov = cov_of(state)
        np.testing.assert_allclose(cov, cov.T, atol=1e-10)
        eigs = np.linalg.eigvalsh(cov)
        assert eigs.min() >= -1e-10 * max(eigs.max(), 1.0)

    def test_error_estimate_is_local(self):
        # the same state and step must give the same error estimate in
        # time-varying and time-constant modes: both report the local one
        problem = problems.lorenz96(4)
        state = make_state("block-diagonal", 4, 3, seed=13)
        errs = {}
        for variability in ("time-varying", "time-constant"):
            cfg = solve.SolverConfig(
                order=2,
                strategy="diagonal-ek1",
                structure="block-diagonal",
                diffusion=calibrate.DiffusionSpec(variability=variability),
            )
            _, errs[variability], _ = stepper.step(state, 0.03, cfg, problem)
        np.testing.assert_allclose(
            errs["time-varying"], errs["time-constant"], rtol=1e-14
        )


class TestFusedKernel:
    def test_matches_reference_step(self):
        problem = problems.lorenz96(6)
        nu = 2
        cfg = solve.SolverConfig(order=nu, strategy="ek0", structure="kronecker")
        state = make_state("kronecker", 6, nu + 1, seed=14)
        fk = stepper.FusedKroneckerStepper(problem, nu, time_varying=True)
        mean_t, right = fk.state_to_buffers(state)
        out = np.empty((nu + 3, 6))
        new_right = np.empty((nu + 1, nu + 1))
        gamma_fused = fk.step_into(state.t, 0.05, mean_t, right, out, new_right)
        fused = fk.buffers_to_state(state.t + 0.05, out[: nu + 1], new_right)

        ref, err_ref, gamma_ref = stepper.step(state, 0.05, cfg, problem)
        np.testing.assert_allclose(fused.mean, ref.mean, rtol=1e-13, atol=1e-13)
        np.testing.assert_allclose(gamma_fused, gamma_ref, rtol=1e-12)
        np.testing.assert_allclose(out[nu + 2], err_ref, rtol=1e-12)
        np.testing.assert_allclose(
            cov_of(fused), cov_of(ref), atol=1e-12 * np.abs(cov_of(ref)).max()
        )

    def test_requires_compiled_field(self):
        bare = problems.OdeProblem(
            name="bare", dim=2, f=lambda t, y: -y, y0=np.ones(2), t0=0.0, tmax=1.0
        )
        with pytest.raises(ValueError, match="no compiled vector field"):
            stepper.FusedKroneckerStepper(bare, 2, time_varying=True)


class TestFusedBlockDiagKernel:
    @pytest.mark.parametrize("strategy", ["ek0", "diagonal-ek1"])
    @pytest.mark.parametrize("variability", ["time-varying", "time-constant"])
    def test_matches_reference_step(self, strategy, variability):
        problem = problems.lorenz96(6)
        nu = 2
        cfg = solve.SolverConfig(
            order=nu,
            strategy=strategy,
            structure="block-diagonal",
            diffusion=calibrate.DiffusionSpec(variability=variability),
        )
        state = make_state("block-diagonal", 6, nu + 1, seed=14)
        fk = stepper.FusedBlockDiagStepper(
            problem,
            nu,
            time_varying=variability == "time-varying",
            use_jacobian=strategy == "diagonal-ek1",
        )
        mean_t, blocks = fk.state_to_buffers(state)
        out = np.empty((nu + 3, 6))
        new_blocks = fk.right_buffer()
        gamma_fused = fk.step_into(state.t, 0.05, mean_t, blocks, out, new_blocks)
        fused = fk.buffers_to_state(state.t + 0.05, out[: nu + 1], new_blocks)

        ref, err_ref, gamma_ref = stepper.step(state, 0.05, cfg, problem)
        np.testing.assert_allclose(fused.mean, ref.mean, rtol=1e-13, atol=1e-13)
        np.testing.assert_allclose(gamma_fused, gamma_ref, rtol=1e-12)
        np.testing.assert_allclose(out[nu + 2], err_ref, rtol=1e-12)
        np.testing.assert_allclose(
            cov_of(fused), cov_of(ref), atol=1e-12 * np.abs(cov_of(ref)).max()
        )

    def test_repeated_step_reproduces_single(self):
        problem = problems.lorenz96(5)
        nu = 2
        state = make_state("block-diagonal", 5, nu + 1, seed=3)
        fk = stepper.FusedBlockDiagStepper(problem, nu, time_varying=True)
        mean_t, blocks = fk.state_to_buffers(state)
        out = np.empty((nu + 3, 5))
        new_blocks = fk.right_buffer()
        gamma_once = fk.step_into(state.t, 0.02, mean_t, blocks, out, new_blocks)
        out_once = out.copy()
        # same source buffers every iteration, so k repeats sum k equal gammas
        gamma_rep = fk.step_repeated(state.t, 0.02, mean_t, blocks, out, new_blocks, 4)
        assert gamma_rep == pytest.approx(4.0 * gamma_once, rel=1e-15)
        np.testing.assert_array_equal(out, out_once)

    def test_requires_compiled_jacobian(self):
        import dataclasses

        problem = dataclasses.replace(problems.lorenz96(4), jac_diag_inplace=None)
        with pytest.raises(ValueError, match="no compiled Jacobian diagonal"):
            stepper.FusedBlockDiagStepper(problem, 2, time_varying=True, use_jacobian=True)


class TestStateValidation:
    def test_mean_must_be_a_grid(self):
        with pytest.raises(ValueError, match="grid"):
            stepper.GaussianState(
                t=0.0, mean=np.zeros(4), cov_sqrt=structmat.Dense(np.eye(4))
            )

    def test_covariance_dim_must_match(self):
        with pytest.raises(ValueError, match="does not match"):
            stepper.GaussianState(
                t=0.0, mean=np.zeros((2, 3)), cov_sqrt=structmat.Dense(np.eye(4))
            )
