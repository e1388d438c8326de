import numpy as np
import pytest

from synsim.agent import (A_C, C_C, AgentState, CovarianceLossError,
                          NoiseConfig, kalman_step, measure,
                          step_true_dynamics)
from synsim.numerics import RngStream, solve_care

NOMINAL_NOISE = NoiseConfig(q_noise=0.095 * np.eye(2), r_meas=2.24)
QUIET = NoiseConfig(q_noise=np.zeros((2, 2)), r_meas=2.24)


def _riccati_rhs(p, noise):
    return (A_C @ p + p @ A_C.T + noise.q_noise
            - np.outer(p @ C_C, C_C @ p) / noise.r_meas)


def dual_care_fixed_point(noise):
    b = (C_C / np.sqrt(noise.r_meas)).reshape(2, 1)
    return solve_care(A_C.T, b, noise.q_noise)


def test_equilibrium_stays_put():
    state = AgentState.at_rest()
    out = step_true_dynamics(state, 0.0, 1e-3, RngStream(0), QUIET)
    assert np.array_equal(out.z, [0.0, 0.0])


def test_double_integration_of_unit_acceleration():
    state = AgentState.at_rest()
    rng = RngStream(0)
    for _ in range(1000):
        state = step_true_dynamics(state, 1.0, 1e-3, rng, QUIET)
    # closed form y = t^2/2, ydot = t at t = 1
    assert abs(state.z[0] - 0.5) < 0.01
    assert abs(state.z[1] - 1.0) < 0.01
    # exact value of the discrete recursion: dt^2 * n(n-1)/2
    assert np.isclose(state.z[0], 0.4995, atol=1e-12)


def test_one_step_increment_covariance():
    rng = RngStream(8)
    dt = 1e-3
    incs = []
    for _ in range(10_000):
        out = step_true_dynamics(AgentState.at_rest(), 0.0, dt, rng, NOMINAL_NOISE)
        incs.append(out.z)
    cov = np.cov(np.array(incs).T, ddof=1)
    target = NOMINAL_NOISE.q_noise * dt
    assert np.linalg.norm(cov - target) < 0.05 * np.linalg.norm(target)


def test_rejects_nonfinite_control():
    with pytest.raises(ValueError, match="finite"):
        step_true_dynamics(AgentState.at_rest(), np.nan, 1e-3, RngStream(0), QUIET)


class TestMeasure:
    def test_noise_free_is_exact(self):
        st = AgentState.at_rest()
        st.z = np.array([3.25, 0.0])
        noise = NoiseConfig(q_noise=np.zeros((2, 2)), r_meas=0.0)
        assert measure(st, RngStream(0), noise) == 3.25

    def test_sample_variance(self):
        st = AgentState.at_rest()
        st.z = np.array([5.0, 0.0])
        rng = RngStream(4)
        ys = np.array([measure(st, rng, NOMINAL_NOISE) for _ in range(100_000)])
        assert abs(ys.mean() - 5.0) < 4 * np.sqrt(2.24 / len(ys))
        assert abs(ys.var(ddof=1) - 2.24) < 0.05 * 2.24

    def test_reproducible(self):
        st = AgentState.at_rest()
        a = [measure(st, RngStream(1, 2), NOMINAL_NOISE)]
        b = [measure(st, RngStream(1, 2), NOMINAL_NOISE)]
        assert a == b


class TestKalman:
    def test_steady_state_is_fixed_point(self):
        p_ss = dual_care_fixed_point(NOMINAL_NOISE)
        assert np.linalg.norm(_riccati_rhs(p_ss, NOMINAL_NOISE)) < 1e-7
        st = AgentState(z=np.zeros(2), z_hat=np.zeros(2), p=p_ss.copy())
        out = kalman_step(st, 0.0, 0.0, 1e-3, NOMINAL_NOISE)
        assert np.allclose(out.p, p_ss, atol=1e-9)

    def test_long_horizon_matches_dual_care(self):
        st = AgentState.at_rest()  # P0 = I
        for _ in range(20_000):
            st = kalman_step(st, 0.0, 0.0, 1e-3, NOMINAL_NOISE)
        assert np.abs(st.p - dual_care_fixed_point(NOMINAL_NOISE)).max() < 1e-4

    def test_covariance_psd_along_trajectory(self):
        st = AgentState.at_rest()
        rng = RngStream(6)
        for k in range(2000):
            y = measure(st, rng, NOMINAL_NOISE)
            st = kalman_step(st, 0.3, y, 1e-3, NOMINAL_NOISE)
            st = step_true_dynamics(st, 0.3, 1e-3, rng, NOMINAL_NOISE)
            if k % 100 == 0:
                w = np.linalg.eigvalsh(st.p)
                assert w.min() > -1e-9
                assert np.array_equal(st.p, st.p.T)

    def test_noise_free_exact_tracking(self):
        # exact init, no process noise, exact measurements: estimate rides the truth
        noise = NoiseConfig(q_noise=np.zeros((2, 2)), r_meas=0.01)
        st = AgentState.at_rest()
        rng = RngStream(3)
        for _ in range(3000):
            y = float(st.z[0])
            st = kalman_step(st, 0.7, y, 1e-3, noise)
            st = step_true_dynamics(st, 0.7, 1e-3, rng, noise)
        assert np.linalg.norm(st.z_hat - st.z) < 1e-6

    def test_trace_decays_in_noise_free_measurement_limit(self):
        # with Q = 0, d(tr P)/dt = 2 P12 - (P11^2 + P12^2)/R <= R, so per-step
        # increases vanish as R -> 0 and the trace decays overall
        noise = NoiseConfig(q_noise=np.zeros((2, 2)), r_meas=0.01)
        dt = 1e-4
        st = AgentState.at_rest()
        prev = np.trace(st.p)
        for _ in range(30_000):
            st = kalman_step(st, 0.0, 0.0, dt, noise)
            tr = np.trace(st.p)
            assert tr <= prev + 1.01 * dt * noise.r_meas
            prev = tr
        assert prev < 0.02 * 2.0

    def test_blown_step_size_raises(self):
        noise = NoiseConfig(q_noise=np.zeros((2, 2)), r_meas=1e-6)
        with pytest.raises(CovarianceLossError, match="reduce dt"):
            kalman_step(AgentState.at_rest(), 0.0, 0.0, 1e-3, noise)

    def test_euler_close_to_heun_half_step(self):
        # one explicit Euler step vs Heun: difference is O(dt^2)
        dt = 1e-3
        p = np.eye(2)
        f0 = _riccati_rhs(p, NOMINAL_NOISE)
        euler = p + dt * f0
        heun = p + 0.5 * dt * (f0 + _riccati_rhs(p + dt * f0, NOMINAL_NOISE))
        assert np.abs(euler - heun).max() < 1e-4

    def test_monte_carlo_error_covariance_matches_p(self):
        # initial truth drawn from N(0, P0); world matches the filter model
        noise = NOMINAL_NOISE
        dt, nrun, nstep = 1e-3, 300, 1000
        rng = np.random.default_rng(15)
        z = rng.standard_normal((nrun, 2))
        zh = np.zeros((nrun, 2))
        p = np.eye(2)
        r_std = np.sqrt(noise.r_meas / dt)
        for _ in range(nstep):
            k1, k2 = p[0, 0] / noise.r_meas, p[0, 1] / noise.r_meas
            innov = z[:, 0] + r_std * rng.standard_normal(nrun) - zh[:, 0]
            zh = np.column_stack([zh[:, 0] + dt * (zh[:, 1] + k1 * innov),
                                  zh[:, 1] + dt * k2 * innov])
            p = p + dt * _riccati_rhs(p, noise)
            p = 0.5 * (p + p.T)
            w = rng.standard_normal((nrun, 2)) @ noise.q_factor.T
            z = np.column_stack([z[:, 0] + dt * z[:, 1], z[:, 1]]) + np.sqrt(dt) * w
        emp = np.cov((zh - z).T, ddof=1)
        assert np.abs(np.diag(emp) - np.diag(p)).max() < 0.3 * np.diag(p).min()
