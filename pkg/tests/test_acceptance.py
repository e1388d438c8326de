"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -s` to see every line.  The
182-trial ensemble is shared by the first three criteria and uses the
default seed (0); trial k consumes random stream k.
"""

import filecmp
import time
from pathlib import Path

import numpy as np
import pytest

from synsim.agent import A_C, B_C, C_C, NoiseConfig
from synsim.analysis import (ensemble_synergy, fit_second_order,
                             load_wide_csv, second_order_step,
                             sharing_covariance, ucm_analysis, ucm_basis)
from synsim.cli import main as cli_main
from synsim.control import (ControlParams, node_control, ensemble_control,
                            decompose_control, nominal_desired, riccati_gain)
from synsim.numerics import care_residual, solve_care
from synsim.simulator import (NOMINAL_C_M, TrialConfig, iter_trials, run_trial)
from synsim.topology import complete_graph, laplacian, projection_complement_span1

DATA = Path(__file__).parent / "data"
QUOTED_S = np.array([0.2562, 0.2458, 0.2118, 0.2861])


def check(criterion: str, clauses: list[tuple[str, bool]]):
    ok = all(flag for _, flag in clauses)
    detail = "; ".join(f"{name} {'ok' if flag else 'FAILED'}"
                       for name, flag in clauses)
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} [{detail}]")
    assert ok, f"{criterion}: {detail}"


def noise_free(**kw):
    base = dict(q_noise=np.zeros((2, 2)), r_meas=1e-12, p0=np.zeros((2, 2)))
    base.update(kw)
    return TrialConfig(**base)


@pytest.fixture(scope="session")
def nominal_ensemble():
    run_trial(TrialConfig(duration=0.01, steady_window=(0.0, 0.01),
                          transient_window=(0.0, 0.005)), 0)  # warm the kernel
    cfg = TrialConfig(seed=0)
    t0 = time.perf_counter()
    report = ensemble_synergy(iter_trials(cfg, 182), y_target=cfg.y_target)
    wall = time.perf_counter() - t0
    return report, wall


def test_criterion_01_rmse_reproduction(nominal_ensemble):
    report, wall = nominal_ensemble
    clauses = [
        (f"mean {report.rmse_mean:.4f} in [0.13,0.30]",
         0.13 <= report.rmse_mean <= 0.30),
        # Unattainable for a fixed-parameter ensemble: per-trial RMSE of a
        # stationary closed loop concentrates (std ~ 0.02 across trials);
        # see the decisions ledger for the full analysis.
        (f"stderr {report.rmse_stderr:.4f} in [0.04,0.15]",
         0.04 <= report.rmse_stderr <= 0.15),
        (f"runtime {wall:.1f}s < 60s", wall < 60.0),
    ]
    check("C1 rmse-reproduction", clauses)


def test_criterion_02_synergy_index(nominal_ensemble):
    report, _ = nominal_ensemble
    clauses = [
        (f"dV {report.delta_v:.4f} in [1.15,1.40]",
         1.15 <= report.delta_v <= 1.40),
        (f"V_ORT {report.v_ort:.5f} < 0.02", report.v_ort < 0.02),
        (f"V_UCM {report.v_ucm:.3f} in [1.5,4.0]",
         1.5 <= report.v_ucm <= 4.0),
    ]
    check("C2 synergy-index", clauses)


def test_criterion_03_pca_structure(nominal_ensemble):
    report, _ = nominal_ensemble
    smallest = int(np.argmin(report.pca_explained))
    top3 = float(np.sort(report.pca_explained)[::-1][:3].sum())
    clauses = [
        (f"smallest-PC angle {report.pca_angles_deg[smallest]:.2f} < 6 deg",
         report.pca_angles_deg[smallest] < 6.0),
        (f"smallest-PC explains {100 * report.pca_explained[smallest]:.3f}% < 2%",
         report.pca_explained[smallest] < 0.02),
        (f"top-3 explain {100 * top3:.2f}% > 97%", top3 > 0.97),
    ]
    check("C3 pca-structure", clauses)


def test_criterion_04_noise_free_exactness():
    # run beyond the 23 s protocol so the slow consensus mode
    # (rate (eta - sqrt(eta^2 - 4))/2 ~ 0.138/s) has fully decayed
    cfg = noise_free(shares=QUOTED_S, duration=60.0,
                     steady_window=(50.0, 60.0), transient_window=(2.0, 50.0))
    rec = run_trial(cfg, 0)
    target = 5.0 * (rec.shares + 0.75)
    final_err = float(np.abs(rec.y[-1] - target).max())

    sigma = 13.04 / 2.0
    wd = np.sqrt(82.0 - sigma ** 2)
    analytic = (82.004 / 82.0) * 5.0 * (
        1.0 - np.exp(-sigma * rec.t) * (np.cos(wd * rec.t)
                                        + (sigma / wd) * np.sin(wd * rec.t)))
    mask = rec.t >= 1.0
    sup = float(np.abs(rec.ybar_hat[mask] - analytic[mask]).max())
    clauses = [
        (f"final forces within {final_err:.2e} of 5(s+3/4) (tol 1e-3)",
         final_err < 1e-3),
        (f"avg output vs analytic step sup {sup:.2e} after 1s (tol 1e-3)",
         sup < 1e-3),
    ]
    check("C4 noise-free-exactness", clauses)


def test_criterion_05_algebraic_equivalence():
    rng = np.random.default_rng(123)
    lap = laplacian(complete_graph(4))
    p_c = riccati_gain(nominal_desired())
    worst_forms = 0.0
    worst_recon = 0.0
    worst_mean = 0.0
    for _ in range(1000):
        shares = rng.dirichlet(np.ones(4))
        params = ControlParams(eta=7.41, y_target=5.0, shares=shares,
                               p_c=p_c, n_agents=4)
        y = rng.standard_normal(4) * 3.0
        yd = rng.standard_normal(4)
        ydd = rng.standard_normal() * 100.0
        zbar = np.array([y.mean(), yd.mean()])
        u_node = np.array([node_control(i, np.array([y[i], yd[i]]), zbar,
                                        ydd, params) for i in range(4)])
        u_sum = np.array([
            ydd + np.mean([(y[j] - y[i]) + params.eta * (yd[j] - yd[i])
                           - 5.0 * (shares[j] - shares[i]) for j in range(4)])
            for i in range(4)])
        u_lap = ensemble_control(y, yd, ydd, params, lap)
        worst_forms = max(worst_forms,
                          np.abs(u_node - u_sum).max(),
                          np.abs(u_node - u_lap).max())
        u_par, u_perp = decompose_control(u_lap)
        worst_recon = max(worst_recon, np.abs(u_par + u_perp - u_lap).max())
        worst_mean = max(worst_mean, abs(u_perp.sum()))
    clauses = [
        (f"node/sum/Laplacian forms agree to {worst_forms:.2e} (tol 1e-12)",
         worst_forms < 1e-12),
        (f"u_par + u_perp reconstructs u to {worst_recon:.2e}",
         worst_recon < 1e-12),
        (f"ones'u_perp = 0 to {worst_mean:.2e}", worst_mean < 1e-12),
    ]
    check("C5 algebraic-equivalence", clauses)


def test_criterion_06_certificates():
    p_c = riccati_gain(nominal_desired())
    a = A_C + np.outer(B_C, nominal_desired().alpha_d)
    resid = care_residual(a, B_C.reshape(2, 1), np.eye(2), p_c)
    clauses = [(f"CARE residual {resid:.2e} < 1e-8",
                resid < 1e-8 * (1.0 + np.linalg.norm(p_c)))]

    lap = laplacian(complete_graph(4))
    pi = projection_complement_span1(4)
    for name, shares in (("uniform", np.full(4, 0.25)), ("quoted", QUOTED_S)):
        rec = run_trial(noise_free(shares=shares), 0)
        zbar = np.column_stack([rec.y_hat.mean(axis=1),
                                rec.ydot_hat.mean(axis=1)])
        eps = zbar - rec.z_d
        v1 = np.einsum("ij,jk,ik->i", eps, p_c, eps)
        psi1 = (rec.y - 5.0 * rec.shares) / 4.0
        delta = psi1 @ pi.T
        ddot = (rec.ydot @ pi.T) / 4.0
        v2 = 0.5 * np.einsum("ij,jk,ik->i", delta, lap, delta) \
            + 0.5 * (ddot ** 2).sum(axis=1)
        # both certificates leave zero through the first step's O(dt^2)
        # Euler remainder; monotone within discretization slack thereafter
        # (values under 1e-20 are numerically zero at these force scales)
        slack1 = 1e-6 * max(v1.max(), 1e-20)
        slack2 = 1e-6 * max(v2.max(), 1e-20)
        inc1 = float(np.diff(v1[1:]).max())
        inc2 = float(np.diff(v2[1:]).max())
        clauses.append(
            (f"{name}: task certificate non-increasing (max inc {inc1:.1e})",
             inc1 <= slack1))
        clauses.append(
            (f"{name}: consensus certificate non-increasing (max inc {inc2:.1e})",
             inc2 <= slack2))
        clauses.append((f"{name}: certificates decay "
                        f"(V1 {v1[-1]:.1e}, V2 {v2[-1]:.1e})",
                        v1[-1] < 1e-12
                        and v2[-1] < max(0.01 * v2.max(), 1e-20)))
    check("C6 lyapunov-certificates", clauses)


def test_criterion_07_kalman_consistency():
    noise = NoiseConfig(q_noise=0.095 * np.eye(2), r_meas=2.24)
    dual = solve_care(A_C.T, (C_C / np.sqrt(noise.r_meas)).reshape(2, 1),
                      noise.q_noise)
    dt = 1e-3
    p = np.eye(2)
    for _ in range(25_000):
        p = p + dt * (A_C @ p + p @ A_C.T + noise.q_noise
                      - np.outer(p @ C_C, C_C @ p) / noise.r_meas)
        p = 0.5 * (p + p.T)
    long_err = float(np.abs(p - dual).max())

    # Monte Carlo estimation errors against the filter's own covariance:
    # truth initialized from N(0, P0), noises at the modeled intensities
    nrun, nstep = 500, 1000
    rng = np.random.default_rng(2027)
    z = rng.standard_normal((nrun, 2))
    zh = np.zeros((nrun, 2))
    pk = np.eye(2)
    r_std = np.sqrt(noise.r_meas / dt)
    for _ in range(nstep):
        k1, k2 = pk[0, 0] / noise.r_meas, pk[0, 1] / noise.r_meas
        innov = z[:, 0] + r_std * rng.standard_normal(nrun) - zh[:, 0]
        zh = np.column_stack([zh[:, 0] + dt * (zh[:, 1] + k1 * innov),
                              zh[:, 1] + dt * k2 * innov])
        pk = pk + dt * (A_C @ pk + pk @ A_C.T + noise.q_noise
                        - np.outer(pk @ C_C, C_C @ pk) / noise.r_meas)
        pk = 0.5 * (pk + pk.T)
        w = rng.standard_normal((nrun, 2)) @ noise.q_factor.T
        z = np.column_stack([z[:, 0] + dt * z[:, 1], z[:, 1]]) + np.sqrt(dt) * w
    emp = np.cov((zh - z).T, ddof=1)
    rel = np.abs(np.diag(emp) - np.diag(pk)) / np.diag(pk)
    clauses = [
        (f"long-horizon P vs dual CARE {long_err:.2e} < 1e-4", long_err < 1e-4),
        (f"MC error covariance vs diag(P) rel {rel.max():.3f} < 0.20",
         rel.max() < 0.20),
    ]
    check("C7 kalman-consistency", clauses)


def test_criterion_08_replicate_against_golden():
    cfg = TrialConfig(seed=7, zeta=0.80, omega_n=7.86, eta=6.0, shares=QUOTED_S)
    y_hat = None
    for k in range(5):
        rec = run_trial(cfg, k)
        y_hat = rec.y_hat if y_hat is None else y_hat + rec.y_hat
    y_hat = y_hat / 5.0
    golden = load_wide_csv(DATA / "golden_replicate.csv", cutoff_hz=None)
    rmse_comb = float(np.sqrt(np.mean(
        (y_hat.sum(axis=1) - golden.y_hat.sum(axis=1)) ** 2)))
    sl = rec.steady_slice()
    means = y_hat[sl].mean(axis=0)
    target = 5.0 * (rec.shares + 0.75)
    peak = float(y_hat.mean(axis=1).max())
    clauses = [
        (f"combined RMSE vs golden {rmse_comb:.3f} < 0.6", rmse_comb < 0.6),
        (f"per-finger steady means within {np.abs(means - target).max():.2f} "
         "of 5(s+3/4) (tol 1.0)", np.abs(means - target).max() < 1.0),
        (f"well-damped: peak avg output {peak:.2f} < 5.6", peak < 5.6),
    ]
    check("C8 replicate-trial", clauses)


def test_criterion_09_analysis_oracles():
    t = np.arange(0, 8, 1e-3)
    errs = []
    for zeta, wn in ((0.72, 9.32), (2.0, 5.0)):
        fit = fit_second_order(t, 5.0 * second_order_step(zeta, wn, t), 5.0)
        errs.append(max(abs(fit.zeta - zeta) / zeta,
                        abs(fit.omega_n - wn) / wn))
    fit_err = max(errs)

    class _Synthetic:
        def __init__(self, t, y, k):
            self.t, self.y, self.y_hat, self.trial_index = t, y, y, k

        def steady_slice(self, window=None):
            return slice(0, len(self.t))

    rng = np.random.default_rng(99)
    chol = np.linalg.cholesky(NOMINAL_C_M)
    ts = np.arange(200) * 0.01
    trials = [_Synthetic(ts, 0.25 + rng.standard_normal((200, 4)) @ chol.T, k)
              for k in range(182)]
    cov = sharing_covariance(trials, window=(0.0, 2.0))
    cov_err = float(np.linalg.norm(cov - NOMINAL_C_M) / np.linalg.norm(NOMINAL_C_M))

    _, ucm = ucm_basis(4)
    ucm_only = ucm_analysis(rng.standard_normal((300, 3)) @ ucm.T)
    ort_only = ucm_analysis(np.outer(rng.standard_normal(300), np.ones(4)))
    clauses = [
        (f"second-order fit recovery {100 * fit_err:.4f}% < 1%", fit_err < 0.01),
        (f"sharing covariance recovery {100 * cov_err:.1f}% < 10% Frobenius",
         cov_err < 0.10),
        (f"dV limit 4/3 hit to {abs(ucm_only.delta_v - 4 / 3):.1e}",
         abs(ucm_only.delta_v - 4.0 / 3.0) < 1e-12),
        (f"dV limit -4 hit to {abs(ort_only.delta_v + 4):.1e}",
         abs(ort_only.delta_v + 4.0) < 1e-12),
    ]
    check("C9 analysis-oracles", clauses)


def test_criterion_10_determinism(tmp_path):
    dirs = [tmp_path / "run_a", tmp_path / "run_b"]
    for d in dirs:
        code = cli_main(["simulate", "--trials", "3", "--seed", "17",
                         "--out", str(d)])
        assert code == 0
    names = ["trial_0000.csv", "trial_0001.csv", "trial_0002.csv",
             "report.csv", "report.txt"]
    identical = all(filecmp.cmp(dirs[0] / n, dirs[1] / n, shallow=False)
                    for n in names)
    check("C10 determinism",
          [("trial files and reports byte-identical across runs", identical)])
