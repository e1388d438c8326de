"""Two-level control law: task-level Riccati feedback on the average output
plus a Laplacian consensus term that redistributes effort between agents.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .agent import A_C, B_C
from .numerics import solve_care

# Nominal second-order desired dynamics in matrix form.
NOMINAL_A_D = np.array([[0.0, 1.0], [-82.0, -13.04]])
NOMINAL_B_D = np.array([0.0, 82.004])
NOMINAL_C_D = np.array([1.0, 0.0])


@dataclass
class DesiredDynamics:
    """Stable second-order target dynamics for the average output.

    Carries its own state z_d; desired_step returns an advanced copy.
    alpha_d = C_d A_d^2 and gamma_d = C_d A_d B_d are the normal-form
    coefficients used by the task-level acceleration.
    """

    a_d: np.ndarray
    b_d: np.ndarray
    c_d: np.ndarray
    z_d: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.a_d = np.asarray(self.a_d, dtype=float)
        self.b_d = np.asarray(self.b_d, dtype=float).reshape(2)
        self.c_d = np.asarray(self.c_d, dtype=float).reshape(2)
        self.z_d = np.asarray(self.z_d, dtype=float).reshape(2)
        if self.a_d.shape != (2, 2):
            raise ValueError(f"A_d must be 2x2, got {self.a_d.shape}")
        eig = np.linalg.eigvals(self.a_d)
        if eig.real.max() >= 0.0:
            raise ValueError(f"A_d must be Hurwitz, eigenvalues {eig}")

    @property
    def alpha_d(self) -> np.ndarray:
        return self.c_d @ self.a_d @ self.a_d

    @property
    def gamma_d(self) -> float:
        return float(self.c_d @ self.a_d @ self.b_d)

    @property
    def output(self) -> float:
        return float(self.c_d @ self.z_d)

    def is_normal_form(self) -> bool:
        """True when (A_d, B_d, C_d) is in controllable canonical shape."""
        return (np.array_equal(self.c_d, [1.0, 0.0])
                and self.a_d[0, 0] == 0.0 and self.a_d[0, 1] == 1.0
                and self.b_d[0] == 0.0)

    def dc_gain(self) -> float:
        return float(self.c_d @ np.linalg.solve(-self.a_d, self.b_d))


def desired_from_damping(zeta: float, omega_n: float) -> DesiredDynamics:
    """Canonical unit-DC-gain second-order system from (zeta, omega_n)."""
    if zeta <= 0.0 or omega_n <= 0.0:
        raise ValueError(f"need zeta > 0 and omega_n > 0, got ({zeta}, {omega_n})")
    a_d = np.array([[0.0, 1.0], [-omega_n ** 2, -2.0 * zeta * omega_n]])
    b_d = np.array([0.0, omega_n ** 2])
    return DesiredDynamics(a_d=a_d, b_d=b_d, c_d=np.array([1.0, 0.0]))


def nominal_desired() -> DesiredDynamics:
    """Nominal desired dynamics (DC gain 82.004/82, not exactly 1)."""
    return DesiredDynamics(a_d=NOMINAL_A_D.copy(), b_d=NOMINAL_B_D.copy(),
                           c_d=NOMINAL_C_D.copy())


def desired_step(d: DesiredDynamics, y_t: float, dt: float) -> DesiredDynamics:
    """Advance the desired state one Euler step of z_d' = A_d z_d + B_d y_t."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    z_new = d.z_d + dt * (d.a_d @ d.z_d + d.b_d * y_t)
    return DesiredDynamics(a_d=d.a_d, b_d=d.b_d, c_d=d.c_d, z_d=z_new)


@dataclass
class ControlParams:
    """Gains and shares for the node-level law."""

    eta: float
    y_target: float
    shares: np.ndarray
    p_c: np.ndarray
    n_agents: int

    def __post_init__(self):
        self.shares = np.asarray(self.shares, dtype=float)
        self.p_c = np.asarray(self.p_c, dtype=float)
        if self.eta <= 0.0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not np.isfinite(self.y_target):
            raise ValueError("y_target must be finite")
        if self.shares.shape != (self.n_agents,):
            raise ValueError(
                f"shares shape {self.shares.shape} != ({self.n_agents},)")
        if self.shares.min() < -1e-12 or abs(self.shares.sum() - 1.0) > 1e-9:
            raise ValueError(f"shares must lie on the simplex, got {self.shares}")


def riccati_gain(d: DesiredDynamics, q_care=None) -> np.ndarray:
    """P_c solving the CARE on (A_c + B_c alpha_d, B_c, Q_care)."""
    q = np.eye(2) if q_care is None else np.asarray(q_care, dtype=float)
    a = A_C + np.outer(B_C, d.alpha_d)
    return solve_care(a, B_C.reshape(2, 1), q)


def task_level_accel(z_bar, d: DesiredDynamics, y_t: float, p_c) -> float:
    """Commanded average acceleration, identical for every agent.

    alpha_d z_bar + gamma_d y_t - (1/2) B_c^T P_c (z_bar - z_d)
    """
    z_bar = np.asarray(z_bar, dtype=float)
    p_c = np.asarray(p_c, dtype=float)
    err = z_bar - d.z_d
    return float(d.alpha_d @ z_bar + d.gamma_d * y_t - 0.5 * (B_C @ p_c) @ err)


def node_control(i: int, z_hat_i, z_bar_hat, ydd_bar: float,
                 params: ControlParams) -> float:
    """Per-node law: shared acceleration + relative-to-average correction.

    u_i = ydd_bar + (ybar - y_i) + eta (ybar_dot - ydot_i) - y_t (1/N - s_i)
    """
    if not 0 <= i < params.n_agents:
        raise ValueError(f"agent index {i} out of range")
    z_hat_i = np.asarray(z_hat_i, dtype=float)
    z_bar_hat = np.asarray(z_bar_hat, dtype=float)
    return float(
        ydd_bar
        + (z_bar_hat[0] - z_hat_i[0])
        + params.eta * (z_bar_hat[1] - z_hat_i[1])
        - params.y_target * (1.0 / params.n_agents - params.shares[i])
    )


def ensemble_control(y_hat, ydot_hat, ydd_bar: float, params: ControlParams,
                     lap: np.ndarray) -> np.ndarray:
    """Stacked law: u = ydd_bar 1 + (1/N)(y_t L s - L y - eta L ydot).

    Matches node_control elementwise when lap is the complete-graph
    Laplacian; any connected Laplacian is accepted for exploration.
    """
    y_hat = np.asarray(y_hat, dtype=float)
    ydot_hat = np.asarray(ydot_hat, dtype=float)
    lap = np.asarray(lap, dtype=float)
    n = params.n_agents
    if y_hat.shape != (n,) or ydot_hat.shape != (n,) or lap.shape != (n, n):
        raise ValueError(
            f"dimension mismatch: y {y_hat.shape}, ydot {ydot_hat.shape}, "
            f"L {lap.shape}, N={n}")
    return (ydd_bar
            + (params.y_target * (lap @ params.shares)
               - lap @ y_hat - params.eta * (lap @ ydot_hat)) / n)


def decompose_control(u) -> tuple[np.ndarray, np.ndarray]:
    """Split u into its span{1} part and the zero-mean remainder."""
    u = np.asarray(u, dtype=float)
    u_par = np.full_like(u, u.mean())
    return u_par, u - u_par
