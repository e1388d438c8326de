"""Single-agent stochastic double integrator with a continuous-time Kalman
filter, discretized by explicit Euler (Euler-Maruyama for the plant noise).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import constants
from .numerics import RngStream, psd_factor

# Chain-of-integrators plant: state z = [force, force-rate].
A_C = np.array([[0.0, 1.0], [0.0, 0.0]])
B_C = np.array([0.0, 1.0])
C_C = np.array([1.0, 0.0])


class CovarianceLossError(RuntimeError):
    """Filter covariance lost positive semidefiniteness (dt too large)."""


@dataclass
class NoiseConfig:
    """Process covariance (intensity, N^2/s scale) and measurement variance."""

    q_noise: np.ndarray
    r_meas: float
    q_factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.q_noise = np.asarray(self.q_noise, dtype=float)
        self.r_meas = float(self.r_meas)
        if self.r_meas < 0.0:
            raise ValueError(f"measurement variance must be >= 0, got {self.r_meas}")
        self.q_factor = psd_factor(self.q_noise, "Q_noise")


@dataclass
class AgentState:
    """True state, estimate, and estimate error covariance of one agent."""

    z: np.ndarray
    z_hat: np.ndarray
    p: np.ndarray

    @classmethod
    def at_rest(cls, p0=None) -> "AgentState":
        p0 = np.eye(2) if p0 is None else np.asarray(p0, dtype=float)
        return cls(z=np.zeros(2), z_hat=np.zeros(2), p=p0.copy())


def step_true_dynamics(state: AgentState, u: float, dt: float,
                       rng: RngStream, noise: NoiseConfig) -> AgentState:
    """Advance the true plant one Euler-Maruyama step.

    z <- z + (A_c z + B_c u) dt + sqrt(dt) * xi,   xi ~ N(0, Q_noise)
    """
    if not np.isfinite(u):
        raise ValueError(f"control input must be finite, got {u}")
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    xi = noise.q_factor @ rng.standard_normal(2)
    z = state.z + dt * (A_C @ state.z + B_C * u) + np.sqrt(dt) * xi
    return AgentState(z=z, z_hat=state.z_hat.copy(), p=state.p.copy())


def measure(state: AgentState, rng: RngStream, noise: NoiseConfig) -> float:
    """One sensor reading of the force channel: y = z[0] + v, v ~ N(0, R)."""
    if noise.r_meas == 0.0:
        return float(state.z[0])
    return float(state.z[0] + np.sqrt(noise.r_meas) * rng.standard_normal())


def kalman_gain(p: np.ndarray, r_meas: float) -> np.ndarray:
    """K = P C^T / R for the scalar force measurement."""
    return p @ C_C / r_meas


def kalman_step(state: AgentState, u: float, y_meas: float, dt: float,
                noise: NoiseConfig) -> AgentState:
    """One Euler step of the continuous-time Kalman filter.

    The gain is formed from the pre-update covariance; the covariance is then
    advanced by the Riccati derivative and re-symmetrized.  Raises
    CovarianceLossError if P turns indefinite beyond tolerance.
    """
    if noise.r_meas <= 0.0:
        raise ValueError("kalman_step needs R > 0")
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    p = state.p
    k = kalman_gain(p, noise.r_meas)
    innovation = y_meas - C_C @ state.z_hat
    z_hat = state.z_hat + dt * (A_C @ state.z_hat + B_C * u + k * innovation)

    p_dot = (A_C @ p + p @ A_C.T + noise.q_noise
             - np.outer(p @ C_C, C_C @ p) / noise.r_meas)
    p_new = p + dt * p_dot
    p_new = 0.5 * (p_new + p_new.T)

    tol = constants.KALMAN_PSD_TOL * (1.0 + abs(float(np.trace(p_new))))
    if np.linalg.eigvalsh(p_new).min() < -tol:
        raise CovarianceLossError(
            "filter covariance lost positive semidefiniteness "
            f"(min eig {np.linalg.eigvalsh(p_new).min():.3e}); reduce dt"
        )
    return AgentState(z=state.z.copy(), z_hat=z_hat, p=p_new)
