"""Full-trial orchestration: agents, filters, control, desired dynamics.

Within a step the update order is fixed: measure -> filter -> control ->
plant, so the control always acts on the current step's state estimate.
The filter's propagation term therefore uses the control applied over the
previous interval.

The per-step measurement noise is drawn with standard deviation
sqrt(R / dt): R enters the continuous-time filter equations as a white-noise
intensity, and this scaling (the mirror image of the sqrt(dt) factor on the
process noise) keeps the simulated world consistent with the filter model at
any step size.

Per-trial noise is pre-drawn in a fixed order (per step: one measurement
draw per agent, then two process draws per agent), which makes the compiled
fast path and the module-composition reference path consume identical
random sequences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from numba import njit

from . import constants
from .agent import AgentState, CovarianceLossError, NoiseConfig, kalman_step, step_true_dynamics
from .control import (ControlParams, DesiredDynamics, desired_from_damping,
                      desired_step, ensemble_control, node_control,
                      nominal_desired, riccati_gain, task_level_accel)
from .numerics import RngStream, sample_sharing_ratios
from .topology import complete_graph, laplacian

FORMAT_NAME = "synsim-trial"
FORMAT_VERSION = 1

NOMINAL_C_M = np.array([
    [0.0242, 0.0038, -0.0069, -0.0106],
    [0.0038, 0.0217, -0.0072, -0.0087],
    [-0.0069, -0.0072, 0.0270, -0.0015],
    [-0.0106, -0.0087, -0.0015, 0.0335],
])

FEEDBACK_MODES = ("own_true", "estimates")

# plain floats so the compiled kernel can bake them in as constants
_KALMAN_PSD_TOL = float(constants.KALMAN_PSD_TOL)
_BLOWUP_LIMIT = float(constants.BLOWUP_LIMIT)


class TrialDivergedError(RuntimeError):
    pass


class TrialParseError(RuntimeError):
    pass


@dataclass
class TrialConfig:
    """One trial's parameters; defaults are the nominal experiment values."""

    n_agents: int = 4
    y_target: float = 5.0
    duration: float = 23.0
    dt: float = 1e-3
    eta: float = 7.41
    zeta: float | None = None
    omega_n: float | None = None
    a_d: np.ndarray | None = None
    b_d: np.ndarray | None = None
    q_noise: np.ndarray = field(default_factory=lambda: 0.095 * np.eye(2))
    r_meas: float = 2.24
    c_m: np.ndarray = field(default_factory=lambda: NOMINAL_C_M.copy())
    q_care: np.ndarray = field(default_factory=lambda: np.eye(2))
    p0: np.ndarray = field(default_factory=lambda: np.eye(2))
    seed: int = 0
    steady_window: tuple = (16.0, 23.0)
    transient_window: tuple = (2.0, 16.0)
    shares: np.ndarray | None = None
    feedback: str = "own_true"

    def __post_init__(self):
        self.q_noise = np.asarray(self.q_noise, dtype=float)
        self.c_m = np.asarray(self.c_m, dtype=float)
        self.q_care = np.asarray(self.q_care, dtype=float)
        self.p0 = np.asarray(self.p0, dtype=float)
        if self.a_d is not None:
            self.a_d = np.asarray(self.a_d, dtype=float)
        if self.b_d is not None:
            self.b_d = np.asarray(self.b_d, dtype=float)
        if self.shares is not None:
            s = np.asarray(self.shares, dtype=float)
            if s.shape != (self.n_agents,):
                raise ValueError(f"shares must have length {self.n_agents}")
            if s.min() < 0.0 or abs(s.sum() - 1.0) > 1e-2:
                raise ValueError(f"shares must lie near the simplex, got {s}")
            s = s / s.sum()
            s[-1] = 1.0 - s[:-1].sum()
            self.shares = s
        if self.feedback not in FEEDBACK_MODES:
            raise ValueError(f"feedback must be one of {FEEDBACK_MODES}")
        if self.n_agents < 1:
            raise ValueError("need at least one agent")
        if self.dt <= 0.0 or self.duration <= 0.0:
            raise ValueError("dt and duration must be positive")
        for name, (lo, hi) in (("steady_window", self.steady_window),
                               ("transient_window", self.transient_window)):
            if not (0.0 <= lo < hi <= self.duration + 1e-12):
                raise ValueError(f"{name} {lo}:{hi} not within [0, duration]")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def desired(self) -> DesiredDynamics:
        if self.zeta is not None or self.omega_n is not None:
            if self.zeta is None or self.omega_n is None:
                raise ValueError("zeta and omega_n must be given together")
            return desired_from_damping(self.zeta, self.omega_n)
        if self.a_d is not None or self.b_d is not None:
            if self.a_d is None or self.b_d is None:
                raise ValueError("a_d and b_d must be given together")
            return DesiredDynamics(a_d=self.a_d, b_d=self.b_d,
                                   c_d=np.array([1.0, 0.0]))
        return nominal_desired()

    def to_dict(self) -> dict:
        return {
            "n_agents": self.n_agents,
            "y_target": self.y_target,
            "duration": self.duration,
            "dt": self.dt,
            "eta": self.eta,
            "zeta": self.zeta,
            "omega_n": self.omega_n,
            "a_d": None if self.a_d is None else self.a_d.tolist(),
            "b_d": None if self.b_d is None else self.b_d.tolist(),
            "q_noise": self.q_noise.tolist(),
            "r_meas": self.r_meas,
            "c_m": self.c_m.tolist(),
            "q_care": self.q_care.tolist(),
            "p0": self.p0.tolist(),
            "seed": self.seed,
            "steady_window": list(self.steady_window),
            "transient_window": list(self.transient_window),
            "shares": None if self.shares is None else self.shares.tolist(),
            "feedback": self.feedback,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        for key in ("steady_window", "transient_window"):
            if key in kw and kw[key] is not None:
                kw[key] = tuple(kw[key])
        return cls(**kw)


@dataclass(eq=False)
class TrialRecord:
    """Recorded trajectories of one trial, row k at time k * dt.

    Row k holds the true state and the estimate after the step-k update, the
    advanced desired state, and the control applied over [t_{k-1}, t_k];
    row 0 is the initial rest state.  Use equals() for value comparison; the
    array fields make the default equality ambiguous.
    """

    t: np.ndarray
    y: np.ndarray
    ydot: np.ndarray
    y_hat: np.ndarray
    ydot_hat: np.ndarray
    u: np.ndarray
    ybar_hat: np.ndarray
    z_d: np.ndarray
    shares: np.ndarray
    seed: int
    trial_index: int
    config: dict

    def steady_slice(self, window=None) -> slice:
        lo, hi = window if window is not None else self.config["steady_window"]
        idx = np.flatnonzero((self.t >= lo - 1e-12) & (self.t <= hi + 1e-12))
        if idx.size == 0:
            raise ValueError(f"window {lo}:{hi} contains no samples")
        return slice(int(idx[0]), int(idx[-1]) + 1)

    def equals(self, other: "TrialRecord") -> bool:
        arrays = ("t", "y", "ydot", "y_hat", "ydot_hat", "u", "ybar_hat",
                  "z_d", "shares")
        return (all(np.array_equal(getattr(self, a), getattr(other, a))
                    for a in arrays)
                and self.seed == other.seed
                and self.trial_index == other.trial_index
                and self.config == other.config)


@njit(cache=True)
def _trial_kernel(n_steps, n, dt, y_t, eta, shares,
                  ad21, ad22, bd2, pc10, pc11,
                  q00, q01, q11, f00, f01, f10, f11,
                  r_int, p0, own_true, noise,
                  y, ydot, yh, ydh, u_rec, ybh_rec, zd_rec):
    """Compiled per-trial loop; returns (status, step): 0 ok, 1 covariance
    loss, 2 output blow-up."""
    sqdt = np.sqrt(dt)
    r_std = np.sqrt(r_int / dt)
    inv_n = 1.0 / n

    z0 = np.zeros(n)
    z1 = np.zeros(n)
    zh0 = np.zeros(n)
    zh1 = np.zeros(n)
    u_prev = np.zeros(n)
    p00 = p0[0, 0]
    p01 = 0.5 * (p0[0, 1] + p0[1, 0])
    p11 = p0[1, 1]
    zd0 = 0.0
    zd1 = 0.0

    for k in range(n_steps):
        # gain from the pre-update covariance
        k1 = p00 / r_int
        k2 = p01 / r_int

        # filter update per agent (propagation uses the previous control)
        for i in range(n):
            ym = z0[i] + r_std * noise[k, i]
            innov = ym - zh0[i]
            nzh0 = zh0[i] + dt * (zh1[i] + k1 * innov)
            nzh1 = zh1[i] + dt * (u_prev[i] + k2 * innov)
            zh0[i] = nzh0
            zh1[i] = nzh1

        # covariance update (identical for all agents), re-symmetrized by
        # construction of the 2x2 update
        pd00 = 2.0 * p01 + q00 - p00 * p00 / r_int
        pd01 = p11 + q01 - p00 * p01 / r_int
        pd11 = q11 - p01 * p01 / r_int
        p00 += dt * pd00
        p01 += dt * pd01
        p11 += dt * pd11
        tr = p00 + p11
        det = p00 * p11 - p01 * p01
        tol = _KALMAN_PSD_TOL * (1.0 + np.abs(tr))
        mineig = 0.5 * (tr - np.sqrt(max(tr * tr - 4.0 * det, 0.0)))
        if mineig < -tol or (det < -tol and tr > 0.0):
            return 1, k

        # averaged estimate and desired-state advance
        ybh = 0.0
        ydbh = 0.0
        for i in range(n):
            ybh += zh0[i]
            ydbh += zh1[i]
        ybh *= inv_n
        ydbh *= inv_n

        nzd0 = zd0 + dt * zd1
        nzd1 = zd1 + dt * (ad21 * zd0 + ad22 * zd1 + bd2 * y_t)
        zd0 = nzd0
        zd1 = nzd1

        ydd = (ad21 * ybh + ad22 * ydbh + bd2 * y_t
               - 0.5 * (pc10 * (ybh - zd0) + pc11 * (ydbh - zd1)))

        # node-level control on the agent's own series
        for i in range(n):
            if own_true:
                own0 = z0[i]
                own1 = z1[i]
            else:
                own0 = zh0[i]
                own1 = zh1[i]
            u_prev[i] = (ydd + (ybh - own0) + eta * (ydbh - own1)
                         - y_t * (inv_n - shares[i]))

        # plant step
        base = n
        for i in range(n):
            xi0 = noise[k, base + 2 * i]
            xi1 = noise[k, base + 2 * i + 1]
            w0 = sqdt * (f00 * xi0 + f01 * xi1)
            w1 = sqdt * (f10 * xi0 + f11 * xi1)
            nz0 = z0[i] + dt * z1[i] + w0
            nz1 = z1[i] + dt * u_prev[i] + w1
            z0[i] = nz0
            z1[i] = nz1
            if np.abs(nz0) > _BLOWUP_LIMIT:
                return 2, k

        # record row k+1 (zh unchanged since the average was formed, so the
        # stored ybh is exactly the mean of the stored yh row)
        row = k + 1
        for i in range(n):
            y[row, i] = z0[i]
            ydot[row, i] = z1[i]
            yh[row, i] = zh0[i]
            ydh[row, i] = zh1[i]
            u_rec[row, i] = u_prev[i]
        ybh_rec[row] = ybh
        zd_rec[row, 0] = zd0
        zd_rec[row, 1] = zd1

    return 0, n_steps


def _draw_trial_inputs(cfg: TrialConfig, trial_index: int):
    rng = RngStream(cfg.seed, trial_index)
    if cfg.shares is not None:
        s = cfg.shares.copy()
    else:
        s = sample_sharing_ratios(cfg.n_agents, cfg.c_m, rng)
    noise = rng.standard_normal((cfg.n_steps, 3 * cfg.n_agents))
    return s, noise


def run_trial(cfg: TrialConfig, trial_index: int = 0) -> TrialRecord:
    """Run one trial, fully determined by (cfg.seed, trial_index)."""
    desired = cfg.desired()
    if not desired.is_normal_form():
        raise ValueError("simulator requires normal-form desired dynamics")
    p_c = riccati_gain(desired, cfg.q_care)
    noise_cfg = NoiseConfig(q_noise=cfg.q_noise, r_meas=cfg.r_meas)
    if cfg.r_meas <= 0.0:
        raise ValueError("trial simulation needs R > 0 (use a small value "
                         "such as 1e-12 for the noise-free limit)")
    s, noise = _draw_trial_inputs(cfg, trial_index)

    n_steps, n = cfg.n_steps, cfg.n_agents
    y = np.zeros((n_steps + 1, n))
    ydot = np.zeros((n_steps + 1, n))
    y_hat = np.zeros((n_steps + 1, n))
    ydot_hat = np.zeros((n_steps + 1, n))
    u = np.zeros((n_steps + 1, n))
    ybar_hat = np.zeros(n_steps + 1)
    z_d = np.zeros((n_steps + 1, 2))

    f = noise_cfg.q_factor
    status, step = _trial_kernel(
        n_steps, n, cfg.dt, cfg.y_target, cfg.eta, s,
        desired.a_d[1, 0], desired.a_d[1, 1], desired.b_d[1],
        p_c[1, 0], p_c[1, 1],
        cfg.q_noise[0, 0], 0.5 * (cfg.q_noise[0, 1] + cfg.q_noise[1, 0]),
        cfg.q_noise[1, 1],
        f[0, 0], f[0, 1], f[1, 0], f[1, 1],
        cfg.r_meas, cfg.p0, cfg.feedback == "own_true", noise,
        y, ydot, y_hat, ydot_hat, u, ybar_hat, z_d)
    if status == 1:
        raise CovarianceLossError(
            f"trial {trial_index}: filter covariance turned indefinite at "
            f"step {step} (t={step * cfg.dt:.3f}s); reduce dt")
    if status == 2:
        raise TrialDivergedError(
            f"trial {trial_index}: |y| exceeded {constants.BLOWUP_LIMIT:.0e} N "
            f"at step {step}; reduce dt")

    t = np.arange(n_steps + 1) * cfg.dt
    return TrialRecord(t=t, y=y, ydot=ydot, y_hat=y_hat, ydot_hat=ydot_hat,
                       u=u, ybar_hat=ybar_hat, z_d=z_d, shares=s,
                       seed=cfg.seed, trial_index=trial_index,
                       config=cfg.to_dict())


def run_trial_reference(cfg: TrialConfig, trial_index: int = 0) -> TrialRecord:
    """Reference path composing the module-level operations step by step.

    Consumes the same random sequence as the compiled kernel; used to verify
    the fast path reproduces the documented update order.  Slow; intended
    for short horizons in tests.
    """
    desired = cfg.desired()
    p_c = riccati_gain(desired, cfg.q_care)
    noise_cfg = NoiseConfig(q_noise=cfg.q_noise, r_meas=cfg.r_meas)
    rng = RngStream(cfg.seed, trial_index)
    if cfg.shares is not None:
        s = cfg.shares.copy()
    else:
        s = sample_sharing_ratios(cfg.n_agents, cfg.c_m, rng)
    params = ControlParams(eta=cfg.eta, y_target=cfg.y_target, shares=s,
                           p_c=p_c, n_agents=cfg.n_agents)
    lap = laplacian(complete_graph(cfg.n_agents))

    n_steps, n = cfg.n_steps, cfg.n_agents
    agents = [AgentState.at_rest(cfg.p0) for _ in range(n)]
    u_prev = np.zeros(n)
    r_std = np.sqrt(cfg.r_meas / cfg.dt)

    rec = {k: np.zeros((n_steps + 1, n))
           for k in ("y", "ydot", "y_hat", "ydot_hat", "u")}
    ybar_hat = np.zeros(n_steps + 1)
    z_d = np.zeros((n_steps + 1, 2))

    for k in range(n_steps):
        y_meas = np.array([a.z[0] + r_std * rng.standard_normal()
                           for a in agents])
        agents = [kalman_step(a, u_prev[i], y_meas[i], cfg.dt, noise_cfg)
                  for i, a in enumerate(agents)]
        z_bar = np.mean([a.z_hat for a in agents], axis=0)
        desired = desired_step(desired, cfg.y_target, cfg.dt)
        ydd = task_level_accel(z_bar, desired, cfg.y_target, p_c)
        if cfg.feedback == "own_true":
            # shared average from estimates, own slot from the true state
            u_prev = np.array([node_control(i, a.z, z_bar, ydd, params)
                               for i, a in enumerate(agents)])
        else:
            own0 = np.array([a.z_hat[0] for a in agents])
            own1 = np.array([a.z_hat[1] for a in agents])
            u_prev = ensemble_control(own0, own1, ydd, params, lap)
        agents = [step_true_dynamics(a, u_prev[i], cfg.dt, rng, noise_cfg)
                  for i, a in enumerate(agents)]

        row = k + 1
        rec["y"][row] = [a.z[0] for a in agents]
        rec["ydot"][row] = [a.z[1] for a in agents]
        rec["y_hat"][row] = [a.z_hat[0] for a in agents]
        rec["ydot_hat"][row] = [a.z_hat[1] for a in agents]
        rec["u"][row] = u_prev
        ybar_hat[row] = rec["y_hat"][row].mean()
        z_d[row] = desired.z_d

    t = np.arange(n_steps + 1) * cfg.dt
    return TrialRecord(t=t, y=rec["y"], ydot=rec["ydot"],
                       y_hat=rec["y_hat"], ydot_hat=rec["ydot_hat"],
                       u=rec["u"], ybar_hat=ybar_hat, z_d=z_d, shares=s,
                       seed=cfg.seed, trial_index=trial_index,
                       config=cfg.to_dict())


def iter_trials(cfg: TrialConfig, n_trials: int,
                start_index: int = 0) -> Iterator[TrialRecord]:
    """Yield trials start_index .. start_index + n_trials - 1 in order.

    Trial errors propagate with the trial index already attached by
    run_trial."""
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    for k in range(start_index, start_index + n_trials):
        yield run_trial(cfg, k)


def run_ensemble(cfg: TrialConfig, n_trials: int) -> list[TrialRecord]:
    """All trials of an ensemble; trial k uses random stream k."""
    return list(iter_trials(cfg, n_trials))


def _fmt(x: float) -> str:
    return repr(float(x))


def save_trial(record: TrialRecord, path) -> None:
    """Write a trial file: versioned header, meta JSON, then wide CSV.

    Numbers are written in shortest round-trip form, so load_trial
    reproduces every field bit-exactly.
    """
    n = record.y.shape[1]
    cols = (["t"]
            + [f"y{i+1}" for i in range(n)]
            + [f"ydot{i+1}" for i in range(n)]
            + [f"yhat{i+1}" for i in range(n)]
            + [f"ydothat{i+1}" for i in range(n)]
            + [f"u{i+1}" for i in range(n)]
            + ["ybar_hat", "zd1", "zd2"])
    meta = {
        "config": record.config,
        "shares": [_fmt(v) for v in record.shares],
        "seed": record.seed,
        "trial_index": record.trial_index,
    }
    data = np.column_stack([record.t, record.y, record.ydot, record.y_hat,
                            record.ydot_hat, record.u, record.ybar_hat,
                            record.z_d])
    lines = [f"# {FORMAT_NAME} v{FORMAT_VERSION}",
             "# meta " + json.dumps(meta, sort_keys=True),
             ",".join(cols)]
    lines.extend(",".join(_fmt(v) for v in row) for row in data)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_trial(path) -> TrialRecord:
    """Read a trial file written by save_trial."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith(f"# {FORMAT_NAME} v"):
            raise TrialParseError(f"{path}:1: not a {FORMAT_NAME} file")
        version = header.split("v")[-1]
        if version != str(FORMAT_VERSION):
            raise TrialParseError(
                f"{path}:1: unsupported {FORMAT_NAME} version {version}")
        meta_line = fh.readline().rstrip("\n")
        if not meta_line.startswith("# meta "):
            raise TrialParseError(f"{path}:2: missing meta line")
        try:
            meta = json.loads(meta_line[len("# meta "):])
        except json.JSONDecodeError as exc:
            raise TrialParseError(f"{path}:2: bad meta JSON: {exc}") from exc
        cols_line = fh.readline().rstrip("\n")
        cols = cols_line.split(",")
        rows = []
        for lineno, line in enumerate(fh, start=4):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(cols):
                raise TrialParseError(
                    f"{path}:{lineno}: expected {len(cols)} fields, "
                    f"got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise TrialParseError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise TrialParseError(f"{path}: no data rows")
    data = np.array(rows)
    n = (len(cols) - 4) // 5
    try:
        config = meta["config"]
        shares = np.array([float(v) for v in meta["shares"]])
        seed = meta["seed"]
        trial_index = meta["trial_index"]
        expected_rows = int(round(config["duration"] / config["dt"])) + 1
    except (KeyError, TypeError) as exc:
        raise TrialParseError(f"{path}:2: incomplete meta: {exc}") from exc
    if data.shape[0] != expected_rows:
        raise TrialParseError(
            f"{path}: truncated file, {data.shape[0]} rows, "
            f"expected {expected_rows}")
    o = 1
    return TrialRecord(
        t=data[:, 0],
        y=data[:, o:o + n],
        ydot=data[:, o + n:o + 2 * n],
        y_hat=data[:, o + 2 * n:o + 3 * n],
        ydot_hat=data[:, o + 3 * n:o + 4 * n],
        u=data[:, o + 4 * n:o + 5 * n],
        ybar_hat=data[:, o + 5 * n],
        z_d=data[:, o + 5 * n + 1:o + 5 * n + 3],
        shares=shares,
        seed=seed,
        trial_index=trial_index,
        config=config,
    )
