"""Validation statistics: RMSE, sharing covariance, PCA with span{1} angles,
UCM variance decomposition and synergy index, second-order fits, consensus
diagnostics, and experimental-data preprocessing.

Cross-trial synergy statistics operate on each trial's steady-window mean
force vector (one 4-vector per trial); the error-compensation structure
lives in how those per-trial operating points co-vary.  A single trial falls
back to its within-window time samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import sym_eig
from .topology import projection_complement_span1


def window_slice(t: np.ndarray, window) -> slice:
    lo, hi = window
    idx = np.flatnonzero((t >= lo - 1e-12) & (t <= hi + 1e-12))
    if idx.size == 0:
        raise ValueError(f"window {lo}:{hi} contains no samples")
    return slice(int(idx[0]), int(idx[-1]) + 1)


def rmse(t: np.ndarray, series: np.ndarray, target: float, window=None) -> float:
    """Root mean square deviation of the series from the target over a window."""
    t = np.asarray(t, dtype=float)
    series = np.asarray(series, dtype=float)
    sl = window_slice(t, window) if window is not None else slice(None)
    vals = series[sl]
    if vals.size == 0:
        raise ValueError("empty window")
    return float(np.sqrt(np.mean((vals - target) ** 2)))


def _series_matrix(record, series: str) -> np.ndarray:
    if series == "estimates":
        return np.asarray(record.y_hat, dtype=float)
    if series == "true":
        return np.asarray(record.y, dtype=float)
    raise ValueError(f"series must be 'estimates' or 'true', got {series!r}")


def sharing_covariance(records, window=None, series: str = "estimates") -> np.ndarray:
    """Mean across trials of the per-trial time covariance of the force series.

    This is the estimator the sharing-distribution covariance was derived
    with: covariance of the agents' outputs over the steady window within
    each trial, then the arithmetic mean across trials.
    """
    covs = []
    for rec in records:
        data = _series_matrix(rec, series)
        sl = window_slice(np.asarray(rec.t, float), window) \
            if window is not None else rec.steady_slice()
        x = data[sl]
        if x.shape[0] < 2:
            raise ValueError("window shorter than 2 samples")
        covs.append(np.cov(x.T, ddof=1))
    if len(covs) < 2:
        raise ValueError(f"need at least 2 trials, got {len(covs)}")
    return np.mean(covs, axis=0)


def pca(data: np.ndarray):
    """PCA of T x n samples: (components as columns, explained fractions),
    both ordered by descending variance."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] < 5:
        raise ValueError(f"need a T x n sample matrix with T >= 5, got {data.shape}")
    d = data - data.mean(axis=0)
    cov = (d.T @ d) / (d.shape[0] - 1)
    w, v = sym_eig(cov)
    order = np.argsort(w)[::-1]
    w = np.clip(w[order], 0.0, None)
    v = v[:, order]
    total = w.sum()
    explained = w / total if total > 0.0 else np.full(w.shape, 0.0)
    return v, explained


def angle_with_span1(v: np.ndarray) -> float:
    """Angle in degrees between a vector and span{1}, in [0, 90]."""
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        raise ValueError("zero vector has no direction")
    ones = np.ones(v.shape[0])
    c = abs(v @ ones) / (nv * np.linalg.norm(ones))
    return float(np.degrees(np.arccos(min(c, 1.0))))


def ucm_basis(n: int) -> tuple[np.ndarray, np.ndarray]:
    """(ort, ucm): the normalized 1-vector and an orthonormal basis of its
    complement (Gram-Schmidt on the first n-1 coordinate vectors)."""
    ort = np.ones(n) / math.sqrt(n)
    basis = []
    for i in range(n - 1):
        e = np.zeros(n)
        e[i] = 1.0
        e -= (e @ ort) * ort
        for b in basis:
            e -= (e @ b) * b
        e /= np.linalg.norm(e)
        basis.append(e)
    return ort, np.array(basis).T


@dataclass
class UcmResult:
    v_ucm: float
    v_ort: float
    v_tot: float
    delta_v: float
    degenerate: bool = False


def ucm_analysis(data: np.ndarray) -> UcmResult:
    """Variance decomposition of T x n samples onto span{1} and its complement.

    delta_v = (V_UCM/(n-1) - V_ORT) / (V_TOT/n); NaN (degenerate) when the
    data carry no variance at all.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] < 5:
        raise ValueError(f"need a T x n sample matrix with T >= 5, got {data.shape}")
    n = data.shape[1]
    d = data - data.mean(axis=0)
    ort, ucm = ucm_basis(n)
    v_ort = float(np.var(d @ ort, ddof=1))
    v_ucm = float(np.var(d @ ucm, axis=0, ddof=1).sum())
    v_tot = v_ucm + v_ort
    if v_tot == 0.0:
        return UcmResult(v_ucm, v_ort, v_tot, float("nan"), degenerate=True)
    delta_v = (v_ucm / (n - 1) - v_ort) / (v_tot / n)
    return UcmResult(v_ucm, v_ort, v_tot, delta_v)


@dataclass
class PsiState:
    psi1: np.ndarray
    psi2: np.ndarray
    delta: np.ndarray


def psi_and_disagreement(y, ydot, s, y_t: float) -> PsiState:
    """Share-deviation coordinates and the disagreement vector delta = Pi psi1."""
    y = np.asarray(y, dtype=float)
    ydot = np.asarray(ydot, dtype=float)
    s = np.asarray(s, dtype=float)
    n = y.shape[0]
    if ydot.shape != (n,) or s.shape != (n,):
        raise ValueError("y, ydot and s must have equal length")
    if s.min() < -1e-12 or abs(s.sum() - 1.0) > 1e-9:
        raise ValueError(f"s must lie on the simplex, got {s}")
    psi1 = (y - y_t * s) / n
    psi2 = ydot / n
    delta = projection_complement_span1(n) @ psi1
    return PsiState(psi1=psi1, psi2=psi2, delta=delta)


def consensus_lyapunov(delta, delta_dot, lap) -> float:
    """Certificate value (1/2) delta^T L delta + (1/2) ||delta_dot||^2."""
    delta = np.asarray(delta, dtype=float)
    delta_dot = np.asarray(delta_dot, dtype=float)
    lap = np.asarray(lap, dtype=float)
    if lap.shape != (delta.shape[0], delta.shape[0]) or delta_dot.shape != delta.shape:
        raise ValueError("dimension mismatch")
    return float(0.5 * delta @ lap @ delta + 0.5 * delta_dot @ delta_dot)


@dataclass
class FitResult:
    zeta: float
    omega_n: float
    residual_rms: float
    low_confidence: bool


def second_order_step(zeta: float, omega_n: float, t: np.ndarray) -> np.ndarray:
    """Unit-DC-gain second-order step response from rest."""
    t = np.asarray(t, dtype=float)
    if zeta < 1.0:
        wd = omega_n * math.sqrt(1.0 - zeta ** 2)
        return 1.0 - np.exp(-zeta * omega_n * t) * (
            np.cos(wd * t) + (zeta / math.sqrt(1.0 - zeta ** 2)) * np.sin(wd * t))
    if zeta == 1.0:
        return 1.0 - np.exp(-omega_n * t) * (1.0 + omega_n * t)
    r1 = omega_n * (-zeta + math.sqrt(zeta ** 2 - 1.0))
    r2 = omega_n * (-zeta - math.sqrt(zeta ** 2 - 1.0))
    return 1.0 - (r2 * np.exp(r1 * t) - r1 * np.exp(r2 * t)) / (r2 - r1)


def fit_second_order(t, series, target: float,
                     residual_threshold: float = 0.05) -> FitResult:
    """Least-squares fit of the second-order step response to a series.

    Grid search over zeta in [0.1, 3] and omega_n in [1, 30] followed by
    Nelder-Mead refinement.  The result is flagged low-confidence when the
    residual RMS exceeds residual_threshold * |target|.
    """
    from scipy.optimize import minimize

    t = np.asarray(t, dtype=float)
    series = np.asarray(series, dtype=float)
    if t.shape != series.shape or t.size < 10:
        raise ValueError("need matching t/series arrays with at least 10 samples")

    def sse(params):
        z, w = params
        if z <= 0.0 or w <= 0.0:
            return np.inf
        return float(np.mean((series - target * second_order_step(z, w, t)) ** 2))

    zetas = np.linspace(0.1, 3.0, 25)
    omegas = np.linspace(1.0, 30.0, 40)
    best = min(((sse((z, w)), z, w) for z in zetas for w in omegas))
    res = minimize(sse, x0=[best[1], best[2]], method="Nelder-Mead",
                   options={"xatol": 1e-8, "fatol": 1e-14, "maxiter": 2000})
    zeta, omega_n = float(res.x[0]), float(res.x[1])
    residual = math.sqrt(max(res.fun, 0.0))
    # flag fits whose residual is large or whose data never rose from rest
    low = (residual > residual_threshold * max(abs(target), 1e-12)
           or abs(series[0]) > 0.2 * max(abs(target), 1e-12))
    return FitResult(zeta=zeta, omega_n=omega_n, residual_rms=residual,
                     low_confidence=low)


def butterworth_lowpass(series, cutoff_hz: float, sample_rate_hz: float) -> np.ndarray:
    """Causal second-order Butterworth low-pass (bilinear-transform biquad)."""
    if not 0.0 < cutoff_hz < sample_rate_hz / 2.0:
        raise ValueError(
            f"cutoff {cutoff_hz} Hz must lie in (0, Nyquist={sample_rate_hz/2} Hz)")
    series = np.asarray(series, dtype=float)
    k = math.tan(math.pi * cutoff_hz / sample_rate_hz)
    norm = 1.0 / (1.0 + math.sqrt(2.0) * k + k * k)
    b0 = k * k * norm
    b1 = 2.0 * b0
    b2 = b0
    a1 = 2.0 * (k * k - 1.0) * norm
    a2 = (1.0 - math.sqrt(2.0) * k + k * k) * norm
    out = np.empty_like(series)
    w1 = w2 = 0.0
    for i, x in enumerate(series):
        y = b0 * x + w1
        w1 = b1 * x - a1 * y + w2
        w2 = b2 * x - a2 * y
        out[i] = y
    return out


def steady_means(record, window=None, series: str = "estimates") -> np.ndarray:
    """Per-agent mean force over the steady window of one trial."""
    data = _series_matrix(record, series)
    return data[record.steady_slice(window)].mean(axis=0)


def outlier_filter(records, window=None, series: str = "estimates") -> list:
    """Drop trials where a finger's steady mean force is < 1 N or below 20%
    of the four-finger average."""
    kept = []
    for rec in records:
        m = steady_means(rec, window, series)
        if m.min() < 1.0 or m.min() < 0.2 * m.mean():
            continue
        kept.append(rec)
    return kept


@dataclass
class SynergyReport:
    """Ensemble validation statistics.

    rmse_stderr quotes the across-trial standard deviation next to the mean
    (the usual mean +/- spread convention for trial ensembles); rmse_sem is
    the standard error of the mean itself.
    """

    n_trials: int
    rmse_mean: float
    rmse_stderr: float
    rmse_sem: float
    v_ucm: float
    v_ort: float
    v_tot: float
    delta_v: float
    pca_explained: np.ndarray
    pca_angles_deg: np.ndarray
    per_trial: list = field(default_factory=list)

    def rows(self) -> list[tuple[str, float]]:
        out = [("n_trials", float(self.n_trials)),
               ("rmse_mean", self.rmse_mean),
               ("rmse_stderr", self.rmse_stderr),
               ("rmse_sem", self.rmse_sem),
               ("v_ucm", self.v_ucm),
               ("v_ort", self.v_ort),
               ("v_tot", self.v_tot),
               ("delta_v", self.delta_v)]
        out += [(f"pca_explained_{i+1}", float(v))
                for i, v in enumerate(self.pca_explained)]
        out += [(f"pca_angle_deg_{i+1}", float(v))
                for i, v in enumerate(self.pca_angles_deg)]
        return out


def ensemble_synergy(records, window=None, y_target: float = 5.0,
                     rmse_on: str = "average",
                     series: str = "estimates") -> SynergyReport:
    """Reduce an iterable of trials to the validation statistics.

    With two or more trials the PCA/UCM run across the per-trial steady mean
    force vectors; a lone trial is analyzed over its within-window samples.
    rmse_on selects the average output against y_target ("average") or the
    summed output against n * y_target ("total").
    """
    if rmse_on not in ("average", "total"):
        raise ValueError(f"rmse_on must be 'average' or 'total', got {rmse_on!r}")
    rmses = []
    means = []
    per_trial = []
    sample_blocks = []  # kept only while fewer than 5 trials have been seen
    n_cols = None
    for rec in records:
        data = _series_matrix(rec, series)
        sl = rec.steady_slice(window)
        block = data[sl]
        if n_cols is None:
            n_cols = block.shape[1]
        elif block.shape[1] != n_cols:
            raise ValueError(
                f"trial {getattr(rec, 'trial_index', '?')} has "
                f"{block.shape[1]} agents, expected {n_cols}")
        combined = block.mean(axis=1) if rmse_on == "average" else block.sum(axis=1)
        target = y_target if rmse_on == "average" else y_target * block.shape[1]
        r = float(np.sqrt(np.mean((combined - target) ** 2)))
        m = block.mean(axis=0)
        rmses.append(r)
        means.append(m)
        if sample_blocks is not None:
            sample_blocks.append(block)
            if len(means) >= 5:
                sample_blocks = None
        per_trial.append({
            "trial_index": getattr(rec, "trial_index", len(per_trial)),
            "rmse": r,
            "means": m.tolist(),
        })
    if not rmses:
        raise ValueError("no trials to analyze")

    rmses = np.asarray(rmses)
    # per-trial means carry the cross-trial structure; below 5 trials there
    # are too few mean vectors, so pool the window samples instead
    data = np.asarray(means) if len(means) >= 5 else np.vstack(sample_blocks)
    comps, explained = pca(data)
    angles = np.array([angle_with_span1(comps[:, i])
                       for i in range(comps.shape[1])])
    ucm = ucm_analysis(data)
    sem = float(rmses.std(ddof=1) / math.sqrt(len(rmses))) if len(rmses) > 1 else 0.0
    return SynergyReport(
        n_trials=len(rmses),
        rmse_mean=float(rmses.mean()),
        rmse_stderr=float(rmses.std(ddof=1)) if len(rmses) > 1 else 0.0,
        rmse_sem=sem,
        v_ucm=ucm.v_ucm,
        v_ort=ucm.v_ort,
        v_tot=ucm.v_tot,
        delta_v=ucm.delta_v,
        pca_explained=explained,
        pca_angles_deg=angles,
        per_trial=per_trial,
    )


@dataclass(eq=False)
class ExternalTrial:
    """Ingested experimental trial: time column plus one force column per
    finger, preprocessed with the 15 Hz Butterworth filter.

    Equality is identity; the array fields make value comparison ambiguous.
    """

    name: str
    t: np.ndarray
    y: np.ndarray
    y_hat: np.ndarray
    trial_index: int = 0

    def steady_slice(self, window=None) -> slice:
        if window is None:
            raise ValueError("external trials need an explicit window")
        return window_slice(self.t, window)


def load_wide_csv(path, cutoff_hz: float | None = 15.0,
                  name: str | None = None) -> ExternalTrial:
    """Read an external wide CSV (time, f1..fN); the sample rate is inferred
    from the time column and each force series is low-pass filtered.
    cutoff_hz=None skips the filter (already-smooth reference data)."""
    raw = np.genfromtxt(path, delimiter=",", names=True)
    cols = raw.dtype.names
    if cols is None or cols[0] not in ("time", "t"):
        raise ValueError(f"{path}: first column must be 'time' or 't'")
    t = np.asarray(raw[cols[0]], dtype=float)
    if t.size < 3:
        raise ValueError(f"{path}: need at least 3 samples")
    dt = np.diff(t)
    if dt.min() <= 0 or (dt.max() - dt.min()) > 1e-6 * max(dt.mean(), 1e-12):
        raise ValueError(f"{path}: time column must be uniformly increasing")
    fs = 1.0 / dt.mean()
    y = np.column_stack([np.asarray(raw[c], dtype=float) for c in cols[1:]])
    if np.isnan(y).any() or np.isnan(t).any():
        raise ValueError(f"{path}: non-numeric or missing values")
    if cutoff_hz is None:
        filtered = y.copy()
    else:
        filtered = np.column_stack([butterworth_lowpass(y[:, i], cutoff_hz, fs)
                                    for i in range(y.shape[1])])
    return ExternalTrial(name=name or str(path), t=t, y=y, y_hat=filtered)


def save_wide_csv(path, t, y) -> None:
    """Write a wide CSV (time, f1..fN) readable by load_wide_csv."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("time," + ",".join(f"f{i+1}" for i in range(y.shape[1])) + "\n")
        for ti, row in zip(t, y):
            fh.write(",".join(repr(float(v)) for v in (ti, *row)) + "\n")
