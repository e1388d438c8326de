"""Dense linear-algebra kernels and random sampling.

Everything here is pure given its inputs; RngStream instances carry the only
mutable state and must not be shared across threads.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from . import constants


class CareSolveError(RuntimeError):
    """No stabilizing solution of the continuous algebraic Riccati equation."""


class SamplingError(RuntimeError):
    """Rejection sampling failed to produce an admissible draw."""


class RngStream:
    """Deterministic random stream keyed by (seed, stream).

    The same (seed, stream) pair yields a bit-identical sample sequence on
    every run.  One stream per trial; streams are cheap to construct.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((self.seed, self.stream)))
        )

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"


def _require_symmetric(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    scale = max(1.0, float(np.abs(m).max()))
    dev = float(np.abs(m - m.T).max())
    if dev > constants.SYMMETRY_TOL * scale:
        raise ValueError(
            f"{name} is not symmetric: max|M - M^T| = {dev:.3e} "
            f"exceeds {constants.SYMMETRY_TOL:.0e} * scale"
        )
    return 0.5 * (m + m.T)


def sym_eig(m: np.ndarray):
    """Eigendecomposition of a symmetric matrix.

    Returns (eigenvalues ascending, orthonormal eigenvectors as columns).
    Rejects non-symmetric input.
    """
    m = _require_symmetric(m, "sym_eig input")
    w, v = np.linalg.eigh(m)
    return w, v


def psd_factor(cov: np.ndarray, name: str = "covariance") -> np.ndarray:
    """Factor F with F @ F.T == cov for a symmetric PSD matrix.

    Small negative eigenvalues within tolerance are clipped to zero;
    anything more negative is rejected.
    """
    cov = _require_symmetric(cov, name)
    w, v = np.linalg.eigh(cov)
    scale = max(1.0, float(np.abs(w).max()))
    if w.min() < -constants.PSD_EIG_TOL * scale:
        raise ValueError(f"{name} is not positive semidefinite (min eig {w.min():.3e})")
    return v * np.sqrt(np.clip(w, 0.0, None))


def sample_gaussian(mean, cov, rng: RngStream) -> np.ndarray:
    """Draw one vector from N(mean, cov); cov must be symmetric PSD."""
    mean = np.asarray(mean, dtype=float)
    factor = psd_factor(cov)
    if mean.shape != (factor.shape[0],):
        raise ValueError(f"mean shape {mean.shape} does not match cov {factor.shape}")
    return mean + factor @ rng.standard_normal(mean.shape[0])


def sample_sharing_ratios(n: int, c_m, rng: RngStream, max_attempts: int = 10_000) -> np.ndarray:
    """Sample a sharing vector from the normalized truncated normal N(1/n, C_m).

    Draws candidates from N((1/n) * 1, C_m), rejects any with a component
    outside [0, 1], then divides by the component sum so the result lies on
    the probability simplex exactly.
    """
    if n < 2:
        raise ValueError(f"need at least 2 agents, got {n}")
    factor = psd_factor(c_m, "C_m")
    if factor.shape[0] != n:
        raise ValueError(f"C_m must be {n}x{n}, got {factor.shape}")
    mean = np.full(n, 1.0 / n)
    if not factor.any():
        s = mean.copy()
        s[-1] = 1.0 - s[:-1].sum()
        return s
    for _ in range(max_attempts):
        cand = mean + factor @ rng.standard_normal(n)
        if cand.min() >= 0.0 and cand.max() <= 1.0:
            s = cand / cand.sum()
            # pin the sum to exactly 1.0 (renormalization can be off by an ulp)
            s[-1] = 1.0 - s[:-1].sum()
            return s
    raise SamplingError(
        f"no admissible sharing draw in {max_attempts} attempts "
        f"(acceptance rate < {constants.MIN_ACCEPTANCE_RATE:.0e}); "
        "rescale the covariance C_m"
    )


def care_residual(a, b, q, p) -> float:
    """Frobenius norm of P A + A^T P - P B B^T P + Q."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    q = np.asarray(q, float)
    p = np.asarray(p, float)
    r = p @ a + a.T @ p - p @ b @ b.T @ p + q
    return float(np.linalg.norm(r))


def _newton_kleinman(a, b, q, p0, iters: int = 30) -> np.ndarray:
    """Polish a stabilizing Riccati iterate by Newton-Kleinman iteration."""
    p = p0
    for _ in range(iters):
        k = b.T @ p
        acl = a - b @ k
        p_new = scipy.linalg.solve_continuous_lyapunov(acl.T, -(q + k.T @ k))
        p_new = 0.5 * (p_new + p_new.T)
        if np.linalg.norm(p_new - p) <= 1e-14 * (1.0 + np.linalg.norm(p)):
            return p_new
        p = p_new
    return p


def solve_care(a, b, q) -> np.ndarray:
    """Solve P A + A^T P - P B B^T P + Q = 0 for the stabilizing P.

    Uses the stable invariant subspace of the Hamiltonian matrix (ordered
    real Schur form), with Newton-Kleinman iteration as a polishing fallback
    when the subspace solution's residual is not tight enough.

    Raises CareSolveError when the Hamiltonian has eigenvalues on the
    imaginary axis (no stabilizing solution exists).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        b = b.reshape(-1, 1)
    q = _require_symmetric(q, "Q")
    n = a.shape[0]
    if a.shape != (n, n) or b.shape[0] != n or q.shape != (n, n):
        raise ValueError(
            f"inconsistent shapes: A {a.shape}, B {b.shape}, Q {q.shape}"
        )

    ham = np.block([[a, -b @ b.T], [-q, -a.T]])
    eigs = np.linalg.eigvals(ham)
    scale = max(1.0, float(np.abs(eigs).max()))
    on_axis = eigs[np.abs(eigs.real) <= constants.HAMILTONIAN_AXIS_TOL * scale]
    if on_axis.size:
        lam = on_axis[np.argmax(np.abs(on_axis.imag))]
        raise CareSolveError(
            "no stabilizing CARE solution: Hamiltonian eigenvalue "
            f"{lam.real:+.3e}{lam.imag:+.3e}j lies on the imaginary axis"
        )

    _, z, sdim = scipy.linalg.schur(ham, output="real", sort="lhp")
    if sdim != n:
        raise CareSolveError(
            f"stable invariant subspace has dimension {sdim}, expected {n}"
        )
    u11 = z[:n, :n]
    u21 = z[n:, :n]
    p = scipy.linalg.solve(u11.T, u21.T).T
    p = 0.5 * (p + p.T)

    tol = constants.CARE_RESIDUAL_RTOL * (1.0 + float(np.linalg.norm(p)))
    if care_residual(a, b, q, p) > tol:
        p = _newton_kleinman(a, b, q, p)
        if care_residual(a, b, q, p) > tol:
            raise CareSolveError(
                f"CARE residual {care_residual(a, b, q, p):.3e} exceeds {tol:.3e} "
                "after Newton-Kleinman polishing"
            )

    w = np.linalg.eigvalsh(p)
    if w.min() < -constants.PSD_EIG_TOL * max(1.0, w.max()):
        raise CareSolveError(f"CARE solution not PSD (min eig {w.min():.3e})")
    cl = np.linalg.eigvals(a - b @ b.T @ p)
    if cl.real.max() >= 0.0:
        raise CareSolveError(
            f"closed loop not Hurwitz (eigenvalue {cl[np.argmax(cl.real)]:.3e})"
        )
    return p
