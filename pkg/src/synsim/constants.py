"""Numerical tolerances shared by the solvers and the test suite.

Keeping these in one place guarantees that an operation and the test
checking it agree on what "close enough" means.
"""

# Symmetry check on matrix inputs (relative to matrix scale).
SYMMETRY_TOL = 1e-9

# Relative Frobenius tolerance on the Riccati residual of an accepted solution.
CARE_RESIDUAL_RTOL = 1e-8

# Eigendecomposition reconstruction tolerance (relative Frobenius).
EIG_RECONSTRUCT_RTOL = 1e-8

# How negative an eigenvalue may be before a covariance stops counting as PSD.
PSD_EIG_TOL = 1e-9

# Hamiltonian eigenvalues closer than this to the imaginary axis (relative to
# the matrix scale) mean no stabilizing Riccati solution exists.
HAMILTONIAN_AXIS_TOL = 1e-9

# Second-smallest Laplacian eigenvalue above this counts as connected.
CONNECTIVITY_EIG_TOL = 1e-9

# Filter covariance may not drop below -tol * (1 + trace P) in its smallest
# eigenvalue during integration; beyond that the step size is too large.
KALMAN_PSD_TOL = 1e-8

# Simulated forces beyond this magnitude (N) abort a trial as divergent.
BLOWUP_LIMIT = 1e3

# Lyapunov certificates are monotone in continuous time; an explicit Euler
# step adds an O(dt^2) remainder, so per-step increases up to this fraction
# of the initial certificate value are discretization noise, not violations.
CERTIFICATE_SLACK = 1e-6

# Rejection sampling gives up below this acceptance rate.
MIN_ACCEPTANCE_RATE = 1e-4
