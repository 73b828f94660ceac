"""Dense linear algebra helpers: Lyapunov solver and definiteness tests.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. All sizes
handled here are small (n <= 10), so the continuous Lyapunov equation

    P A + A^T P = -Q

is solved by lifting it to an n^2 x n^2 linear system with the Kronecker
identity and handing that to LAPACK's partially pivoted LU.
"""

import numpy as np

from .errors import DimensionMismatch, NotHurwitz, NotPositiveDefinite, SingularSystem

RESIDUAL_TOL = 1e-10
SYMMETRY_TOL = 1e-9
PIVOT_TOL = 1e-12
# reciprocal condition number below which the lifted system counts as singular
RCOND_TOL = 1e-13


def as_matrix(a, name="matrix"):
    """Return ``a`` as a finite 2-D float array."""
    m = np.array(a, dtype=float)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionMismatch(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def _square(a, name):
    m = as_matrix(a, name)
    if m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {m.shape}")
    return m


def is_symmetric(p, tol=SYMMETRY_TOL):
    p = np.asarray(p, dtype=float)
    scale = max(1.0, np.linalg.norm(p))
    return np.linalg.norm(p - p.T) <= tol * scale


def pd_check(p):
    """True iff ``p`` is symmetric and every Cholesky pivot is positive."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1] or not np.all(np.isfinite(p)):
        return False
    if not is_symmetric(p):
        return False
    try:
        low = np.linalg.cholesky(0.5 * (p + p.T))
    except np.linalg.LinAlgError:
        return False
    pivots = np.diag(low) ** 2
    scale = max(1.0, float(np.max(np.abs(np.diag(p)))))
    return bool(np.all(pivots > PIVOT_TOL * scale))


def lyapunov_operator(a):
    """Matrix of X -> X A + A^T X acting on row-major vec(X)."""
    n = a.shape[0]
    eye = np.eye(n)
    return np.kron(eye, a.T) + np.kron(a.T, eye)


def solve_lyapunov(a_h, q):
    """Solve ``P A_H + A_H^T P = -Q`` for symmetric positive definite ``P``.

    Raises
    ------
    SingularSystem
        The lifted system is numerically singular (A_H has eigenvalues
        summing to zero).
    NotHurwitz
        A solution exists but is not positive definite.
    """
    a_h = _square(a_h, "A_H")
    q = _square(q, "Q")
    n = a_h.shape[0]
    if q.shape != (n, n):
        raise DimensionMismatch(f"Q shape {q.shape} does not match A_H shape {a_h.shape}")
    if not pd_check(q):
        raise NotPositiveDefinite("Q must be symmetric positive definite")

    op = lyapunov_operator(a_h)
    if 1.0 / np.linalg.cond(op) < RCOND_TOL:
        raise SingularSystem("Lyapunov operator is numerically singular")
    try:
        vec_p = np.linalg.solve(op, -q.reshape(-1))
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    p = vec_p.reshape(n, n)
    p = 0.5 * (p + p.T)

    resid = np.linalg.norm(p @ a_h + a_h.T @ p + q)
    if resid > RESIDUAL_TOL * (1.0 + np.linalg.norm(q)):
        raise SingularSystem(f"Lyapunov residual {resid:.3e} too large")
    if not pd_check(p):
        raise NotHurwitz("Lyapunov solution is not positive definite; A_H is not Hurwitz")
    return p


def is_hurwitz(a):
    """Lyapunov criterion: A is Hurwitz iff ``P A + A^T P = -I`` has a PD solution."""
    a = _square(a, "A")
    try:
        solve_lyapunov(a, np.eye(a.shape[0]))
    except (SingularSystem, NotHurwitz):
        return False
    return True


def lstsq_solve(lhs, rhs):
    """Least-squares solution of ``lhs @ X = rhs`` and its relative residual."""
    lhs = as_matrix(lhs, "lhs")
    rhs = as_matrix(rhs, "rhs")
    if lhs.shape[0] != rhs.shape[0]:
        raise DimensionMismatch(f"row mismatch: {lhs.shape} vs {rhs.shape}")
    x, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    resid = np.linalg.norm(lhs @ x - rhs) / (1.0 + np.linalg.norm(rhs))
    return x, float(resid)
