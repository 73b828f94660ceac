"""Leader MRAC, distributed follower MRAC and saturation-aware adaptation laws.

These are straightforward numpy implementations of one agent's control and
adaptive-gain right-hand sides. The network integrator in ``simulation`` runs a
compiled copy of the same arithmetic; the two are cross-checked in the tests.

Conventions:

* Gains are stored ``n x p`` (``K_m``, ``K_ij``), ``p x p`` (``K_r``, ``K_rij``,
  ``K_p``) or ``l x p`` (``Theta``) and applied transposed.
* Every adaptive law has the form ``dG = -Gamma s r.T`` or ``+Gamma s r.T``
  with ``r = B_i.T P e``; the sign is the one that cancels the matching
  cross term in the Lyapunov derivative.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (DecompositionInvalid, DimensionMismatch, EmptyNeighborList, NotCompanionForm, NotHurwitz,
                     SaturationModeDisabled)
from .linalg import as_matrix, is_hurwitz, lstsq_solve, pd_check, solve_lyapunov
from .models import check_companion_input, sigma

DECOMPOSITION_TOL = 1e-9


def build_M(n):
    """Upper shift matrix: ``build_M(n) @ x == [x_2, ..., x_n, 0]``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return np.eye(n, k=1)


@dataclass(frozen=True)
class ControllerConstants:
    M: np.ndarray
    H: np.ndarray
    A_H: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    Z_r: np.ndarray
    Upsilon_r: np.ndarray
    b: float

    @property
    def n(self):
        return self.M.shape[0]


def companion_target(n, lambda0):
    """Companion matrix (shift rows + last row) with characteristic polynomial (s + lambda0)^n."""
    coeffs = np.poly(np.full(n, -float(lambda0)))  # [1, c1, ..., cn]
    c = build_M(n)
    c[-1, :] = -coeffs[1:][::-1]
    return c


def derive_constants(B_ctx, Lam_hat=None, A_src=None, Q=None, lambda0=2.0, upsilon=None):
    """Synthesize ``(M, H, A_H, P, Z_r, Upsilon_r, b)`` for one reference context.

    ``B_ctx`` and ``A_src`` are the input and state matrices of the system
    being tracked (the reference model for the leader, the in-neighbor for a
    follower). ``upsilon`` overrides the pole-placement profile.
    """
    b_ctx = as_matrix(B_ctx, "B_ctx")
    n, p = b_ctx.shape
    check_companion_input(b_ctx, "B_ctx")
    lam = np.eye(p) if Lam_hat is None else as_matrix(Lam_hat, "Lam_hat")
    a_src = as_matrix(A_src, "A_src")
    if a_src.shape != (n, n) or lam.shape != (p, p):
        raise DimensionMismatch("A_src / Lam_hat shapes do not match B_ctx")
    q = np.eye(n) if Q is None else as_matrix(Q, "Q")

    b = float(np.mean(b_ctx[-1]))
    if b == 0.0:
        raise NotCompanionForm("last row of B_ctx averages to zero")
    m = build_M(n)
    h = b_ctx @ lam * b

    z_t, _ = lstsq_solve(h, a_src - m)
    z_r = z_t.T

    if upsilon is None:
        u_t, resid = lstsq_solve(h, companion_target(n, lambda0) - m)
        if resid > 1e-10:
            raise NotHurwitz("requested pole placement is not reachable through H")
        ups = u_t.T
    else:
        ups = as_matrix(upsilon, "upsilon")
        if ups.shape != (n, p):
            raise DimensionMismatch(f"upsilon must be {n}x{p}")
    a_h = m + h @ ups.T
    if not is_hurwitz(a_h):
        raise NotHurwitz("A_H = M + H Upsilon^T is not Hurwitz")
    p_mat = solve_lyapunov(a_h, q)
    return ControllerConstants(M=m, H=h, A_H=a_h, P=p_mat, Q=q, Z_r=z_r, Upsilon_r=ups, b=b)


@dataclass(frozen=True)
class DecompositionReport:
    max_residual: float
    trials: int
    degenerate: bool


def validate_canonical_decomposition(consts, A_src, nl_map, trials=100, seed=0):
    """Check ``A (sa - sb) == M (xa - xb) + H Z^T (sa - sb)`` on random state pairs."""
    a_src = as_matrix(A_src, "A_src")
    if trials <= 0:
        return DecompositionReport(0.0, 0, True)
    rng = np.random.default_rng(seed)
    n = consts.n
    worst = 0.0
    for _ in range(trials):
        xa, xb = rng.uniform(-np.pi, np.pi, size=(2, n))
        ds = sigma(nl_map, xa) - sigma(nl_map, xb)
        r = a_src @ ds - consts.M @ (xa - xb) - consts.H @ (consts.Z_r.T @ ds)
        worst = max(worst, float(np.linalg.norm(r)))
    if worst > DECOMPOSITION_TOL:
        raise DecompositionInvalid(worst)
    return DecompositionReport(worst, trials, False)


# ---------------------------------------------------------------------------
# adaptation gains and controller states


@dataclass(frozen=True)
class AdaptationGains:
    Gamma_m: np.ndarray
    Gamma_r: np.ndarray
    Gamma_ij: np.ndarray
    Gamma_phi: np.ndarray
    Gamma_theta: np.ndarray
    Gamma_p: np.ndarray

    def __post_init__(self):
        for name in ("Gamma_m", "Gamma_r", "Gamma_ij", "Gamma_phi", "Gamma_theta", "Gamma_p"):
            g = as_matrix(getattr(self, name), name)
            if not pd_check(g):
                raise ValueError(f"{name} must be symmetric positive definite")
            object.__setattr__(self, name, g)

    @classmethod
    def from_scalars(cls, n, p, l, gamma_k=10.0, gamma_theta=5.0, gamma_p=1.0):
        return cls(Gamma_m=gamma_k * np.eye(n), Gamma_r=gamma_k * np.eye(p), Gamma_ij=gamma_k * np.eye(n),
                   Gamma_phi=gamma_theta * np.eye(l), Gamma_theta=gamma_theta * np.eye(l),
                   Gamma_p=gamma_p * np.eye(p))


@dataclass
class LeaderState:
    K_m: np.ndarray
    K_r: np.ndarray
    Theta: np.ndarray
    gains: AdaptationGains
    K_p: np.ndarray = None
    e_p: np.ndarray = None

    @classmethod
    def zeros(cls, n, p, l, gains, saturation=False):
        return cls(np.zeros((n, p)), np.zeros((p, p)), np.zeros((l, p)), gains,
                   np.zeros((p, p)) if saturation else None, np.zeros(n) if saturation else None)


@dataclass
class EdgeGains:
    K_ij: np.ndarray
    K_rij: np.ndarray
    Theta_j: np.ndarray
    e_p: np.ndarray = None


@dataclass
class FollowerState:
    edges: list
    K_m: np.ndarray
    Theta_i: np.ndarray
    gains: AdaptationGains
    K_p: np.ndarray = None

    @property
    def saturation(self):
        return self.K_p is not None

    @classmethod
    def zeros(cls, n, p, l, degree, gains, saturation=False):
        edges = [EdgeGains(np.zeros((n, p)), np.zeros((p, p)), np.zeros((l, p)), np.zeros(n) if saturation else None)
                 for _ in range(degree)]
        return cls(edges, np.zeros((n, p)), np.zeros((l, p)), gains, np.zeros((p, p)) if saturation else None)


@dataclass(frozen=True)
class NeighborSignals:
    """What agent i knows about in-neighbor j at one instant."""

    sigma_j: np.ndarray
    xi_ij: np.ndarray
    phi_j: np.ndarray
    e_ij: np.ndarray = None
    consts: ControllerConstants = None


# ---------------------------------------------------------------------------
# leader


def leader_xi(u_m, sigma_1, sigma_m, e_1, c):
    """Augmented reference input ``u_m - b Z^T (s1 - sm) + b Upsilon^T e1``."""
    ds = np.asarray(sigma_1, dtype=float) - np.asarray(sigma_m, dtype=float)
    return np.asarray(u_m, dtype=float) - c.b * (c.Z_r.T @ ds) + c.b * (c.Upsilon_r.T @ np.asarray(e_1, dtype=float))


def leader_control(s, sigma_1, xi, phi_1):
    return s.K_m.T @ sigma_1 + s.K_r.T @ xi - s.Theta.T @ phi_1


def _regressor(e, c, b_i):
    return b_i.T @ (c.P @ e)


def leader_gain_derivatives(s, sigma_1, xi, phi_1, e_1, c, B_1):
    """(dK_m, dK_r, dTheta) for the leader."""
    r = _regressor(np.asarray(e_1, dtype=float), c, np.asarray(B_1, dtype=float))
    g = s.gains
    dk_m = -g.Gamma_m @ np.outer(sigma_1, r)
    dk_r = -g.Gamma_r @ np.outer(xi, r)
    dtheta = g.Gamma_theta @ np.outer(phi_1, r)
    return dk_m, dk_r, dtheta


# ---------------------------------------------------------------------------
# followers


def follower_xi_ij(u_j, sigma_i, sigma_j, e_ij, c_j):
    """Augmented neighbor input ``u_j - b^j Z_j^T (s_i - s_j) + b^j Upsilon_j^T e_ij``."""
    return leader_xi(u_j, sigma_i, sigma_j, e_ij, c_j)


def follower_control(s, neighbors, sigma_i, Xi, phi_i, linear_mode=False):
    """Distributed control from in-neighbor signals.

    In ``linear_mode`` the caller passes states in place of ``sigma`` and both
    Theta terms are dropped.
    """
    if not neighbors:
        raise EmptyNeighborList("a follower needs at least one in-neighbor")
    if len(neighbors) != len(s.edges):
        raise DimensionMismatch(f"{len(neighbors)} neighbor signals for {len(s.edges)} edges")
    u = s.K_m.T @ Xi
    for edge, nb in zip(s.edges, neighbors):
        u = u + edge.K_ij.T @ nb.sigma_j + edge.K_rij.T @ nb.xi_ij
        if not linear_mode:
            u = u + edge.Theta_j.T @ nb.phi_j
    if not linear_mode:
        u = u - s.Theta_i.T @ phi_i
    return u


def follower_gain_derivatives(s, neighbors, Xi, phi_i, B_i, linear_mode=False):
    """Adaptive-law right-hand sides driven by each edge's ``e_ij``.

    Returns ``{"edges": [(dK_ij, dK_rij, dTheta_j), ...], "K_m": ..., "Theta_i": ...}``.
    The shared gains ``K_m`` and ``Theta_i`` sum one contribution per in-neighbor.
    """
    g = s.gains
    b_i = np.asarray(B_i, dtype=float)
    dk_m = np.zeros_like(s.K_m)
    dth_i = np.zeros_like(s.Theta_i)
    edges = []
    for nb in neighbors:
        r = _regressor(nb.e_ij, nb.consts, b_i)
        dk_ij = -g.Gamma_ij @ np.outer(nb.sigma_j, r)
        dk_rij = -g.Gamma_r @ np.outer(nb.xi_ij, r)
        dk_m -= g.Gamma_m @ np.outer(Xi, r)
        if linear_mode:
            dth_j = np.zeros_like(s.edges[0].Theta_j)
        else:
            dth_j = -g.Gamma_phi @ np.outer(nb.phi_j, r)
            dth_i += g.Gamma_theta @ np.outer(phi_i, r)
        edges.append((dk_ij, dk_rij, dth_j))
    return {"edges": edges, "K_m": dk_m, "Theta_i": dth_i}


# ---------------------------------------------------------------------------
# saturation


def saturate(u, u_max):
    """Clamp each channel to ``[-u_max, u_max]``; returns ``(u_sat, u - u_sat)``."""
    u = np.asarray(u, dtype=float)
    u_max = np.asarray(u_max, dtype=float)
    if np.any(u_max <= 0):
        raise ValueError("saturation bounds must be positive")
    u_sat = np.clip(u, -u_max, u_max)
    return u_sat, u - u_sat


def performance_error_derivative(e_p, du, K_p, c, B_i):
    """``A_H e_p + B_i K_p^T du`` for one edge."""
    return c.A_H @ np.asarray(e_p, dtype=float) + np.asarray(B_i, dtype=float) @ (np.asarray(K_p).T @ du)


def msac_gain_derivatives(s, neighbors, Xi, phi_i, du, B_i, linear_mode=False):
    """Follower adaptive laws driven by ``e_u = e - e_p``, plus ``dK_p``.

    ``neighbors[k].e_ij`` must already hold the edge's ``e_u``.
    """
    if not s.saturation:
        raise SaturationModeDisabled("saturation-aware laws need a K_p gain and e_p states")
    out = follower_gain_derivatives(s, neighbors, Xi, phi_i, B_i, linear_mode)
    b_i = np.asarray(B_i, dtype=float)
    dk_p = np.zeros_like(s.K_p)
    for nb in neighbors:
        dk_p += s.gains.Gamma_p @ np.outer(du, _regressor(nb.e_ij, nb.consts, b_i))
    out["K_p"] = dk_p
    return out
