"""Agent and reference dynamics, disturbance signals and matching-condition solvers.

Every agent obeys

    x_dot = A sigma(x) + B Lam (u + w(x, t))

with ``sigma`` the canonical map ``[psi(x_1), x_2, ..., x_n]``. Only the last
``p`` rows of ``B`` may be nonzero (companion form).

Gain matrices are stored in the shape the adaptive laws produce (``n x p``,
``p x p``, ``l x p``) and applied transposed. The matching solvers follow the
same convention: they return ``K`` such that ``B Lam K.T`` equals the target.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, MatchingInfeasible, NonPositiveParameter, NotCompanionForm
from .linalg import as_matrix, lstsq_solve
from .topology import in_neighbors

MATCHING_TOL = 1e-8

_PSI = {
    "identity": lambda v: v,
    "sine": math.sin,
}


@dataclass(frozen=True)
class NonlinearMap:
    kind: str = "canonical"  # "canonical" or "linear"
    psi: str = "sine"

    def __post_init__(self):
        if self.kind not in ("canonical", "linear"):
            raise ValueError(f"unknown map kind {self.kind!r}")
        if self.psi not in _PSI:
            raise ValueError(f"unknown psi {self.psi!r}; expected one of {sorted(_PSI)}")

    @property
    def is_linear(self):
        return self.kind == "linear" or self.psi == "identity"


LINEAR = NonlinearMap("linear", "identity")
SINE = NonlinearMap("canonical", "sine")


def sigma(nl_map, x):
    x = np.asarray(x, dtype=float)
    out = x.copy()
    if nl_map.kind == "canonical":
        out[0] = _PSI[nl_map.psi](x[0])
    return out


# ---------------------------------------------------------------------------
# basis functions phi(x, t) used by uncertainty models and Theta-gains

BASIS_FUNCTIONS = {
    "one": lambda x, t: 1.0,
    "sin_t": lambda x, t: math.sin(t),
    "cos_t": lambda x, t: math.cos(t),
    "sin_x1": lambda x, t: math.sin(x[0]),
    "cos_x1": lambda x, t: math.cos(x[0]),
}


def basis_function(name):
    if name in BASIS_FUNCTIONS:
        return BASIS_FUNCTIONS[name]
    if name.startswith("x") and name[1:].isdigit():
        k = int(name[1:]) - 1
        return lambda x, t: x[k]
    raise ValueError(f"unknown basis function {name!r}")


def eval_basis(names, x, t):
    return np.array([basis_function(nm)(x, t) for nm in names], dtype=float)


# ---------------------------------------------------------------------------
# uncertainty models


@dataclass(frozen=True)
class NoUncertainty:
    p: int = 1

    @property
    def bound(self):
        return 0.0


@dataclass(frozen=True)
class Sinusoid:
    amplitude: float
    omega: float = 1.0
    p: int = 1

    @property
    def bound(self):
        return abs(self.amplitude)


@dataclass(frozen=True)
class BasisWeighted:
    """w(x, t) = theta.T @ phi(x, t) with ``theta`` of shape (l, p)."""

    theta: np.ndarray
    basis: tuple

    def __post_init__(self):
        theta = as_matrix(self.theta, "theta")
        if theta.shape[0] != len(self.basis):
            raise DimensionMismatch(f"theta has {theta.shape[0]} rows but basis has {len(self.basis)} entries")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "basis", tuple(self.basis))

    @property
    def p(self):
        return self.theta.shape[1]

    @property
    def bound(self):
        # only exact for bounded bases (trig / constant)
        return float(np.abs(self.theta).sum(axis=0).max())


@dataclass(frozen=True)
class RandomPiecewiseConstant:
    """Uniform draws in [low, high] held for ``hold`` seconds, one column per channel."""

    low: float
    high: float
    hold: float = 0.1
    seed: int = 0
    p: int = 1
    horizon: float = 1000.0
    table: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.high >= self.low:
            raise ValueError("RandomPiecewiseConstant needs high >= low")
        if self.hold <= 0:
            raise ValueError("hold must be positive")
        n_slots = int(math.ceil(self.horizon / self.hold)) + 1
        rng = np.random.default_rng(self.seed)
        table = rng.uniform(self.low, self.high, size=(n_slots, self.p))
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @property
    def bound(self):
        return max(abs(self.low), abs(self.high))

    def value(self, t):
        k = min(int(t // self.hold), self.table.shape[0] - 1)
        return self.table[k]


def eval_uncertainty(spec, x, t):
    if t < 0:
        raise ValueError("time must be non-negative")
    if isinstance(spec, NoUncertainty):
        return np.zeros(spec.p)
    if isinstance(spec, Sinusoid):
        return np.full(spec.p, spec.amplitude * math.sin(spec.omega * t))
    if isinstance(spec, BasisWeighted):
        return spec.theta.T @ eval_basis(spec.basis, x, t)
    if isinstance(spec, RandomPiecewiseConstant):
        return spec.value(t).copy()
    raise TypeError(f"unsupported uncertainty spec {spec!r}")


def ideal_uncertainty_weights(spec, basis, p):
    """Weights ``theta`` (l x p) with ``w == theta.T @ phi`` over ``basis``, or None.

    Returns None when the disturbance is not exactly representable.
    """
    basis = tuple(basis)
    l = len(basis)
    if isinstance(spec, NoUncertainty):
        return np.zeros((l, p))
    if isinstance(spec, Sinusoid) and spec.omega == 1.0 and "sin_t" in basis:
        theta = np.zeros((l, p))
        theta[basis.index("sin_t"), :] = spec.amplitude
        return theta
    if isinstance(spec, BasisWeighted) and set(spec.basis) <= set(basis):
        theta = np.zeros((l, p))
        for row, name in enumerate(spec.basis):
            theta[basis.index(name)] += spec.theta[row]
        return theta
    return None


# ---------------------------------------------------------------------------
# models


def check_companion_input(b, name="B"):
    """Only the last p rows of an n x p input matrix may be nonzero."""
    n, p = b.shape
    if n < p or np.any(b[: n - p] != 0):
        raise NotCompanionForm(f"{name} must have nonzero entries only in its last {p} rows")


@dataclass(frozen=True)
class AgentModel:
    A: np.ndarray
    B: np.ndarray
    Lam: np.ndarray = None
    map: NonlinearMap = SINE
    uncertainty: object = None
    # row index receiving the disturbance directly instead of through B Lam
    state_disturbance_row: int = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        a = as_matrix(self.A, "A")
        b = as_matrix(self.B, "B")
        n, p = b.shape
        if a.shape != (n, n):
            raise DimensionMismatch(f"A shape {a.shape} incompatible with B shape {b.shape}")
        lam = np.eye(p) if self.Lam is None else as_matrix(self.Lam, "Lam")
        if lam.shape != (p, p) or np.any(lam != np.diag(np.diag(lam))) or np.any(np.diag(lam) <= 0):
            raise ValueError("Lam must be a diagonal p x p matrix with positive entries")
        check_companion_input(b)
        unc = NoUncertainty(p) if self.uncertainty is None else self.uncertainty
        if unc.p != p:
            raise DimensionMismatch(f"uncertainty has {unc.p} channels, model has p={p}")
        for name, val in (("A", a), ("B", b), ("Lam", lam)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "uncertainty", unc)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.B.shape[1]


@dataclass(frozen=True)
class ReferenceModel:
    A: np.ndarray
    B: np.ndarray
    map: NonlinearMap = SINE
    policy: object = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        a = as_matrix(self.A, "A_m")
        b = as_matrix(self.B, "B_m")
        n, _ = b.shape
        if a.shape != (n, n):
            raise DimensionMismatch(f"A_m shape {a.shape} incompatible with B_m shape {b.shape}")
        check_companion_input(b, "B_m")
        for name, val in (("A", a), ("B", b)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.B.shape[1]


def agent_derivative(m, x, u, t, w=None):
    """A sigma(x) + B Lam (u + w); ``w`` defaults to the model's own disturbance."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape != (m.n,) or u.shape != (m.p,):
        raise DimensionMismatch(f"expected x of length {m.n} and u of length {m.p}")
    if w is None:
        w = eval_uncertainty(m.uncertainty, x, t)
    dx = m.A @ sigma(m.map, x)
    if m.state_disturbance_row is None:
        return dx + m.B @ (m.Lam @ (u + w))
    dx = dx + m.B @ (m.Lam @ u)
    dx[m.state_disturbance_row] += w.sum()
    return dx


def reference_derivative(r, x_m, u_m):
    x_m = np.asarray(x_m, dtype=float)
    u_m = np.asarray(u_m, dtype=float).reshape(-1)
    if x_m.shape != (r.n,) or u_m.shape != (r.p,):
        raise DimensionMismatch(f"expected x_m of length {r.n} and u_m of length {r.p}")
    return r.A @ sigma(r.map, x_m) + r.B @ u_m


# ---------------------------------------------------------------------------
# concrete builders


def pendulum_matrices(mass, length, damping, gravity):
    if mass <= 0 or length <= 0:
        raise NonPositiveParameter("pendulum mass and length must be positive")
    if damping < 0 or gravity < 0:
        raise NonPositiveParameter("pendulum damping and gravity must be non-negative")
    inertia = mass * length**2
    a = np.array([[0.0, 1.0], [gravity / length, -damping / inertia]])
    b = np.array([[0.0], [1.0 / inertia]])
    return a, b


def make_pendulum(mass=1.0, length=1.0, damping=0.0, gravity=9.81, uncertainty=None, Lam=None):
    """Inverted pendulum m l^2 theta'' = m g l sin(theta) - b theta' + tau, state [theta, theta']."""
    a, b = pendulum_matrices(mass, length, damping, gravity)
    params = {"model": "pendulum", "mass": mass, "length": length, "damping": damping, "gravity": gravity}
    return AgentModel(a, b, Lam=Lam, map=SINE, uncertainty=uncertainty, params=params)


def mimo3_matrices(coeffs=(1.0, 2.0, 3.0), input_gain=1.0):
    c1, c2, c3 = coeffs
    a = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-c1, -c2, -c3]])
    b = np.array([[0.0], [0.0], [float(input_gain)]])
    return a, b


def make_mimo3(uncertainty=None, coeffs=(1.0, 2.0, 3.0), input_gain=1.0, literal_state_disturbance=False, Lam=None):
    """Three-state chain x1' = x2, x2' = x3, x3' = -c1 x1 - c2 x2 - c3 x3 + g u.

    With ``literal_state_disturbance`` the disturbance is added to the second
    state instead of entering through the input channel.
    """
    a, b = mimo3_matrices(coeffs, input_gain)
    params = {"model": "mimo3", "coeffs": list(map(float, coeffs)), "input_gain": float(input_gain),
              "literal_state_disturbance": bool(literal_state_disturbance)}
    return AgentModel(a, b, Lam=Lam, map=LINEAR, uncertainty=uncertainty,
                      state_disturbance_row=1 if literal_state_disturbance else None, params=params)


BUILDERS = {"pendulum": make_pendulum, "mimo3": make_mimo3}

# parameters scaled by the heterogeneity factor for each builder
HETEROGENEOUS_KEYS = {"pendulum": ("mass", "length"), "mimo3": ("coeffs", "input_gain")}


# ---------------------------------------------------------------------------
# matching conditions


def _solve_gain(lhs, rhs, where):
    x, resid = lstsq_solve(lhs, rhs)
    if resid > MATCHING_TOL:
        raise MatchingInfeasible(resid, where)
    return x.T


def solve_feedback_matching(agent, ref):
    """Gains with ``B Lam K_m.T = A_m - A`` and ``B Lam K_r.T = B_m``."""
    if agent.n != ref.n or agent.p != ref.p:
        raise DimensionMismatch("agent and reference dimensions differ")
    bl = agent.B @ agent.Lam
    k_m = _solve_gain(bl, ref.A - agent.A, "feedback matching (A)")
    k_r = _solve_gain(bl, ref.B, "feedback matching (B)")
    return k_m, k_r


def solve_coupling_matching(agent_i, agent_j):
    """Gains with ``A_j = A_i + B_i Lam K_ij.T`` and ``B_j = B_i Lam K_rij.T``."""
    if agent_i.n != agent_j.n or agent_i.p != agent_j.p:
        raise DimensionMismatch("agents have different dimensions")
    bl = agent_i.B @ agent_i.Lam
    k_ij = _solve_gain(bl, agent_j.A - agent_i.A, "coupling matching (A)")
    k_rij = _solve_gain(bl, agent_j.B, "coupling matching (B)")
    return k_ij, k_rij


def solve_uncertainty_matching(agent_i, agent_j):
    """``Theta`` with ``B_j Lam_j = B_i Lam_i Theta.T``."""
    if agent_i.n != agent_j.n or agent_i.p != agent_j.p:
        raise DimensionMismatch("agents have different dimensions")
    return _solve_gain(agent_i.B @ agent_i.Lam, agent_j.B @ agent_j.Lam, "uncertainty matching")


def _scale(value, factor):
    if isinstance(value, (list, tuple)):
        return [float(v) * factor for v in value]
    return float(value) * factor


def sample_heterogeneous_network(builder, base, value_range, seed, n_agents, graph=None, reference=None):
    """Draw ``n_agents`` models whose heterogeneous parameters are scaled by U[lo, hi].

    ``builder`` is a key of ``BUILDERS``; ``base`` holds the builder's keyword
    arguments. Every agent gets an independent factor per heterogeneous key.
    When ``graph`` (and ``reference``) are given, all matching conditions along
    its edges (and against the reference) are checked.
    """
    lo, hi = value_range
    if n_agents < 1:
        raise ValueError("need at least one agent")
    if lo > hi:
        raise ValueError("heterogeneity range must satisfy lo <= hi")
    make = BUILDERS[builder]
    keys = HETEROGENEOUS_KEYS[builder]
    rng = np.random.default_rng(seed)
    agents = []
    for _ in range(n_agents):
        kwargs = dict(base)
        for key in keys:
            kwargs[key] = _scale(kwargs.get(key, _builder_default(builder, key)), rng.uniform(lo, hi))
        agents.append(make(**kwargs))
    if graph is not None:
        check_network_matching(agents, graph, reference)
    return agents


def _builder_default(builder, key):
    defaults = {"pendulum": {"mass": 1.0, "length": 1.0}, "mimo3": {"coeffs": (1.0, 2.0, 3.0), "input_gain": 1.0}}
    return defaults[builder][key]


def check_network_matching(agents, graph, reference=None):
    """Verify every matching condition the controllers rely on."""
    for i in graph.order:
        for j in in_neighbors(graph, i):
            try:
                solve_coupling_matching(agents[i - 1], agents[j - 1])
                solve_uncertainty_matching(agents[i - 1], agents[j - 1])
            except MatchingInfeasible as exc:
                raise MatchingInfeasible(exc.residual, f"edge {j}->{i}") from exc
        if reference is not None:
            try:
                solve_feedback_matching(agents[i - 1], reference)
            except MatchingInfeasible as exc:
                raise MatchingInfeasible(exc.residual, f"agent {i} vs reference") from exc
