"""Network assembly, fixed-step RK4 integration, Lyapunov monitoring and metrics.

``build_network`` validates a set of agents, a reference model and a graph,
synthesizes every controller constant, computes the ideal (matched) gains the
monitor needs and packs it all into arrays for the compiled kernel.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernel as kern
from .controllers import AdaptationGains, derive_constants, validate_canonical_decomposition
from .errors import DimensionMismatch, EmptyLog, MatchingInfeasible, ValidationError
from .models import (BasisWeighted, NoUncertainty, RandomPiecewiseConstant, Sinusoid, ideal_uncertainty_weights,
                     solve_coupling_matching, solve_feedback_matching, solve_uncertainty_matching)
from .policy import AffinePolicy, PendulumSurrogate
from .topology import in_neighbors

MODES = {
    "rl_only": kern.RL_ONLY,
    "dmrac_rl": kern.DMRAC,
    "dmrac_rl_linear": kern.DMRAC_LINEAR,
    "dmsac_rl": kern.DMSAC,
    "adaptive_no_antiwindup": kern.NO_ANTIWINDUP,
}
SATURATING_MODES = ("dmsac_rl", "adaptive_no_antiwindup")
DIVERGENCE_GUARD = 1e6

_BASIS_CODES = {"one": kern.B_ONE, "sin_t": kern.B_SIN_T, "cos_t": kern.B_COS_T, "sin_x1": kern.B_SIN_X1,
                "cos_x1": kern.B_COS_X1}


def basis_code(name):
    if name in _BASIS_CODES:
        return _BASIS_CODES[name]
    if name.startswith("x") and name[1:].isdigit() and int(name[1:]) >= 1:
        return kern.X_BASE + int(name[1:]) - 1
    raise ValueError(f"unknown basis function {name!r}")


def rk4_step(f, t, y, dt):
    """One classical Runge-Kutta step of ``y' = f(t, y)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# ---------------------------------------------------------------------------
# layout


@dataclass(frozen=True)
class Layout:
    N: int
    n: int
    p: int
    l: int
    dmax: int

    @property
    def slot_size(self):
        return self.n * self.p + self.p * self.p + self.l * self.p + self.n

    @property
    def agent_size(self):
        n, p, l = self.n, self.p, self.l
        return n + n * p + l * p + p * p + self.dmax * self.slot_size

    @property
    def size(self):
        return self.n + self.N * self.agent_size

    def agent(self, i):
        """Slices of agent ``i`` (0-based) as ``{name: (start, shape)}``."""
        n, p, l = self.n, self.p, self.l
        ab = n + i * self.agent_size
        out = {"x": (ab, (n,)), "K_m": (ab + n, (n, p)), "Theta_i": (ab + n + n * p, (l, p)),
               "K_p": (ab + n + n * p + l * p, (p, p))}
        base = ab + n + n * p + l * p + p * p
        for k in range(self.dmax):
            sb = base + k * self.slot_size
            out[f"K_ij/{k}"] = (sb, (n, p))
            out[f"K_rij/{k}"] = (sb + n * p, (p, p))
            out[f"Theta_j/{k}"] = (sb + n * p + p * p, (l, p))
            out[f"e_p/{k}"] = (sb + n * p + p * p + l * p, (n,))
        return out

    def view(self, y, i, name):
        start, shape = self.agent(i)[name]
        return y[start:start + int(np.prod(shape))].reshape(shape)


# ---------------------------------------------------------------------------
# network assembly


@dataclass(frozen=True)
class Network:
    agents: tuple
    reference: object
    graph: object
    mode: str
    basis: tuple
    gains: AdaptationGains
    constants: tuple  # per context; index N is the reference model
    u_max: np.ndarray
    layout: Layout
    ideal: np.ndarray = field(repr=False)
    monitor_exact: bool = True
    monitor_notes: tuple = ()
    lambda_mismatch: float = 0.0
    packed: tuple = field(default=None, repr=False)
    gamma_inv: tuple = field(default=None, repr=False)

    @property
    def saturating(self):
        return self.mode in SATURATING_MODES


def _pack_policy(policy, n, p):
    gain = np.zeros((p, n))
    x_set = np.zeros(n)
    u_ff = np.zeros(p)
    par = np.zeros(7)
    sched = np.zeros((0, 2))
    if isinstance(policy, AffinePolicy):
        if policy.n != n or policy.p != p:
            raise DimensionMismatch("reference policy dimensions do not match the reference model")
        return np.array([0]), policy.K.copy(), policy.x_set.copy(), policy.u_ff.copy(), par, sched
    if isinstance(policy, PendulumSurrogate):
        if n != 2 or p != 1:
            raise DimensionMismatch("pendulum surrogate needs n=2, p=1")
        par[:] = (policy.k1, policy.k2, policy.mass, policy.length, policy.damping, policy.gravity, policy.setpoint)
        if policy.schedule:
            sched = np.array(policy.schedule, dtype=float)
        return np.array([1]), gain, x_set, u_ff, par, sched
    raise TypeError(f"unsupported policy {policy!r}")


def _pack_uncertainty(agents, p):
    N = len(agents)
    lw = max([len(a.uncertainty.basis) for a in agents if isinstance(a.uncertainty, BasisWeighted)] or [1])
    slots = max([a.uncertainty.table.shape[0] for a in agents
                 if isinstance(a.uncertainty, RandomPiecewiseConstant)] or [1])
    kind = np.zeros(N, dtype=np.int64)
    par = np.zeros((N, 2))
    theta = np.zeros((N, lw, p))
    codes = np.full((N, lw), -1, dtype=np.int64)
    table = np.zeros((N, slots, p))
    hold = np.ones(N)
    for i, a in enumerate(agents):
        spec = a.uncertainty
        if isinstance(spec, NoUncertainty):
            kind[i] = kern.U_NONE
        elif isinstance(spec, Sinusoid):
            kind[i] = kern.U_SINUSOID
            par[i] = (spec.amplitude, spec.omega)
        elif isinstance(spec, BasisWeighted):
            kind[i] = kern.U_BASIS
            theta[i, :len(spec.basis)] = spec.theta
            codes[i, :len(spec.basis)] = [basis_code(b) for b in spec.basis]
        elif isinstance(spec, RandomPiecewiseConstant):
            kind[i] = kern.U_TABLE
            rows = spec.table.shape[0]
            table[i, :rows] = spec.table
            table[i, rows:] = spec.table[-1]
            hold[i] = spec.hold
        else:
            raise TypeError(f"unsupported uncertainty {spec!r}")
    return kind, par, theta, codes, table, hold


def _psi_code(nl_map):
    return 0 if nl_map.kind == "linear" or nl_map.psi == "identity" else 1


def build_network(agents, reference, graph, mode="dmrac_rl", basis=("sin_t",), gains=None, Q=None, lambda0=2.0,
                  u_max=None, decomposition_trials=100, seed=0):
    """Validate and assemble a network ready for integration.

    Raises the setup errors of the underlying modules (matching, decomposition,
    Hurwitz) and ``ValidationError`` for inconsistent mode/saturation settings.
    """
    agents = tuple(agents)
    if mode not in MODES:
        raise ValidationError("mode", f"unknown mode {mode!r}; expected one of {sorted(MODES)}")
    N = len(agents)
    if N != graph.n_agents:
        raise DimensionMismatch(f"{N} agents for a {graph.n_agents}-agent graph")
    n, p = reference.n, reference.p
    for i, a in enumerate(agents, start=1):
        if (a.n, a.p) != (n, p):
            raise DimensionMismatch(f"agent {i} has (n, p) = ({a.n}, {a.p}), reference has ({n}, {p})")
    basis = tuple(basis)
    codes = np.array([basis_code(b) for b in basis], dtype=np.int64)
    l = len(basis)
    if u_max is not None and mode not in SATURATING_MODES:
        raise ValidationError("saturation", f"mode {mode!r} does not handle saturation")
    if mode in SATURATING_MODES:
        if u_max is None:
            raise ValidationError("saturation", f"mode {mode!r} needs u_max")
        u_max = np.broadcast_to(np.asarray(u_max, dtype=float), (p,)).copy()
        if np.any(u_max <= 0):
            raise ValidationError("saturation.u_max", "bounds must be positive")
    else:
        u_max = np.full(p, np.inf)
    gains = gains if gains is not None else AdaptationGains.from_scalars(n, p, max(l, 1))
    if gains.Gamma_phi.shape[0] != l and l > 0:
        raise DimensionMismatch(f"Gamma_phi is {gains.Gamma_phi.shape}, basis has {l} entries")

    leader = graph.leader - 1
    users = {j for i in graph.order for j in in_neighbors(graph, i)}
    contexts = [None] * (N + 1)
    ref_c = derive_constants(reference.B, None, reference.A, Q, lambda0)
    validate_canonical_decomposition(ref_c, reference.A, reference.map, decomposition_trials, seed)
    contexts[N] = ref_c
    for j in sorted(users):
        a = agents[j - 1]
        c = derive_constants(a.B, None, a.A, Q, lambda0)
        validate_canonical_decomposition(c, a.A, a.map, decomposition_trials, seed)
        contexts[j - 1] = c

    dmax = max(1, max(len(in_neighbors(graph, i)) for i in graph.order))
    layout = Layout(N, n, p, l, dmax)
    order = np.array([i - 1 for i in graph.order], dtype=np.int64)
    deg = np.zeros(N, dtype=np.int64)
    nbr = np.full((N, dmax), -1, dtype=np.int64)
    for i in graph.order:
        nb = in_neighbors(graph, i)
        if i - 1 == leader:
            nb_idx = [N]
        else:
            nb_idx = [j - 1 for j in nb]
        deg[i - 1] = len(nb_idx)
        nbr[i - 1, :len(nb_idx)] = nb_idx

    ideal, exact, notes, lam_gap = _ideal_gains(agents, reference, graph, basis, layout, mode)

    A = np.array([a.A for a in agents])
    B = np.array([a.B for a in agents])
    lam = np.array([np.diag(a.Lam) for a in agents])
    psi = np.array([_psi_code(a.map) for a in agents] + [_psi_code(reference.map)], dtype=np.int64)
    unc = _pack_uncertainty(agents, p)
    dist_row = np.array([-1 if a.state_disturbance_row is None else a.state_disturbance_row for a in agents],
                        dtype=np.int64)
    pol = _pack_policy(reference.policy, n, p)

    AH = np.zeros((N + 1, n, n))
    P = np.zeros((N + 1, n, n))
    Z = np.zeros((N + 1, n, p))
    Ups = np.zeros((N + 1, n, p))
    bsc = np.zeros(N + 1)
    for c_idx, c in enumerate(contexts):
        if c is not None:
            AH[c_idx], P[c_idx], Z[c_idx], Ups[c_idx], bsc[c_idx] = c.A_H, c.P, c.Z_r, c.Upsilon_r, c.b

    g = gains
    gphi = g.Gamma_phi if l > 0 else np.zeros((0, 0))
    gth = g.Gamma_theta if l > 0 else np.zeros((0, 0))
    dims = np.array([N, n, p, l, dmax, MODES[mode]], dtype=np.int64)
    packed = (dims, order, deg, nbr, A, B, lam, psi, *unc, dist_row, np.array(reference.A), np.array(reference.B),
              *pol, codes, AH, P, Z, Ups, bsc, g.Gamma_m, g.Gamma_r, g.Gamma_ij, gphi, gth, g.Gamma_p, u_max)
    packed = tuple(np.ascontiguousarray(a) for a in packed)
    ginv = tuple(np.ascontiguousarray(np.linalg.inv(m)) if m.size else m
                 for m in (g.Gamma_m, g.Gamma_r, g.Gamma_ij, gphi, gth, g.Gamma_p))
    return Network(agents=agents, reference=reference, graph=graph, mode=mode, basis=basis, gains=gains,
                   constants=tuple(contexts), u_max=u_max, layout=layout, ideal=ideal, monitor_exact=exact,
                   monitor_notes=tuple(notes), lambda_mismatch=lam_gap, packed=packed, gamma_inv=ginv)


def _weights(agent, basis, notes, label):
    if agent.state_disturbance_row is not None:
        notes.append(f"{label}: disturbance enters a state row, not the input channel")
        return np.zeros((len(basis), agent.p)), False
    w = ideal_uncertainty_weights(agent.uncertainty, basis, agent.p)
    if w is None:
        notes.append(f"{label}: disturbance not representable on the basis {list(basis)}")
        return np.zeros((len(basis), agent.p)), False
    return w, True


def _ideal_gains(agents, reference, graph, basis, layout, mode):
    """Matched gain values in the packed layout, plus monitor exactness notes."""
    y = np.zeros(layout.size)
    notes = []
    exact = True
    leader = graph.leader - 1
    lam_gap = max(float(np.max(np.abs(a.Lam - np.eye(a.p)))) for a in agents)
    if lam_gap > 0:
        exact = False
        notes.append(f"effectiveness differs from the controller estimate by up to {lam_gap:.3g}")
    for i in graph.order:
        a = agents[i - 1]

        def view(name, i=i):
            return layout.view(y, i - 1, name)

        w_i, ok = _weights(a, basis, notes, f"agent {i}")
        exact &= ok
        view("Theta_i")[:] = w_i
        view("K_p")[:] = -a.Lam
        if i - 1 == leader:
            try:
                k_m, k_r = solve_feedback_matching(a, reference)
            except MatchingInfeasible as exc:
                raise MatchingInfeasible(exc.residual, f"leader {i} vs reference") from exc
            view("K_m")[:] = k_m
            view("K_rij/0")[:] = k_r
            continue
        nbrs = in_neighbors(graph, i)
        if len(nbrs) > 1:
            exact = False
            notes.append(f"agent {i} has {len(nbrs)} in-neighbors; the summed error dynamics are not exactly matched")
        k_m = np.zeros((a.n, a.p))
        for k, j in enumerate(nbrs):
            aj = agents[j - 1]
            try:
                k_ij, _ = solve_coupling_matching(a, aj)
                theta_m = solve_uncertainty_matching(a, aj)
            except MatchingInfeasible as exc:
                raise MatchingInfeasible(exc.residual, f"edge {j}->{i}") from exc
            w_j, ok = _weights(aj, basis, notes, f"agent {j}")
            exact &= ok
            view(f"K_ij/{k}")[:] = k_ij
            view(f"K_rij/{k}")[:] = theta_m
            view(f"Theta_j/{k}")[:] = w_j @ theta_m
            k_m += k_ij / len(nbrs)
        view("K_m")[:] = k_m
    if mode == "dmrac_rl_linear" and any(np.any(layout.view(y, i, "Theta_i")) for i in range(layout.N)):
        exact = False
        notes.append("linear mode drops the disturbance compensation")
    return y, exact, notes, lam_gap


# ---------------------------------------------------------------------------
# state and stepping


@dataclass
class NetworkState:
    t: float
    y: np.ndarray
    n: int
    u: np.ndarray = None
    u_sat: np.ndarray = None

    @property
    def x_m(self):
        return self.y[: self.n]

    def agent_state(self, layout, i):
        """State of agent ``i`` (1-based)."""
        return layout.view(self.y, i - 1, "x")


def initial_state(network, x_m0, x0, warm_start=False, t0=0.0):
    lay = network.layout
    y = network.ideal.copy() if warm_start else np.zeros(lay.size)
    if warm_start:
        for i in range(lay.N):
            for k in range(lay.dmax):
                lay.view(y, i, f"e_p/{k}")[:] = 0.0
    else:
        # nominal effectiveness estimate: K_p starts at -I (inert outside the saturating modes)
        for i in range(lay.N):
            lay.view(y, i, "K_p")[:] = -np.eye(lay.p)
    x_m0 = np.asarray(x_m0, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if x_m0.shape != (lay.n,) or x0.shape != (lay.N, lay.n):
        raise DimensionMismatch(f"initial states must be ({lay.n},) and ({lay.N}, {lay.n})")
    y[: lay.n] = x_m0
    for i in range(lay.N):
        lay.view(y, i, "x")[:] = x0[i]
    state = NetworkState(float(t0), y, lay.n)
    state.u, state.u_sat = controls(network, state.t, y)
    return state


def controls(network, t, y):
    """Pre- and post-saturation controls at ``(t, y)``; row N is the reference input."""
    lay = network.layout
    dy = np.empty(lay.size)
    u = np.empty((lay.N + 1, lay.p))
    us = np.empty((lay.N + 1, lay.p))
    kern.rhs(float(t), np.ascontiguousarray(y, dtype=float), dy, network.packed, u, us)
    return u, us


def network_rhs(network, t, y):
    lay = network.layout
    dy = np.empty(lay.size)
    u = np.empty((lay.N + 1, lay.p))
    kern.rhs(float(t), np.ascontiguousarray(y, dtype=float), dy, network.packed, u, u.copy())
    return dy


def step_network(state, network, dt):
    """Advance the coupled system by one RK4 step."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    lay = network.layout
    u = np.empty((lay.N + 1, lay.p))
    y = kern.rk4_step(state.t, np.ascontiguousarray(state.y), float(dt), network.packed, u, u.copy())
    new = NetworkState(state.t + dt, y, lay.n)
    new.u, new.u_sat = controls(network, new.t, y)
    return new


def lyapunov_monitor(state, network, per_agent=False):
    """Monitored Lyapunov value computed against the matched (ideal) gains."""
    lay = network.layout
    v = np.empty(lay.N)
    err = np.empty(lay.N)
    eloc = np.empty(lay.N)
    kern.monitor(np.ascontiguousarray(state.y), network.ideal, network.packed, network.gamma_inv, v, err, eloc)
    return v if per_agent else float(v.sum())


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class TrajectoryLog:
    t: np.ndarray
    x_m: np.ndarray
    x: np.ndarray
    u_m: np.ndarray
    u: np.ndarray
    u_sat: np.ndarray
    err: np.ndarray
    err_local: np.ndarray
    V: np.ndarray
    diverged: bool = False
    divergence_time: float = None
    events: list = field(default_factory=list)
    horizon: float = None
    final_y: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return self.t.shape[0]

    @property
    def n_agents(self):
        return self.x.shape[1]

    @property
    def V_total(self):
        return self.V.sum(axis=1)


def simulate(network, x_m0, x0, dt=1e-3, t_final=20.0, record_every=10, warm_start=False,
             guard=DIVERGENCE_GUARD, events=()):
    """Integrate from t=0 to ``t_final``; divergence truncates the log instead of raising."""
    if not dt > 0:
        raise ValidationError("integration.dt", "must be positive")
    if not t_final > 0:
        raise ValidationError("integration.t_final", "must be positive")
    if record_every < 1:
        raise ValidationError("integration.record_every", "must be at least 1")
    lay = network.layout
    state = initial_state(network, x_m0, x0, warm_start)
    nsteps = int(round(t_final / dt))
    cap = nsteps // record_every + 2
    t_rec = np.zeros(cap)
    X = np.zeros((cap, lay.N + 1, lay.n))
    U = np.zeros((cap, lay.N + 1, lay.p))
    US = np.zeros((cap, lay.N + 1, lay.p))
    ERR = np.zeros((cap, lay.N))
    ELOC = np.zeros((cap, lay.N))
    V = np.zeros((cap, lay.N))
    rec, trip, y = kern.integrate(state.y, 0.0, float(dt), nsteps, int(record_every), float(guard), network.packed,
                                  network.ideal, network.gamma_inv, t_rec, X, U, US, ERR, ELOC, V)
    return TrajectoryLog(t=t_rec[:rec], x_m=X[:rec, lay.N], x=X[:rec, : lay.N], u_m=U[:rec, lay.N],
                         u=U[:rec, : lay.N], u_sat=US[:rec, : lay.N], err=ERR[:rec], err_local=ELOC[:rec],
                         V=V[:rec], diverged=trip >= 0, divergence_time=trip * dt if trip >= 0 else None,
                         events=list(events), horizon=float(nsteps * dt), final_y=y)


def prepare_scenario(cfg):
    """Instantiate and validate a ``ScenarioConfig``; returns ``(network, setup)``."""
    from .config import instantiate

    setup = instantiate(cfg)
    return build_network(**setup.network_kwargs), setup


def run_scenario(cfg, prepared=None):
    """Build and integrate the network a ``ScenarioConfig`` describes."""
    network, setup = prepared or prepare_scenario(cfg)
    integ = cfg.integration
    return simulate(network, setup.x_m0, setup.x0, dt=integ["dt"], t_final=integ["t_final"],
                    record_every=integ["record_every"], warm_start=cfg.warm_start, guard=integ["guard"],
                    events=setup.events)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class Metrics:
    sup_error_tail: float
    tail_error_per_agent: list
    settle_time: float
    settle_eps: float
    uub_certificate: dict
    diverged: bool
    divergence_time: float
    out_of_bound_agents: list
    control_effort: float
    max_abs_u_sat: float
    final_error: float

    def to_dict(self):
        return dict(self.__dict__)


def _settle(t, e, eps):
    """First time after which ``e`` stays within ``eps``; None if it never does."""
    outside = np.flatnonzero(e > eps)
    if outside.size == 0:
        return float(t[0])
    last = outside[-1]
    if last + 1 >= t.size:
        return None
    return float(t[last + 1])


def compute_metrics(log, tail_fraction=0.25, settle_eps=0.05, uub_radius=None):
    """Synchronization, boundedness and effort summaries of a trajectory log.

    ``uub_radius``, when given, flags agents whose tail error exceeds it as out
    of bound, which also marks the run as diverged.
    """
    if log is None or len(log) == 0:
        raise EmptyLog("trajectory log has no samples")
    t = log.t
    horizon = log.horizon if log.horizon is not None else float(t[-1])
    tail_start = t[0] + (1.0 - tail_fraction) * (horizon - t[0])
    emax = log.err.max(axis=1)
    tail = t >= tail_start
    if log.diverged or not np.any(tail):
        per_agent = [math.inf] * log.n_agents
        sup_tail = math.inf
    else:
        per_agent = [float(v) for v in log.err[tail].max(axis=0)]
        sup_tail = max(per_agent)

    out_of_bound = []
    oob_time = None
    if uub_radius is not None:
        for i, val in enumerate(per_agent, start=1):
            if val > uub_radius:
                out_of_bound.append(i)
                # start of the final excursion beyond the radius
                inside = np.flatnonzero(log.err[:, i - 1] <= uub_radius)
                first = float(t[min(inside[-1] + 1, len(t) - 1)]) if inside.size else float(t[0])
                oob_time = first if oob_time is None else min(oob_time, first)

    diverged = bool(log.diverged or out_of_bound)
    div_time = log.divergence_time if log.diverged else oob_time

    cert = None
    if not diverged:
        r = float(emax[0])
        big_r = sup_tail
        stays = _settle(t, emax, big_r * (1.0 + 1e-9))
        cert = {"r": r, "R": big_r, "T": stays}

    effort = float(np.trapezoid(np.linalg.norm(log.u_sat, axis=2).sum(axis=1), t)) if len(t) > 1 else 0.0
    return Metrics(sup_error_tail=sup_tail, tail_error_per_agent=per_agent, settle_time=_settle(t, emax, settle_eps),
                   settle_eps=settle_eps, uub_certificate=cert, diverged=diverged, divergence_time=div_time,
                   out_of_bound_agents=out_of_bound, control_effort=effort,
                   max_abs_u_sat=float(np.max(np.abs(log.u_sat))), final_error=float(emax[-1]))
