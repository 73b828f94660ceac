"""Scenario documents: parsing, default filling, validation and instantiation.

A scenario is a JSON object. Only ``graph``, ``agents`` and ``mode`` are
required; everything else has a default, and ``ScenarioConfig.to_dict`` echoes
every effective value so a run is fully described by its
``effective_config.json``.
"""

import copy
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .controllers import AdaptationGains
from .errors import GraphError, ParseError, ValidationError
from .models import (BUILDERS, LINEAR, SINE, BasisWeighted, NoUncertainty, RandomPiecewiseConstant, ReferenceModel,
                     Sinusoid, mimo3_matrices, pendulum_matrices, sample_heterogeneous_network)
from .policy import load_policy, policy_from_dict
from .simulation import MODES, SATURATING_MODES
from .topology import tree_adjacency, validate_graph

MODEL_DEFAULTS = {
    "pendulum": {"mass": 1.0, "length": 1.0, "damping": 0.0, "gravity": 9.81, "Lam": [1.0]},
    "mimo3": {"coeffs": [1.0, 2.0, 3.0], "input_gain": 1.0, "literal_state_disturbance": False, "Lam": [1.0]},
}
MODEL_DIMS = {"pendulum": (2, 1), "mimo3": (3, 1)}

UNCERTAINTY_DEFAULTS = {
    "none": {},
    "sinusoid": {"amplitude": 0.1, "omega": 1.0},
    "random": {"low": -1.0, "high": 1.0, "hold": 0.1, "seed": 0},
    "basis": {"theta": None, "basis": None},
}

TOP_LEVEL = ("name", "graph", "reference", "agents", "uncertainty", "mode", "basis", "gains", "Q", "lambda0",
             "saturation", "integration", "initial", "warm_start", "metrics")


@dataclass
class ScenarioConfig:
    name: str
    graph: dict
    reference: dict
    agents: dict
    uncertainty: dict
    mode: str
    basis: list
    gains: dict
    Q: list
    lambda0: float
    saturation: dict
    integration: dict
    initial: dict
    warm_start: bool
    metrics: dict
    base_dir: str = field(default=".", compare=False, repr=False)

    def to_dict(self):
        return {k: copy.deepcopy(getattr(self, k)) for k in TOP_LEVEL}

    @property
    def n_agents(self):
        return len(self.graph["adjacency"]) if "adjacency" in self.graph else self.graph["tree"]["n_agents"]

    @property
    def dims(self):
        return MODEL_DIMS[self.reference["model"]]


# ---------------------------------------------------------------------------
# small validators


def _num(value, where, positive=False, nonneg=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(where, f"expected a number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        raise ValidationError(where, "must be finite")
    if positive and value <= 0:
        raise ValidationError(where, "must be positive")
    if nonneg and value < 0:
        raise ValidationError(where, "must be non-negative")
    return value


def _int(value, where, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(where, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ValidationError(where, f"must be at least {minimum}")
    return value


def _vector(value, where, length=None):
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise ValidationError(where, "expected a list of numbers")
    if length is not None and len(value) != length:
        raise ValidationError(where, f"expected {length} entries, got {len(value)}")
    return [float(v) for v in value]


def _matrix(value, where, shape=None):
    if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
        raise ValidationError(where, "expected a list of rows")
    rows = [_vector(r, where) for r in value]
    if len({len(r) for r in rows}) != 1:
        raise ValidationError(where, "rows have different lengths")
    if shape is not None and (len(rows), len(rows[0])) != tuple(shape):
        raise ValidationError(where, f"expected shape {tuple(shape)}, got ({len(rows)}, {len(rows[0])})")
    return rows


def _keys(section, allowed, where):
    if not isinstance(section, dict):
        raise ParseError(f"{where}: expected an object")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ParseError(f"{where}: unknown field(s) {unknown}")


def _seed(value, where):
    return _int(value, where, 0)


# ---------------------------------------------------------------------------
# section normalizers


def _norm_graph(doc):
    _keys(doc, ("adjacency", "tree", "leader"), "graph")
    leader = _int(doc.get("leader", 1), "graph.leader", 1)
    if ("adjacency" in doc) == ("tree" in doc):
        raise ValidationError("graph", "give exactly one of 'adjacency' or 'tree'")
    if "tree" in doc:
        tree = doc["tree"]
        _keys(tree, ("n_agents", "branching"), "graph.tree")
        out = {"tree": {"n_agents": _int(tree.get("n_agents"), "graph.tree.n_agents", 1),
                        "branching": _int(tree.get("branching", 2), "graph.tree.branching", 1)},
               "leader": leader}
        adjacency = tree_adjacency(out["tree"]["n_agents"], out["tree"]["branching"])
    else:
        rows = doc["adjacency"]
        if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
            raise ValidationError("graph.adjacency", "expected a list of rows")
        out = {"adjacency": [[v for v in r] for r in rows], "leader": leader}
        adjacency = rows
    try:
        validate_graph(np.array(adjacency), leader)
    except (GraphError, ValueError) as exc:
        raise ValidationError("graph", str(exc)) from exc
    return out


def _norm_model_params(model, params, where):
    if model not in MODEL_DEFAULTS:
        raise ValidationError(f"{where}.model", f"unknown model {model!r}; expected one of {sorted(MODEL_DEFAULTS)}")
    params = {} if params is None else params
    _keys(params, MODEL_DEFAULTS[model], f"{where}.params")
    out = copy.deepcopy(MODEL_DEFAULTS[model])
    for key, val in params.items():
        if key == "coeffs":
            out[key] = _vector(val, f"{where}.params.coeffs", 3)
        elif key == "Lam":
            out[key] = _vector(val, f"{where}.params.Lam", MODEL_DIMS[model][1])
            if any(v <= 0 for v in out[key]):
                raise ValidationError(f"{where}.params.Lam", "entries must be positive")
        elif key == "literal_state_disturbance":
            if not isinstance(val, bool):
                raise ValidationError(f"{where}.params.{key}", "expected true or false")
            out[key] = val
        else:
            out[key] = _num(val, f"{where}.params.{key}")
    return out


def _norm_uncertainty(doc, where, p):
    if doc is None:
        doc = {"kind": "none"}
    if not isinstance(doc, dict):
        raise ParseError(f"{where}: expected an object")
    kind = doc.get("kind", "none")
    if kind not in UNCERTAINTY_DEFAULTS:
        raise ValidationError(f"{where}.kind", f"unknown uncertainty kind {kind!r}")
    _keys(doc, ("kind", *UNCERTAINTY_DEFAULTS[kind]), where)
    out = {"kind": kind, **copy.deepcopy(UNCERTAINTY_DEFAULTS[kind])}
    out.update({k: v for k, v in doc.items() if k != "kind"})
    if kind == "sinusoid":
        out["amplitude"] = _num(out["amplitude"], f"{where}.amplitude")
        out["omega"] = _num(out["omega"], f"{where}.omega")
    elif kind == "random":
        out["low"] = _num(out["low"], f"{where}.low")
        out["high"] = _num(out["high"], f"{where}.high")
        out["hold"] = _num(out["hold"], f"{where}.hold", positive=True)
        out["seed"] = _seed(out["seed"], f"{where}.seed")
        if out["high"] < out["low"]:
            raise ValidationError(where, "high must be >= low")
    elif kind == "basis":
        if not isinstance(out["basis"], list) or not all(isinstance(b, str) for b in out["basis"]):
            raise ValidationError(f"{where}.basis", "expected a list of basis names")
        out["theta"] = _matrix(out["theta"], f"{where}.theta", (len(out["basis"]), p))
    return out


def _norm_policy(doc, ref_model, ref_params, base_dir):
    n, p = MODEL_DIMS[ref_model]
    if doc is None:
        if ref_model == "pendulum":
            doc = {"kind": "pendulum_surrogate"}
        else:
            doc = {"kind": "affine", "K": [[0.0] * n], "x_set": [0.0] * n, "u_ff": [0.0] * p}
    if not isinstance(doc, dict):
        raise ParseError("reference.policy: expected an object")
    if "file" in doc:
        _keys(doc, ("file",), "reference.policy")
        path = Path(base_dir) / doc["file"]
        pol = load_policy(path)
        if (pol.n, pol.p) != (n, p):
            raise ValidationError("reference.policy.file", f"policy is {pol.p}x{pol.n}, reference needs {p}x{n}")
        return {"file": str(doc["file"])}
    kind = doc.get("kind")
    if kind == "pendulum_surrogate":
        if ref_model != "pendulum":
            raise ValidationError("reference.policy.kind", "pendulum_surrogate needs a pendulum reference")
        _keys(doc, ("kind", "setpoint", "k1", "k2", "schedule", "mass", "length", "damping", "gravity"),
              "reference.policy")
        out = {"kind": kind, "setpoint": 0.0, "k1": 4.0, "k2": 4.0, "schedule": [],
               "mass": ref_params["mass"], "length": ref_params["length"], "damping": ref_params["damping"],
               "gravity": ref_params["gravity"]}
        out.update(doc)
        for key in ("setpoint", "k1", "k2", "mass", "length", "damping", "gravity"):
            out[key] = _num(out[key], f"reference.policy.{key}")
        out["schedule"] = [_vector(s, "reference.policy.schedule", 2) for s in out["schedule"]]
        try:
            policy_from_dict(out)
        except ValueError as exc:
            raise ValidationError("reference.policy", str(exc)) from exc
        return out
    if kind == "affine":
        _keys(doc, ("kind", "K", "x_set", "u_ff"), "reference.policy")
        return {"kind": "affine", "K": _matrix(doc.get("K"), "reference.policy.K", (p, n)),
                "x_set": _vector(doc.get("x_set"), "reference.policy.x_set", n),
                "u_ff": _vector(doc.get("u_ff"), "reference.policy.u_ff", p)}
    raise ValidationError("reference.policy.kind", f"unknown policy kind {kind!r}")


def _norm_agents(doc, n_agents, model_hint):
    _keys(doc, ("generator", "list"), "agents")
    if ("generator" in doc) == ("list" in doc):
        raise ValidationError("agents", "give exactly one of 'generator' or 'list'")
    if "generator" in doc:
        gen = doc["generator"]
        _keys(gen, ("model", "base", "range", "seed", "n_agents"), "agents.generator")
        model = gen.get("model", model_hint)
        rng = _vector(gen.get("range", [1.0, 1.0]), "agents.generator.range", 2)
        if rng[0] > rng[1] or rng[0] <= 0:
            raise ValidationError("agents.generator.range", "need 0 < lo <= hi")
        count = _int(gen.get("n_agents", n_agents), "agents.generator.n_agents", 1)
        if count != n_agents:
            raise ValidationError("agents.generator.n_agents", f"graph has {n_agents} agents, generator makes {count}")
        return {"generator": {"model": model, "base": _norm_model_params(model, gen.get("base"), "agents.generator"),
                              "range": rng, "seed": _seed(gen.get("seed", 0), "agents.generator.seed"),
                              "n_agents": count}}
    items = doc["list"]
    if not isinstance(items, list) or len(items) != n_agents:
        raise ValidationError("agents.list", f"expected {n_agents} agent entries")
    out = []
    for k, item in enumerate(items):
        where = f"agents.list[{k}]"
        _keys(item, ("model", "params", "uncertainty"), where)
        model = item.get("model", model_hint)
        entry = {"model": model, "params": _norm_model_params(model, item.get("params"), where)}
        if "uncertainty" in item:
            entry["uncertainty"] = _norm_uncertainty(item["uncertainty"], f"{where}.uncertainty", MODEL_DIMS[model][1])
        out.append(entry)
    return {"list": out}


def _norm_gains(doc, n, p, l):
    doc = {} if doc is None else doc
    mats = ("Gamma_m", "Gamma_r", "Gamma_ij", "Gamma_phi", "Gamma_theta", "Gamma_p")
    _keys(doc, ("gamma_k", "gamma_theta", "gamma_p", *mats), "gains")
    out = {"gamma_k": _num(doc.get("gamma_k", 10.0), "gains.gamma_k", positive=True),
           "gamma_theta": _num(doc.get("gamma_theta", 5.0), "gains.gamma_theta", positive=True),
           "gamma_p": _num(doc.get("gamma_p", 1.0), "gains.gamma_p", positive=True)}
    sizes = {"Gamma_m": n, "Gamma_r": p, "Gamma_ij": n, "Gamma_phi": l, "Gamma_theta": l, "Gamma_p": p}
    for name in mats:
        if name in doc:
            out[name] = _matrix(doc[name], f"gains.{name}", (sizes[name], sizes[name]))
    try:
        build_gains(out, n, p, l)
    except ValueError as exc:
        raise ValidationError("gains", str(exc)) from exc
    return out


def build_gains(doc, n, p, l):
    base = AdaptationGains.from_scalars(n, p, max(l, 1), doc["gamma_k"], doc["gamma_theta"], doc["gamma_p"])
    over = {name: np.array(doc[name]) for name in ("Gamma_m", "Gamma_r", "Gamma_ij", "Gamma_phi", "Gamma_theta",
                                                    "Gamma_p") if name in doc}
    if not over:
        return base
    fields = {name: getattr(base, name) for name in base.__dataclass_fields__}
    fields.update(over)
    return AdaptationGains(**fields)


def _norm_initial(doc, n, n_agents):
    doc = {} if doc is None else doc
    _keys(doc, ("reference", "agents"), "initial")
    ref = _vector(doc.get("reference", [0.0] * n), "initial.reference", n)
    agents = doc.get("agents", {"low": 0.0, "high": 0.0, "seed": 0})
    if isinstance(agents, list):
        rows = _matrix(agents, "initial.agents", (n_agents, n))
        return {"reference": ref, "agents": rows}
    _keys(agents, ("low", "high", "seed"), "initial.agents")
    bounds = {}
    for key in ("low", "high"):
        val = agents.get(key, 0.0)
        bounds[key] = [_num(val, f"initial.agents.{key}")] * n if not isinstance(val, list) else \
            _vector(val, f"initial.agents.{key}", n)
    if any(lo > hi for lo, hi in zip(bounds["low"], bounds["high"])):
        raise ValidationError("initial.agents", "low must not exceed high")
    return {"reference": ref, "agents": {**bounds, "seed": _seed(agents.get("seed", 0), "initial.agents.seed")}}


def _norm_integration(doc):
    doc = {} if doc is None else doc
    _keys(doc, ("dt", "t_final", "record_every", "guard"), "integration")
    return {"dt": _num(doc.get("dt", 1e-3), "integration.dt", positive=True),
            "t_final": _num(doc.get("t_final", 20.0), "integration.t_final", positive=True),
            "record_every": _int(doc.get("record_every", 10), "integration.record_every", 1),
            "guard": _num(doc.get("guard", 1e6), "integration.guard", positive=True)}


def _norm_metrics(doc):
    doc = {} if doc is None else doc
    _keys(doc, ("tail_fraction", "settle_eps", "uub_radius"), "metrics")
    tail = _num(doc.get("tail_fraction", 0.25), "metrics.tail_fraction", positive=True)
    if tail > 1:
        raise ValidationError("metrics.tail_fraction", "must be at most 1")
    radius = doc.get("uub_radius")
    return {"tail_fraction": tail, "settle_eps": _num(doc.get("settle_eps", 0.05), "metrics.settle_eps", positive=True),
            "uub_radius": None if radius is None else _num(radius, "metrics.uub_radius", positive=True)}


# ---------------------------------------------------------------------------
# parse


def _load(source):
    if isinstance(source, dict):
        return copy.deepcopy(source), "."
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        path = Path(source)
        text = path.read_text(encoding="utf-8")
        base = str(path.parent)
    else:
        text, base = source, "."
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError("scenario must be a JSON object")
    return doc, base


def parse_config(source, base_dir=None):
    """Parse a scenario from a path, a JSON string or an already-decoded dict."""
    doc, base = _load(source)
    base = base_dir if base_dir is not None else base
    _keys(doc, TOP_LEVEL, "scenario")
    for req in ("graph", "agents", "mode"):
        if req not in doc:
            raise ValidationError(req, "required field is missing")

    mode = doc["mode"]
    if mode not in MODES:
        raise ValidationError("mode", f"unknown mode {mode!r}; expected one of {sorted(MODES)}")
    graph = _norm_graph(doc["graph"])
    n_agents = len(graph["adjacency"]) if "adjacency" in graph else graph["tree"]["n_agents"]

    ref_doc = doc.get("reference", {})
    _keys(ref_doc, ("model", "params", "policy"), "reference")
    ref_model = ref_doc.get("model", "pendulum")
    ref_params = _norm_model_params(ref_model, ref_doc.get("params"), "reference")
    ref_params.pop("Lam")
    ref_params.pop("literal_state_disturbance", None)
    reference = {"model": ref_model, "params": ref_params,
                 "policy": _norm_policy(ref_doc.get("policy"), ref_model, ref_params, base)}
    n, p = MODEL_DIMS[ref_model]

    agents = _norm_agents(doc["agents"], n_agents, ref_model)
    models = [agents["generator"]["model"]] if "generator" in agents else [a["model"] for a in agents["list"]]
    if any(MODEL_DIMS[m] != (n, p) for m in models):
        raise ValidationError("agents", "agent and reference dimensions differ")

    basis = doc.get("basis", ["sin_t"])
    if not isinstance(basis, list) or not all(isinstance(b, str) for b in basis):
        raise ValidationError("basis", "expected a list of basis names")

    saturation = doc.get("saturation")
    if saturation is not None:
        _keys(saturation, ("u_max",), "saturation")
        u_max = saturation.get("u_max")
        u_max = [_num(u_max, "saturation.u_max", positive=True)] * p if not isinstance(u_max, list) else \
            _vector(u_max, "saturation.u_max", p)
        if any(v <= 0 for v in u_max):
            raise ValidationError("saturation.u_max", "bounds must be positive")
        saturation = {"u_max": u_max}
        if mode not in SATURATING_MODES:
            raise ValidationError("saturation", f"saturation requires mode dmsac_rl or adaptive_no_antiwindup, "
                                                f"got {mode!r}")
    elif mode in SATURATING_MODES:
        raise ValidationError("saturation", f"mode {mode!r} needs a saturation block")

    q = doc.get("Q")
    warm = doc.get("warm_start", False)
    if not isinstance(warm, bool):
        raise ValidationError("warm_start", "expected true or false")
    name = doc.get("name", "scenario")
    if not isinstance(name, str) or not name:
        raise ValidationError("name", "expected a non-empty string")
    cfg = ScenarioConfig(
        name=name,
        graph=graph,
        reference=reference,
        agents=agents,
        uncertainty=_norm_uncertainty(doc.get("uncertainty"), "uncertainty", p),
        mode=mode,
        basis=list(basis),
        gains=_norm_gains(doc.get("gains"), n, p, len(basis)),
        Q=np.eye(n).tolist() if q is None else _matrix(q, "Q", (n, n)),
        lambda0=_num(doc.get("lambda0", 2.0), "lambda0", positive=True),
        saturation=saturation,
        integration=_norm_integration(doc.get("integration")),
        initial=_norm_initial(doc.get("initial"), n, n_agents),
        warm_start=warm,
        metrics=_norm_metrics(doc.get("metrics")),
        base_dir=str(base),
    )
    return cfg


def override_seeds(cfg, seed):
    """Copy of ``cfg`` with every seed replaced by ``seed``."""
    doc = cfg.to_dict()
    if "generator" in doc["agents"]:
        doc["agents"]["generator"]["seed"] = seed
    if doc["uncertainty"]["kind"] == "random":
        doc["uncertainty"]["seed"] = seed
    if isinstance(doc["initial"]["agents"], dict):
        doc["initial"]["agents"]["seed"] = seed
    return parse_config(doc, base_dir=cfg.base_dir)


# ---------------------------------------------------------------------------
# instantiate


@dataclass
class Setup:
    network_kwargs: dict
    x_m0: np.ndarray
    x0: np.ndarray
    events: list


def _make_uncertainty(spec, p, index):
    kind = spec["kind"]
    if kind == "none":
        return NoUncertainty(p)
    if kind == "sinusoid":
        return Sinusoid(spec["amplitude"], spec["omega"], p)
    if kind == "random":
        # independent stream per agent
        return RandomPiecewiseConstant(spec["low"], spec["high"], spec["hold"], spec["seed"] + index, p)
    return BasisWeighted(np.array(spec["theta"]), tuple(spec["basis"]))


def _builder_kwargs(model, params):
    kwargs = dict(params)
    kwargs["Lam"] = np.diag(kwargs.pop("Lam"))
    if model == "mimo3":
        kwargs["coeffs"] = tuple(kwargs["coeffs"])
    return kwargs


def build_reference(cfg):
    ref = cfg.reference
    params = ref["params"]
    if ref["model"] == "pendulum":
        a, b = pendulum_matrices(params["mass"], params["length"], params["damping"], params["gravity"])
        nl_map = SINE
    else:
        a, b = mimo3_matrices(tuple(params["coeffs"]), params["input_gain"])
        nl_map = LINEAR
    if "file" in ref["policy"]:
        policy = load_policy(Path(cfg.base_dir) / ref["policy"]["file"])
    else:
        policy = policy_from_dict(ref["policy"])
    return ReferenceModel(a, b, map=nl_map, policy=policy, params=dict(params))


def build_agents(cfg):
    _, p = cfg.dims
    if "generator" in cfg.agents:
        gen = cfg.agents["generator"]
        sampled = sample_heterogeneous_network(gen["model"], _builder_kwargs(gen["model"], gen["base"]),
                                               gen["range"], gen["seed"], gen["n_agents"])
        return [replace(m, uncertainty=_make_uncertainty(cfg.uncertainty, p, k)) for k, m in enumerate(sampled)]
    out = []
    for k, item in enumerate(cfg.agents["list"]):
        kwargs = _builder_kwargs(item["model"], item["params"])
        kwargs["uncertainty"] = _make_uncertainty(item.get("uncertainty", cfg.uncertainty), p, k)
        out.append(BUILDERS[item["model"]](**kwargs))
    return out


def build_graph(cfg):
    g = cfg.graph
    adjacency = tree_adjacency(g["tree"]["n_agents"], g["tree"]["branching"]) if "tree" in g else g["adjacency"]
    return validate_graph(np.array(adjacency), g["leader"])


def instantiate(cfg):
    """Concrete models, graph and initial conditions for a parsed scenario."""
    n, p = cfg.dims
    graph = build_graph(cfg)
    reference = build_reference(cfg)
    agents = build_agents(cfg)
    init = cfg.initial
    if isinstance(init["agents"], dict):
        rng = np.random.default_rng(init["agents"]["seed"])
        x0 = rng.uniform(init["agents"]["low"], init["agents"]["high"], size=(graph.n_agents, n))
    else:
        x0 = np.array(init["agents"], dtype=float)
    events = []
    pol = cfg.reference["policy"]
    for t0, sp in pol.get("schedule", []):
        events.append((float(t0), f"setpoint {sp:g}"))
    kwargs = {"agents": agents, "reference": reference, "graph": graph, "mode": cfg.mode, "basis": tuple(cfg.basis),
              "gains": build_gains(cfg.gains, n, p, len(cfg.basis)),
              "Q": np.array(cfg.Q), "lambda0": cfg.lambda0,
              "u_max": None if cfg.saturation is None else np.array(cfg.saturation["u_max"])}
    return Setup(network_kwargs=kwargs, x_m0=np.array(init["reference"]), x0=x0, events=events)


def check_config(cfg):
    """Run every setup check (graph, matching, decomposition, Hurwitz) without integrating."""
    from .simulation import build_network

    return build_network(**instantiate(cfg).network_kwargs)
