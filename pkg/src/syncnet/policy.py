"""Reference-model policies producing u_m = pi(x_m, t).

The trained network the method assumes is replaced by deterministic stand-ins:
an affine state feedback and a feedback-linearizing pendulum controller that
regulates the reference pendulum to a (possibly time-scheduled) setpoint.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, ParseError
from .linalg import as_matrix


@dataclass(frozen=True)
class AffinePolicy:
    """u = K (x - x_set) + u_ff."""

    K: np.ndarray
    x_set: np.ndarray
    u_ff: np.ndarray
    source: str = None

    def __post_init__(self):
        k = as_matrix(self.K, "K")
        x_set = np.asarray(self.x_set, dtype=float).reshape(-1)
        u_ff = np.asarray(self.u_ff, dtype=float).reshape(-1)
        if k.shape != (u_ff.size, x_set.size):
            raise DimensionMismatch(f"K has shape {k.shape}, expected ({u_ff.size}, {x_set.size})")
        object.__setattr__(self, "K", k)
        object.__setattr__(self, "x_set", x_set)
        object.__setattr__(self, "u_ff", u_ff)

    @property
    def n(self):
        return self.x_set.size

    @property
    def p(self):
        return self.u_ff.size

    def to_dict(self):
        return {"kind": "affine", "K": self.K.tolist(), "x_set": self.x_set.tolist(), "u_ff": self.u_ff.tolist()}


@dataclass(frozen=True)
class PendulumSurrogate:
    """Feedback linearization of the reference pendulum onto a PD law around ``setpoint``.

    ``schedule`` is a sequence of ``(t_start, setpoint)`` pairs; the most recent
    entry with ``t_start <= t`` overrides ``setpoint``.
    """

    setpoint: float = 0.0
    k1: float = 4.0
    k2: float = 4.0
    mass: float = 1.0
    length: float = 1.0
    damping: float = 0.0
    gravity: float = 9.81
    schedule: tuple = ()

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("surrogate gains k1, k2 must be positive")
        sched = tuple(sorted((float(t0), float(sp)) for t0, sp in self.schedule))
        object.__setattr__(self, "schedule", sched)

    n = 2
    p = 1

    def setpoint_at(self, t):
        theta_d = self.setpoint
        for t0, sp in self.schedule:
            if t0 <= t:
                theta_d = sp
            else:
                break
        return theta_d

    def to_dict(self):
        return {"kind": "pendulum_surrogate", "setpoint": self.setpoint, "k1": self.k1, "k2": self.k2,
                "mass": self.mass, "length": self.length, "damping": self.damping, "gravity": self.gravity,
                "schedule": [list(s) for s in self.schedule]}


def policy_eval(policy, x_m, t=0.0):
    x_m = np.asarray(x_m, dtype=float).reshape(-1)
    if x_m.size != policy.n:
        raise DimensionMismatch(f"policy expects a state of length {policy.n}, got {x_m.size}")
    if isinstance(policy, AffinePolicy):
        return policy.K @ (x_m - policy.x_set) + policy.u_ff
    if isinstance(policy, PendulumSurrogate):
        theta, omega = x_m
        inertia = policy.mass * policy.length**2
        v = -policy.k1 * (theta - policy.setpoint_at(t)) - policy.k2 * omega
        tau = inertia * v - policy.mass * policy.gravity * policy.length * math.sin(theta) + policy.damping * omega
        return np.array([tau])
    raise TypeError(f"unsupported policy {policy!r}")


def policy_from_dict(doc):
    kind = doc.get("kind")
    if kind == "affine":
        missing = [k for k in ("K", "x_set", "u_ff") if k not in doc]
        if missing:
            raise ParseError(f"affine policy is missing field(s): {', '.join(missing)}")
        try:
            return AffinePolicy(np.asarray(doc["K"], dtype=float), doc["x_set"], doc["u_ff"], source=doc.get("source"))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, DimensionMismatch):
                raise
            raise ParseError(f"malformed affine policy: {exc}") from exc
    if kind == "pendulum_surrogate":
        fields = ("setpoint", "k1", "k2", "mass", "length", "damping", "gravity", "schedule")
        unknown = set(doc) - set(fields) - {"kind"}
        if unknown:
            raise ParseError(f"unknown pendulum_surrogate field(s): {sorted(unknown)}")
        return PendulumSurrogate(**{k: doc[k] for k in fields if k in doc})
    raise ParseError(f"unknown policy kind {kind!r}")


def load_policy(path):
    """Read an affine policy document ``{"kind": "affine", "K": ..., "x_set": ..., "u_ff": ...}``."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: policy document must be a JSON object")
    doc.setdefault("kind", "affine")
    if doc["kind"] != "affine":
        raise ParseError(f"{path}: only affine policy files are supported")
    doc["source"] = str(path)
    return policy_from_dict(doc)
