"""Shipped scenarios, one per experiment figure.

Horizons, step sizes, adaptation rates and initial conditions are choices of
this package, fixed by regression runs.
"""

import copy

TREE12 = {"tree": {"n_agents": 12, "branching": 2}, "leader": 1}
PENDULUM = {"mass": 1.0, "length": 1.0, "damping": 0.0, "gravity": 9.81}


def _pendulum(name, mode, spread, uncertainty, policy=None, t_final=20.0, basis=("sin_t",), lambda0=2.0,
              uub_radius=0.1):
    return {
        "name": name,
        "graph": copy.deepcopy(TREE12),
        "reference": {"model": "pendulum", "params": dict(PENDULUM),
                      "policy": policy or {"kind": "pendulum_surrogate", "setpoint": 0.0, "k1": 4.0, "k2": 4.0}},
        "agents": {"generator": {"model": "pendulum", "base": dict(PENDULUM), "range": list(spread), "seed": 42,
                                 "n_agents": 12}},
        "uncertainty": uncertainty,
        "mode": mode,
        "basis": list(basis),
        "gains": {"gamma_k": 10.0, "gamma_theta": 5.0, "gamma_p": 1.0},
        "lambda0": lambda0,
        "integration": {"dt": 1e-3, "t_final": t_final, "record_every": 10},
        "initial": {"reference": [0.5, 0.0], "agents": {"low": [-0.3, 0.0], "high": [0.3, 0.0], "seed": 0}},
        "metrics": {"tail_fraction": 0.25, "settle_eps": 0.05, "uub_radius": uub_radius},
    }


def _mimo(name, mode):
    # open-loop unstable chain; u_max leaves about 1.5x the largest steady-state demand
    base = {"coeffs": [-0.5, 1.0, 3.0], "input_gain": 1.0}
    return {
        "name": name,
        "graph": copy.deepcopy(TREE12),
        "reference": {"model": "mimo3", "params": {"coeffs": [1.0, 2.0, 3.0], "input_gain": 1.0},
                      "policy": {"kind": "affine", "K": [[-1.0, -1.0, -1.0]], "x_set": [2.0, 0.0, 0.0],
                                 "u_ff": [2.0]}},
        "agents": {"generator": {"model": "mimo3", "base": base, "range": [0.75, 1.25], "seed": 42, "n_agents": 12}},
        "uncertainty": {"kind": "sinusoid", "amplitude": 0.1, "omega": 1.0},
        "mode": mode,
        "basis": ["sin_t"],
        "gains": {"gamma_k": 100.0, "gamma_theta": 5.0, "gamma_p": 10.0},
        "saturation": {"u_max": 2.0},
        "integration": {"dt": 1e-3, "t_final": 80.0, "record_every": 10},
        "initial": {"reference": [0.0, 0.0, 0.0], "agents": {"low": -1.0, "high": 1.0, "seed": 0}},
        "metrics": {"tail_fraction": 0.25, "settle_eps": 0.05, "uub_radius": 0.1},
    }


SINUSOID = {"kind": "sinusoid", "amplitude": 0.1, "omega": 1.0}
TRACKING = {"kind": "pendulum_surrogate", "setpoint": 0.0, "k1": 4.0, "k2": 4.0,
            "schedule": [[0.0, 0.5], [10.0, -0.5], [20.0, 0.5]]}

PRESETS = {
    "fig4_rl_homogeneous": _pendulum("fig4_rl_homogeneous", "rl_only", (1.0, 1.0), {"kind": "none"}),
    "fig5_rl_only_heterogeneous": _pendulum("fig5_rl_only_heterogeneous", "rl_only", (0.75, 1.25), SINUSOID),
    "fig6_dmrac_heterogeneous_sinusoid": _pendulum("fig6_dmrac_heterogeneous_sinusoid", "dmrac_rl", (0.75, 1.25),
                                                   SINUSOID),
    "fig7_dmrac_random_uncertainty": _pendulum(
        "fig7_dmrac_random_uncertainty", "dmrac_rl", (0.75, 1.25),
        {"kind": "random", "low": -1.0, "high": 1.0, "hold": 0.5, "seed": 7}, basis=("one",),
        lambda0=4.0, uub_radius=0.5),
    "fig8_tracking_multistep": _pendulum("fig8_tracking_multistep", "dmrac_rl", (0.75, 1.25), SINUSOID,
                                         policy=TRACKING, t_final=30.0),
    "fig9_dmsac_mimo_saturated": _mimo("fig9_dmsac_mimo_saturated", "dmsac_rl"),
    "fig10_adaptive_no_antiwindup": _mimo("fig10_adaptive_no_antiwindup", "adaptive_no_antiwindup"),
    "fig11_magnitude_comparison": _mimo("fig11_magnitude_comparison", "dmsac_rl"),
}

ALIASES = {"fig6_heterogeneous_dmrac": "fig6_dmrac_heterogeneous_sinusoid"}

# presets that run the same scenario under several modes and compare them
PAIRED = {"fig11_magnitude_comparison": ("dmsac_rl", "adaptive_no_antiwindup")}

# presets whose recorded outcome is a divergence
EXPECTED_DIVERGENCE = ("fig5_rl_only_heterogeneous", "fig10_adaptive_no_antiwindup")


def preset_names():
    return sorted(PRESETS)


def get_preset(name):
    """Raw scenario document for a preset name or alias (a fresh copy)."""
    key = ALIASES.get(name, name)
    if key not in PRESETS:
        raise KeyError(name)
    return copy.deepcopy(PRESETS[key])


def canonical_name(name):
    return ALIASES.get(name, name)
