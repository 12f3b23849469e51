"""Flat dotted-key configuration for the experiment harness.

Files are plain text, one ``section.key = value`` per line, ``#`` comments.
Values are whitespace-separated scalars; multi-token values become lists.
Unknown keys are rejected so typos fail fast.  ``default_config()`` holds
every knob with its documented default; ``write_template`` emits a fully
commented file.
"""

from __future__ import annotations

import copy

DEFAULTS = {
    # time discretization: 50 Hz measurement rate, 7 steps per interval,
    # 11 intervals per trajectory
    "grid.dt": 0.02,
    "grid.K": 7,
    "grid.Kbar": 11,
    # prior covariance P(0) = scale * I
    "prior.scale": 0.3,
    # bundling order (number of Lie derivatives) for the lie path
    "bundling.r": 3,
    "bundling.K_list": [2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14],
    # quadrotor parameters
    "dynamics.J": [0.007, 0.007, 0.012],
    "dynamics.gravity": 9.81,
    "dynamics.sigma_acc_proc": 0.2,
    "dynamics.sigma_torque_proc": 0.05,
    "dynamics.sigma_acc_meas": 0.1,
    "dynamics.sigma_gyro_meas": 0.02,
    # forward-mounted orthographic camera
    "camera.theta_max_deg": 45.0,
    # landmark cloud: uniform in an axis-aligned box
    "landmarks.count": 50,
    "landmarks.center": [1.5, 0.0, 0.0],
    "landmarks.halfwidth": [0.75, 0.75, 0.5],
    # trial generation
    "trials.count": 50,
    "trials.rho": [0.05, 0.10, 0.25],
    "trials.goal_radius": 0.5,
    "trials.start_speed": 0.1,
    "trials.start_rate": 0.2,
    # conventional objective
    "conventional.control_weight": [1.0, 1.0, 1.0, 1.0],
    "conventional.goal_weight": 10.0,
    # baseline and refinement solver
    "baseline.gtol": 1e-6,
    "baseline.maxiter": 500,
    "refine.max_outer": 20,
    "refine.inner_maxiter": 60,
    "refine.penalty0": 1.0,
    "refine.penalty_growth": 10.0,
    "refine.c_max": 25.0,
    "refine.tau_max": 0.5,
    # objectives compared in the Pareto batch
    "pareto.methods": ["pc-exact", "pc-lie", "max-visibility", "max-gramian"],
    # covariance-threshold analysis: violation when the position trace exceeds
    # threshold_factor times its initial value
    "safety.threshold_factor": 3.0,
    # timing experiment
    "timing.N_list": [10, 20, 50, 100],
    "timing.reps": 10,
}

_COMMENTS = {
    "grid.dt": "measurement period in seconds (50 Hz default)",
    "grid.K": "measurement steps per bundling interval",
    "grid.Kbar": "number of intervals per trajectory",
    "prior.scale": "initial error covariance is scale * identity",
    "bundling.r": "Lie-derivative order of the bundled approximation",
    "bundling.K_list": "interval lengths swept by the bundling experiment",
    "dynamics.J": "diagonal body inertia (kg m^2)",
    "dynamics.gravity": "gravitational acceleration magnitude (m/s^2)",
    "camera.theta_max_deg": "half-angle of the conical field of view",
    "landmarks.count": "landmarks per generated cloud",
    "trials.count": "number of seeded trials in the Pareto batch",
    "trials.rho": "allowed fractional growth of the conventional cost",
    "safety.threshold_factor": "violation threshold as a multiple of the initial position-covariance trace",
    "timing.N_list": "landmark counts for the timing sweep",
    "timing.reps": "wall-clock repetitions per timing cell",
}


def default_config():
    return copy.deepcopy(DEFAULTS)


def _parse_token(tok: str):
    for cast in (int, float):
        try:
            return cast(tok)
        except ValueError:
            pass
    if tok.lower() in ("true", "false"):
        return tok.lower() == "true"
    return tok


def _parse_value(text: str):
    toks = text.split()
    if not toks:
        raise ValueError("empty value")
    vals = [_parse_token(t) for t in toks]
    return vals[0] if len(vals) == 1 else vals


def _coerce(key, val, ref):
    """Align a parsed value with the type of the default."""
    if isinstance(ref, list):
        val = val if isinstance(val, list) else [val]
        if ref and isinstance(ref[0], float):
            return [float(v) for v in val]
        return val
    if isinstance(ref, bool):
        if not isinstance(val, bool):
            raise ValueError(f"{key}: expected true/false, got {val!r}")
        return val
    if isinstance(ref, int) and not isinstance(ref, bool):
        if isinstance(val, float) and not val.is_integer():
            raise ValueError(f"{key}: expected integer, got {val!r}")
        return int(val)
    if isinstance(ref, float):
        return float(val)
    return val


def parse_config(text: str, base=None):
    """Parse config text over the defaults; unknown keys raise ValueError."""
    cfg = copy.deepcopy(base) if base is not None else default_config()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, rhs = line.partition("=")
        key = key.strip()
        if key not in cfg:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        cfg[key] = _coerce(key, _parse_value(rhs.strip()), DEFAULTS[key])
    return cfg


def load_config(path=None, overrides=None):
    cfg = default_config()
    if path is not None:
        with open(path) as fh:
            cfg = parse_config(fh.read(), cfg)
    for key, val in (overrides or {}).items():
        if key not in cfg:
            raise ValueError(f"unknown config key {key!r}")
        cfg[key] = _coerce(key, val, DEFAULTS[key])
    return cfg


def write_template(path):
    """Emit a fully commented config file with every default."""
    lines = ["# experiment harness configuration (flat dotted keys)", ""]
    for key, val in DEFAULTS.items():
        if key in _COMMENTS:
            lines.append(f"# {_COMMENTS[key]}")
        if isinstance(val, list):
            txt = " ".join(str(v) for v in val)
        else:
            txt = str(val)
        lines.append(f"{key} = {txt}")
        lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))
