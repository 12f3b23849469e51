"""Trajectory objectives over piecewise-constant control sequences.

All objectives are scalar functions of the flat control vector
(4 entries per interval: thrust then body moments).  Evaluation is generic
over plain arrays and forward-mode duals, so analytic gradients come from
seeding the controls with identity directions; a central finite-difference
fallback provides the independent check.

Available kinds:

* ``pc-exact``       predicted position covariance, explicit bundling
* ``pc-lie``         predicted position covariance, Lie-Taylor bundling
* ``pc-lie-cond``    same, landmark uncertainty ignored (conditioning)
* ``max-visibility`` negative summed smooth visibility at interval ends
* ``max-gramian``    negative smallest eigenvalue of the accumulated
                     velocity-block measurement information
* ``conventional``   control effort plus terminal goal distance
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dfield

import numpy as np

from . import fwdmode as fm
from .fwdmode import value
from .fwdmode import nullspace_differential  # re-export: gradient junction rule
from .dynamics import DynamicsParams, hover_control, integrate_interval
from .geometry import ERR_DIM, POS, VEL, ControlInput, PlantState, TimeGrid, nominal_estimator
from .interval import IntervalFilter, UpdateOptions, schur_marginalize, symmetrize
from .sensing import LandmarkField, OrthographicSensor

OBJECTIVE_KINDS = ("pc-exact", "pc-lie", "pc-lie-cond", "max-visibility",
                   "max-gramian", "conventional")

FD_STEP = 1e-5


def position_selector():
    """Rows selecting the position block of the 21-dim error covariance."""
    Y = np.zeros((3, ERR_DIM))
    Y[:, POS] = np.eye(3)
    return Y


@dataclass(frozen=True)
class Scenario:
    """Everything an objective needs besides the controls."""

    params: DynamicsParams
    sensor: OrthographicSensor
    grid: TimeGrid
    field: LandmarkField
    x0: PlantState
    P0_scale: float = 0.3
    p_goal: np.ndarray = dfield(default_factory=lambda: np.zeros(3))
    control_weight: np.ndarray = dfield(
        default_factory=lambda: np.array([1.0, 1.0, 1.0, 1.0]))
    goal_weight: float = 10.0

    @property
    def n_controls(self):
        return 4 * self.grid.Kbar

    def prior_information(self):
        return np.eye(ERR_DIM) / self.P0_scale

    def hover(self) -> ControlInput:
        return hover_control(self.params)


@dataclass(frozen=True)
class ObjectiveSpec:
    """Objective kind plus bundling knobs."""

    kind: str
    r: int = 3
    selector: np.ndarray = dfield(default_factory=position_selector)
    visibility: str = "smooth"  # "hard" for evaluation-mode covariance rollouts

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")


@dataclass
class CostReport:
    """Evaluation record, JSON-serializable for the experiment harness."""

    kind: str
    value: float
    per_interval: list
    extras: dict

    def to_json(self):
        return json.dumps({"kind": self.kind, "value": self.value,
                           "per_interval": self.per_interval,
                           "extras": self.extras})


def unflatten_controls(u_flat, Kbar):
    """Flat (4 Kbar,) vector to a list of per-interval ControlInput."""
    return [ControlInput(u_flat[4 * i], u_flat[4 * i + 1:4 * i + 4])
            for i in range(Kbar)]


def _filter_for(scn: Scenario, spec: ObjectiveSpec) -> IntervalFilter:
    if spec.kind == "pc-exact":
        opt = UpdateOptions(path="explicit", aggregate="affine", r=spec.r,
                            visibility=spec.visibility)
    elif spec.kind == "pc-lie-cond":
        opt = UpdateOptions(path="lie", landmark_mode="condition",
                            aggregate="affine", r=spec.r,
                            visibility=spec.visibility)
    else:
        opt = UpdateOptions(path="lie", aggregate="affine", r=spec.r,
                            visibility=spec.visibility)
    return IntervalFilter(scn.params, scn.sensor, scn.grid, opt)


def predicted_covariances(scn: Scenario, controls, filt: IntervalFilter):
    """Error covariances at the end of each interval along the trajectory."""
    S = scn.prior_information()
    x = scn.x0
    covs = []
    for u in controls:
        S, x, _ = filt.update(S, x, u, scn.field)
        covs.append(fm.inv(symmetrize(S)))
    return covs


def eval_pc(scn: Scenario, spec: ObjectiveSpec, u_flat):
    """Sum over intervals of the selected-block covariance trace."""
    controls = unflatten_controls(u_flat, scn.grid.Kbar)
    filt = _filter_for(scn, spec)
    Y = spec.selector
    covs = predicted_covariances(scn, controls, filt)
    total = None
    per = []
    for P in covs:
        c = fm.trace(Y @ P @ Y.T)
        per.append(float(value(c)))
        total = c if total is None else total + c
    return total, per


def eval_max_visibility(scn: Scenario, spec: ObjectiveSpec, u_flat):
    """Negative summed smooth squared visibility at the interval endpoints."""
    controls = unflatten_controls(u_flat, scn.grid.Kbar)
    if not scn.field.is_finite_set:
        raise ValueError("max-visibility requires an explicit landmark set")
    cam = scn.sensor.cam
    x = scn.x0
    total = None
    per = []
    for u in controls:
        states = integrate_interval(x, u, scn.grid.K, scn.grid.dt, scn.params)
        x = states[-1]
        est = nominal_estimator(x, cam.R_cb, cam.t_cb)
        s2 = scn.sensor.visibility_sq(est, scn.field.landmarks)
        c = -fm.asum(s2, axis=-1)
        per.append(float(value(c)))
        total = c if total is None else total + c
    return total, per


def eval_max_gramian(scn: Scenario, spec: ObjectiveSpec, u_flat):
    """Negative smallest eigenvalue of summed velocity-block information.

    Per interval the landmark-marginalized measurement information over the
    initial error is accumulated (zero prior, no propagation weighting) and
    the velocity sub-block extracted; the objective rewards uniformly excited
    velocity directions.
    """
    controls = unflatten_controls(u_flat, scn.grid.Kbar)
    filt = _filter_for(scn, ObjectiveSpec(kind="pc-lie", r=spec.r))
    x = scn.x0
    total = np.zeros((3, 3))
    per = []
    for u in controls:
        data = filt.interval_data(x, u)
        lam = filt.measurement_information(x, u, scn.field, data)
        blk = lam[VEL, VEL]
        per.append(float(np.trace(value(blk))))
        total = total + blk
        x = data.states[-1]
    lam_min, simple = fm.smallest_eigval(total)
    return -lam_min, per, simple


def eval_conventional(scn: Scenario, spec: ObjectiveSpec, u_flat):
    """Weighted control effort around hover plus terminal goal distance."""
    controls = unflatten_controls(u_flat, scn.grid.Kbar)
    u_h = scn.hover().asarray()
    w = scn.control_weight
    dt_int = scn.grid.interval_length
    total = None
    per = []
    x = scn.x0
    for u in controls:
        du = u.asarray() - u_h
        c = dt_int * fm.dot(du * w, du)
        per.append(float(value(c)))
        total = c if total is None else total + c
        x = integrate_interval(x, u, scn.grid.K, scn.grid.dt, scn.params)[-1]
    dp = x.p - scn.p_goal
    c = scn.goal_weight * fm.dot(dp, dp)
    per.append(float(value(c)))
    total = total + c
    return total, per


def evaluate(scn: Scenario, spec: ObjectiveSpec, u_flat, report=False):
    """Scalar objective value (dual-aware); optionally a CostReport."""
    extras = {}
    if spec.kind in ("pc-exact", "pc-lie", "pc-lie-cond"):
        total, per = eval_pc(scn, spec, u_flat)
    elif spec.kind == "max-visibility":
        total, per = eval_max_visibility(scn, spec, u_flat)
    elif spec.kind == "max-gramian":
        total, per, simple = eval_max_gramian(scn, spec, u_flat)
        extras["eig_simple"] = bool(simple)
    else:
        total, per = eval_conventional(scn, spec, u_flat)
    if not report:
        return total
    return total, CostReport(kind=spec.kind, value=float(value(total)),
                             per_interval=per, extras=extras)


def objective_value(scn, spec, u_flat):
    return float(value(evaluate(scn, spec, np.asarray(u_flat, dtype=float))))


def gradient(scn: Scenario, spec: ObjectiveSpec, u_flat, method="analytic"):
    """Gradient of the objective with respect to the flat controls.

    ``analytic`` seeds the controls with identity forward-mode directions;
    ``fd`` is a per-coordinate central difference (relative step 1e-5) kept
    as the independent oracle.  The max-gramian analytic rule requires a
    simple smallest eigenvalue and silently falls back to ``fd`` otherwise.
    """
    u_flat = np.asarray(u_flat, dtype=float)
    if method == "fd":
        return _fd_gradient(scn, spec, u_flat)
    if method != "analytic":
        raise ValueError(f"unknown gradient method {method!r}")
    if spec.kind == "max-gramian":
        _, _, simple = eval_max_gramian(scn, spec, u_flat)
        if not simple:
            import warnings
            warnings.warn("max-gramian smallest eigenvalue is (near-)repeated; "
                          "falling back to finite-difference gradient",
                          RuntimeWarning)
            return _fd_gradient(scn, spec, u_flat)
    u_dual = fm.seed_identity(u_flat)
    out = evaluate(scn, spec, u_dual)
    if not isinstance(out, fm.DArr):
        return np.zeros_like(u_flat)
    return np.asarray(out.tan, dtype=float).reshape(u_flat.shape)


def _fd_gradient(scn, spec, u_flat):
    g = np.zeros_like(u_flat)
    for i in range(u_flat.size):
        h = FD_STEP * max(1.0, abs(u_flat[i]))
        up = u_flat.copy(); up[i] += h
        um = u_flat.copy(); um[i] -= h
        g[i] = (objective_value(scn, spec, up)
                - objective_value(scn, spec, um)) / (2.0 * h)
    return g
