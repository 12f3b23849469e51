"""Orthographic landmark observation model, visibility weighting, and
mass-coefficient aggregation.

The camera measures the first two components of the camera-frame landmark
vector ``R_cb R^T (l - p) + t_cb``.  The model is affine in the landmark
coordinates, which enables the aggregated information update over landmark
second moments (see :mod:`obsplan.interval`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import fwdmode as fm
from .fwdmode import matvec, skew, value
from .dynamics import (DynamicsParams, Jp, estimator_motion_jets, jconst,
                       jmv, jT)
from .geometry import (ATT, EXT_ROT, EXT_TRANS, POS, ControlInput,
                       EstimatorState, PlantState, check_rotation,
                       nominal_estimator)

PROJ = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
N_LANDMARK = 3


@dataclass(frozen=True)
class OrthoCamera:
    """Body-to-camera extrinsics and a conical field of view."""

    R_cb: np.ndarray
    t_cb: np.ndarray
    theta_max: float
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        if not (0.0 < self.theta_max <= np.pi):
            raise ValueError("theta_max must lie in (0, pi]")
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-9:
            raise ValueError("optical axis must be a unit vector")
        if not check_rotation(self.R_cb, tol=1e-6):
            raise ValueError("R_cb must be a rotation matrix")


def forward_camera(theta_max=math.radians(45.0)) -> OrthoCamera:
    """Forward-mounted camera: optical +z axis aligned with body +x."""
    R_cb = np.array([[0.0, -1.0, 0.0],
                     [0.0, 0.0, -1.0],
                     [1.0, 0.0, 0.0]])
    return OrthoCamera(R_cb=R_cb, t_cb=np.array([0.02, 0.0, 0.0]),
                       theta_max=theta_max)


@dataclass
class LieJet:
    """Values and Jacobians of the first r Lie derivatives of the observation.

    ``values[j]`` has shape (..., 2); ``H[j]`` (..., 2, 21) is the Jacobian
    with respect to the error coordinates; ``L[j]`` (..., 2, 3) with respect
    to the landmark (present only when landmark directions were requested).
    """

    values: list
    H: list
    L: Optional[list]

    @property
    def order(self):
        return len(self.values)


MAX_JET_ORDER = 4


class OrthographicSensor:
    """Orthographic projection of landmarks with smooth conical visibility."""

    m = 2
    n_landmark = N_LANDMARK
    affine = True

    def __init__(self, cam: OrthoCamera):
        self.cam = cam
        self._a = np.pi / cam.theta_max

    # -- instantaneous model --------------------------------------------------

    def camera_vector(self, est: EstimatorState, lm):
        """Camera-frame landmark vector (generic, landmark may be batched)."""
        rel = lm - est.p
        body = matvec(fm.transpose(est.R), rel)
        return matvec(est.R_cb, body) + est.t_cb

    def observe(self, est: EstimatorState, lm):
        """2-vector measurement(s); exact orthographic projection."""
        return matvec(PROJ, self.camera_vector(est, lm))

    def jacobians(self, est: EstimatorState, lm):
        """(h, H, L): value and Jacobians w.r.t. error coords and landmark.

        Computed from the order-0 observation jet so that LieJet order 0 and
        the direct evaluation are identical by construction.
        """
        jet = self._observation_jets(
            [Jp(est.p, _seed(POS, 24))],
            [Jp(est.R, est.R @ skew(_seed(ATT, 24)))],
            est.R_cb, est.t_cb, lm, order=0, ndirs=24, landmark_dirs=True)
        return jet.values[0], jet.H[0], jet.L[0]

    # -- visibility -----------------------------------------------------------

    def _view_cosine(self, est: EstimatorState, lm):
        y = self.camera_vector(est, lm)
        n = fm.norm(y)
        n = fm.clip(n, 1e-12, None)
        return fm.dot(self.cam.axis, y) / n, value(fm.norm(y))

    def visibility_sq_checked(self, est: EstimatorState, lm):
        """Smooth squared visibility plus a degeneracy flag (landmark at center)."""
        u, raw_norm = self._view_cosine(est, lm)
        theta = fm.arccos(fm.clip(u, -1.0 + 1e-12, 1.0 - 1e-12))
        smooth = 0.5 * (fm.cos(self._a * theta) + 1.0)
        inside = (value(theta) < self.cam.theta_max).astype(float)
        degenerate = raw_norm <= 1e-9
        mask = inside * (~degenerate).astype(float)
        return smooth * mask, degenerate

    def visibility_sq(self, est: EstimatorState, lm):
        return self.visibility_sq_checked(est, lm)[0]

    def hard_visibility(self, est: EstimatorState, lm):
        u, raw_norm = self._view_cosine(est, lm)
        theta = np.arccos(np.clip(value(u), -1.0, 1.0))
        return ((theta < self.cam.theta_max) & (raw_norm > 1e-9)).astype(float)

    # -- affine decomposition -------------------------------------------------

    def affine_components(self, est: EstimatorState):
        """Homogeneous components h_i, i = 0..3, with h = sum l_bar_i h_i."""
        basis = np.vstack([np.zeros(3), np.eye(3)])
        h = self.observe(est, basis)  # (4, 2); row 0 is the l = 0 evaluation
        h0 = h[0]
        hi = [h[i] - h0 for i in range(1, 4)]
        return [h0] + hi

    # -- Lie jets -------------------------------------------------------------

    def motion_jets(self, x0: PlantState, u0: ControlInput,
                    params: DynamicsParams, r: int, landmark_dirs=True):
        """Landmark-independent motion jets, reusable across a landmark loop."""
        D = 24 if landmark_dirs else 21
        return estimator_motion_jets(x0, u0, params, r - 1, D)

    def lie_jets(self, x0: PlantState, u0: ControlInput, params: DynamicsParams,
                 lm, r: int, landmark_dirs: bool = True, motion=None) -> LieJet:
        """First r Lie derivatives of the observation along the nominal flow.

        ``lm`` may be a single landmark (3,) or a batch (..., 3).  With
        ``landmark_dirs`` the landmark Jacobians are carried as 3 extra seed
        directions; without it (used by the affine aggregation, where they
        follow from the homogeneous components) only the 21 error directions
        are propagated.  ``motion`` optionally injects precomputed motion jets.
        """
        if r < 1:
            raise ValueError("at least one Lie derivative is required")
        if r > MAX_JET_ORDER:
            raise NotImplementedError(
                f"Lie-derivative order {r} exceeds the supported maximum "
                f"{MAX_JET_ORDER}")
        D = 24 if landmark_dirs else 21
        if motion is None:
            motion = estimator_motion_jets(x0, u0, params, r - 1, D)
        p_jets, R_jets = motion
        return self._observation_jets(p_jets, R_jets, self.cam.R_cb,
                                      self.cam.t_cb, lm, r - 1, D,
                                      landmark_dirs)

    def _observation_jets(self, p_jets, R_jets, R_cb, t_cb, lm, order, ndirs,
                          landmark_dirs) -> LieJet:
        lm = lm if isinstance(lm, fm.DArr) else np.asarray(lm, dtype=float)
        Rcb = Jp(R_cb, R_cb @ skew(_seed(EXT_ROT, ndirs)))
        tcb = Jp(t_cb, _seed(EXT_TRANS, ndirs))
        lm_seed = _seed(slice(21, 24), ndirs) if landmark_dirs else np.zeros((ndirs, 3))
        lpair = Jp(lm, lm_seed)
        rel = [lpair - p_jets[0]] + [-p_jets[j] for j in range(1, order + 1)]

        values, Hs, Ls = [], [], []
        for j in range(order + 1):
            body = None
            for i in range(j + 1):
                term = jmv(jT(R_jets[i]), rel[j - i]).scale(math.comb(j, i))
                body = term if body is None else body + term
            y = jmv(Rcb, body)
            if j == 0:
                y = y + tcb
            values.append(y.v[..., :2])
            d = y.d[..., :2]
            Hs.append(fm.moveaxis(d[0:21], 0, -1))
            if landmark_dirs:
                Ls.append(fm.moveaxis(d[21:24], 0, -1))
        return LieJet(values=values, H=Hs, L=Ls if landmark_dirs else None)


def _seed(sl, ndirs):
    E = np.zeros((ndirs, 3))
    E[sl] = np.eye(3)
    return E


# -- landmark fields ----------------------------------------------------------


@dataclass(frozen=True)
class LandmarkField:
    """Either a finite landmark set or a callable producing mass coefficients."""

    landmarks: Optional[np.ndarray] = None
    coefficients: Optional[Callable] = None

    def __post_init__(self):
        if (self.landmarks is None) == (self.coefficients is None):
            raise ValueError("exactly one of landmarks/coefficients required")
        if self.landmarks is not None and not np.all(np.isfinite(self.landmarks)):
            raise ValueError("landmarks must be finite")

    @property
    def is_finite_set(self):
        return self.landmarks is not None


def finite_field(landmarks) -> LandmarkField:
    lms = np.atleast_2d(np.asarray(landmarks, dtype=float))
    return LandmarkField(landmarks=lms)


def homogenize(lms):
    lms = np.atleast_2d(np.asarray(lms, dtype=float))
    return np.hstack([np.ones((lms.shape[0], 1)), lms])


def mass_coefficients(sensor: OrthographicSensor, est: EstimatorState, lms,
                      hard=False):
    """Visibility-weighted second moments of homogenized landmark coordinates.

    eta_ij = sum_n sigma^2(x; l_n) lbar_i lbar_j, a symmetric PSD 4x4 matrix.
    With ``hard`` the {0,1} field-of-view indicator replaces the smooth weight
    (evaluation mode; not differentiable).
    """
    lms = np.atleast_2d(np.asarray(lms, dtype=float))
    if lms.shape[0] == 0:
        return np.zeros((4, 4))
    if hard:
        s2 = sensor.hard_visibility(est, lms)
    else:
        s2 = sensor.visibility_sq(est, lms)  # (N,)
    lbar = homogenize(lms)  # (N, 4)
    weighted = s2[..., None] * lbar
    return fm.transpose(weighted) @ lbar


def field_coefficients(sensor, est, lm_field: LandmarkField, hard=False):
    if lm_field.is_finite_set:
        return mass_coefficients(sensor, est, lm_field.landmarks, hard=hard)
    return lm_field.coefficients(est)


def load_landmarks(path) -> np.ndarray:
    """Plain-text landmark table: one 'x y z' row per landmark."""
    lms = np.loadtxt(path, ndmin=2)
    if lms.shape[1] != 3:
        raise ValueError(f"landmark table must have 3 columns, got {lms.shape[1]}")
    return lms
