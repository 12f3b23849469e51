"""Manifold state containers, SO(3) utilities, and error-state coordinates.

The estimator error vector has 21 coordinates in a frozen layout:

    [0:3]   position error (m, world)
    [3:6]   velocity error (m/s, world)
    [6:9]   attitude error (rad, right-multiplicative: Rhat = R @ exp([q]x))
    [9:12]  accelerometer bias error (m/s^2)
    [12:15] gyro bias error (rad/s)
    [15:18] body-to-camera rotation error (rad, right-multiplicative)
    [18:21] body-to-camera translation error (m)

Information-matrix sub-blocks are addressed through the named slices below.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import fwdmode as fm
from .fwdmode import matvec, skew, value

ERR_DIM = 21
POS = slice(0, 3)
VEL = slice(3, 6)
ATT = slice(6, 9)
BIAS_ACC = slice(9, 12)
BIAS_GYRO = slice(12, 15)
EXT_ROT = slice(15, 18)
EXT_TRANS = slice(18, 21)

ERROR_SLICES = {
    "position": POS,
    "velocity": VEL,
    "attitude": ATT,
    "bias_acc": BIAS_ACC,
    "bias_gyro": BIAS_GYRO,
    "extrinsic_rot": EXT_ROT,
    "extrinsic_trans": EXT_TRANS,
}


def exp_so3(w):
    """Rodrigues exponential, generic over ndarray/DArr; series below 1e-4 rad."""
    t2 = fm.dot(w, w)
    W = skew(w)
    W2 = W @ W
    if float(value(t2)) < 1e-8:
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    else:
        t = fm.sqrt(t2)
        a = fm.sin(t) / t
        b = (1.0 - fm.cos(t)) / t2
    return np.eye(3) + a * W + b * W2


def _vee(R):
    return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])


def log_so3(R):
    """SO(3) logarithm with stable handling near 0 and pi (value-only)."""
    R = np.asarray(R, dtype=float)
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(c)
    v = _vee(R)
    if theta < 1e-7:
        # second-order series of theta / (2 sin theta)
        return 0.5 * v * (1.0 + theta * theta / 6.0)
    if np.pi - theta < 1e-6:
        # axis from the symmetric part, sign fixed by the skew part
        S = 0.5 * (R + R.T)
        M = (S - np.eye(3) * c) / (1.0 - c)
        k = int(np.argmax(np.diag(M)))
        axis = M[:, k] / np.sqrt(max(M[k, k], 1e-300))
        axis = axis / np.linalg.norm(axis)
        if v @ axis < 0.0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * v


def orthonormalize(R):
    """Project a near-rotation onto SO(3) via Gram-Schmidt (generic, det +1)."""
    c0 = R[:, 0] / fm.norm(R[:, 0])
    u1 = R[:, 1] - fm.dot(c0, R[:, 1]) * c0
    c1 = u1 / fm.norm(u1)
    c2 = matvec(skew(c0), c1)
    return fm.transpose(fm.stack([c0, c1, c2], axis=0))


def check_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=float)
    return (np.max(np.abs(R @ R.T - np.eye(3))) <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol)


@dataclass(frozen=True)
class PlantState:
    """Nominal 12-DoF vehicle state: position, velocity, attitude, body rate."""

    p: np.ndarray
    v: np.ndarray
    R: np.ndarray
    omega: np.ndarray

    def astuple(self):
        return (self.p, self.v, self.R, self.omega)

    def is_finite(self):
        return all(np.all(np.isfinite(value(c))) for c in self.astuple())


@dataclass(frozen=True)
class ControlInput:
    """Mass-normalized thrust (scalar, >= 0) and body moments (3-vector)."""

    c: float
    tau: np.ndarray

    def asarray(self):
        return fm.concat([fm.stack([self.c], axis=0), self.tau], axis=-1)

    @staticmethod
    def fromarray(u):
        return ControlInput(u[0], u[1:4])


@dataclass(frozen=True)
class EstimatorState:
    """Full estimator state: plant pose plus IMU biases and camera extrinsics."""

    p: np.ndarray
    v: np.ndarray
    R: np.ndarray
    b_acc: np.ndarray
    b_gyro: np.ndarray
    R_cb: np.ndarray
    t_cb: np.ndarray


def nominal_estimator(x: PlantState, R_cb, t_cb) -> EstimatorState:
    """Zero-bias estimator state matching the nominal plant and extrinsics."""
    return EstimatorState(x.p, x.v, x.R, np.zeros(3), np.zeros(3),
                          np.asarray(R_cb, dtype=float), np.asarray(t_cb, dtype=float))


def boxminus(xhat: EstimatorState, x: EstimatorState) -> np.ndarray:
    """Generalized difference on the state manifold, in the 21-dim layout.

    Vector components subtract; attitude components take the SO(3) log of the
    relative rotation under the right-multiplicative convention.
    """
    e = np.zeros(ERR_DIM)
    e[POS] = value(xhat.p) - value(x.p)
    e[VEL] = value(xhat.v) - value(x.v)
    e[ATT] = log_so3(value(x.R).T @ value(xhat.R))
    e[BIAS_ACC] = value(xhat.b_acc) - value(x.b_acc)
    e[BIAS_GYRO] = value(xhat.b_gyro) - value(x.b_gyro)
    e[EXT_ROT] = log_so3(value(x.R_cb).T @ value(xhat.R_cb))
    e[EXT_TRANS] = value(xhat.t_cb) - value(x.t_cb)
    return e


def retract(x: EstimatorState, delta) -> EstimatorState:
    """Inverse of boxminus: perturb ``x`` by 21-dim error coordinates."""
    return EstimatorState(
        p=x.p + delta[POS],
        v=x.v + delta[VEL],
        R=x.R @ exp_so3(delta[ATT]),
        b_acc=x.b_acc + delta[BIAS_ACC],
        b_gyro=x.b_gyro + delta[BIAS_GYRO],
        R_cb=x.R_cb @ exp_so3(delta[EXT_ROT]),
        t_cb=x.t_cb + delta[EXT_TRANS],
    )


@dataclass(frozen=True)
class TimeGrid:
    """Measurement step dt, steps per interval K, and interval count Kbar."""

    dt: float
    K: int
    Kbar: int

    def __post_init__(self):
        if self.dt <= 0 or self.K < 1 or self.Kbar < 1:
            raise ValueError("TimeGrid requires dt > 0, K >= 1, Kbar >= 1")

    @property
    def interval_length(self):
        return self.K * self.dt

    @property
    def horizon(self):
        return self.K * self.Kbar * self.dt

    def interval_times(self):
        """Timestamps t_1 .. t_K within one interval (t_0 = 0 excluded)."""
        return self.dt * np.arange(1, self.K + 1)


def random_rotation(rng) -> np.ndarray:
    return exp_so3(rng.normal(size=3))
