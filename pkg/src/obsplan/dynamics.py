"""Quadrotor plant, IMU-driven error dynamics, discretization, and motion jets.

The continuous error-state Jacobian A_c follows the velocity/attitude error
rows of the IMU-driven model (position integrates velocity, velocity couples
to attitude error through thrust and to the accelerometer bias, attitude rate
equals the negative gyro-bias error).  Biases and extrinsics are constant
states.  White-noise channels are laid out as

    [0:3]  accel process noise (eta_a)
    [3:6]  accelerometer measurement noise (nu_a)
    [6:9]  gyro measurement noise (nu_omega)
    [9:12] torque process noise (eta_tau; no coupling into the 21-dim error)

so the noise dimension is fixed at N_NOISE = 12.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fwdmode as fm
from .fwdmode import matvec, skew, value
from .geometry import (ATT, BIAS_ACC, BIAS_GYRO, ERR_DIM, POS, VEL,
                       ControlInput, PlantState, TimeGrid, orthonormalize)

N_NOISE = 12
E3 = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class DynamicsParams:
    """Inertia, gravity, and noise scales for the quadrotor system."""

    J: np.ndarray
    g: np.ndarray
    sigma_acc_proc: float = 0.2     # eta_a, m/s^2 * sqrt(s)
    sigma_torque_proc: float = 0.05  # eta_tau, N*m * sqrt(s)
    sigma_acc_meas: float = 0.1     # nu_a
    sigma_gyro_meas: float = 0.02   # nu_omega

    def __post_init__(self):
        J = np.asarray(self.J, dtype=float)
        if not np.allclose(J, J.T) or np.any(np.linalg.eigvalsh(J) <= 0):
            raise ValueError("inertia must be symmetric positive definite")
        for s in (self.sigma_acc_proc, self.sigma_torque_proc,
                  self.sigma_acc_meas, self.sigma_gyro_meas):
            if s < 0:
                raise ValueError("noise scales must be >= 0")

    @property
    def J_inv(self):
        return np.linalg.inv(np.asarray(self.J, dtype=float))


def default_params():
    return DynamicsParams(J=np.diag([0.007, 0.007, 0.012]),
                          g=np.array([0.0, 0.0, -9.81]))


def hover_control(params: DynamicsParams) -> ControlInput:
    return ControlInput(float(np.linalg.norm(params.g)), np.zeros(3))


def plant_derivative(x: PlantState, u: ControlInput, params: DynamicsParams):
    """Noise-free plant derivative (dp, dv, dR, domega)."""
    dp = x.v
    dv = u.c * matvec(x.R, E3) + params.g
    dR = x.R @ skew(x.omega)
    Jw = matvec(params.J, x.omega)
    domega = matvec(params.J_inv, u.tau - matvec(skew(x.omega), Jw))
    return dp, dv, dR, domega


def rk4_step(x: PlantState, u: ControlInput, dt: float,
             params: DynamicsParams) -> PlantState:
    """Classical 4th-order step; the rotation is re-orthonormalized."""
    def f(s):
        return plant_derivative(s, u, params)

    def advance(s, k, h):
        return PlantState(s.p + h * k[0], s.v + h * k[1],
                          s.R + h * k[2], s.omega + h * k[3])

    k1 = f(x)
    k2 = f(advance(x, k1, dt / 2.0))
    k3 = f(advance(x, k2, dt / 2.0))
    k4 = f(advance(x, k3, dt))
    out = PlantState(
        x.p + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
        x.v + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
        x.R + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
        x.omega + dt / 6.0 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3]),
    )
    return PlantState(out.p, out.v, orthonormalize(out.R), out.omega)


def integrate_interval(x0: PlantState, u: ControlInput, K: int, dt: float,
                       params: DynamicsParams):
    """States at t_0 .. t_K under a constant control."""
    states = [x0]
    for k in range(K):
        nxt = rk4_step(states[-1], u, dt, params)
        if not nxt.is_finite():
            raise FloatingPointError(
                f"non-finite state at interval step {k + 1}: "
                f"p={value(nxt.p)}, v={value(nxt.v)}")
        states.append(nxt)
    return states


def integrate_nominal(x0: PlantState, controls, grid: TimeGrid,
                      params: DynamicsParams):
    """States at every t_k over Kbar intervals of piecewise-constant control.

    Returns a list of K*Kbar + 1 states.
    """
    if len(controls) != grid.Kbar:
        raise ValueError(f"expected {grid.Kbar} interval controls, got {len(controls)}")
    states = [x0]
    for u in controls:
        seg = integrate_interval(states[-1], u, grid.K, grid.dt, params)
        states.extend(seg[1:])
    return states


@dataclass(frozen=True)
class LinearizedError:
    """Continuous error-state Jacobian and noise input matrix."""

    A_c: np.ndarray
    G_c: np.ndarray


@dataclass(frozen=True)
class DiscreteLTV:
    """First-order discretization A_k = I + dt*A_c, G_k = sqrt(dt)*G_c."""

    A: np.ndarray
    G: np.ndarray


def noise_input_matrix(params: DynamicsParams) -> np.ndarray:
    """Constant 21 x 12 noise input matrix (channel layout in module docstring)."""
    G = np.zeros((ERR_DIM, N_NOISE))
    G[VEL, 0:3] = params.sigma_acc_proc * np.eye(3)
    G[VEL, 3:6] = -params.sigma_acc_meas * np.eye(3)
    G[ATT, 6:9] = -params.sigma_gyro_meas * np.eye(3)
    # torque noise drives the plant body rate only; it does not enter the
    # 21-dim estimator error coordinates.
    return G


def linearize_error(x: PlantState, u: ControlInput,
                    params: DynamicsParams) -> LinearizedError:
    """Error-state linearization about a nominal point (generic over DArr)."""
    Z = np.zeros((3, 3))
    I3 = np.eye(3)
    att_vel = -u.c * (x.R @ skew(E3))
    bias_vel = -x.R
    rows = [
        [Z, I3, Z, Z, Z, Z, Z],            # position
        [Z, Z, att_vel, bias_vel, Z, Z, Z],  # velocity
        [Z, Z, Z, Z, -I3, Z, Z],           # attitude
        [Z, Z, Z, Z, Z, Z, Z],             # accel bias
        [Z, Z, Z, Z, Z, Z, Z],             # gyro bias
        [Z, Z, Z, Z, Z, Z, Z],             # extrinsic rotation
        [Z, Z, Z, Z, Z, Z, Z],             # extrinsic translation
    ]
    A_c = fm.block(rows)
    return LinearizedError(A_c=A_c, G_c=noise_input_matrix(params))


def discretize(lin: LinearizedError, dt: float) -> DiscreteLTV:
    if dt <= 0:
        raise ValueError("dt must be positive")
    A = np.eye(ERR_DIM) + dt * lin.A_c
    if np.linalg.cond(value(A)) > 1e12:
        raise np.linalg.LinAlgError("discretized error transition is singular")
    return DiscreteLTV(A=A, G=math.sqrt(dt) * lin.G_c)


def transition(A_blocks, k_from: int, k_to: int):
    """State transition Phi(t_k_to <- t_k_from) = A_{k_to-1} ... A_{k_from}."""
    if k_to < k_from:
        raise ValueError("k_to must be >= k_from")
    n = value(A_blocks[0]).shape[0] if A_blocks else ERR_DIM
    Phi = np.eye(n)
    for j in range(k_from, k_to):
        Phi = A_blocks[j] @ Phi
    return Phi


# -- jet pairs: quantities with tangents along the error-state directions -----


class Jp:
    """Value plus tangent along D seed directions (leading axis of ``d``).

    Both components may be plain arrays or outer DArr, so the same recursion
    yields second-order information when the nominal point carries tangents.
    """

    __slots__ = ("v", "d")

    def __init__(self, v, d):
        self.v = v
        self.d = d

    def __add__(self, other):
        a, b = _align_tans(self.d, other.d)
        return Jp(self.v + other.v, a + b)

    def __sub__(self, other):
        a, b = _align_tans(self.d, other.d)
        return Jp(self.v - other.v, a - b)

    def __neg__(self):
        return Jp(-self.v, -self.d)

    def scale(self, s: float):
        return Jp(s * self.v, s * self.d)


def jconst(v, ndirs: int):
    return Jp(v, np.zeros((ndirs,) + np.shape(value(v))))


def jmm(a: Jp, b: Jp) -> Jp:
    """Matrix-matrix product of unbatched (3,3) pairs."""
    return Jp(a.v @ b.v, a.d @ b.v + a.v @ b.d)


def jT(a: Jp) -> Jp:
    return Jp(fm.transpose(a.v), fm.transpose(a.d))


def jskew(a: Jp) -> Jp:
    return Jp(skew(a.v), skew(a.d))


def _align_tans(a, b):
    """Pad the lower-rank tangent with batch axes after the direction axis."""
    na, nb = value(a).ndim, value(b).ndim
    if na < nb:
        a = _batch_pad(a, nb - na)
    elif nb < na:
        b = _batch_pad(b, na - nb)
    return a, b


def _batch_pad(mat_tan, vec_batch_ndim: int):
    """Insert batch axes after the direction axis of a matrix tangent."""
    idx = (slice(None),) + (None,) * vec_batch_ndim
    return mat_tan[idx]


def jmv(A: Jp, x: Jp) -> Jp:
    """Unbatched (3,3) matrix pair times a possibly batched (..., 3) vector pair."""
    nb = value(x.v).ndim - 1
    v = matvec(A.v, x.v)
    Ad = _batch_pad(A.d, nb) if nb else A.d
    xd = x.d
    miss = (nb + 2) - value(xd).ndim  # tangent may lack the value batch axes
    if miss > 0:
        xd = _batch_pad(xd, miss)
    d = (Ad @ _vcol(x.v))[..., 0] + matvec(A.v, xd)
    return Jp(v, d)


def _vcol(x):
    return x[..., None]


def omega_signal_jets(omega0, tau, params: DynamicsParams, order: int):
    """Time-derivative jets of the nominal body rate, up to ``order``."""
    Jm = np.asarray(params.J, dtype=float)
    Ji = params.J_inv
    w = [omega0]
    for j in range(order):
        acc = tau if j == 0 else 0.0 * tau
        for i in range(j + 1):
            acc = acc - math.comb(j, i) * matvec(skew(w[i]), matvec(Jm, w[j - i]))
        w.append(matvec(Ji, acc))
    return w


def estimator_motion_jets(x0: PlantState, u0: ControlInput,
                          params: DynamicsParams, order: int, ndirs: int):
    """Jets of the estimator pose along the nominal flow, with error tangents.

    Returns (p_jets, R_jets), lists of ``Jp`` of length order+1, where entry j
    is the j-th time derivative at t = 0.  Tangent directions follow the
    21-dim error layout (directions >= 21, if any, are landmark coordinates
    and do not touch the motion).

    The estimator integrates the noise-free IMU signals of the nominal plant,
    so the measured specific force is the constant c*e3 and the measured rate
    is the plant body rate; bias perturbations shift both.
    """
    D = ndirs

    def seed_mat(sl):
        E = np.zeros((D, 3))
        E[sl] = np.eye(3)
        return E

    p0 = Jp(x0.p, seed_mat(POS))
    v0 = Jp(x0.v, seed_mat(VEL))
    R0 = Jp(x0.R, x0.R @ skew(seed_mat(ATT)))
    b_acc = Jp(np.zeros(3), seed_mat(BIAS_ACC))
    b_gyro = Jp(np.zeros(3), seed_mat(BIAS_GYRO))

    w_sig = omega_signal_jets(x0.omega, u0.tau, params, max(order - 1, 0))
    am0 = u0.c * E3  # measured specific force is constant along the interval

    # estimated body rate jets: measured signal minus (perturbed) gyro bias
    w_hat = [Jp(w_sig[0], np.zeros((D, 3))) - b_gyro]
    w_hat += [jconst(w_sig[j], D) for j in range(1, len(w_sig))]
    # measured-acceleration-minus-bias jets
    u_acc = [Jp(am0, np.zeros((D, 3))) - b_acc]
    u_acc += [jconst(0.0 * value(am0), D) for _ in range(order)]

    R_jets = [R0]
    for j in range(order):
        acc = None
        for i in range(j + 1):
            term = jmm(R_jets[i], jskew(w_hat[j - i])).scale(math.comb(j, i))
            acc = term if acc is None else acc + term
        R_jets.append(acc)

    v_jets = [v0]
    for j in range(order - 1):
        acc = None
        for i in range(j + 1):
            term = jmv(R_jets[i], u_acc[j - i]).scale(math.comb(j, i))
            acc = term if acc is None else acc + term
        if j == 0:
            acc = acc + jconst(params.g, D)
        v_jets.append(acc)

    p_jets = [p0] + v_jets[:order]
    return p_jets, R_jets
