"""Bundled interval information update with landmark marginalization.

One interval covers K measurement steps.  The joint information over the
initial error e0 and the interval process noise is accumulated from prior
plus per-landmark (or aggregated) measurement contributions, propagated to
the interval end, and the noise block is removed by Schur complement.

Two bundling paths are provided:

* explicit: stacked step-by-step Jacobians over the full interval, process
  noise of dimension K * n_w;
* lie: Taylor expansion of the observation in its first r Lie derivatives,
  with the process noise collapsed to a single n_w-dimensional jump at the
  interval start.

Landmark uncertainty is removed per landmark by projecting the stacked
innovation onto the left-nullspace of the landmark Jacobian stack
(marginalize mode), or ignored entirely (condition mode).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import fwdmode as fm
from .fwdmode import value
from .dynamics import (DiscreteLTV, DynamicsParams, N_NOISE, discretize,
                       integrate_interval, linearize_error, transition)
from .geometry import ERR_DIM, POS, ControlInput, PlantState, TimeGrid, nominal_estimator
from .sensing import LandmarkField, OrthographicSensor

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class UpdateOptions:
    """Path and landmark handling for the interval update."""

    path: str = "lie"                    # "explicit" | "lie"
    landmark_mode: str = "marginalize"   # "marginalize" | "condition"
    aggregate: str = "per-landmark"      # "per-landmark" | "affine"
    r: int = 3
    rank_rtol: float = RANK_RTOL
    visibility: str = "smooth"           # "smooth" | "hard" (evaluation only)

    def __post_init__(self):
        if self.visibility not in ("smooth", "hard"):
            raise ValueError(f"unknown visibility {self.visibility!r}")
        if self.path not in ("explicit", "lie"):
            raise ValueError(f"unknown path {self.path!r}")
        if self.landmark_mode not in ("marginalize", "condition"):
            raise ValueError(f"unknown landmark_mode {self.landmark_mode!r}")
        if self.aggregate not in ("per-landmark", "affine"):
            raise ValueError(f"unknown aggregate {self.aggregate!r}")


# -- block assembly -----------------------------------------------------------


@dataclass
class BatchBlocks:
    """Stacked interval Jacobians: error trajectory = Ablock e0 + Gblock W."""

    Ablock: object   # (K n, n)
    Gblock: object   # (K n, K n_w), causal lower block-triangular
    Phi: object      # (n, n) full-interval transition
    Grow: object     # (n, K n_w) top row of the propagation map:
                     # [Phi(K<-1) G_0, Phi(K<-2) G_1, ..., G_{K-1}]


def build_batch_blocks(A_list, G_list):
    """Assemble the stacked error-trajectory maps from per-step LTV blocks."""
    K = len(A_list)
    n = value(A_list[0]).shape[0]
    nw = value(G_list[0]).shape[1]
    Z = np.zeros((n, nw))
    a_rows = []
    g_rows = []
    prev_A = np.eye(n)
    prev_G = []
    for k in range(K):
        cur_A = A_list[k] @ prev_A
        cur_G = [A_list[k] @ blk for blk in prev_G] + [G_list[k]]
        a_rows.append(cur_A)
        g_rows.append(fm.concat(cur_G + [Z] * (K - len(cur_G)), axis=-1))
        prev_A, prev_G = cur_A, cur_G
    Ablock = fm.concat(a_rows, axis=-2)
    Gblock = fm.concat(g_rows, axis=-2)
    return BatchBlocks(Ablock=Ablock, Gblock=Gblock, Phi=prev_A,
                       Grow=fm.concat(prev_G, axis=-1))


def blkdiag(blocks):
    """Block-diagonal assembly (generic)."""
    shapes = [value(b).shape for b in blocks]
    rows = []
    for i, b in enumerate(blocks):
        row = [np.zeros((shapes[i][0], s[1])) for s in shapes]
        row[i] = b
        rows.append(fm.concat(row, axis=-1))
    return fm.concat(rows, axis=-2)


# -- explicit path ------------------------------------------------------------


def explicit_info_contribution(blocks: BatchBlocks, H_list, L_list,
                               marginalize=True, rank_rtol=RANK_RTOL):
    """Joint information over (e0, W) from one landmark's stacked innovations.

    ``H_list``/``L_list`` hold per-step measurement Jacobians at t_1 .. t_K.
    With ``marginalize`` the landmark error is removed through the
    left-nullspace of the stacked landmark Jacobian.
    """
    Hb = blkdiag(H_list)
    AG = fm.concat([blocks.Ablock, blocks.Gblock], axis=-1)
    HA = Hb @ AG
    if marginalize and L_list is not None:
        Lb = fm.concat(L_list, axis=-2)
        Q = fm.nullspace(Lb, rtol=rank_rtol)
        Hbar = fm.transpose(Q) @ HA
    else:
        Hbar = HA
    return fm.transpose(Hbar) @ Hbar


# -- Lie-Taylor path ----------------------------------------------------------


def coupling_matrix(times, r: int):
    """r x r Gram matrix of timestamp monomials, W_ij = lambda_{i+j}/(i! j!)."""
    if r < 1:
        raise ValueError("r must be >= 1")
    times = np.asarray(times, dtype=float)
    lam = np.array([np.sum(times ** s) for s in range(2 * r - 1)])
    W = np.empty((r, r))
    for i in range(r):
        for j in range(r):
            W[i, j] = lam[i + j] / (math.factorial(i) * math.factorial(j))
    return W


def coupling_sqrt(times, r: int, m: int, cond_warn=1e8):
    """Pre-computable (W^(1/2) kron I_m) weighting of the derivative stack."""
    W = coupling_matrix(times, r)
    c = np.linalg.cond(W)
    if c > cond_warn:
        import warnings
        warnings.warn(f"coupling matrix condition {c:.2e} exceeds {cond_warn:.0e}; "
                      "consider a lower derivative order or shorter interval",
                      RuntimeWarning)
    Ws = fm.sym_sqrt_psd(W)
    return np.kron(Ws, np.eye(m))


def injection_matrix(Phi, G_c, t_K: float):
    """Noise injection E = [I, sqrt(t_K) Phi^{-1} G_c] mapping (e0, w0) to e0+.

    The single noise jump at the interval start is pre-multiplied by the
    inverse transition so that propagating e0+ over the interval reproduces
    the end-of-interval noise covariance sqrt(t_K) G_c w0.
    """
    n = value(Phi).shape[0]
    pulled = fm.solve(Phi, G_c)
    return fm.concat([np.eye(n), math.sqrt(t_K) * pulled], axis=-1)


def lie_info_contribution(stackH, stackL, E, BW, marginalize=True,
                          rank_rtol=RANK_RTOL):
    """Joint information over (e0, w0) from the weighted Lie-derivative stack.

    ``stackH`` is the (r m, n) stack of Lie-derivative error Jacobians,
    ``stackL`` the landmark stack (or None), ``BW`` the pre-computed
    (W^(1/2) kron I_m) weighting, ``E`` the injection matrix.
    """
    BH = BW @ stackH
    if marginalize and stackL is not None:
        BL = BW @ stackL
        Q = fm.nullspace(BL, rtol=rank_rtol)
        core = fm.transpose(Q) @ BH
    else:
        core = BH
    Hbar = core @ E
    return fm.transpose(Hbar) @ Hbar


# -- propagation and marginalization ------------------------------------------


def propagate_and_marginalize(Lam0, Phi, Gtop, rank_rtol=RANK_RTOL,
                              max_cond=1e12):
    """Map joint information over (e0, W) to marginal information at t_K.

    blockM = [[Phi, Gtop], [0, I]]; Lam_K = blockM^{-T} Lam0 blockM^{-1};
    the W block is then removed by Schur complement.  The inverse of blockM
    is applied by block back-substitution (a single solve against Phi).
    """
    n = value(Phi).shape[0]
    nw = value(Gtop).shape[1]
    if np.linalg.cond(value(Phi)) > max_cond:
        raise np.linalg.LinAlgError("interval transition is ill-conditioned")
    top = fm.solve(Phi, fm.concat([np.eye(n), Gtop], axis=-1))
    Minv = fm.block([
        [top[:, :n], -top[:, n:]],
        [np.zeros((nw, n)), np.eye(nw)],
    ])
    LamK = fm.transpose(Minv) @ Lam0 @ Minv
    return schur_marginalize(LamK, n, rank_rtol)


def schur_marginalize(Lam, n, rank_rtol=RANK_RTOL):
    """Schur complement removing all coordinates past the first n."""
    See = Lam[:n, :n]
    Sew = Lam[:n, n:]
    Sww = Lam[n:, n:]
    if value(Sww).shape[0] == 0:
        return See
    Sww_v = value(Sww)
    if isinstance(Lam, fm.DArr) or np.linalg.cond(Sww_v) < 1.0 / rank_rtol:
        X = fm.solve(Sww, fm.transpose(Sew))
    else:
        X = np.linalg.pinv(Sww_v, rcond=rank_rtol) @ value(Sew).T
    return See - Sew @ X


def symmetrize(S):
    return 0.5 * (S + fm.transpose(S))


# -- quadrotor interval filter ------------------------------------------------


@dataclass
class IntervalData:
    """Cached nominal-trajectory quantities for one interval."""

    states: list          # K+1 PlantState at t_0 .. t_K
    A_list: list
    G_c: object
    Phi: object
    blocks: BatchBlocks
    est0: object          # estimator state at t_0


class IntervalFilter:
    """Posterior-information propagation over fixed intervals (quadrotor/ortho).

    Orchestrates: nominal sub-step integration, per-step linearization,
    measurement bundling along the selected path, per-landmark or aggregated
    accumulation, propagation, and noise marginalization.
    """

    def __init__(self, params: DynamicsParams, sensor: OrthographicSensor,
                 grid: TimeGrid, options: UpdateOptions = UpdateOptions()):
        self.params = params
        self.sensor = sensor
        self.grid = grid
        self.options = options
        self._BW = coupling_sqrt(grid.interval_times(), options.r, sensor.m)

    # -- nominal interval quantities -----------------------------------------

    def interval_data(self, x0: PlantState, u0: ControlInput) -> IntervalData:
        g = self.grid
        states = integrate_interval(x0, u0, g.K, g.dt, self.params)
        A_list, G_list = [], []
        for k in range(g.K):
            lin = linearize_error(states[k], u0, self.params)
            dk = discretize(lin, g.dt)
            A_list.append(dk.A)
            G_list.append(dk.G)
        blocks = build_batch_blocks(A_list, G_list)
        est0 = nominal_estimator(x0, self.sensor.cam.R_cb, self.sensor.cam.t_cb)
        return IntervalData(states=states, A_list=A_list,
                            G_c=linearize_error(x0, u0, self.params).G_c,
                            Phi=blocks.Phi, blocks=blocks, est0=est0)

    # -- measurement contributions -------------------------------------------

    def _step_jacobians(self, data: IntervalData, lms):
        """Per-step (t_1..t_K) measurement Jacobians for a landmark batch."""
        cam = self.sensor.cam
        H_steps, L_steps = [], []
        for k in range(1, self.grid.K + 1):
            est = nominal_estimator(data.states[k], cam.R_cb, cam.t_cb)
            _, H, L = self.sensor.jacobians(est, lms)
            H_steps.append(H)
            L_steps.append(L)
        return H_steps, L_steps

    def measurement_information(self, x0, u0, field: LandmarkField,
                                data: IntervalData = None):
        """Visibility-weighted sum of measurement contributions over (e0, W).

        Returns the summed sigma0^2-weighted joint information (without the
        prior block) for the configured path.
        """
        data = data or self.interval_data(x0, u0)
        opt = self.options
        marg = opt.landmark_mode == "marginalize"
        dim_w = self.grid.K * N_NOISE if opt.path == "explicit" else N_NOISE
        dim = ERR_DIM + dim_w

        if not field.is_finite_set or opt.aggregate == "affine":
            return self._affine_information(x0, u0, field, data, dim)

        lms = field.landmarks
        if lms.shape[0] == 0:
            return np.zeros((dim, dim))
        if opt.visibility == "hard":
            sig2 = self.sensor.hard_visibility(data.est0, lms)
        else:
            sig2 = self.sensor.visibility_sq(data.est0, lms)
        sig2_v = value(sig2)

        # The per-landmark branches evaluate each landmark's Jacobians
        # independently inside the loop (the bundled-affine path is the one
        # that amortizes this work across the whole field).
        if opt.path == "explicit":
            cam = self.sensor.cam
            ests = [nominal_estimator(data.states[k], cam.R_cb, cam.t_cb)
                    for k in range(1, self.grid.K + 1)]
            total = np.zeros((dim, dim))
            for n in range(lms.shape[0]):
                if sig2_v[n] <= 0.0:
                    continue
                Hn, Ln = [], []
                for est in ests:
                    _, H, L = self.sensor.jacobians(est, lms[n])
                    Hn.append(H)
                    Ln.append(L)
                lamz = explicit_info_contribution(
                    data.blocks, Hn, Ln if marg else None, marginalize=marg,
                    rank_rtol=opt.rank_rtol)
                total = total + sig2[n] * lamz
            return total

        motion = self.sensor.motion_jets(x0, u0, self.params, opt.r)
        E = injection_matrix(data.Phi, data.G_c, self.grid.interval_length)
        total = np.zeros((dim, dim))
        for n in range(lms.shape[0]):
            if sig2_v[n] <= 0.0:
                continue
            jets = self.sensor.lie_jets(x0, u0, self.params, lms[n], opt.r,
                                        landmark_dirs=True, motion=motion)
            stackH = fm.concat(jets.H, axis=-2)
            stackL = fm.concat(jets.L, axis=-2) if marg else None
            lamz = lie_info_contribution(stackH, stackL, E, self._BW,
                                         marginalize=marg,
                                         rank_rtol=opt.rank_rtol)
            total = total + sig2[n] * lamz
        return total

    def _affine_information(self, x0, u0, field: LandmarkField,
                            data: IntervalData, dim):
        """Aggregated contribution via landmark mass coefficients.

        Requires the sensor's affine decomposition; the stacked Jacobians are
        formed once for the homogeneous basis and combined through eta.
        """
        from .sensing import field_coefficients
        if not self.sensor.affine:
            raise TypeError("sensor does not expose an affine decomposition")
        opt = self.options
        marg = opt.landmark_mode == "marginalize"
        eta = field_coefficients(self.sensor, data.est0, field,
                                 hard=opt.visibility == "hard")
        if not np.any(value(eta)):
            return np.zeros((dim, dim))
        basis = np.vstack([np.zeros(3), np.eye(3)])  # homogeneous evaluations

        if opt.path == "explicit":
            H_steps, L_steps = self._step_jacobians(data, basis)
            # affine pieces: H(x; l) = H(x; 0) + sum_i l_i (H(x; e_i) - H(x; 0))
            Hi_steps = [
                [H[0] if i == 0 else H[i] - H[0] for H in H_steps]
                for i in range(4)
            ]
            AG = fm.concat([data.blocks.Ablock, data.blocks.Gblock], axis=-1)
            if marg:
                Lb = fm.concat([L[0] for L in L_steps], axis=-2)
                Q = fm.nullspace(Lb, rtol=opt.rank_rtol)
                QT = fm.transpose(Q)
                Hbars = [QT @ blkdiag(Hi) @ AG for Hi in Hi_steps]
            else:
                Hbars = [blkdiag(Hi) @ AG for Hi in Hi_steps]
        else:
            jets = self.sensor.lie_jets(x0, u0, self.params, basis, opt.r,
                                        landmark_dirs=True)
            E = injection_matrix(data.Phi, data.G_c, self.grid.interval_length)
            stacks = [fm.concat([jets.H[j][i] for j in range(opt.r)], axis=-2)
                      for i in range(4)]
            stacks = [stacks[0] if i == 0 else stacks[i] - stacks[0]
                      for i in range(4)]
            if marg:
                stackL = fm.concat([jets.L[j][0] for j in range(opt.r)], axis=-2)
                Q = fm.nullspace(self._BW @ stackL, rtol=opt.rank_rtol)
                QT = fm.transpose(Q)
                Hbars = [QT @ (self._BW @ s) @ E for s in stacks]
            else:
                Hbars = [(self._BW @ s) @ E for s in stacks]

        # sum_ij eta_ij Hbar_i^T Hbar_j, grouped so only 4 large products occur
        total = np.zeros((dim, dim))
        for j in range(4):
            Tj = None
            for i in range(4):
                eij = eta[i, j]
                if not isinstance(eij, fm.DArr) and value(eij) == 0.0:
                    continue
                term = eij * Hbars[i]
                Tj = term if Tj is None else Tj + term
            if Tj is not None:
                total = total + fm.transpose(Hbars[j]) @ Tj
        return symmetrize(total)

    # -- full update ----------------------------------------------------------

    def update(self, S0, x0: PlantState, u0: ControlInput,
               field: LandmarkField):
        """One interval update: prior info S0 at t_0 to posterior S_K at t_K.

        Returns (S_K, x_K, data).
        """
        data = self.interval_data(x0, u0)
        meas = self.measurement_information(x0, u0, field, data)
        dim_w = value(meas).shape[0] - ERR_DIM
        prior = blkdiag([S0, np.eye(dim_w)])
        Lam0 = prior + meas
        if self.options.path == "explicit":
            Gtop = data.blocks.Grow
        else:
            Gtop = math.sqrt(self.grid.interval_length) * data.G_c
        SK = propagate_and_marginalize(Lam0, data.Phi, Gtop,
                                       rank_rtol=self.options.rank_rtol)
        x_K = data.states[-1]
        return symmetrize(SK), x_K, data
