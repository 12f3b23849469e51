"""Fast built-in oracle and property checks behind the ``validate`` command.

A condensed version of the test-suite oracles: closed-form scalar cases,
joint-information Schur comparison, gradient-vs-finite-difference spot
checks, nullspace constraint identities, and the visibility shape
properties.  Returns a list of (name, passed, detail) records.
"""

from __future__ import annotations

import math

import numpy as np

from . import fwdmode as fm
from . import interval as iv
from .dynamics import default_params, hover_control
from .geometry import EstimatorState, PlantState, TimeGrid
from .objectives import ObjectiveSpec, Scenario, gradient
from .sensing import OrthographicSensor, finite_field, forward_camera


def _record(checks, name, passed, detail=""):
    checks.append({"name": name, "passed": bool(passed), "detail": detail})


def run_selfcheck(seed=0):
    checks = []
    rng = np.random.default_rng(seed)

    # scalar propagation closed form: Phi = G = 1, joint info I -> S = 1/2
    S = iv.propagate_and_marginalize(np.eye(2), np.eye(1), np.eye(1))
    _record(checks, "scalar-propagation", abs(S[0, 0] - 0.5) < 1e-12,
            f"S={S[0, 0]:.12f}")

    # coupling matrix closed form for timestamps (1, 2, 3), order 2
    W = iv.coupling_matrix([1.0, 2.0, 3.0], 2)
    _record(checks, "coupling-closed-form",
            np.allclose(W, [[3.0, 6.0], [6.0, 14.0]]), f"W={W.tolist()}")

    # explicit contribution equals dense joint Schur complement
    K, n, nw, m = 3, 2, 1, 1
    A = [np.eye(n) + 0.2 * rng.normal(size=(n, n)) for _ in range(K)]
    G = [rng.normal(size=(n, nw)) for _ in range(K)]
    H = [rng.normal(size=(m, n)) for _ in range(K)]
    L = [rng.normal(size=(m, 2)) for _ in range(K)]
    blocks = iv.build_batch_blocks(A, G)
    lam = iv.explicit_info_contribution(blocks, H, L)
    Hb = iv.blkdiag(H)
    J = np.hstack([Hb @ np.hstack([blocks.Ablock, blocks.Gblock]),
                   np.vstack(L)])
    full = J.T @ J
    d = n + K * nw
    sch = full[:d, :d] - full[:d, d:] @ np.linalg.pinv(full[d:, d:]) @ full[d:, :d]
    err = np.max(np.abs(lam - sch)) / max(np.max(np.abs(sch)), 1e-300)
    _record(checks, "joint-schur-oracle", err < 1e-10, f"rel err {err:.2e}")

    # nullspace differential constraint identities
    Lm = rng.normal(size=(6, 3))
    dL = rng.normal(size=(1, 6, 3))
    Ld = fm.seed(Lm, dL)
    Q = fm.nullspace(Ld)
    r1 = np.max(np.abs(Q.tan[0].T @ Lm + Q.val.T @ dL[0]))
    r2 = np.max(np.abs(Q.tan[0].T @ Q.val + Q.val.T @ Q.tan[0]))
    _record(checks, "nullspace-identities", max(r1, r2) < 1e-9,
            f"residuals {r1:.2e}, {r2:.2e}")

    # visibility shape: sigma^2(0)=1, sigma^2(theta_max/2)=0.5, 0 outside
    sensor = OrthographicSensor(forward_camera())
    est = EstimatorState(np.zeros(3), np.zeros(3), np.eye(3), np.zeros(3),
                         np.zeros(3), sensor.cam.R_cb, sensor.cam.t_cb)
    tm = sensor.cam.theta_max

    def landmark_at(theta):
        # landmark whose camera-frame vector sits at view angle theta
        c = np.array([math.sin(theta), 0.0, math.cos(theta)])
        return sensor.cam.R_cb.T @ (c - sensor.cam.t_cb)

    vals = [float(sensor.visibility_sq(est, landmark_at(theta)))
            for theta in (0.0, tm / 2.0, tm + 1e-6)]
    ok = (abs(vals[0] - 1.0) < 1e-9 and abs(vals[1] - 0.5) < 1e-9
          and vals[2] == 0.0)
    _record(checks, "visibility-shape", ok, f"values {vals}")

    # analytic vs finite-difference gradient on a small instance
    params = default_params()
    grid = TimeGrid(dt=0.02, K=3, Kbar=2)
    lms = rng.normal(size=(5, 3)) * 0.5 + np.array([1.2, 0.0, 0.0])
    x0 = PlantState(np.zeros(3), np.array([0.1, 0.0, 0.0]), np.eye(3),
                    np.array([0.1, 0.05, 0.0]))
    scn = Scenario(params=params, sensor=sensor, grid=grid,
                   field=finite_field(lms), x0=x0,
                   p_goal=np.array([0.3, 0.0, 0.1]))
    u = np.tile(hover_control(params).asarray(), grid.Kbar)
    u = u + 0.01 * rng.normal(size=u.shape)
    for kind, tol in (("conventional", 1e-6), ("pc-lie", 1e-4)):
        spec = ObjectiveSpec(kind=kind)
        ga = gradient(scn, spec, u, "analytic")
        gf = gradient(scn, spec, u, "fd")
        err = np.max(np.abs(ga - gf)) / max(1.0, np.max(np.abs(gf)))
        _record(checks, f"gradient-{kind}", err < tol, f"rel err {err:.2e}")

    return checks
