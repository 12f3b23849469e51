"""Observation model, visibility weighting, Lie jets, and mass-coefficient
aggregation, checked against direct evaluation and finite differences."""

import math

import numpy as np
import pytest

from conftest import random_landmarks, random_state, rel_err
from obsplan.dynamics import default_params, hover_control
from obsplan.geometry import (ControlInput, EstimatorState, PlantState,
                              nominal_estimator, random_rotation, retract)
from obsplan.sensing import (LandmarkField, OrthoCamera, OrthographicSensor,
                             field_coefficients, finite_field, forward_camera,
                             homogenize, load_landmarks, mass_coefficients)


def _est(rng, cam):
    x = random_state(rng)
    return nominal_estimator(x, cam.R_cb, cam.t_cb)


def test_observe_matches_projection_formula(rng, sensor):
    est = _est(rng, sensor.cam)
    for _ in range(10):
        lm = rng.normal(size=3)
        y = sensor.cam.R_cb @ (est.R.T @ (lm - est.p)) + sensor.cam.t_cb
        assert np.allclose(sensor.observe(est, lm), y[:2], atol=1e-12)


def test_observe_batched(rng, sensor):
    est = _est(rng, sensor.cam)
    lms = rng.normal(size=(6, 3))
    batch = sensor.observe(est, lms)
    for i in range(6):
        assert np.allclose(batch[i], sensor.observe(est, lms[i]))


def test_jacobians_fd(rng, sensor):
    """H from the order-0 jet against FD through the retraction; L directly."""
    est = _est(rng, sensor.cam)
    lm = np.array([1.2, 0.1, -0.2])
    _, H, L = sensor.jacobians(est, lm)
    h = 1e-7
    for j in range(21):
        d = np.zeros(21)
        d[j] = h
        num = (sensor.observe(retract(est, d), lm)
               - sensor.observe(retract(est, -d), lm)) / (2 * h)
        assert np.allclose(H[:, j], num, atol=1e-6), j
    for j in range(3):
        d = np.zeros(3)
        d[j] = h
        num = (sensor.observe(est, lm + d) - sensor.observe(est, lm - d)) / (2 * h)
        assert np.allclose(L[:, j], num, atol=1e-6)


def test_landmark_jacobian_is_landmark_independent(rng, sensor):
    est = _est(rng, sensor.cam)
    _, _, L1 = sensor.jacobians(est, np.array([1.0, 0.0, 0.0]))
    _, _, L2 = sensor.jacobians(est, rng.normal(size=3))
    assert np.allclose(L1, L2, atol=1e-13)


def test_affine_components_reconstruct(rng, sensor):
    """h(x; l) must equal the homogeneous combination sum_i lbar_i h_i."""
    est = _est(rng, sensor.cam)
    comps = sensor.affine_components(est)
    for _ in range(20):
        lm = rng.normal(size=3)
        recon = comps[0] + lm[0] * comps[1] + lm[1] * comps[2] + lm[2] * comps[3]
        assert np.allclose(recon, sensor.observe(est, lm), atol=1e-12)


def _landmark_at(cam, theta, dist=1.0):
    """A landmark at view angle theta from the optical axis, camera at origin
    of a level body frame."""
    c = dist * np.array([math.sin(theta), 0.0, math.cos(theta)])
    return cam.R_cb.T @ (c - cam.t_cb)


def test_visibility_shape(sensor):
    cam = sensor.cam
    x = PlantState(np.zeros(3), np.zeros(3), np.eye(3), np.zeros(3))
    est = nominal_estimator(x, cam.R_cb, cam.t_cb)
    s2_center = sensor.visibility_sq(est, _landmark_at(cam, 0.0))
    s2_half = sensor.visibility_sq(est, _landmark_at(cam, cam.theta_max / 2))
    s2_out = sensor.visibility_sq(est, _landmark_at(cam, cam.theta_max * 1.01))
    assert abs(float(s2_center) - 1.0) < 1e-9
    assert abs(float(s2_half) - 0.5) < 1e-9
    assert float(s2_out) == 0.0


def test_hard_visibility_indicator(sensor):
    cam = sensor.cam
    x = PlantState(np.zeros(3), np.zeros(3), np.eye(3), np.zeros(3))
    est = nominal_estimator(x, cam.R_cb, cam.t_cb)
    lms = np.stack([_landmark_at(cam, t) for t in
                    (0.0, cam.theta_max * 0.9, cam.theta_max * 1.1)])
    assert np.array_equal(sensor.hard_visibility(est, lms), [1.0, 1.0, 0.0])


def test_visibility_degenerate_landmark(sensor):
    cam = sensor.cam
    x = PlantState(np.zeros(3), np.zeros(3), np.eye(3), np.zeros(3))
    est = nominal_estimator(x, cam.R_cb, cam.t_cb)
    # landmark at the camera center: flagged degenerate, weight zero
    lm = est.R @ (-cam.R_cb.T @ cam.t_cb) + est.p
    s2, degenerate = sensor.visibility_sq_checked(est, lm)
    assert degenerate
    assert float(s2) == 0.0


def test_lie_jets_match_time_derivatives(rng, sensor, params):
    """Jet values against FD of the observation along the nominal flow."""
    from obsplan.dynamics import rk4_step
    x0 = random_state(rng, rate=0.5)
    u = ControlInput(10.0, np.array([0.02, -0.01, 0.03]))
    lm = np.array([1.4, 0.2, -0.1])
    jets = sensor.lie_jets(x0, u, params, lm, r=3)

    def obs_at(t, n=400):
        x = x0
        for _ in range(n):
            x = rk4_step(x, u, t / n, params)
        est = nominal_estimator(x, sensor.cam.R_cb, sensor.cam.t_cb)
        return sensor.observe(est, lm)

    h = 2e-3
    d0 = obs_at(0.0)
    d1 = (obs_at(h) - obs_at(-h)) / (2 * h)
    d2 = (obs_at(h) - 2 * d0 + obs_at(-h)) / h ** 2
    assert np.allclose(jets.values[0], d0, atol=1e-10)
    assert np.allclose(jets.values[1], d1, atol=1e-5)
    assert np.allclose(jets.values[2], d2, atol=1e-2)


def test_lie_jets_motion_injection_consistent(rng, sensor, params):
    x0 = random_state(rng, rate=0.4)
    u = hover_control(params)
    lm = np.array([1.2, -0.3, 0.2])
    direct = sensor.lie_jets(x0, u, params, lm, r=3)
    motion = sensor.motion_jets(x0, u, params, r=3)
    injected = sensor.lie_jets(x0, u, params, lm, r=3, motion=motion)
    for j in range(3):
        assert np.allclose(direct.H[j], injected.H[j])
        assert np.allclose(direct.L[j], injected.L[j])


def test_lie_jet_order_limit(rng, sensor, params):
    x0 = random_state(rng)
    u = hover_control(params)
    with pytest.raises(NotImplementedError):
        sensor.lie_jets(x0, u, params, np.ones(3), r=5)
    with pytest.raises(ValueError):
        sensor.lie_jets(x0, u, params, np.ones(3), r=0)


def test_mass_coefficients_against_direct_sum(rng, sensor):
    est = _est(rng, sensor.cam)
    lms = random_landmarks(rng, 15)
    s2 = sensor.visibility_sq(est, lms)
    lbar = homogenize(lms)
    ref = np.einsum("n,ni,nj->ij", np.asarray(s2), lbar, lbar)
    eta = mass_coefficients(sensor, est, lms)
    assert rel_err(eta, ref) < 1e-12
    assert np.all(np.linalg.eigvalsh(0.5 * (eta + eta.T)) > -1e-12)


def test_mass_coefficients_hard_mode(rng, sensor):
    est = _est(rng, sensor.cam)
    lms = random_landmarks(rng, 15)
    ind = sensor.hard_visibility(est, lms)
    lbar = homogenize(lms)
    ref = np.einsum("n,ni,nj->ij", ind, lbar, lbar)
    assert rel_err(mass_coefficients(sensor, est, lms, hard=True), ref) < 1e-12


def test_field_validation(rng):
    with pytest.raises(ValueError):
        LandmarkField(landmarks=None, coefficients=None)
    with pytest.raises(ValueError):
        LandmarkField(landmarks=np.array([[np.inf, 0, 0]]))
    f = finite_field(np.array([1.0, 2.0, 3.0]))
    assert f.landmarks.shape == (1, 3)


def test_load_landmarks_round_trip(tmp_path, rng):
    lms = rng.normal(size=(7, 3))
    path = tmp_path / "landmarks.txt"
    np.savetxt(path, lms)
    assert np.allclose(load_landmarks(path), lms)
    bad = tmp_path / "bad.txt"
    np.savetxt(bad, rng.normal(size=(4, 2)))
    with pytest.raises(ValueError):
        load_landmarks(bad)


def test_camera_validation():
    with pytest.raises(ValueError):
        OrthoCamera(R_cb=np.eye(3), t_cb=np.zeros(3), theta_max=0.0)
    with pytest.raises(ValueError):
        OrthoCamera(R_cb=2 * np.eye(3), t_cb=np.zeros(3), theta_max=0.5)
