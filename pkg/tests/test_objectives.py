"""Trajectory objectives: values, analytic gradients vs finite differences,
and ordering properties between the bundling variants."""

import numpy as np
import pytest

from conftest import rel_err, small_scenario
from obsplan.objectives import (OBJECTIVE_KINDS, ObjectiveSpec, Scenario,
                                evaluate, gradient, objective_value,
                                position_selector, unflatten_controls)


def _hover_controls(scn):
    return np.tile(scn.hover().asarray(), scn.grid.Kbar)


def _perturbed_controls(scn, rng, scale=0.1):
    u = _hover_controls(scn)
    return u + rng.normal(scale=scale, size=u.shape) * np.tile(
        [1.0, 0.02, 0.02, 0.02], scn.grid.Kbar)


def test_position_selector():
    Y = position_selector()
    assert Y.shape == (3, 21)
    assert np.allclose(Y[:, :3], np.eye(3))
    assert np.allclose(Y[:, 3:], 0)


def test_unflatten_controls(rng):
    u = rng.normal(size=8)
    ctrls = unflatten_controls(u, 2)
    assert len(ctrls) == 2
    assert ctrls[1].c == u[4]
    assert np.allclose(ctrls[1].tau, u[5:8])


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        ObjectiveSpec(kind="bogus")


def test_pc_objectives_positive_and_reported(rng):
    scn = small_scenario(seed=3)
    u = _hover_controls(scn)
    for kind in ("pc-exact", "pc-lie", "pc-lie-cond"):
        total, report = evaluate(scn, ObjectiveSpec(kind=kind), u, report=True)
        assert float(total) > 0.0
        assert len(report.per_interval) == scn.grid.Kbar
        assert report.value == pytest.approx(float(total))


def test_pc_lie_cond_never_exceeds_pc_lie(rng):
    """Ignoring landmark uncertainty can only shrink the predicted trace."""
    for seed in range(5):
        scn = small_scenario(seed=seed)
        u = _perturbed_controls(scn, np.random.default_rng(seed))
        j_marg = objective_value(scn, ObjectiveSpec(kind="pc-lie"), u)
        j_cond = objective_value(scn, ObjectiveSpec(kind="pc-lie-cond"), u)
        assert j_cond <= j_marg + 1e-9


def test_conventional_zero_at_hover_when_goal_reached(rng):
    scn = small_scenario(seed=5)
    scn = Scenario(params=scn.params, sensor=scn.sensor, grid=scn.grid,
                   field=scn.field, x0=scn.x0, p_goal=scn.p_goal,
                   goal_weight=0.0)
    u = _hover_controls(scn)
    assert objective_value(scn, ObjectiveSpec(kind="conventional"), u) == \
        pytest.approx(0.0, abs=1e-12)


def test_max_visibility_counts_landmarks(rng):
    scn = small_scenario(seed=2, n_landmarks=10)
    u = _hover_controls(scn)
    val = objective_value(scn, ObjectiveSpec(kind="max-visibility"), u)
    # negative sum of per-landmark weights in [0, 1]
    assert -10 * scn.grid.Kbar <= val <= 0.0


@pytest.mark.parametrize("kind", ["conventional", "max-visibility",
                                  "max-gramian", "pc-lie", "pc-lie-cond",
                                  "pc-exact"])
def test_analytic_gradient_matches_fd(kind, rng):
    tol = 1e-6 if kind == "conventional" else 1e-4
    scn = small_scenario(seed=11, n_landmarks=6, K=3, Kbar=2)
    u = _perturbed_controls(scn, rng)
    spec = ObjectiveSpec(kind=kind)
    g = gradient(scn, spec, u, method="analytic")
    g_fd = gradient(scn, spec, u, method="fd")
    assert rel_err(g, g_fd) < tol, kind


def test_gradient_method_validation(rng):
    scn = small_scenario(seed=1)
    with pytest.raises(ValueError):
        gradient(scn, ObjectiveSpec(kind="conventional"),
                 _hover_controls(scn), method="bogus")


def test_hard_visibility_spec_for_evaluation(rng):
    """Hard-visibility evaluation must match smooth evaluation when every
    landmark is either deep inside or outside the cone boundary weighting."""
    scn = small_scenario(seed=7)
    u = _hover_controls(scn)
    j_soft = objective_value(scn, ObjectiveSpec(kind="pc-exact"), u)
    j_hard = objective_value(
        scn, ObjectiveSpec(kind="pc-exact", visibility="hard"), u)
    # hard weighting never down-weights inside the cone: at least as much
    # information, hence no larger trace
    assert j_hard <= j_soft + 1e-9
