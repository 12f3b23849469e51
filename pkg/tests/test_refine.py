"""Budget-constrained refinement: baseline quality, feasibility invariant,
descent property, and monotone behavior in the budget parameter."""

import numpy as np
import pytest

from conftest import small_scenario
from obsplan.objectives import ObjectiveSpec, gradient, objective_value
from obsplan.refine import (FEAS_TOL, RefinementProblem, SolveResult,
                            baseline_solve, default_bounds, refine)


@pytest.fixture(scope="module")
def solved():
    """One small scenario with its conventional baseline, shared per module."""
    scn = small_scenario(seed=21, n_landmarks=8, K=3, Kbar=2)
    bounds = default_bounds(scn.grid.Kbar)
    u0, J0 = baseline_solve(scn, maxiter=200, bounds=bounds)
    return scn, u0, J0


def test_default_bounds():
    lo, hi = default_bounds(3, c_max=20.0, tau_max=0.4)
    assert lo.shape == hi.shape == (12,)
    assert np.allclose(lo[0::4], 0.0) and np.allclose(hi[0::4], 20.0)
    assert np.allclose(lo[1::4], -0.4) and np.allclose(hi[3::4], 0.4)


def test_baseline_is_near_stationary(solved):
    scn, u0, J0 = solved
    g = gradient(scn, ObjectiveSpec(kind="conventional"), u0)
    lo, hi = default_bounds(scn.grid.Kbar)
    # projected gradient: zero unless the bound blocks the descent direction
    proj = np.where((u0 <= lo + 1e-12) & (g > 0), 0.0, g)
    proj = np.where((u0 >= hi - 1e-12) & (proj < 0), 0.0, proj)
    assert np.linalg.norm(proj, ord=np.inf) < 1e-4
    assert J0 == pytest.approx(
        objective_value(scn, ObjectiveSpec(kind="conventional"), u0))


@pytest.mark.parametrize("kind", ["pc-lie", "pc-exact"])
def test_refine_descends_and_stays_feasible(solved, kind):
    scn, u0, J0 = solved
    prob = RefinementProblem(scenario=scn, info_spec=ObjectiveSpec(kind=kind),
                             rho=0.1)
    res = refine(prob, u0, J0, max_outer=4, inner_maxiter=20)
    J_info_base = objective_value(scn, ObjectiveSpec(kind=kind), u0)
    assert res.J_info <= J_info_base + 1e-12
    # feasibility invariant: conventional cost within (1 + rho) of baseline
    assert res.J_conv <= (1.0 + prob.rho) * J0 + FEAS_TOL
    assert res.feasible
    assert res.J_conv_base == pytest.approx(J0)
    # returned iterate reproduces the reported objective
    assert res.J_info == pytest.approx(
        objective_value(scn, ObjectiveSpec(kind=kind), res.u), rel=1e-9)


def test_refine_monotone_in_budget(solved):
    """A larger allowed cost increase can only improve the best objective."""
    scn, u0, J0 = solved
    vals = []
    for rho in (0.02, 0.1, 0.5):
        prob = RefinementProblem(scenario=scn,
                                 info_spec=ObjectiveSpec(kind="pc-lie"),
                                 rho=rho)
        res = refine(prob, u0, J0, max_outer=4, inner_maxiter=20)
        vals.append(res.J_info)
    assert vals[1] <= vals[0] + 1e-9
    assert vals[2] <= vals[1] + 1e-9


def test_refine_zero_budget_returns_baseline(solved):
    scn, u0, J0 = solved
    prob = RefinementProblem(scenario=scn,
                             info_spec=ObjectiveSpec(kind="pc-lie"), rho=0.0)
    res = refine(prob, u0, J0, max_outer=2, inner_maxiter=10)
    assert res.J_conv <= J0 + FEAS_TOL
    assert res.J_info <= objective_value(
        scn, ObjectiveSpec(kind="pc-lie"), u0) + 1e-12


def test_solve_result_controls_round_trip(solved):
    scn, u0, J0 = solved
    res = SolveResult(u=u0, J_info=1.0, J_conv=J0, J_conv_base=J0, rho=0.1,
                      n_outer=1, converged=True, history=[])
    ctrls = res.controls()
    assert len(ctrls) == scn.grid.Kbar
    assert ctrls[0].c == u0[0]
    assert np.allclose(ctrls[1].tau, u0[5:8])
    assert res.budget == pytest.approx(1.1 * J0)
