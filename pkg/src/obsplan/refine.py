"""Local trajectory refinement under a bounded-cost constraint.

Starting from a conventional (effort + goal) optimum, the refiner reduces an
information objective while keeping the conventional cost within a factor
(1 + rho) of its baseline value.  Single shooting over the piecewise-constant
interval controls; the inequality constraint is handled by an augmented
Lagrangian wrapped around box-constrained L-BFGS.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np
from scipy.optimize import minimize

from .fwdmode import value
from .geometry import ControlInput
from .objectives import ObjectiveSpec, Scenario, gradient, objective_value

FEAS_TOL = 1e-6


def default_bounds(Kbar, c_max=25.0, tau_max=0.5):
    """Box bounds per control entry: thrust in [0, c_max], moments symmetric."""
    lo = np.tile([0.0, -tau_max, -tau_max, -tau_max], Kbar)
    hi = np.tile([c_max, tau_max, tau_max, tau_max], Kbar)
    return lo, hi


@dataclass(frozen=True)
class RefinementProblem:
    """Information objective to reduce subject to a conventional-cost budget."""

    scenario: Scenario
    info_spec: ObjectiveSpec
    rho: float = 0.1
    conv_spec: ObjectiveSpec = dfield(
        default_factory=lambda: ObjectiveSpec(kind="conventional"))
    c_max: float = 25.0
    tau_max: float = 0.5
    grad_method: str = "analytic"

    def bounds(self):
        return default_bounds(self.scenario.grid.Kbar, self.c_max, self.tau_max)


@dataclass
class SolveResult:
    """Refined controls plus the bookkeeping needed to audit feasibility."""

    u: np.ndarray
    J_info: float
    J_conv: float
    J_conv_base: float
    rho: float
    n_outer: int
    converged: bool
    history: list

    @property
    def budget(self):
        return (1.0 + self.rho) * self.J_conv_base

    @property
    def feasible(self):
        return self.J_conv <= self.budget + FEAS_TOL

    def controls(self):
        return [ControlInput(self.u[4 * i], self.u[4 * i + 1:4 * i + 4])
                for i in range(len(self.u) // 4)]


def baseline_solve(scn: Scenario, u_init=None, conv_spec=None, gtol=1e-6,
                   maxiter=500, bounds=None, grad_method="analytic"):
    """Minimize the conventional cost; returns (u_base, J_conv_base)."""
    conv_spec = conv_spec or ObjectiveSpec(kind="conventional")
    if u_init is None:
        u_init = np.tile(scn.hover().asarray(), scn.grid.Kbar)
    u_init = np.asarray(u_init, dtype=float)
    if bounds is None:
        bounds = default_bounds(scn.grid.Kbar)
    res = minimize(
        lambda u: objective_value(scn, conv_spec, u),
        u_init,
        jac=lambda u: gradient(scn, conv_spec, u, grad_method),
        method="L-BFGS-B",
        bounds=list(zip(*bounds)),
        options={"gtol": gtol, "maxiter": maxiter},
    )
    return np.asarray(res.x, dtype=float), float(res.fun)


def _restore_feasibility(u, c, u_anchor, violation, J_info, ctol,
                         max_bisect=12):
    """Pull a slightly infeasible iterate back inside the budget.

    Bisects along the segment to a known-feasible anchor for the largest
    step fraction that satisfies the constraint; returns (point, J_info).
    """
    if c <= ctol:
        return u.copy(), J_info(u)
    lo, hi = 0.0, 1.0  # fraction of the way from the anchor toward u
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        if violation(u_anchor + mid * (u - u_anchor)) <= ctol:
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        return u_anchor.copy(), J_info(u_anchor)
    cand = u_anchor + lo * (u - u_anchor)
    return cand, J_info(cand)


def refine(problem: RefinementProblem, u_base, J_conv_base,
           max_outer=20, inner_maxiter=60, penalty0=1.0, penalty_growth=10.0,
           constraint_tol=None) -> SolveResult:
    """Augmented-Lagrangian reduction of the information objective.

    The returned iterate always satisfies the conventional-cost budget (the
    baseline itself is the fallback), and never has a worse information value
    than the baseline.
    """
    scn = problem.scenario
    u_base = np.asarray(u_base, dtype=float)
    budget = (1.0 + problem.rho) * J_conv_base
    scale = max(abs(budget), 1e-12)  # dimensionless constraint conditioning
    ctol = constraint_tol if constraint_tol is not None else FEAS_TOL
    bounds = list(zip(*problem.bounds()))

    def J_info(u):
        return objective_value(scn, problem.info_spec, u)

    def g_info(u):
        return gradient(scn, problem.info_spec, u, problem.grad_method)

    def violation(u):
        return (objective_value(scn, problem.conv_spec, u) - budget) / scale

    best_u = u_base.copy()
    best_J = J_info(u_base)
    history = [{"outer": 0, "J_info": best_J, "violation": float(violation(u_base)),
                "penalty": 0.0}]

    mu = 0.0
    # penalty scaled to the objective magnitude: the constraint is relative,
    # so the quadratic term must compete with the info-objective gradient
    sigma = penalty0 * max(1.0, abs(best_J))
    u = u_base.copy()
    converged = False
    n_outer = 0
    for outer in range(1, max_outer + 1):
        n_outer = outer

        def lagrangian(uv):
            c = violation(uv)
            t = mu / sigma + c
            if t <= 0.0:
                return J_info(uv) - 0.5 * mu * mu / sigma
            return J_info(uv) + 0.5 * sigma * t * t - 0.5 * mu * mu / sigma

        def lagrangian_grad(uv):
            c = violation(uv)
            t = mu / sigma + c
            g = g_info(uv)
            if t > 0.0:
                g = g + (sigma * t / scale) * gradient(
                    scn, problem.conv_spec, uv, problem.grad_method)
            return g

        res = minimize(lagrangian, u, jac=lagrangian_grad, method="L-BFGS-B",
                       bounds=bounds, options={"maxiter": inner_maxiter})
        u = np.asarray(res.x, dtype=float)
        c = float(violation(u))
        Ji = J_info(u)
        history.append({"outer": outer, "J_info": Ji, "violation": c,
                        "penalty": sigma})
        cand_u, cand_J = _restore_feasibility(u, c, best_u, violation, J_info,
                                              ctol)
        if cand_J < best_J:
            best_u, best_J = cand_u, cand_J
        mu = max(0.0, mu + sigma * c)
        if c <= ctol:
            if outer > 1 and abs(history[-1]["J_info"] - history[-2]["J_info"]) \
                    <= 1e-9 * max(1.0, abs(Ji)):
                converged = True
                break
        else:
            sigma *= penalty_growth

    Jc = float(objective_value(scn, problem.conv_spec, best_u))
    return SolveResult(u=best_u, J_info=float(best_J), J_conv=Jc,
                       J_conv_base=float(J_conv_base), rho=problem.rho,
                       n_outer=n_outer, converged=converged, history=history)
