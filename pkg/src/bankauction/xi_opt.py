"""Optimizing the per-period utility promises xi by projected gradient ascent.

The revenue sensitivity dR/dxi_i^t(v_-i) = (E_b[beta_i^t(v_-i)] - 1) f^t(v_-i)
comes straight out of LP duality: beta_i^t(v_-i) = lambda_i^t(v_-i)/f(v_-i)
+ E_{v_i}[g_i^t(delta_b(v) + b)], with lambda the balance-constraint dual and
g_i the supergradient of the stage-t upper function at the updated balance.
E_b averages over the balance distribution induced by earlier periods
(exhaustive forward enumeration at desk scale, seeded Monte Carlo otherwise).
R(xi) is concave, so ascent with a backtracking line search and the
nonnegativity projection converges to the optimality condition
E_b[beta] = 1 or (xi = 0 and E_b[beta] <= 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .induction import (ValueFunctionStack, compute_value_functions,
                        forward_balance_distribution, period_duals_at)
from .instance import Instance, InputError
from .period import XiProfile

KKT_TOL = 1e-3
GRAD_NORM_TOL = 1e-5
ARMIJO_C = 1e-4
MC_PATHS = 100_000
PATH_GUARD = 1_000_000


@dataclass
class XiGradient:
    """dR/dxi per (t, i, opponent profile), plus the E_b[beta] table and the
    balance distribution used for the expectation."""

    grad: list          # [t-1][i] -> np.ndarray over opponent profiles
    beta: list          # [t-1][i] -> np.ndarray, E_b[beta_i^t(v_-i)]
    balance_dist: list  # [t] -> dict key -> (b, prob); entry 0 unused

    def as_vector(self):
        return np.concatenate([a for row in self.grad for a in row])

    def kkt_satisfied(self, xi: XiProfile, tol=KKT_TOL):
        """Entrywise: |E_b[beta] - 1| <= tol, or xi = 0 and E_b[beta] <= 1 + tol."""
        for tm1, row in enumerate(self.beta):
            for i, betas in enumerate(row):
                for o, eb in enumerate(betas):
                    if abs(eb - 1.0) <= tol:
                        continue
                    if xi.table[tm1][i][o] <= 1e-12 and eb <= 1.0 + tol:
                        continue
                    return False
        return True


def _sampled_balance_distribution(stack, n_paths, seed):
    """Monte Carlo balance distribution for instances too large to enumerate."""
    inst = stack.instance
    rng = np.random.default_rng(seed)
    reached = [None] * (inst.T + 1)
    counts = [dict() for _ in range(inst.T + 1)]
    for _ in range(n_paths):
        b = np.zeros(inst.k)
        for t in range(1, inst.T + 1):
            key = tuple(np.round(b, 10))
            if key in counts[t]:
                counts[t][key] = (counts[t][key][0], counts[t][key][1] + 1)
            else:
                counts[t][key] = (b.copy(), 1)
            if t == inst.T:
                break
            sol = period_duals_at(stack, t, b)
            p = rng.choice(sol.grid.n_profiles, p=sol.grid.f)
            b = b + sol.delta_b[p]
    for t in range(1, inst.T + 1):
        reached[t] = {k: (b, c / n_paths) for k, (b, c) in sorted(counts[t].items())}
    return reached


def gradient_xi(instance, stack: ValueFunctionStack, xi=None, *, seed=0) -> XiGradient:
    """Exact sensitivity of the upper-chain revenue with respect to every xi
    entry, via balance duals and stage supergradients at reached balances."""
    if xi is None:
        xi = stack.xi
    T, k = instance.T, instance.k
    if instance.n_paths() <= PATH_GUARD:
        reached = forward_balance_distribution(stack)
    else:
        reached = _sampled_balance_distribution(stack, MC_PATHS, seed)

    beta = [[np.zeros(len(instance.opponent_profiles(t, i))) for i in range(k)]
            for t in range(1, T + 1)]
    for t in range(1, T + 1):
        for b, pr in reached[t].values():
            sol = period_duals_at(stack, t, b)
            grid = sol.grid
            # supergradient of upper_t at each updated balance, taken as the
            # LP's own dual mass over active pieces (exact sensitivity even
            # when the argument sits on a kink)
            if sol.nu.size:
                gsup = (sol.nu @ sol.gbar.slopes) / grid.f[:, None]
            else:
                gsup = np.zeros((grid.n_profiles, k))
            for i in range(k):
                e_g = np.zeros(len(grid.opp[i]))
                for p in range(grid.n_profiles):
                    e_g[grid.opp_of[p, i]] += grid.f[p] / grid.f_opp[i][grid.opp_of[p, i]] * gsup[p, i]
                beta_b = sol.lam[i] / grid.f_opp[i] + e_g
                beta[t - 1][i] += pr * beta_b

    grad = [[(beta[t - 1][i] - 1.0) * _f_opp(instance, t, i)
             for i in range(k)] for t in range(1, T + 1)]
    return XiGradient(grad=grad, beta=beta, balance_dist=reached)


def _f_opp(instance, t, i):
    return np.array([instance.opponent_density(t, i, o)
                     for o in instance.opponent_profiles(t, i)])


class OptimizeResult(NamedTuple):
    xi: XiProfile
    stack: ValueFunctionStack
    revenue: float          # upper-chain value at the optimized xi
    trace: list             # per-iterate dicts: revenue, grad norm, phase
    status: str             # converged | certified | stalled | step-cap
    iterations: int


def _xi_caps(instance):
    """Per-entry search box: a promise beyond the total value range is never
    profitable (one unit of balance recovers at most one unit of revenue)."""
    cap = float(instance.balance_box().max())
    out = []
    for t in range(1, instance.T + 1):
        for i in range(instance.k):
            out.extend([cap] * len(instance.opponent_profiles(t, i)))
    return np.array(out)


def _kelley_argmax(cuts, caps):
    """Maximize the cutting-plane model max z s.t. z <= R_j + g_j (xi - xi_j)
    over the xi box. Returns (model value, argmax)."""
    from .lp import LpModel, solve_lp

    n = len(caps)
    model = LpModel(name="xi_model")
    xis = [model.add_var(f"xi{j}", lb=0.0, ub=float(caps[j])) for j in range(n)]
    z = model.add_var("z", lb=None, ub=None, obj=1.0)
    for m, (xj, rj, gj) in enumerate(cuts):
        coeffs = {z: 1.0}
        for j in range(n):
            if gj[j] != 0.0:
                coeffs[xis[j]] = -gj[j]
        model.add_constraint(("cut", m), coeffs, "<=", float(rj - gj @ xj) + CUT_SLACK)
    sol = solve_lp(model)
    if sol.status != "optimal":
        return None, None
    return float(sol.objective), np.array([sol.x[v] for v in xis])


CUT_SLACK = 1e-9
KELLEY_GAP_TOL = 1e-7


def optimize_xi(instance, epsilon, *, kappa=None, step_cap=60, ls_max=12,
                eval_cap=1200, polish_passes=2, seed=0) -> OptimizeResult:
    """Maximize R(xi) from xi = 0 subject to xi >= 0.

    Phase 1 is projected gradient ascent (projection: clamp at 0) with a
    backtracking line search from step 1.0 (Armijo constant 1e-4). R is
    concave but piecewise linear, so the line search can stall on a kink
    short of the maximum; phase 2 then switches to a cutting-plane bundle
    built from the same sensitivity supergradients, which terminates with a
    certified optimality gap. Returns the best iterate with fresh full chains.
    """
    if not epsilon > 0:
        raise InputError("epsilon must be positive")
    if kappa is None:
        kappa = epsilon / (2.0 * instance.T)

    def build(x, final=False):
        return compute_value_functions(
            instance, x, kappa, fit_stage0=final, lower_chain=final,
            polish_passes=polish_passes, eval_cap=eval_cap)

    cuts = []
    trace = []

    def evaluate(xi):
        stack = build(xi)
        g = gradient_xi(instance, stack, seed=seed)
        cuts.append((xi.as_vector(), stack.root_upper, g.as_vector()))
        return stack, g

    xi = XiProfile.zeros(instance)
    stack, grad = evaluate(xi)
    revenue = stack.root_upper
    best = (revenue, xi, stack, grad)
    status = "step-cap"
    stalls = 0
    it = 0
    for it in range(1, step_cap + 1):
        gv = grad.as_vector()
        xv = xi.as_vector()
        proj = gv.copy()
        proj[(xv <= 1e-12) & (gv < 0)] = 0.0
        gnorm = float(np.linalg.norm(proj))
        trace.append({"iter": it, "phase": "ascent", "revenue": revenue,
                      "grad_norm": gnorm})
        if grad.kkt_satisfied(xi):
            status = "converged"
            break
        if gnorm <= GRAD_NORM_TOL:
            status = "converged"
            break
        step = 1.0
        accepted = False
        for _ in range(ls_max):
            trial_v = np.maximum(xv + step * proj, 0.0)
            move = trial_v - xv
            if not move.any():
                break
            trial = XiProfile.from_vector(instance, trial_v)
            trial_stack, trial_grad = evaluate(trial)
            if trial_stack.root_upper >= revenue + ARMIJO_C * float(gv @ move) - 1e-12:
                xi, stack, grad = trial, trial_stack, trial_grad
                revenue = stack.root_upper
                accepted = True
                break
            step *= 0.5
        if accepted:
            stalls = 0
            if revenue > best[0]:
                best = (revenue, xi, stack, grad)
        else:
            stalls += 1
            if stalls >= 2:
                status = "stalled"
                break

    if revenue > best[0]:
        best = (revenue, xi, stack, grad)

    if status != "converged":
        # cutting-plane refinement on the bundle gathered so far
        caps = _xi_caps(instance)
        for kt in range(1, 2 * step_cap + 1):
            zstar, cand = _kelley_argmax(cuts, caps)
            if zstar is None:
                break
            gap = zstar - best[0]
            trace.append({"iter": it + kt, "phase": "cutting-plane",
                          "revenue": best[0], "model_gap": gap})
            if gap <= KELLEY_GAP_TOL * (1.0 + abs(best[0])):
                status = "certified"
                break
            cxi = XiProfile.from_vector(instance, cand)
            cstack, cgrad = evaluate(cxi)
            if cstack.root_upper > best[0]:
                best = (cstack.root_upper, cxi, cstack, cgrad)
        if status not in ("certified", "converged") and best[3].kkt_satisfied(best[1]):
            status = "converged"

    final_stack = build(best[1], final=True)
    return OptimizeResult(xi=best[1], stack=final_stack, revenue=final_stack.root_upper,
                          trace=trace, status=status, iterations=len(trace))
