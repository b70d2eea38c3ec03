"""Backward induction of sandwiched continuation-revenue functions.

For t = T .. 1 the solver fits two PWL concave functions per stage: upper_t
from tangent planes of period-(t+1)-onward revenue computed with the upper
continuation chain, lower_t from the concave hull of values computed with the
lower chain. Stage T is identically zero. A polish step re-samples each stage
at the balances actually reached by the induced policy, which pins the fits
exactly where the root solve consumes them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .instance import Instance, InputError
from .period import XiProfile, PeriodSolution, build_period_lp, solve_period
from .pwl import PwlConcaveFn, fit_lower, fit_upper, adaptive_approximate

BKEY_DECIMALS = 10
REACHED_CAP = 5000


def _bkey(b):
    return tuple(np.round(np.atleast_1d(b), BKEY_DECIMALS))


@dataclass
class ValueFunctionStack:
    """Per-stage sandwich functions plus solve bookkeeping.

    lower[t] <= g^t <= upper[t] where g^t(b) is the optimal revenue of periods
    t+1..T started from balances b. root_lower/root_upper are fresh period-1
    solves at b = 0 against lower[1]/upper[1].
    """

    instance: Instance
    xi: XiProfile
    kappa: float
    lower: list
    upper: list
    root_lower: float
    root_upper: float
    stats: dict
    _solve_cache: dict = field(default_factory=dict, repr=False)

    def stage_budget(self, t) -> float:
        """Cumulative sandwich budget for stage t (kappa per refit, additive)."""
        return self.kappa * (self.instance.T - t)

    def to_dict(self):
        return {
            "kappa": self.kappa,
            "xi": self.xi.to_dict(),
            "lower": [f.to_dict() if f is not None else None for f in self.lower],
            "upper": [f.to_dict() if f is not None else None for f in self.upper],
            "root_lower": self.root_lower,
            "root_upper": self.root_upper,
            "stats": self.stats,
        }

    @classmethod
    def from_dict(cls, instance, d):
        xi = XiProfile.from_dict(instance, d["xi"])
        lower = [PwlConcaveFn.from_dict(x) if x is not None else None for x in d["lower"]]
        upper = [PwlConcaveFn.from_dict(x) if x is not None else None for x in d["upper"]]
        return cls(instance=instance, xi=xi, kappa=d["kappa"], lower=lower,
                   upper=upper, root_lower=d["root_lower"], root_upper=d["root_upper"],
                   stats=d.get("stats", {}))


def period_duals_at(stack: ValueFunctionStack, t, b) -> PeriodSolution:
    """Re-solve the period-t LP at balance b against the stored upper chain.

    Deterministic, so results are cached by (t, rounded b).
    """
    if not 1 <= t <= stack.instance.T:
        raise InputError(f"period {t} outside 1..{stack.instance.T}")
    b = np.atleast_1d(np.asarray(b, dtype=float))
    key = (t, _bkey(b))
    hit = stack._solve_cache.get(key)
    if hit is None:
        model = build_period_lp(stack.instance, t, b, stack.xi.slice_at(t), stack.upper[t])
        hit = solve_period(model)
        stack._solve_cache[key] = hit
    return hit


def _solve_with(instance, xi, t, b, cont):
    return solve_period(build_period_lp(instance, t, b, xi.slice_at(t), cont))


def forward_balance_distribution(stack: ValueFunctionStack, cap=REACHED_CAP):
    """Balances reached at the start of each period under the upper-chain
    policy, with exact path probabilities, aggregated by rounded balance.

    Returns a list indexed 1..T (entry 0 unused) of dicts key -> (b, prob).
    """
    inst = stack.instance
    reached = [None] * (inst.T + 1)
    cur = {_bkey(np.zeros(inst.k)): (np.zeros(inst.k), 1.0)}
    for t in range(1, inst.T + 1):
        reached[t] = cur
        if t == inst.T:
            break
        nxt = {}
        for b, pr in cur.values():
            sol = period_duals_at(stack, t, b)
            for p in range(sol.grid.n_profiles):
                b2 = np.maximum(b + sol.delta_b[p], 0.0)
                key = _bkey(b2)
                w = pr * sol.grid.f[p]
                if key in nxt:
                    nxt[key] = (nxt[key][0], nxt[key][1] + w)
                else:
                    nxt[key] = (b2, w)
        if len(nxt) > cap:
            items = sorted(nxt.items())[:cap]
            nxt = dict(items)
            total = sum(pr for _, pr in nxt.values())
            nxt = {k: (b, pr / total) for k, (b, pr) in nxt.items()}
        cur = nxt
    return reached


def compute_value_functions(instance, xi, kappa, *, fit_stage0=True,
                            lower_chain=True, polish_passes=2,
                            eval_cap=1200) -> ValueFunctionStack:
    """Fit the sandwich chain lower_t <= g^t <= upper_t for t = T .. 0.

    kappa is the per-stage fit tolerance (relative to the largest sampled
    value); the additive gap across the chain is at most the sum of the stage
    budgets plus LP tolerance.
    """
    if kappa <= 0:
        raise InputError("kappa must be positive")
    for row in xi.table:
        for a in row:
            if (a < 0).any():
                raise InputError("xi entries must be nonnegative")
    T, k = instance.T, instance.k
    box = instance.balance_box()
    upper = [None] * (T + 1)
    lower = [None] * (T + 1)
    upper[T] = PwlConcaveFn.zero(k, box)
    lower[T] = PwlConcaveFn.zero(k, box)
    zero_b = np.zeros(k)
    stats = {"stages": {}, "lp_solves": 0, "polish": []}
    upper_samples = [None] * (T + 1)   # per stage: dict key -> (b, val, grad)
    lower_samples = [None] * (T + 1)   # per stage: dict key -> (b, val)

    def upper_eval(t):
        def f(b):
            sol = _solve_with(instance, xi, t, b, upper[t])
            stats["lp_solves"] += 1
            return sol.objective, sol.balance_supergradient
        return f

    for t in range(T, 0, -1):
        target = t - 1
        if target == 0 and not fit_stage0:
            break
        fit = adaptive_approximate(upper_eval(t), kappa, box, eval_cap=eval_cap)
        upper[target] = fit.upper
        upper_samples[target] = {_bkey(b): (np.array(b), v, np.array(g))
                                 for b, v, g in fit.samples}
        st = dict(fit.stats)
        if lower_chain:
            lsamp = {}
            for b, _, _ in fit.samples:
                barr = np.array(b)
                sol = _solve_with(instance, xi, t, barr, lower[t])
                stats["lp_solves"] += 1
                lsamp[_bkey(barr)] = (barr, sol.objective)
            lower[target] = fit_lower([(b, v) for b, v in lsamp.values()], box)
            lower_samples[target] = lsamp
            st["pieces_lower_chain"] = lower[target].n_pieces
        stats["stages"][target] = st

    probe = ValueFunctionStack(instance=instance, xi=xi, kappa=kappa, lower=lower,
                               upper=upper, root_lower=float("nan"),
                               root_upper=float("nan"), stats=stats)

    for _ in range(polish_passes if T > 1 else 0):
        reached = forward_balance_distribution(probe)
        added = 0
        changed = set()
        for tau in range(T - 1, 0, -1):
            if upper_samples[tau] is None:
                continue
            pts = {}
            for b, pr in reached[tau + 1].values():
                pts[_bkey(b)] = b
            stale = (tau + 1) in changed
            new_keys = [kk for kk in pts if kk not in upper_samples[tau]]
            if not new_keys and not stale:
                continue
            keys = list(upper_samples[tau].keys()) + new_keys if stale else new_keys
            for kk in keys:
                b = pts.get(kk, upper_samples[tau].get(kk, (None,))[0])
                if b is None:
                    b = np.array(kk)
                sol = _solve_with(instance, xi, tau + 1, b, upper[tau + 1])
                stats["lp_solves"] += 1
                upper_samples[tau][kk] = (np.asarray(b, dtype=float), sol.objective,
                                          sol.balance_supergradient)
                if lower_chain:
                    sol2 = _solve_with(instance, xi, tau + 1, b, lower[tau + 1])
                    stats["lp_solves"] += 1
                    lower_samples[tau][kk] = (np.asarray(b, dtype=float), sol2.objective)
                added += 1
            upper[tau] = fit_upper(list(upper_samples[tau].values()), box)
            if lower_chain:
                lower[tau] = fit_lower(list(lower_samples[tau].values()), box)
            changed.add(tau)
        stats["polish"].append(added)
        probe._solve_cache.clear()
        if added == 0 and not changed:
            break

    if fit_stage0 and T >= 1 and upper_samples[0] is not None and stats["polish"]:
        # stage-0 fits were built before polish reshaped stage 1; refresh them
        for kk in list(upper_samples[0].keys()):
            b = upper_samples[0][kk][0]
            sol = _solve_with(instance, xi, 1, b, upper[1])
            stats["lp_solves"] += 1
            upper_samples[0][kk] = (b, sol.objective, sol.balance_supergradient)
            if lower_chain:
                sol2 = _solve_with(instance, xi, 1, b, lower[1])
                stats["lp_solves"] += 1
                lower_samples[0][kk] = (b, sol2.objective)
        upper[0] = fit_upper(list(upper_samples[0].values()), box)
        if lower_chain:
            lower[0] = fit_lower(list(lower_samples[0].values()), box)

    root_up = _solve_with(instance, xi, 1, zero_b, upper[1]).objective
    stats["lp_solves"] += 1
    root_lo = float("nan")
    if lower_chain:
        root_lo = _solve_with(instance, xi, 1, zero_b, lower[1]).objective
        stats["lp_solves"] += 1

    stats["pieces"] = {t: {"lower": (lower[t].n_pieces if lower[t] else None),
                           "upper": (upper[t].n_pieces if upper[t] else None)}
                       for t in range(T + 1)}
    return ValueFunctionStack(instance=instance, xi=xi, kappa=kappa, lower=lower,
                              upper=upper, root_lower=root_lo, root_upper=root_up,
                              stats=stats)


def stage_sandwich_values(stack: ValueFunctionStack, t, b):
    """(lower-fit, lower-chain LP, upper-chain LP, upper-fit) values at b for
    stage t; the four must be nondecreasing up to tolerance."""
    inst, xi = stack.instance, stack.xi
    lo_fit = stack.lower[t].value(b) if stack.lower[t] is not None else float("nan")
    up_fit = stack.upper[t].value(b)
    lo_lp = _solve_with(inst, xi, t + 1, b, stack.lower[t + 1]).objective
    up_lp = _solve_with(inst, xi, t + 1, b, stack.upper[t + 1]).objective
    return lo_fit, lo_lp, up_lp, up_fit
