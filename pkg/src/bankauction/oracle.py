"""Independent ground truth: the unrestricted optimal dynamic mechanism as one
full-history LP, plus the repeated static (Myerson) benchmark.

The oracle enumerates every report history, with allocation and payment
variables per (period, history, buyer). Incentives are imposed as one-shot
deviations: truth at period t versus a single misreport at t followed by
truthful play, pointwise in the opponents' full report path, in expectation
over the deviator's own future values. Individual rationality is ex-post per
complete value path. This is deliberately brute force and guarded to stay at
desk scale; it exists to certify the main solver.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .instance import Instance, InputError
from .lp import LpModel, solve_lp, LpError
from .period import PeriodGrid

HISTORY_GUARD = 100_000


class OracleSizeError(InputError):
    """Instance exceeds the oracle's history guard."""


@dataclass
class OracleSolution:
    revenue: float
    alloc: dict          # (t, history) -> np.ndarray of k allocations
    pay: dict            # (t, history) -> np.ndarray of k payments
    residuals: dict      # max violations: feasibility, dic, epir
    n_histories: int

    def to_dict(self):
        def key(th):
            t, h = th
            return f"t{t}|" + ";".join(",".join(f"{v:g}" for v in prof) for prof in h)
        return {
            "revenue": self.revenue,
            "n_histories": self.n_histories,
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "alloc": {key(th): [float(v) for v in a] for th, a in self.alloc.items()},
            "pay": {key(th): [float(v) for v in a] for th, a in self.pay.items()},
        }


def _merge(i, own, opp):
    """Insert buyer i's value into an opponent tuple to form a full profile."""
    return opp[:i] + (own,) + opp[i:]


def _histories(instance):
    """Histories per period: hist at t is a tuple of t profiles."""
    out = {}
    prev = [()]
    for t in range(1, instance.T + 1):
        profs = instance.profiles(t)
        cur = [h + (p,) for h in prev for p in profs]
        out[t] = cur
        prev = cur
    return out


def solve_full_history_lp(instance: Instance) -> OracleSolution:
    """Optimal dynamic-mechanism revenue by direct LP over all histories."""
    n_hist = instance.n_histories()
    if n_hist > HISTORY_GUARD:
        raise OracleSizeError(
            f"{n_hist} histories exceed the oracle guard of {HISTORY_GUARD}")
    T, k = instance.T, instance.k
    hists = _histories(instance)
    prob_hist = {}
    for t in range(1, T + 1):
        for h in hists[t]:
            pr = 1.0
            for tau, prof in enumerate(h, start=1):
                pr *= instance.joint_density(tau, prof)
            prob_hist[(t, h)] = pr

    model = LpModel(name="full_history")
    xvar, pvar = {}, {}
    for t in range(1, T + 1):
        for h in hists[t]:
            pr = prob_hist[(t, h)]
            for i in range(k):
                xvar[(t, h, i)] = model.add_var(f"x", lb=0.0, ub=1.0)
                pvar[(t, h, i)] = model.add_var(f"p", lb=None, ub=None, obj=pr)

    for t in range(1, T + 1):
        for h in hists[t]:
            model.add_constraint(("feas", t, h),
                                 {xvar[(t, h, i)]: 1.0 for i in range(k)}, "<=", 1.0)

    own_sup = {(t, i): instance.dist(t, i).support for t in range(1, T + 1) for i in range(k)}
    own_prob = {(t, i): instance.dist(t, i).probs for t in range(1, T + 1) for i in range(k)}
    opp_profs = {(t, i): instance.opponent_profiles(t, i)
                 for t in range(1, T + 1) for i in range(k)}

    def add_stream(coeffs, i, own_path, opp_path, sign, weight, start, own_true):
        """Accumulate +-weight * utility of buyer i in periods start..T along the
        reported history (own_path, opp_path); true values follow own_true."""
        hist = tuple(_merge(i, own_path[tau], opp_path[tau]) for tau in range(T))
        for tau in range(start, T + 1):
            h = hist[:tau]
            v = own_true[tau - 1]
            coeffs[xvar[(tau, h, i)]] = coeffs.get(xvar[(tau, h, i)], 0.0) + sign * weight * v
            coeffs[pvar[(tau, h, i)]] = coeffs.get(pvar[(tau, h, i)], 0.0) - sign * weight

    for t in range(1, T + 1):
        for i in range(k):
            own_past = list(itertools.product(*[own_sup[(tau, i)] for tau in range(1, t)]))
            futures = list(itertools.product(*[own_sup[(tau, i)] for tau in range(t + 1, T + 1)]))
            fut_probs = []
            for fut in futures:
                w = 1.0
                for tau, v in enumerate(fut, start=t + 1):
                    w *= own_prob[(tau, i)][own_sup[(tau, i)].index(v)]
                fut_probs.append(w)
            opp_paths = list(itertools.product(*[opp_profs[(tau, i)] for tau in range(1, T + 1)]))
            for q in own_past:
                for w in opp_paths:
                    for a in own_sup[(t, i)]:
                        for d in own_sup[(t, i)]:
                            if d == a:
                                continue
                            coeffs = {}
                            for fut, fw in zip(futures, fut_probs):
                                true_path = q + (a,) + fut
                                dev_path = q + (d,) + fut
                                add_stream(coeffs, i, dev_path, w, +1.0, fw, t, true_path)
                                add_stream(coeffs, i, true_path, w, -1.0, fw, t, true_path)
                            model.add_constraint(("dic", t, i, q, a, d, w), coeffs, "<=", 0.0)

    full_paths = hists[T]
    for i in range(k):
        for h in full_paths:
            coeffs = {}
            for tau in range(1, T + 1):
                sub = h[:tau]
                v = h[tau - 1][i]
                coeffs[xvar[(tau, sub, i)]] = coeffs.get(xvar[(tau, sub, i)], 0.0) - v
                coeffs[pvar[(tau, sub, i)]] = coeffs.get(pvar[(tau, sub, i)], 0.0) + 1.0
            model.add_constraint(("epir", i, h), coeffs, "<=", 0.0)

    sol = solve_lp(model)
    if sol.status != "optimal":
        raise LpError(f"oracle LP status: {sol.status}")

    alloc, pay = {}, {}
    for t in range(1, T + 1):
        for h in hists[t]:
            alloc[(t, h)] = np.array([sol.x[xvar[(t, h, i)]] for i in range(k)])
            pay[(t, h)] = np.array([sol.x[pvar[(t, h, i)]] for i in range(k)])

    feas_resid = max(max(0.0, float(a.sum() - 1.0)) for a in alloc.values())
    epir_resid = 0.0
    for i in range(k):
        for h in full_paths:
            cum = sum(h[tau - 1][i] * alloc[(tau, h[:tau])][i] - pay[(tau, h[:tau])][i]
                      for tau in range(1, T + 1))
            epir_resid = max(epir_resid, -cum)
    dic_resid = 0.0
    for ident, coeffs, sense, rhs in model.rows:
        if ident[0] == "dic":
            lhs = sum(c * sol.x[j] for j, c in coeffs.items())
            dic_resid = max(dic_resid, lhs - rhs)

    return OracleSolution(revenue=sol.objective, alloc=alloc, pay=pay,
                          residuals={"feasibility": feas_resid,
                                     "dic": max(0.0, dic_resid),
                                     "epir": max(0.0, epir_resid)},
                          n_histories=n_hist)


def check_multi_period_deviations(instance, osol: OracleSolution,
                                  strategy_guard=200_000) -> float:
    """Max expected gain over full deviation strategies (report plans that may
    misreport in several periods), per buyer and opponent report path.

    One-shot-deviation consistency: for a DIC mechanism this should not exceed
    the single-deviation violation. Returns the max gain found.
    """
    T, k = instance.T, instance.k
    worst = 0.0
    for i in range(k):
        sup = [instance.dist(t, i).support for t in range(1, T + 1)]
        probs = [instance.dist(t, i).probs for t in range(1, T + 1)]
        decision_points = []
        for t in range(1, T + 1):
            decision_points.extend(itertools.product(*sup[:t]))
        n_strats = 1
        for t in range(1, T + 1):
            n_strats *= len(sup[t - 1]) ** len(list(itertools.product(*sup[:t])))
        opp_paths = list(itertools.product(*[instance.opponent_profiles(t, i)
                                             for t in range(1, T + 1)]))
        if n_strats * len(opp_paths) > strategy_guard:
            raise OracleSizeError(f"{n_strats} deviation strategies exceed the guard")

        point_index = {pt: n for n, pt in enumerate(decision_points)}
        choice_sets = [sup[len(pt) - 1] for pt in decision_points]
        for w in opp_paths:
            def path_util(true_path, report_path):
                u = 0.0
                hist = tuple(_merge(i, report_path[tau], w[tau]) for tau in range(T))
                for tau in range(1, T + 1):
                    h = hist[:tau]
                    u += true_path[tau - 1] * osol.alloc[(tau, h)][i] - osol.pay[(tau, h)][i]
                return u

            true_paths = list(itertools.product(*sup))
            path_prob = []
            for tp in true_paths:
                pr = 1.0
                for t, v in enumerate(tp, start=1):
                    pr *= probs[t - 1][sup[t - 1].index(v)]
                path_prob.append(pr)
            truth_value = sum(pr * path_util(tp, tp) for tp, pr in zip(true_paths, path_prob))

            best = truth_value
            for plan in itertools.product(*choice_sets):
                val = 0.0
                for tp, pr in zip(true_paths, path_prob):
                    rp = tuple(plan[point_index[tp[:t]]] for t in range(1, T + 1))
                    val += pr * path_util(tp, rp)
                if val > best:
                    best = val
            worst = max(worst, best - truth_value)
    return worst


def myerson_period_revenue(instance, t) -> float:
    """Optimal static single-period revenue: max expected virtual surplus over
    monotone feasible allocations (the discrete Myerson LP)."""
    grid = PeriodGrid(instance, t)
    k, P = grid.k, grid.n_profiles
    model = LpModel(name=f"myerson_t{t}")
    xvar = np.zeros((P, k), dtype=int)
    for p in range(P):
        for i in range(k):
            m = grid.own_idx[p, i]
            virt = grid.profiles[p][i] - grid.vth[i][m]
            xvar[p, i] = model.add_var(f"x_p{p}_b{i}", lb=0.0, obj=grid.f[p] * virt)
    for i in range(k):
        for o in range(len(grid.opp[i])):
            for j in range(len(grid.supports[i]) - 1):
                model.add_constraint(("mono", i, o, j),
                                     {xvar[grid.profile_from(i, j, o), i]: 1.0,
                                      xvar[grid.profile_from(i, j + 1, o), i]: -1.0},
                                     "<=", 0.0)
    for p in range(P):
        model.add_constraint(("feas", p), {xvar[p, i]: 1.0 for i in range(k)}, "<=", 1.0)
    sol = solve_lp(model)
    if sol.status != "optimal":
        raise LpError(f"myerson LP status: {sol.status}")
    return sol.objective


def repeated_myerson_revenue(instance) -> float:
    """Static benchmark: the optimal single-period auction run independently
    each period."""
    return sum(myerson_period_revenue(instance, t) for t in range(1, instance.T + 1))
