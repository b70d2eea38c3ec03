"""Forward execution of a solved bank-account policy over value paths.

The policy re-solves the stored period LP at each reached (period, balance)
pair — deterministically, so repeated runs agree bit for bit — and realizes
payments with the envelope payment rule. The simulator certifies ex-post
individual rationality, balance-update validity, balance independence of the
per-period expected utilities, revenue, and (exhaustively, on small
instances) dynamic incentive compatibility by one-shot deviations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .induction import ValueFunctionStack, period_duals_at, _bkey
from .instance import InputError
from .period import payments_from_solution

EPIR_TOL = 1e-8
BU_TOL = 1e-8
BI_TOL = 1e-6
DIC_TOL = 1e-6
EXHAUSTIVE_GUARD = 1_000_000


class MechanismPolicy:
    """A solved mechanism: maps (period, balance) to the period auction."""

    def __init__(self, stack: ValueFunctionStack):
        self.stack = stack
        self.instance = stack.instance
        self.xi = stack.xi
        self._pay = {}

    def period_solution(self, t, b):
        return period_duals_at(self.stack, t, b)

    def payments(self, t, b):
        key = (t, _bkey(b))
        hit = self._pay.get(key)
        if hit is None:
            hit = payments_from_solution(self.period_solution(t, b))
            self._pay[key] = hit
        return hit


@dataclass
class SimReport:
    mode: str
    n_paths: int
    revenue: float
    revenue_stderr: float     # 0 for exhaustive runs
    residuals: dict           # epir, bu, bi, dic (dic None when not computed)

    @property
    def passed(self):
        r = self.residuals
        ok = (r["epir"] <= EPIR_TOL and r["bu"] <= BU_TOL and r["bi"] <= BI_TOL)
        if r.get("dic") is not None:
            ok = ok and r["dic"] <= DIC_TOL
        return ok

    def to_dict(self):
        return {"mode": self.mode, "n_paths": self.n_paths,
                "revenue": self.revenue, "revenue_stderr": self.revenue_stderr,
                "residuals": {k: (float(v) if v is not None else None)
                              for k, v in self.residuals.items()},
                "passed": bool(self.passed)}


def _bi_residual(policy, visited):
    """Max |E_{v_i}[utility] - xi| over visited (t, balance) and (i, v_-i)."""
    worst = 0.0
    for t, b in visited:
        sol = policy.period_solution(t, b)
        realized = sol.expected_utilities()
        for i in range(policy.instance.k):
            worst = max(worst, float(np.max(np.abs(realized[i] - policy.xi.slice_at(t)[i]))))
    return worst


def simulate(policy: MechanismPolicy, mode="exhaustive", n=None, seed=None) -> SimReport:
    """Run the policy over value paths and report revenue and residuals.

    mode="exhaustive" enumerates all paths with exact probabilities (guarded);
    mode="sampled" draws n seeded paths and reports a mean and standard error.
    """
    inst = policy.instance
    if mode == "exhaustive":
        if inst.n_paths() > EXHAUSTIVE_GUARD:
            raise InputError(f"{inst.n_paths()} paths exceed the exhaustive guard")
        revenue = 0.0
        bu_resid = 0.0
        min_cum = 0.0
        visited = set()
        stack_frames = [(1, np.zeros(inst.k), 1.0, np.zeros(inst.k))]
        while stack_frames:
            t, b, pr, cum = stack_frames.pop()
            visited.add((t, _bkey(b)))
            sol = policy.period_solution(t, b)
            pay = policy.payments(t, b)
            for p, prof in enumerate(sol.grid.profiles):
                w = pr * sol.grid.f[p]
                u = np.array([prof[i] * sol.x[p, i] - pay[p, i] for i in range(inst.k)])
                revenue += w * float(pay[p].sum())
                b2 = b + sol.delta_b[p]
                bu_resid = max(bu_resid, float(np.max(-b2)),
                               float(np.max(b2 - (b + u))))
                cum2 = cum + u
                if t == inst.T:
                    min_cum = min(min_cum, float(cum2.min()))
                else:
                    stack_frames.append((t + 1, b2, w, cum2))
        dic = None
        try:
            dic = check_dic_exhaustive(policy)
        except InputError:
            pass
        return SimReport(mode="exhaustive", n_paths=inst.n_paths(), revenue=revenue,
                         revenue_stderr=0.0,
                         residuals={"epir": max(0.0, -min_cum), "bu": bu_resid,
                                    "bi": _bi_residual(policy, visited), "dic": dic})

    if mode != "sampled":
        raise InputError(f"unknown mode {mode!r}")
    if not n or seed is None:
        raise InputError("sampled mode needs n and seed")
    rng = np.random.default_rng(seed)
    draws = np.zeros(n)
    bu_resid = 0.0
    min_cum = 0.0
    visited = set()
    for s in range(n):
        b = np.zeros(inst.k)
        cum = np.zeros(inst.k)
        rev = 0.0
        for t in range(1, inst.T + 1):
            visited.add((t, _bkey(b)))
            sol = policy.period_solution(t, b)
            pay = policy.payments(t, b)
            p = int(rng.choice(sol.grid.n_profiles, p=sol.grid.f))
            prof = sol.grid.profiles[p]
            u = np.array([prof[i] * sol.x[p, i] - pay[p, i] for i in range(inst.k)])
            rev += float(pay[p].sum())
            b2 = b + sol.delta_b[p]
            bu_resid = max(bu_resid, float(np.max(-b2)), float(np.max(b2 - (b + u))))
            cum += u
            b = b2
        min_cum = min(min_cum, float(cum.min()))
        draws[s] = rev
    stderr = float(draws.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return SimReport(mode="sampled", n_paths=n, revenue=float(draws.mean()),
                     revenue_stderr=stderr,
                     residuals={"epir": max(0.0, -min_cum), "bu": bu_resid,
                                "bi": _bi_residual(policy, visited), "dic": None})


def check_dic_exhaustive(policy: MechanismPolicy, guard=EXHAUSTIVE_GUARD) -> float:
    """Max one-shot deviation gain over all (period, buyer, own history,
    misreport), pointwise in the opponents' report path, in expectation over
    the deviator's own future values. DIC means this is <= tolerance."""
    inst = policy.instance
    T, k = inst.T, inst.k
    work = inst.n_paths() * sum(len(inst.dist(t, 0).support) for t in range(1, T + 1))
    if work > guard:
        raise InputError(f"deviation enumeration too large ({work})")
    worst = 0.0
    for i in range(k):
        opp_paths = list(itertools.product(*[inst.opponent_profiles(t, i)
                                             for t in range(1, T + 1)]))
        sup = [inst.dist(t, i).support for t in range(1, T + 1)]
        fprob = [inst.dist(t, i).probs for t in range(1, T + 1)]
        for w in opp_paths:
            memo = {}

            def cont_value(t, b):
                """Expected truthful utility of buyer i from period t on."""
                if t > T:
                    return 0.0
                key = (t, _bkey(b))
                hit = memo.get(key)
                if hit is not None:
                    return hit
                sol = policy.period_solution(t, b)
                pay = policy.payments(t, b)
                total = 0.0
                for j, v in enumerate(sup[t - 1]):
                    p = _profile_index(sol.grid, i, v, w[t - 1])
                    u = v * sol.x[p, i] - pay[p, i]
                    total += fprob[t - 1][j] * (u + cont_value(t + 1, b + sol.delta_b[p]))
                memo[key] = total
                return total

            # truthful reachable (t, b) states under this opponent path
            states = {1: {_bkey(np.zeros(k)): np.zeros(k)}}
            for t in range(1, T):
                nxt = {}
                for b in states[t].values():
                    sol = policy.period_solution(t, b)
                    for v in sup[t - 1]:
                        p = _profile_index(sol.grid, i, v, w[t - 1])
                        b2 = b + sol.delta_b[p]
                        nxt[_bkey(b2)] = b2
                states[t + 1] = nxt

            for t in range(1, T + 1):
                for b in states[t].values():
                    sol = policy.period_solution(t, b)
                    pay = policy.payments(t, b)
                    for a in sup[t - 1]:
                        pa = _profile_index(sol.grid, i, a, w[t - 1])
                        truth = (a * sol.x[pa, i] - pay[pa, i]
                                 + cont_value(t + 1, b + sol.delta_b[pa]))
                        for d in sup[t - 1]:
                            if d == a:
                                continue
                            pd = _profile_index(sol.grid, i, d, w[t - 1])
                            dev = (a * sol.x[pd, i] - pay[pd, i]
                                   + cont_value(t + 1, b + sol.delta_b[pd]))
                            worst = max(worst, dev - truth)
    return worst


def _profile_index(grid, i, own, opp):
    j = grid.supports[i].index(own)
    o = grid.opp[i].index(opp)
    return grid.profile_from(i, j, o)
