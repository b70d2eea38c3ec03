"""Single-period auction LP at one balance point, with duals and balance updates.

The program chooses an allocation table x_i(v) in [0,1] per joint profile v
(plus one continuation variable per profile when a nonzero continuation
function is supplied) to maximize

    E_v[ sum_i (v_i x_i(v) - xi_i(v_-i)) + gbar(delta_b(v) + b) ]

subject to adjacent monotonicity of x_i in the own value, the per-opponent
balance constraints E_{v_i}[vartheta_i x_i] <= b_i + xi_i(v_-i), feasibility
sum_i x_i(v) <= 1, and x >= 0. Buyer utilities follow the discrete envelope
rule u'_i(v_m) = sum_{j<m} x_i(v_j, v_-i) (v_{j+1} - v_j), under which
E_{v_i}[u'_i] = E_{v_i}[vartheta_i x_i] holds exactly. The balance update is
pinned to its upper bound, delta_b_i(v) = u'_i(v) - ubar'_i(v_-i) + xi_i(v_-i),
which is without loss because the continuation function is nondecreasing.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .instance import Instance, InputError
from .lp import LpModel, solve_lp
from .pwl import PwlConcaveFn


class PeriodSolveError(RuntimeError):
    """The period LP failed to solve (inconsistent instance/xi data)."""


class PeriodGrid:
    """Index maps for one (instance, period): profiles, opponents, densities."""

    def __init__(self, instance: Instance, t: int):
        self.instance = instance
        self.t = t
        self.k = instance.k
        self.supports = [instance.dist(t, i).support for i in range(self.k)]
        self.fmarg = [np.array(instance.dist(t, i).probs) for i in range(self.k)]
        self.vth = [instance.dist(t, i).varthetas() for i in range(self.k)]
        self.gaps = [np.diff(np.array(s)) for s in self.supports]
        self.profiles = list(itertools.product(*self.supports))
        self.n_profiles = len(self.profiles)
        self.f = np.array([instance.joint_density(t, p) for p in self.profiles])
        self.own_idx = np.array([[self.supports[i].index(p[i]) for i in range(self.k)]
                                 for p in self.profiles], dtype=int)
        self.opp = [instance.opponent_profiles(t, i) for i in range(self.k)]
        self.f_opp = [np.array([instance.opponent_density(t, i, o) for o in self.opp[i]])
                      for i in range(self.k)]
        opp_index = [{o: n for n, o in enumerate(self.opp[i])} for i in range(self.k)]
        self.opp_of = np.zeros((self.n_profiles, self.k), dtype=int)
        for p, prof in enumerate(self.profiles):
            for i in range(self.k):
                o = tuple(prof[j] for j in range(self.k) if j != i)
                self.opp_of[p, i] = opp_index[i][o]
        # profile index from (buyer, own support index, opponent profile index)
        self._prof_of = {}
        for p in range(self.n_profiles):
            for i in range(self.k):
                self._prof_of[(i, self.own_idx[p, i], self.opp_of[p, i])] = p

    def profile_from(self, i, j, o):
        return self._prof_of[(i, j, o)]


class XiProfile:
    """Per-period expected-utility promises xi_i^t(v_-i) >= 0.

    table[t-1][i] is an array over the period-t opponent-profile index of
    buyer i (ordering of Instance.opponent_profiles).
    """

    def __init__(self, instance: Instance, table=None):
        self.instance = instance
        if table is None:
            table = [[np.zeros(len(instance.opponent_profiles(t, i)))
                      for i in range(instance.k)]
                     for t in range(1, instance.T + 1)]
        self.table = [[np.array(a, dtype=float) for a in row] for row in table]
        for row in self.table:
            for a in row:
                if (a < -1e-12).any():
                    raise InputError("xi entries must be nonnegative")

    @classmethod
    def zeros(cls, instance):
        return cls(instance)

    def slice_at(self, t):
        return self.table[t - 1]

    def copy(self):
        return XiProfile(self.instance, [[a.copy() for a in row] for row in self.table])

    def as_vector(self):
        return np.concatenate([a for row in self.table for a in row]) if self.table else np.zeros(0)

    @classmethod
    def from_vector(cls, instance, vec):
        out = cls.zeros(instance)
        pos = 0
        for row in out.table:
            for a in row:
                a[:] = vec[pos:pos + len(a)]
                pos += len(a)
        if pos != len(vec):
            raise InputError("xi vector has wrong length")
        return out

    def entries(self):
        """Yield (t, i, opp_index, value) over all promise entries."""
        for tm1, row in enumerate(self.table):
            for i, a in enumerate(row):
                for o, val in enumerate(a):
                    yield tm1 + 1, i, o, float(val)

    def to_dict(self):
        return [[list(map(float, a)) for a in row] for row in self.table]

    @classmethod
    def from_dict(cls, instance, d):
        return cls(instance, d)


@dataclass
class PeriodSolution:
    """Primal tables, dual multipliers, and derived balance updates."""

    t: int
    b: np.ndarray                  # balances at which the period was solved
    grid: PeriodGrid
    xi_slice: list                 # per buyer, array over opponent profiles
    x: np.ndarray                  # (n_profiles, k) allocations
    lam: list                      # per buyer, array over opponent profiles
    mu: np.ndarray                 # (n_profiles,) feasibility duals
    eta: list                      # per buyer, (n_opp, n_adjacent) monotonicity duals
    nu: np.ndarray                 # (n_profiles, n_pieces) continuation-piece duals
    objective: float
    u_prime: np.ndarray            # (n_profiles, k)
    u_bar: list                    # per buyer, array over opponent profiles
    delta_b: np.ndarray            # (n_profiles, k)
    gbar_vals: np.ndarray          # (n_profiles,) continuation-variable values
    gbar: PwlConcaveFn = None

    @property
    def balance_supergradient(self) -> np.ndarray:
        """d(objective)/d(b): sum of balance duals plus piece-dual slope mass."""
        out = np.array([float(self.lam[i].sum()) for i in range(self.grid.k)])
        if self.nu.size:
            out += np.einsum("pl,lk->k", self.nu, self.gbar.slopes)
        return out

    def expected_utilities(self) -> list:
        """Realized E_{v_i}[v_i x_i - p_i] per (buyer, opponent profile)."""
        g = self.grid
        pay = payments_from_solution(self)
        out = []
        for i in range(g.k):
            acc = np.zeros(len(g.opp[i]))
            for p, prof in enumerate(g.profiles):
                u = prof[i] * self.x[p, i] - pay[p, i]
                acc[g.opp_of[p, i]] += g.fmarg[i][g.own_idx[p, i]] * u
            out.append(acc)
        return out


def build_period_lp(instance, t, b, xi_slice, gbar: PwlConcaveFn) -> LpModel:
    """Assemble the period LP at balance b with continuation function gbar.

    Constraint identifiers: ("mono", i, opp_idx, j) for adjacent monotonicity
    between own support indices j and j+1; ("bal", i, opp_idx); ("feas", p);
    ("piece", p, l) for the continuation epigraph cuts.
    """
    grid = PeriodGrid(instance, t)
    k, P = grid.k, grid.n_profiles
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if len(b) != k:
        raise InputError(f"balance vector length {len(b)} != k={k}")
    if (b < -1e-6).any():
        raise InputError("balances must be nonnegative")
    b = np.maximum(b, 0.0)  # forward-accumulated LP noise
    xi_slice = [np.asarray(a, dtype=float) for a in xi_slice]
    with_g = not gbar.is_zero

    model = LpModel(name=f"period_t{t}")
    xvar = np.zeros((P, k), dtype=int)
    for p in range(P):
        for i in range(k):
            xvar[p, i] = model.add_var(f"x_p{p}_b{i}", lb=0.0,
                                       obj=grid.f[p] * grid.profiles[p][i])
    gvar = np.full(P, -1, dtype=int)
    if with_g:
        for p in range(P):
            gvar[p] = model.add_var(f"G_p{p}", lb=None, obj=grid.f[p])
    model.obj_constant = -sum(float(grid.f_opp[i] @ xi_slice[i]) for i in range(k))

    for i in range(k):
        for o in range(len(grid.opp[i])):
            for j in range(len(grid.supports[i]) - 1):
                lo_p = grid.profile_from(i, j, o)
                hi_p = grid.profile_from(i, j + 1, o)
                model.add_constraint(("mono", i, o, j),
                                     {xvar[lo_p, i]: 1.0, xvar[hi_p, i]: -1.0}, "<=", 0.0)
    for i in range(k):
        w = grid.fmarg[i] * grid.vth[i]
        for o in range(len(grid.opp[i])):
            coeffs = {xvar[grid.profile_from(i, j, o), i]: w[j]
                      for j in range(len(grid.supports[i])) if w[j] != 0.0}
            model.add_constraint(("bal", i, o), coeffs, "<=", float(b[i] + xi_slice[i][o]))
    for p in range(P):
        model.add_constraint(("feas", p), {xvar[p, i]: 1.0 for i in range(k)}, "<=", 1.0)

    if with_g:
        for p in range(P):
            for l in range(gbar.n_pieces):
                a = gbar.slopes[l]
                coeffs = {gvar[p]: 1.0}
                rhs = float(a @ b + gbar.intercepts[l])
                for i in range(k):
                    if a[i] == 0.0:
                        continue
                    rhs += a[i] * xi_slice[i][grid.opp_of[p, i]]
                    m = grid.own_idx[p, i]
                    o = grid.opp_of[p, i]
                    w = grid.fmarg[i] * grid.vth[i]
                    for j in range(len(grid.supports[i])):
                        # d(delta_b_i(profile p))/d(x_i(j, opp)) = gap_j 1[j<m] - f_j vth_j
                        coef = (grid.gaps[i][j] if j < m else 0.0) - w[j]
                        if coef != 0.0:
                            var = xvar[grid.profile_from(i, j, o), i]
                            coeffs[var] = coeffs.get(var, 0.0) - a[i] * coef
                model.add_constraint(("piece", p, l), coeffs, "<=", rhs)

    model.meta = {"t": t, "b": b.copy(), "xi_slice": [a.copy() for a in xi_slice],
                  "grid": grid, "gbar": gbar, "xvar": xvar, "gvar": gvar,
                  "with_g": with_g}
    return model


def solve_period(model: LpModel) -> PeriodSolution:
    """Solve a period LP and decode tables, duals, and balance updates."""
    meta = model.meta
    grid, gbar = meta["grid"], meta["gbar"]
    k, P = grid.k, grid.n_profiles
    sol = solve_lp(model)
    if sol.status != "optimal":
        raise PeriodSolveError(f"period LP status {sol.status}: {sol.message}")

    x = sol.x[meta["xvar"].ravel()].reshape(P, k)
    x[x == 0.0] = 0.0  # normalize -0.0 for reproducible reports
    gvals = sol.x[meta["gvar"]] if meta["with_g"] else np.zeros(P)

    u_prime = np.zeros((P, k))
    for p in range(P):
        for i in range(k):
            m = grid.own_idx[p, i]
            o = grid.opp_of[p, i]
            u_prime[p, i] = sum(grid.gaps[i][j] * x[grid.profile_from(i, j, o), i]
                                for j in range(m))
    u_bar = []
    for i in range(k):
        acc = np.zeros(len(grid.opp[i]))
        w = grid.fmarg[i] * grid.vth[i]
        for p in range(P):
            acc[grid.opp_of[p, i]] += w[grid.own_idx[p, i]] * x[p, i]
        u_bar.append(acc)
    delta_b = np.zeros((P, k))
    for p in range(P):
        for i in range(k):
            o = grid.opp_of[p, i]
            delta_b[p, i] = u_prime[p, i] - u_bar[i][o] + meta["xi_slice"][i][o]

    lam = [np.array([sol.duals[("bal", i, o)] for o in range(len(grid.opp[i]))])
           for i in range(k)]
    mu = np.array([sol.duals[("feas", p)] for p in range(P)])
    eta = [np.array([[sol.duals[("mono", i, o, j)]
                      for j in range(len(grid.supports[i]) - 1)]
                     for o in range(len(grid.opp[i]))])
           for i in range(k)]
    if meta["with_g"]:
        nu = np.array([[sol.duals[("piece", p, l)] for l in range(gbar.n_pieces)]
                       for p in range(P)])
    else:
        nu = np.zeros((P, 0))

    return PeriodSolution(t=meta["t"], b=meta["b"], grid=grid,
                          xi_slice=meta["xi_slice"], x=x, lam=lam, mu=mu, eta=eta,
                          nu=nu, objective=sol.objective, u_prime=u_prime,
                          u_bar=u_bar, delta_b=delta_b, gbar_vals=gvals, gbar=gbar)


def payments_from_solution(sol: PeriodSolution, xi_slice=None) -> np.ndarray:
    """Payment table p_i(v) = v_i x_i(v) - u'_i(v) + (ubar'_i(v_-i) - xi_i(v_-i))."""
    grid = sol.grid
    if xi_slice is None:
        xi_slice = sol.xi_slice
    pay = np.zeros_like(sol.x)
    for p, prof in enumerate(grid.profiles):
        for i in range(grid.k):
            o = grid.opp_of[p, i]
            pay[p, i] = (prof[i] * sol.x[p, i] - sol.u_prime[p, i]
                         + sol.u_bar[i][o] - xi_slice[i][o])
    return pay
