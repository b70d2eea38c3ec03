"""Virtual values, ironed virtual values, and the dual-side optimality checks.

From a solved period the tables are

    alpha_i(v)   = 1 + g_i(delta_b(v) + b)
    beta_i(v_-i) = lambda_i(v_-i) / f(v_-i) + E_{v_i}[g_i(delta_b(v) + b)]
    phi_i(v)     = alpha_i(v) v_i - beta_i(v_-i) vartheta_i(v)
    phi~_i(v)    = phi_i(v) - (eta out-mass - eta in-mass) / f(v)

with g_i the deterministic supergradient of the continuation function at the
updated balance, lambda/eta the balance/monotonicity duals. Ironing moves
virtual-value mass upward within constant-allocation classes; the checks here
verify the maximizer property, the sign monotonicity, limited transfer,
first-order dominance, and complementary slackness, all at LP tolerance.

Dual vectors at degenerate optima are not unique; every quantity here is
reported for the deterministic solver's choice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .period import PeriodSolution, payments_from_solution

ALLOC_TOL = 1e-8
PHI_TOL = 1e-6
CS_TOL = 1e-8
CLASS_TOL = 1e-9


@dataclass
class VirtualValueTable:
    t: int
    b: np.ndarray
    alpha: np.ndarray        # (n_profiles, k)
    beta: list               # per buyer, array over opponent profiles
    phi: np.ndarray          # (n_profiles, k)
    phi_tilde: np.ndarray    # (n_profiles, k)
    g_sup: np.ndarray        # (n_profiles, k) continuation supergradients
    grid: object = field(repr=False, default=None)

    def rows(self, x=None):
        """Flat dict rows for CSV export: one per (profile, buyer)."""
        out = []
        bal = ";".join(f"{v:.10g}" for v in np.atleast_1d(self.b))
        for p, prof in enumerate(self.grid.profiles):
            for i in range(self.grid.k):
                o = self.grid.opp_of[p, i]
                out.append({
                    "period": self.t,
                    "balance": bal,
                    "profile": ";".join(f"{v:g}" for v in prof),
                    "buyer": i,
                    "alpha": float(self.alpha[p, i]),
                    "beta": float(self.beta[i][o]),
                    "phi": float(self.phi[p, i]),
                    "phi_tilde": float(self.phi_tilde[p, i]),
                    "x": float(x[p, i]) if x is not None else None,
                })
        return out


def compute_virtual_values(sol: PeriodSolution, gbar=None, b=None,
                           instance=None, t=None) -> VirtualValueTable:
    """Extract (alpha, beta, phi, phi~) from a solved period.

    In the last period (zero continuation) alpha = 1 and beta = lambda/f, so
    phi interpolates between welfare (lambda = 0) and the discrete Myerson
    virtual value (lambda/f = 1).
    """
    grid = sol.grid
    if gbar is None:
        gbar = sol.gbar
    if b is None:
        b = sol.b
    k, P = grid.k, grid.n_profiles
    g_sup = np.vstack([gbar.supergradient(sol.delta_b[p] + b) for p in range(P)])
    alpha = 1.0 + g_sup

    beta = []
    for i in range(k):
        e_g = np.zeros(len(grid.opp[i]))
        for p in range(P):
            e_g[grid.opp_of[p, i]] += grid.fmarg[i][grid.own_idx[p, i]] * g_sup[p, i]
        beta.append(sol.lam[i] / grid.f_opp[i] + e_g)

    phi = np.zeros((P, k))
    phi_tilde = np.zeros((P, k))
    for p, prof in enumerate(grid.profiles):
        for i in range(k):
            o = grid.opp_of[p, i]
            m = grid.own_idx[p, i]
            phi[p, i] = alpha[p, i] * prof[i] - beta[i][o] * grid.vth[i][m]
            out_mass = sol.eta[i][o, m] if m < len(grid.supports[i]) - 1 else 0.0
            in_mass = sol.eta[i][o, m - 1] if m > 0 else 0.0
            phi_tilde[p, i] = phi[p, i] - (out_mass - in_mass) / grid.f[p]
    return VirtualValueTable(t=sol.t, b=np.atleast_1d(b), alpha=alpha, beta=beta,
                             phi=phi, phi_tilde=phi_tilde, g_sup=g_sup, grid=grid)


@dataclass
class MaximizerReport:
    violations: list
    max_shortfall: float      # worst phi~ deficit of an allocated buyer
    max_cs_residual: float    # worst eta complementary-slackness product

    @property
    def passed(self):
        return not self.violations


def check_maximizer(sol: PeriodSolution, table: VirtualValueTable, *,
                    alloc_tol=ALLOC_TOL, phi_tol=PHI_TOL, cs_tol=CS_TOL) -> MaximizerReport:
    """Allocated buyers must carry a maximal, nonnegative ironed virtual value;
    the win-indicator sign must be monotone in the own value; eta mass only
    moves within constant-allocation runs."""
    grid = sol.grid
    k, P = grid.k, grid.n_profiles
    violations = []
    max_short = 0.0

    for p in range(P):
        best = float(np.max(table.phi_tilde[p])) if k else 0.0
        thresh = max(0.0, best)
        for i in range(k):
            if sol.x[p, i] > alloc_tol:
                short = thresh - table.phi_tilde[p, i]
                max_short = max(max_short, short)
                if short > phi_tol:
                    violations.append({"kind": "maximizer", "profile": p, "buyer": i,
                                       "shortfall": float(short)})

    def sgn(z):
        if z > phi_tol:
            return 1
        if z < -phi_tol:
            return -1
        return 0

    for i in range(k):
        for o in range(len(grid.opp[i])):
            signs = []
            for j in range(len(grid.supports[i])):
                p = grid.profile_from(i, j, o)
                others = [table.phi_tilde[p, jj] for jj in range(k) if jj != i]
                signs.append(sgn(table.phi_tilde[p, i] - max(0.0, max(others, default=0.0))))
            if any(b < a for a, b in zip(signs, signs[1:])):
                violations.append({"kind": "sign-monotone", "buyer": i, "opp": o,
                                   "signs": signs})

    max_cs = 0.0
    for i in range(k):
        for o in range(len(grid.opp[i])):
            for j in range(len(grid.supports[i]) - 1):
                lo = grid.profile_from(i, j, o)
                hi = grid.profile_from(i, j + 1, o)
                prod = abs((sol.x[lo, i] - sol.x[hi, i]) * sol.eta[i][o, j])
                max_cs = max(max_cs, prod)
                if prod > cs_tol:
                    violations.append({"kind": "eta-slackness", "buyer": i, "opp": o,
                                       "pair": j, "residual": float(prod)})
    return MaximizerReport(violations=violations, max_shortfall=max_short,
                           max_cs_residual=max_cs)


def complementary_slackness_residuals(sol: PeriodSolution) -> dict:
    """Max |dual * slack| for the balance, feasibility, monotonicity, and
    continuation-piece constraints of a solved period."""
    grid = sol.grid
    out = {"lambda": 0.0, "mu": 0.0, "eta": 0.0, "nu": 0.0}
    for i in range(grid.k):
        for o in range(len(grid.opp[i])):
            slack = sol.b[i] + sol.xi_slice[i][o] - sol.u_bar[i][o]
            out["lambda"] = max(out["lambda"], abs(sol.lam[i][o] * slack))
            for j in range(len(grid.supports[i]) - 1):
                lo = grid.profile_from(i, j, o)
                hi = grid.profile_from(i, j + 1, o)
                out["eta"] = max(out["eta"], abs(sol.eta[i][o, j] * (sol.x[lo, i] - sol.x[hi, i])))
    for p in range(grid.n_profiles):
        out["mu"] = max(out["mu"], abs(sol.mu[p] * (1.0 - sol.x[p].sum())))
    if sol.nu.size:
        for p in range(grid.n_profiles):
            arg = sol.delta_b[p] + sol.b
            piece_vals = sol.gbar.slopes @ arg + sol.gbar.intercepts
            slack = piece_vals - sol.gbar_vals[p]
            out["nu"] = max(out["nu"], float(np.max(np.abs(sol.nu[p] * slack))))
    return out


@dataclass
class IroningReport:
    classes: dict            # (buyer, opp_idx) -> list of runs (lists of own indices)
    transfer_residual: float
    dominance_residual: float
    monotonicity_residual: float
    max_eta: float

    @property
    def passed(self):
        return (self.transfer_residual <= PHI_TOL
                and self.dominance_residual <= CS_TOL
                and self.monotonicity_residual <= ALLOC_TOL)


def ironing_report(sol: PeriodSolution, table: VirtualValueTable,
                   instance=None, t=None) -> IroningReport:
    """Verify the three ironing properties on a solved period.

    Per (buyer, opponent profile): equivalence classes are maximal runs of
    equal allocation; the f-weighted mean of phi is preserved per class; mass
    moves only upward (the ironed top-tail cumulative dominates); allocation
    is monotone.
    """
    grid = sol.grid
    classes = {}
    transfer = 0.0
    dominance = 0.0
    mono = 0.0
    max_eta = 0.0
    for i in range(grid.k):
        n = len(grid.supports[i])
        for o in range(len(grid.opp[i])):
            xs = np.array([sol.x[grid.profile_from(i, j, o), i] for j in range(n)])
            mono = max(mono, float(np.max(np.maximum(xs[:-1] - xs[1:], 0.0), initial=0.0)))
            runs = [[0]]
            for j in range(1, n):
                if abs(xs[j] - xs[j - 1]) <= CLASS_TOL:
                    runs[-1].append(j)
                else:
                    runs.append([j])
            classes[(i, o)] = runs
            f = grid.fmarg[i]
            phi = np.array([table.phi[grid.profile_from(i, j, o), i] for j in range(n)])
            phit = np.array([table.phi_tilde[grid.profile_from(i, j, o), i] for j in range(n)])
            for run in runs:
                moved = sum(f[j] * (phi[j] - phit[j]) for j in run)
                transfer = max(transfer, abs(moved))
            # mass moves upward: the ironed top-tail cumulative dominates
            tail_gap = np.cumsum((f * (phit - phi))[::-1])[::-1]
            dominance = max(dominance, float(np.max(np.maximum(-tail_gap, 0.0))))
            if n > 1:
                max_eta = max(max_eta, float(np.max(sol.eta[i][o])))
    return IroningReport(classes=classes, transfer_residual=transfer,
                         dominance_residual=dominance, monotonicity_residual=mono,
                         max_eta=max_eta)
