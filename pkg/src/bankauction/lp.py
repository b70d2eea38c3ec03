"""Linear programs with deterministic solves and dual values per constraint.

Models maximize a linear objective. Every constraint carries a stable,
hashable identifier (normally a tuple of kind + indices) under which its
dual value is reported. Duals follow the sensitivity convention: the dual of
a constraint is the derivative of the optimal objective with respect to its
right-hand side, so "<=" constraints have duals >= 0 and ">=" constraints
have duals <= 0 at a maximum.

The engine is HiGHS dual simplex via scipy, which returns optimal basic
solutions and is deterministic given identical input. The contract (basic
optimal solution, duals for every constraint, reproducibility) is what the
rest of the package relies on, not the engine itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

LE, GE, EQ = "<=", ">=", "=="

FEAS_TOL = 1e-8
DUAL_TOL = 1e-7


class LpError(RuntimeError):
    """Solve failed in a way that is not an ordinary infeasible/unbounded status."""


class LpModel:
    """A maximization LP under construction."""

    def __init__(self, name="lp"):
        self.name = name
        self.obj = []
        self.lb = []
        self.ub = []
        self.var_names = []
        self.obj_constant = 0.0
        self.rows = []        # (ident, {var: coef}, sense, rhs)
        self._row_ids = set()
        self.meta = None      # builder-specific decode info, opaque here

    def add_var(self, name, lb=0.0, ub=None, obj=0.0) -> int:
        self.var_names.append(name)
        self.lb.append(lb)
        self.ub.append(ub)
        self.obj.append(float(obj))
        return len(self.obj) - 1

    def add_constraint(self, ident, coeffs, sense, rhs):
        if ident in self._row_ids:
            raise LpError(f"duplicate constraint identifier {ident!r}")
        if sense not in (LE, GE, EQ):
            raise LpError(f"bad sense {sense!r}")
        coeffs = dict(coeffs)
        for var, c in coeffs.items():
            if not (0 <= var < len(self.obj)) or not np.isfinite(c):
                raise LpError(f"bad coefficient {c!r} for var {var!r} in {ident!r}")
        self._row_ids.add(ident)
        self.rows.append((ident, coeffs, sense, float(rhs)))

    @property
    def n_vars(self):
        return len(self.obj)

    @property
    def n_constraints(self):
        return len(self.rows)

    def to_lp_text(self) -> str:
        """Debug dump in LP text format with identifiers as row names."""
        def term(c, j):
            return f"{c:+.12g} {self.var_names[j]}"

        lines = ["Maximize", " obj: " + " ".join(term(c, j) for j, c in enumerate(self.obj) if c)]
        lines.append("Subject To")
        for ident, coeffs, sense, rhs in self.rows:
            body = " ".join(term(c, j) for j, c in sorted(coeffs.items()) if c) or "0 x0"
            op = {LE: "<=", GE: ">=", EQ: "="}[sense]
            lines.append(f" {_ident_name(ident)}: {body} {op} {rhs:.12g}")
        lines.append("Bounds")
        for j, (lo, hi) in enumerate(zip(self.lb, self.ub)):
            lo_s = "-inf" if lo is None else f"{lo:.12g}"
            hi_s = "+inf" if hi is None else f"{hi:.12g}"
            lines.append(f" {lo_s} <= {self.var_names[j]} <= {hi_s}")
        lines.append("End")
        return "\n".join(lines) + "\n"


def _ident_name(ident):
    if isinstance(ident, tuple):
        return "_".join(str(x) for x in ident).replace(" ", "")
    return str(ident)


@dataclass
class LpSolution:
    """Primal/dual result of one solve. Objective includes the model constant."""

    status: str                     # optimal | infeasible | unbounded | error
    objective: float
    x: np.ndarray
    duals: dict                     # ident -> dual value (sensitivity sign)
    reduced_costs: np.ndarray       # d(objective)/d(bound) per variable
    message: str = ""

    def dual_objective(self, model) -> float:
        """Dual bound reconstructed from duals and bound multipliers.

        Equals the primal objective at an optimum (strong duality).
        """
        out = model.obj_constant
        for ident, _, _, rhs in model.rows:
            out += self.duals[ident] * rhs
        for j in range(model.n_vars):
            rc = self.reduced_costs[j]
            if rc > 0 and model.ub[j] is not None:
                out += rc * model.ub[j]
            elif rc < 0 and model.lb[j] is not None:
                out += rc * model.lb[j]
        return out

    def stationarity_residual(self, model) -> float:
        """Max |c_j - sum_i dual_i A_ij - rc_j| over variables."""
        acc = np.array(model.obj, dtype=float)
        for ident, coeffs, _, _ in model.rows:
            y = self.duals[ident]
            if y != 0.0:
                for j, c in coeffs.items():
                    acc[j] -= y * c
        acc -= self.reduced_costs
        return float(np.max(np.abs(acc))) if len(acc) else 0.0


_STATUS = {0: "optimal", 1: "error", 2: "infeasible", 3: "unbounded", 4: "error"}


def solve_lp(model: LpModel) -> LpSolution:
    """Solve to an optimal basic solution with duals for every constraint.

    Infeasible/unbounded models are reported in the status, never silently;
    other solver failures raise LpError.
    """
    n = model.n_vars
    c = -np.array(model.obj, dtype=float)

    ub_rows, ub_rhs, ub_meta = [], [], []   # (ident, flip)
    eq_rows, eq_rhs, eq_ids = [], [], []
    for ident, coeffs, sense, rhs in model.rows:
        if sense == EQ:
            eq_rows.append(coeffs)
            eq_rhs.append(rhs)
            eq_ids.append(ident)
        elif sense == LE:
            ub_rows.append(coeffs)
            ub_rhs.append(rhs)
            ub_meta.append((ident, False))
        else:  # GE -> negate into <=
            ub_rows.append({j: -v for j, v in coeffs.items()})
            ub_rhs.append(-rhs)
            ub_meta.append((ident, True))

    def to_csr(rows):
        data, ri, ci = [], [], []
        for r, coeffs in enumerate(rows):
            for j, v in coeffs.items():
                if v != 0.0:
                    ri.append(r)
                    ci.append(j)
                    data.append(v)
        return sparse.csr_matrix((data, (ri, ci)), shape=(len(rows), n))

    kwargs = {}
    if ub_rows:
        kwargs["A_ub"] = to_csr(ub_rows)
        kwargs["b_ub"] = np.array(ub_rhs)
    if eq_rows:
        kwargs["A_eq"] = to_csr(eq_rows)
        kwargs["b_eq"] = np.array(eq_rhs)

    bounds = list(zip(model.lb, model.ub))
    res = linprog(c, bounds=bounds, method="highs-ds", **kwargs)
    status = _STATUS.get(res.status, "error")
    if status == "error":
        raise LpError(f"{model.name}: solver failure: {res.message}")
    if status != "optimal":
        return LpSolution(status, float("nan"), np.full(n, np.nan), {}, np.full(n, np.nan),
                          message=res.message)

    duals = {}
    if ub_rows:
        marg = np.asarray(res.ineqlin.marginals, dtype=float)
        for r, (ident, flipped) in enumerate(ub_meta):
            # marginal m is d(min obj)/d(scipy rhs); our dual is d(max obj)/d(orig rhs)
            duals[ident] = float(marg[r]) if flipped else float(-marg[r])
    if eq_rows:
        marg = np.asarray(res.eqlin.marginals, dtype=float)
        for r, ident in enumerate(eq_ids):
            duals[ident] = float(-marg[r])

    rc = -(np.asarray(res.lower.marginals, dtype=float)
           + np.asarray(res.upper.marginals, dtype=float))
    objective = float(-res.fun) + model.obj_constant
    return LpSolution("optimal", objective, np.asarray(res.x, dtype=float), duals, rc)
