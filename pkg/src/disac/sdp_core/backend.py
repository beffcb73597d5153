"""Clarabel adapter: compiles a :class:`ConicProgram` and reports the outcome.

Clarabel solves ``min q.x  s.t.  A x + s = b, s in K``.  Every backend error is
mapped to a :class:`SolveReport` status; nothing here raises on solver trouble.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

from .program import ConicProgram, psd_svec_map

__all__ = ["SolveReport", "SolveStatus", "Tolerances", "compile_program", "solve"]

log = logging.getLogger(__name__)

# Clarabel often stalls one step short of its own tolerances on badly scaled
# surrogates; such points are accepted when the scaled residual is this small
ACCEPT_VIOLATION = 1e-6


class SolveStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_TROUBLE = "NumericalTrouble"


@dataclass(frozen=True)
class Tolerances:
    feasibility: float = 1e-8
    gap_abs: float = 1e-8
    gap_rel: float = 1e-8
    max_iter: int = 200

    def relaxed(self) -> "Tolerances":
        return Tolerances(self.feasibility * 100, self.gap_abs * 100, self.gap_rel * 100,
                          self.max_iter * 2)


@dataclass
class SolveReport:
    status: SolveStatus
    objective_value: float
    variable_values: dict
    solver_iterations: int
    max_constraint_violation: float  # scaled, see ConicProgram.constraint_violation
    raw: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


class _Rows:
    def __init__(self):
        self.r, self.c, self.v, self.b = [], [], [], []
        self.n = 0

    def add(self, terms: dict, coef_sign: float, rhs: float):
        for col, val in terms.items():
            self.r.append(self.n)
            self.c.append(col)
            self.v.append(coef_sign * val)
        self.b.append(rhs)
        self.n += 1

    def add_dense(self, cols: np.ndarray, mat: np.ndarray):
        """Rows ``-mat @ x[cols] + s = 0``."""
        rr, cc = np.nonzero(mat)
        self.r.extend((rr + self.n).tolist())
        self.c.extend(cols[cc].tolist())
        self.v.extend((-mat[rr, cc]).tolist())
        self.b.extend([0.0] * mat.shape[0])
        self.n += mat.shape[0]


def compile_program(program: ConicProgram):
    """Return ``(P, q, A, b, cones)`` in Clarabel's form."""
    rows = _Rows()
    cones = []
    if program.equalities:
        for c in program.equalities:
            rows.add(c.expr.terms, 1.0, -c.expr.const)
        cones.append(clarabel.ZeroConeT(len(program.equalities)))
    nonneg = [v for v in program.scalar_vars() if v.nonneg]
    n_le = len(program.inequalities) + len(nonneg)
    if n_le:
        for c in program.inequalities:
            rows.add(c.expr.terms, 1.0, -c.expr.const)
        for v in nonneg:
            rows.add({v.offset: 1.0}, -1.0, 0.0)
        cones.append(clarabel.NonnegativeConeT(n_le))
    for c in program.socs:
        for a in [c.bound, *c.components]:
            rows.add(a.terms, -1.0, a.const)
        cones.append(clarabel.SecondOrderConeT(1 + len(c.components)))
    for v in program.hermitian_vars():
        M = psd_svec_map(v.n)
        rows.add_dense(np.arange(v.offset, v.offset + v.size), M)
        cones.append(clarabel.PSDTriangleConeT(2 * v.n))
    n = program.num_params
    A = sp.csc_matrix((rows.v, (rows.r, rows.c)), shape=(rows.n, n))
    A.sum_duplicates()
    b = np.asarray(rows.b, dtype=float)
    q = np.zeros(n)
    for col, val in program.objective.terms.items():
        q[col] -= val
    P = sp.csc_matrix((n, n))
    return P, q, A, b, cones


_STATUS = {
    "Solved": SolveStatus.OPTIMAL,
    "PrimalInfeasible": SolveStatus.INFEASIBLE,
    "AlmostPrimalInfeasible": SolveStatus.INFEASIBLE,
    "DualInfeasible": SolveStatus.UNBOUNDED,
    "AlmostDualInfeasible": SolveStatus.UNBOUNDED,
}


def _run(program: ConicProgram, compiled, tol: Tolerances) -> SolveReport:
    P, q, A, b, cones = compiled
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = tol.feasibility
    settings.tol_gap_abs = tol.gap_abs
    settings.tol_gap_rel = tol.gap_rel
    settings.max_iter = tol.max_iter
    try:
        sol = clarabel.DefaultSolver(P, q, A, b, cones, settings).solve()
    except Exception as exc:  # backend panics surface as a status
        log.warning("backend failure: %s", exc)
        return SolveReport(SolveStatus.NUMERICAL_TROUBLE, float("nan"), {}, 0, float("inf"),
                           diagnostics={"error": repr(exc)})
    name = str(sol.status).split(".")[-1]
    status = _STATUS.get(name, SolveStatus.NUMERICAL_TROUBLE)
    x = np.asarray(sol.x, dtype=float)
    diag = {"backend_status": name, "solve_time": float(sol.solve_time)}
    if status is SolveStatus.OPTIMAL or name == "AlmostSolved":
        viol = program.constraint_violation(x, scaled=True)
        diag["absolute_violation"] = program.constraint_violation(x)
        obj = program.objective.evaluate(x)
        values = program.values(x)
        if name == "AlmostSolved" and viol <= ACCEPT_VIOLATION:
            status = SolveStatus.OPTIMAL
    else:
        viol, obj, values = float("inf"), float("nan"), {}
    return SolveReport(status, obj, values, int(sol.iterations), viol, x, diag)


def solve(program: ConicProgram, tolerances: Tolerances | None = None,
          retry: bool = True) -> SolveReport:
    """Solve, retrying once with relaxed tolerances on numerical trouble.

    ``AlmostSolved`` counts as optimal when the scaled violation is at most
    ``ACCEPT_VIOLATION``, and at 100 times that on the retry.
    """
    tol = tolerances or Tolerances()
    compiled = compile_program(program)
    rep = _run(program, compiled, tol)
    if rep.status is SolveStatus.NUMERICAL_TROUBLE and retry:
        rep2 = _run(program, compiled, tol.relaxed())
        if rep2.diagnostics.get("backend_status") == "AlmostSolved" \
                and rep2.max_constraint_violation <= 100 * ACCEPT_VIOLATION:
            rep2.status = SolveStatus.OPTIMAL
        rep2.diagnostics["retried"] = True
        return rep2
    return rep
