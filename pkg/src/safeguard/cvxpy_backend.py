"""Optional conic-solver binding behind the same backend interface.

Translates a compiled problem into cvxpy and maps the outcome back.  Used
for cross-checking the built-in backend; the package does not require cvxpy
at runtime.
"""

from __future__ import annotations

import numpy as np


def solve_compiled(comp, verbose: bool = False):
    """Solve a :class:`safeguard.lmi_engine.CompiledProblem` via cvxpy."""
    import cvxpy as cp

    m = comp.n_unknowns
    x = cp.Variable(m) if m else None
    constraints = []
    for a0, a in zip(comp.A0, comp.A):
        n = a0.shape[0]
        if n == 0:
            continue
        expr = cp.Constant(a0)
        if m:
            flat = cp.reshape(a.reshape(m, n * n).T @ x, (n, n), order="C")
            expr = expr + flat
        expr = (expr + expr.T) / 2
        constraints.append(expr << 0)
    objective = cp.Minimize(comp.c @ x if comp.c is not None and m else 0)
    problem = cp.Problem(objective, constraints)
    try:
        problem.solve(verbose=verbose)
    except cp.error.SolverError as exc:
        return "unknown", None, {"message": f"cvxpy solver error: {exc}"}

    status = problem.status
    info = {"cvxpy_status": status}
    if status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        xv = np.zeros(m) if x is None else np.asarray(x.value, dtype=float)
        return "feasible", xv, info
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return "infeasible", None, info
    return "unknown", None, info
