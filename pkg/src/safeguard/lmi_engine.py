"""Affine matrix-inequality modelling and semidefinite feasibility solving.

A problem is a set of declared matrix/scalar variables, a list of affine
symmetric-matrix-valued constraints of the form ``E(x) <= 0`` (optionally
strict, encoded with an explicit margin), and at most one linear objective.
Solving is delegated to a backend behind a small interface; the built-in
backend (:mod:`safeguard.ipm`) is a self-contained dense barrier method, and a
cvxpy-based backend can be selected when that package is installed.

Expressions are affine in the variables.  Each term multiplies one variable
(optionally transposed) by fixed left/right matrices and a scalar weight; the
value of an expression is symmetrized on evaluation, so ``He(P A)`` is a
single term with weight 2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import matcore

__all__ = [
    "AffineExpr",
    "ConstraintResidual",
    "ExpressionError",
    "LmiProblem",
    "MatExpr",
    "SolveOutcome",
    "Term",
    "VarRef",
    "check_solution",
    "evaluate",
    "minimize_logdet_iterative",
    "solve",
    "sym_blocks",
]

# Default margin for strict inequalities: m = SCALE * (1 + ||constant||_2).
STRICT_MARGIN_SCALE = 1e-7


class ExpressionError(ValueError):
    """Malformed expression or assignment."""


@dataclass(frozen=True)
class VarRef:
    """Handle for a declared decision variable."""

    name: str
    kind: str  # "sym" | "mat" | "scalar"
    rows: int
    cols: int

    @property
    def n_components(self) -> int:
        if self.kind == "sym":
            return self.rows * (self.rows + 1) // 2
        if self.kind == "mat":
            return self.rows * self.cols
        return 1

    def coerce(self, value):
        """Validate and canonicalize an assignment value for this variable."""
        if self.kind == "scalar":
            return float(np.asarray(value).reshape(()))
        a = np.asarray(value, dtype=float)
        if a.shape != (self.rows, self.cols):
            raise ExpressionError(
                f"value for {self.name} has shape {a.shape}, "
                f"expected ({self.rows}, {self.cols})")
        if self.kind == "sym":
            return matcore.as_symmetric(a, name=self.name)
        return a


@dataclass(frozen=True)
class Term:
    """One affine contribution ``coeff * L @ op(V) @ R``.

    ``op`` transposes matrix variables when ``transpose`` is set; a scalar
    variable is inserted as ``v * I`` of whatever inner size the fixed factors
    require.  ``left``/``right`` of ``None`` mean identity.
    """

    var: VarRef
    left: np.ndarray | None = None
    right: np.ndarray | None = None
    transpose: bool = False
    coeff: float = 1.0


def _term_shapes(term: Term, out_rows: int, out_cols: int):
    """Resolve the effective (left, right) factors of a term, validating
    conformity against the expression shape.  Returns dense arrays."""
    v = term.var
    if v.kind == "scalar":
        left = np.eye(out_rows) if term.left is None else term.left
        right = np.eye(out_cols) if term.right is None else term.right
        if left.shape[0] != out_rows or right.shape[1] != out_cols:
            raise ExpressionError(
                f"term on {v.name}: factors give shape "
                f"({left.shape[0]}, {right.shape[1]}), expected "
                f"({out_rows}, {out_cols})")
        if left.shape[1] != right.shape[0]:
            raise ExpressionError(
                f"term on scalar {v.name}: inner dimensions "
                f"{left.shape[1]} != {right.shape[0]}")
        return left, right
    vr, vc = (v.cols, v.rows) if term.transpose else (v.rows, v.cols)
    left = np.eye(vr) if term.left is None else term.left
    right = np.eye(vc) if term.right is None else term.right
    if left.shape != (out_rows, vr) or right.shape != (vc, out_cols):
        raise ExpressionError(
            f"term on {v.name}: left {left.shape} / right {right.shape} do "
            f"not map a ({vr}, {vc}) value into ({out_rows}, {out_cols})")
    return left, right


class MatExpr:
    """General rectangular affine matrix expression (not symmetrized)."""

    def __init__(self, rows: int, cols: int,
                 const: np.ndarray | None = None,
                 terms: list[Term] | None = None):
        self.rows = int(rows)
        self.cols = int(cols)
        self.const = (np.zeros((rows, cols)) if const is None
                      else np.asarray(const, dtype=float).reshape(rows, cols))
        self.terms: list[Term] = []
        for t in terms or []:
            self._append(t)

    @classmethod
    def constant(cls, m) -> "MatExpr":
        a = matcore.as_matrix(m)
        return cls(a.shape[0], a.shape[1], const=a)

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "MatExpr":
        return cls(rows, cols)

    def _append(self, t: Term):
        left = None if t.left is None else matcore.as_matrix(t.left, "left factor")
        right = None if t.right is None else matcore.as_matrix(t.right, "right factor")
        t = Term(t.var, left, right, t.transpose, float(t.coeff))
        _term_shapes(t, self.rows, self.cols)
        self.terms.append(t)

    def term(self, var: VarRef, left=None, right=None,
             transpose: bool = False, coeff: float = 1.0) -> "MatExpr":
        """Append a term and return self (chainable)."""
        self._append(Term(var, left, right, transpose, coeff))
        return self

    def add_const(self, m) -> "MatExpr":
        self.const = self.const + matcore.as_matrix(m).reshape(self.rows, self.cols)
        return self

    def copy(self) -> "MatExpr":
        return MatExpr(self.rows, self.cols, self.const.copy(), list(self.terms))

    @property
    def T(self) -> "MatExpr":
        out = MatExpr(self.cols, self.rows, self.const.T.copy())
        for t in self.terms:
            left = None if t.right is None else t.right.T
            right = None if t.left is None else t.left.T
            out.terms.append(Term(t.var, left, right,
                                  not t.transpose if t.var.kind != "scalar"
                                  else t.transpose, t.coeff))
        return out

    def scaled(self, s: float) -> "MatExpr":
        out = MatExpr(self.rows, self.cols, self.const * s)
        for t in self.terms:
            out.terms.append(Term(t.var, t.left, t.right, t.transpose,
                                  t.coeff * s))
        return out

    def __add__(self, other):
        if isinstance(other, np.ndarray):
            other = MatExpr.constant(other)
        if not isinstance(other, MatExpr):
            return NotImplemented
        if (self.rows, self.cols) != (other.rows, other.cols):
            raise ExpressionError(
                f"cannot add ({self.rows},{self.cols}) and "
                f"({other.rows},{other.cols}) expressions")
        out = self.copy()
        out.const = out.const + other.const
        out.terms.extend(other.terms)
        return out

    def __sub__(self, other):
        if isinstance(other, np.ndarray):
            other = MatExpr.constant(other)
        if not isinstance(other, MatExpr):
            return NotImplemented
        return self + other.scaled(-1.0)

    def __neg__(self):
        return self.scaled(-1.0)

    def variables(self) -> list[VarRef]:
        seen: dict[VarRef, None] = {}
        for t in self.terms:
            seen.setdefault(t.var, None)
        return list(seen)

    def value(self, assignment: dict) -> np.ndarray:
        """Exact affine evaluation (no symmetrization)."""
        out = self.const.copy()
        for t in self.terms:
            if t.var not in assignment:
                raise ExpressionError(f"assignment is missing {t.var.name}")
            left, right = _term_shapes(t, self.rows, self.cols)
            if t.var.kind == "scalar":
                out += t.coeff * float(assignment[t.var]) * (left @ right)
            else:
                v = t.var.coerce(assignment[t.var])
                if t.transpose:
                    v = v.T
                out += t.coeff * (left @ v @ right)
        return out


class AffineExpr(MatExpr):
    """Square affine expression whose value is symmetrized on evaluation."""

    def __init__(self, dim: int, const=None, terms=None):
        super().__init__(dim, dim, const, terms)

    @property
    def dim(self) -> int:
        return self.rows

    @classmethod
    def wrap(cls, e) -> "AffineExpr":
        if isinstance(e, AffineExpr):
            return e
        if isinstance(e, np.ndarray):
            e = MatExpr.constant(e)
        if not isinstance(e, MatExpr):
            raise ExpressionError(f"cannot treat {type(e)!r} as an expression")
        if e.rows != e.cols:
            raise ExpressionError(
                f"symmetric expression must be square, got ({e.rows},{e.cols})")
        out = cls(e.rows, e.const.copy())
        out.terms = list(e.terms)
        return out

    def value(self, assignment: dict) -> np.ndarray:
        v = super().value(assignment)
        return (v + v.T) / 2.0


def evaluate(expr: AffineExpr, assignment: dict) -> np.ndarray:
    """Evaluate an expression at an assignment, symmetrized."""
    return AffineExpr.wrap(expr).value(assignment)


def sym_blocks(sizes, cells: dict) -> AffineExpr:
    """Assemble a symmetric block expression from upper-triangle cells.

    ``sizes`` lists the block dimensions; ``cells`` maps ``(i, j)`` with
    ``i <= j`` to a :class:`MatExpr` or constant array of shape
    ``(sizes[i], sizes[j])``.  Off-diagonal cells are mirrored transposed, as
    in the usual star-notation for symmetric block matrices.  Omitted cells
    are zero.  Zero-sized blocks are dropped automatically.
    """
    sizes = [int(s) for s in sizes]
    total = sum(sizes)
    offs = np.cumsum([0] + sizes)
    out = AffineExpr(total)

    def embed(cell: MatExpr, i: int, j: int):
        ei = np.zeros((total, sizes[i]))
        ei[offs[i]:offs[i + 1], :] = np.eye(sizes[i])
        ej = np.zeros((sizes[j], total))
        ej[:, offs[j]:offs[j + 1]] = np.eye(sizes[j])
        out.const[offs[i]:offs[i + 1], offs[j]:offs[j + 1]] += cell.const
        for t in cell.terms:
            left, right = _term_shapes(t, cell.rows, cell.cols)
            out.terms.append(Term(t.var, ei @ left, right @ ej,
                                  t.transpose, t.coeff))

    for (i, j), cell in cells.items():
        if not (0 <= i <= j < len(sizes)):
            raise ExpressionError(f"cell index {(i, j)} out of range or lower triangle")
        if cell is None:
            continue
        if isinstance(cell, np.ndarray) or np.isscalar(cell):
            cell = MatExpr.constant(np.atleast_2d(np.asarray(cell, dtype=float)))
        if cell.rows != sizes[i] or cell.cols != sizes[j]:
            raise ExpressionError(
                f"cell {(i, j)} has shape ({cell.rows},{cell.cols}), expected "
                f"({sizes[i]},{sizes[j]})")
        if sizes[i] == 0 or sizes[j] == 0:
            continue
        embed(cell, i, j)
        if i != j:
            embed(cell.T, j, i)
    return out


@dataclass
class Constraint:
    """``expr <= 0`` (``strict`` encodes ``< 0`` via an explicit margin)."""

    name: str
    expr: AffineExpr
    strict: bool = False
    margin: float = 0.0


@dataclass
class ConstraintResidual:
    """Max eigenvalue of one constraint at an assignment, plus its verdict."""

    name: str
    max_eig: float
    margin: float
    strict: bool
    satisfied: bool

    def as_dict(self) -> dict:
        return {"name": self.name, "max_eig": self.max_eig,
                "margin": self.margin, "strict": self.strict,
                "satisfied": self.satisfied}


@dataclass
class SolveOutcome:
    """Result of a solve: status, assignment, residuals, objective value."""

    status: str  # "feasible" | "infeasible" | "unknown"
    assignment: dict
    residuals: list[ConstraintResidual] = field(default_factory=list)
    objective: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"

    def value(self, var: VarRef):
        return self.assignment[var]


class LmiProblem:
    """A list of affine symmetric constraints over declared variables."""

    def __init__(self):
        self.variables: list[VarRef] = []
        self._names: set[str] = set()
        self.constraints: list[Constraint] = []
        self.objective: dict | None = None  # VarRef -> weight array / scalar
        self.objective_const: float = 0.0

    # -- variable declaration ------------------------------------------------

    def _declare(self, var: VarRef) -> VarRef:
        if var.name in self._names:
            raise ExpressionError(f"duplicate variable name {var.name!r}")
        self._names.add(var.name)
        self.variables.append(var)
        return var

    def symmetric(self, name: str, n: int) -> VarRef:
        return self._declare(VarRef(name, "sym", n, n))

    def rectangular(self, name: str, rows: int, cols: int) -> VarRef:
        return self._declare(VarRef(name, "mat", rows, cols))

    def scalar(self, name: str) -> VarRef:
        return self._declare(VarRef(name, "scalar", 1, 1))

    # -- constraints ----------------------------------------------------------

    def require_neg_semidef(self, expr, name: str | None = None,
                            strict: bool = False,
                            margin: float | None = None) -> Constraint:
        """Add ``expr <= 0``; with ``strict`` the constraint is ``expr < 0``,
        encoded as ``expr <= -margin * I`` (default margin scales with the
        constant term)."""
        e = AffineExpr.wrap(expr)
        for v in e.variables():
            if v not in self.variables:
                raise ExpressionError(
                    f"expression references undeclared variable {v.name!r}")
        if margin is None:
            margin = (STRICT_MARGIN_SCALE * (1.0 + matcore.spectral_norm(e.const))
                      if strict else 0.0)
        con = Constraint(name or f"constraint{len(self.constraints)}",
                         e, strict, float(margin))
        self.constraints.append(con)
        return con

    def require_pos_semidef(self, expr, name: str | None = None,
                            strict: bool = False,
                            margin: float | None = None) -> Constraint:
        return self.require_neg_semidef(AffineExpr.wrap(expr).scaled(-1.0),
                                        name=name, strict=strict, margin=margin)

    def require_nonneg(self, var: VarRef, name: str | None = None) -> Constraint:
        """Scalar ``var >= 0`` as a 1x1 inequality."""
        e = AffineExpr(1)
        e.term(var, coeff=-1.0)
        return self.require_neg_semidef(e, name=name or f"{var.name}>=0")

    # -- objective ------------------------------------------------------------

    def minimize(self, weights: dict, const: float = 0.0):
        """Minimize ``sum_v <W_v, value(v)> + const`` (Frobenius pairing;
        scalar weights for scalar variables)."""
        for v, w in weights.items():
            if v not in self.variables:
                raise ExpressionError(f"objective references undeclared {v.name!r}")
            if v.kind != "scalar":
                a = np.asarray(w, dtype=float)
                if a.shape != (v.rows, v.cols):
                    raise ExpressionError(
                        f"objective weight for {v.name} has shape {a.shape}, "
                        f"expected ({v.rows}, {v.cols})")
        self.objective = dict(weights)
        self.objective_const = float(const)

    def clear_objective(self):
        self.objective = None
        self.objective_const = 0.0

    def objective_value(self, assignment: dict) -> float | None:
        if self.objective is None:
            return None
        total = self.objective_const
        for v, w in self.objective.items():
            if v.kind == "scalar":
                total += float(w) * float(assignment[v])
            else:
                total += float(np.sum(np.asarray(w, dtype=float)
                                      * v.coerce(assignment[v])))
        return total

    # -- serialization (debugging aid for external solvers) -------------------

    def to_json_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "variables": [{"name": v.name, "kind": v.kind,
                           "rows": v.rows, "cols": v.cols}
                          for v in self.variables],
            "constraints": [{
                "name": c.name, "strict": c.strict, "margin": c.margin,
                "dim": c.expr.dim, "constant": arr(c.expr.const),
                "terms": [{"var": t.var.name, "left": arr(t.left),
                           "right": arr(t.right), "transpose": t.transpose,
                           "coeff": t.coeff} for t in c.expr.terms],
            } for c in self.constraints],
            "objective": None if self.objective is None else {
                "const": self.objective_const,
                "weights": {v.name: (w if v.kind == "scalar" else arr(w))
                            for v, w in self.objective.items()},
            },
        }

    def dump_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)


# -- compilation to stacked coefficient form ----------------------------------


def variable_components(var: VarRef):
    """Index tuples of the free scalar components of a variable.

    Symmetric variables enumerate the upper triangle (k <= l); each component
    sets entries (k, l) and (l, k) simultaneously.
    """
    if var.kind == "sym":
        return [(k, l) for k in range(var.rows) for l in range(k, var.rows)]
    if var.kind == "mat":
        return [(k, l) for k in range(var.rows) for l in range(var.cols)]
    return [(0, 0)]


def assignment_to_vector(problem: LmiProblem, assignment: dict) -> np.ndarray:
    xs = []
    for v in problem.variables:
        if v not in assignment:
            raise ExpressionError(f"assignment is missing {v.name}")
        if v.kind == "scalar":
            xs.append(np.array([float(assignment[v])]))
        else:
            a = v.coerce(assignment[v])
            xs.append(np.array([a[k, l] for (k, l) in variable_components(v)]))
    return np.concatenate(xs) if xs else np.zeros(0)


def vector_to_assignment(problem: LmiProblem, x: np.ndarray) -> dict:
    out = {}
    pos = 0
    for v in problem.variables:
        n = v.n_components
        comp = x[pos:pos + n]
        pos += n
        if v.kind == "scalar":
            out[v] = float(comp[0])
        elif v.kind == "sym":
            a = np.zeros((v.rows, v.cols))
            for val, (k, l) in zip(comp, variable_components(v)):
                a[k, l] = val
                a[l, k] = val
            out[v] = a
        else:
            out[v] = comp.reshape(v.rows, v.cols)
    return out


@dataclass
class CompiledProblem:
    """Constraints flattened to ``F_j(x) = A0_j + sum_i x_i A_ji <= 0``.

    Margins are already folded into ``A0``.  ``c`` is the objective vector or
    ``None`` for pure feasibility.
    """

    problem: LmiProblem
    n_unknowns: int
    block_names: list[str]
    A0: list[np.ndarray]
    A: list[np.ndarray]  # each (m, n_j, n_j)
    c: np.ndarray | None


def compile_problem(problem: LmiProblem) -> CompiledProblem:
    slices = {}
    pos = 0
    for v in problem.variables:
        slices[v] = (pos, pos + v.n_components)
        pos += v.n_components
    m = pos

    A0s, As, names = [], [], []
    for con in problem.constraints:
        n = con.expr.dim
        if n == 0:
            continue
        a0 = con.expr.const.copy()
        a0 = (a0 + a0.T) / 2.0 + con.margin * np.eye(n)
        A = np.zeros((m, n, n))
        for t in con.expr.terms:
            left, right = _term_shapes(t, n, n)
            lo, _ = slices[t.var]
            if t.var.kind == "scalar":
                A[lo] += t.coeff * (left @ right)
                continue
            for idx, (k, l) in enumerate(variable_components(t.var)):
                if t.var.kind == "sym":
                    contrib = np.outer(left[:, k], right[l, :])
                    if k != l:
                        contrib = contrib + np.outer(left[:, l], right[k, :])
                else:
                    if t.transpose:
                        contrib = np.outer(left[:, l], right[k, :])
                    else:
                        contrib = np.outer(left[:, k], right[l, :])
                A[lo + idx] += t.coeff * contrib
        A = (A + np.transpose(A, (0, 2, 1))) / 2.0
        A0s.append(a0)
        As.append(A)
        names.append(con.name)

    cvec = None
    if problem.objective is not None:
        cvec = np.zeros(m)
        for v, w in problem.objective.items():
            lo, _ = slices[v]
            if v.kind == "scalar":
                cvec[lo] = float(w)
                continue
            wa = np.asarray(w, dtype=float)
            for idx, (k, l) in enumerate(variable_components(v)):
                if v.kind == "sym":
                    cvec[lo + idx] = wa[k, l] + wa[l, k] if k != l else wa[k, k]
                else:
                    cvec[lo + idx] = wa[k, l]
    return CompiledProblem(problem, m, names, A0s, As, cvec)


# -- solving -------------------------------------------------------------------


def solve(problem: LmiProblem, *, backend: str = "native", tol: float = 1e-8,
          max_iter: int = 4000, box_radius: float = 1e9,
          warm_start: dict | None = None, verbose: bool = False) -> SolveOutcome:
    """Solve for feasibility or a linear objective.

    ``feasible`` outcomes always satisfy every constraint at ``tol`` (raw
    max eigenvalue at most ``tol - margin``); an outcome that fails this
    audit is downgraded to ``unknown``.  ``infeasible`` is declared only when
    the feasibility subproblem converges to a positive optimum; iteration
    exhaustion yields ``unknown``.
    """
    comp = compile_problem(problem)
    x0 = (assignment_to_vector(problem, warm_start)
          if warm_start is not None else None)
    if backend == "native":
        from . import ipm
        status, x, info = ipm.solve_sdp(
            comp.A0, comp.A, comp.c, x0=x0, tol=tol, max_newton=max_iter,
            box_radius=box_radius, verbose=verbose)
    elif backend == "cvxpy":
        from . import cvxpy_backend
        status, x, info = cvxpy_backend.solve_compiled(comp, verbose=verbose)
    else:
        raise ValueError(f"unknown backend {backend!r}")

    assignment = vector_to_assignment(problem, x) if x is not None else {}
    residuals = (check_solution(problem, assignment, tol)
                 if assignment else [])
    if status == "feasible" and any(not r.satisfied for r in residuals):
        status = "unknown"
        info = dict(info, downgraded="residual check failed at tol")
    objective = (problem.objective_value(assignment)
                 if assignment and problem.objective is not None else None)
    return SolveOutcome(status, assignment, residuals, objective, info)


def check_solution(problem: LmiProblem, assignment: dict,
                   tol: float) -> list[ConstraintResidual]:
    """Recompute every constraint residual from scratch.

    Uses only plain matrix arithmetic and :mod:`safeguard.matcore`
    eigenvalue routines; nothing from the solver path is reused, so this is
    an independent audit of any claimed solution.
    """
    out = []
    for con in problem.constraints:
        n = con.expr.dim
        if n == 0:
            out.append(ConstraintResidual(con.name, float("-inf"),
                                          con.margin, con.strict, True))
            continue
        val = con.expr.const.copy()
        for t in con.expr.terms:
            left, right = _term_shapes(t, n, n)
            if t.var.kind == "scalar":
                val = val + t.coeff * float(assignment[t.var]) * (left @ right)
            else:
                v = t.var.coerce(assignment[t.var])
                if t.transpose:
                    v = v.T
                val = val + t.coeff * (left @ v @ right)
        val = (val + val.T) / 2.0
        top = matcore.max_eig(val)
        ok = top <= tol - con.margin if con.strict else top <= tol
        out.append(ConstraintResidual(con.name, top, con.margin, con.strict, ok))
    return out


def minimize_logdet_iterative(problem: LmiProblem, var: VarRef,
                              rounds: int = 10, *, backend: str = "native",
                              tol: float = 1e-8,
                              rel_stop: float = 1e-9) -> SolveOutcome:
    """Maximize ``log det`` of a PD-constrained symmetric variable.

    Runs successive linearizations: each round minimizes
    ``-trace(inv(X_prev) @ X)`` subject to the problem constraints, which is
    the tangent model of ``log det`` at the previous iterate.  A backtracking
    blend onto the segment between iterates (feasible by convexity) enforces
    a monotone nondecreasing ``log det`` sequence, recorded in
    ``info["logdet_history"]``.  Round-1 infeasibility is propagated.
    """
    if var.kind != "sym":
        raise ExpressionError("log-det objective needs a symmetric variable")

    saved_obj, saved_const = problem.objective, problem.objective_const
    try:
        problem.clear_objective()
        outcome = solve(problem, backend=backend, tol=tol)
        if not outcome.feasible:
            return outcome

        def logdet(asn):
            sign, val = np.linalg.slogdet(var.coerce(asn[var]))
            return val if sign > 0 else float("-inf")

        best = outcome.assignment
        history = [logdet(best)]
        if not math.isfinite(history[0]):
            # The seed iterate is not PD (the caller may not have floored
            # the variable); retry once with a temporary floor.
            floor = AffineExpr(var.rows, const=1e-6 * np.eye(var.rows))
            floor.term(var, coeff=-1.0)
            con = problem.require_neg_semidef(floor, name="logdet seed floor")
            outcome = solve(problem, backend=backend, tol=tol)
            problem.constraints.remove(con)
            if not outcome.feasible:
                return SolveOutcome("unknown", best, outcome.residuals, None,
                                    dict(outcome.info,
                                         message="no PD seed iterate found"))
            best = outcome.assignment
            history = [logdet(best)]
        for _ in range(rounds):
            grad = np.linalg.inv(var.coerce(best[var]))
            problem.minimize({var: -(grad + grad.T) / 2.0})
            step = solve(problem, backend=backend, tol=tol, warm_start=best)
            if not step.feasible:
                break
            cand = step.assignment
            ld = logdet(cand)
            if ld < history[-1]:
                # Tangent ascent can overshoot; damp along the (feasible)
                # segment toward the previous iterate.
                tau, ld = 1.0, ld
                while ld < history[-1] and tau > 1e-6:
                    tau /= 2.0
                    cand = {v: (1 - tau) * np.asarray(best[v]) + tau * np.asarray(step.assignment[v])
                            if v.kind != "scalar"
                            else (1 - tau) * best[v] + tau * step.assignment[v]
                            for v in problem.variables}
                    ld = logdet(cand)
                if ld < history[-1]:
                    break
            improved = ld - history[-1]
            best = cand
            history.append(ld)
            if improved <= rel_stop * (1.0 + abs(history[-1])):
                break
        problem.clear_objective()
        residuals = check_solution(problem, best, tol)
        return SolveOutcome("feasible", best, residuals, history[-1],
                            {"logdet_history": history})
    finally:
        problem.objective, problem.objective_const = saved_obj, saved_const
