"""Secondary-controller synthesis.

Two routes produce a controller gain ``K`` and a quadratic invariance
certificate ``P`` for the full closed loop:

* the nonlinear route (sector-bounded nonlinearity, state-dependent attack
  budget) solves two projected feasibility conditions in ``(X, Y)`` obtained
  through the elimination (projection) lemma, completes ``P`` from the pair,
  and then solves the resulting LMI in ``K``;
* the linear route (no nonlinearity after absorbing a fixed sector gain,
  state-independent attacks) uses the classic convexifying change of
  variables and recovers the controller exactly.

Both routes end with independent audits: the certificate inequality at the
assembled closed loop, positive definiteness of ``P``, and containment of
the state projection of the certified ellipsoid in the safe set.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import lmi_engine, matcore
from .lmi_engine import AffineExpr, LmiProblem, MatExpr, sym_blocks
from .sysmodel import (AttackModel, SecondaryController, SystemBundle,
                       assemble_closed_loop, gain_factorization, hat_matrices,
                       validate_bundle)

logger = logging.getLogger(__name__)

__all__ = [
    "Eta",
    "SynthesisError",
    "SynthOptions",
    "SynthResult",
    "audit_synthesis_point",
    "build_thm1_problem",
    "build_thm2_problem",
    "change_of_variables",
    "complete_P",
    "recover_controller",
    "solve_K_given_P",
    "synthesize_l2",
    "synthesize_linear",
    "synthesize_nonlinear",
    "optimize_rpi",
    "worst_attack",
]

GAIN_WARN_THRESHOLD = 1e4

# Default multiplier grid for the nonlinear route.  All four multipliers are
# pinned per grid point because the X-side condition carries 1/alpha2 and
# 1/alpha3 terms; the known-good point for the bundled case study comes
# first so the headline instance resolves on the first cell.
DEFAULT_NONLINEAR_GRID = tuple(
    [(0.05, 0.05, 0.1, 0.99)]
    + [(a1, a2, a3, a4)
       for a1 in (0.01, 0.05, 0.1, 0.5)
       for a2 in (0.01, 0.05, 0.1, 0.5)
       for a3 in (0.05, 0.1, 0.5, 1.0)
       for a4 in (0.9, 0.99)
       if (a1, a2, a3, a4) != (0.05, 0.05, 0.1, 0.99)])

DEFAULT_LINEAR_GRID = tuple(
    (a1, a4) for a1 in (0.01, 0.05, 0.1, 0.5, 1.0) for a4 in (0.9, 0.99, 1.0))

DEFAULT_WORST_ATTACK_GRID = tuple(
    (a1, a2, a4)
    for a1 in (0.5, 1.0, 1.5)
    for a2 in (0.5, 1.0)
    for a4 in (0.9, 0.99, 1.0))


class SynthesisError(RuntimeError):
    """A synthesis stage failed; carries the stage tag."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class SynthOptions:
    """Knobs for the synthesis pipelines."""

    alphas: tuple | None = None          # pin one multiplier point
    grid: tuple | None = None            # or supply a custom grid
    completion: str = "auto"             # auto | pi | recipe
    N: np.ndarray | None = None          # coupling factor choice
    tol: float = 1e-8
    backend: str = "native"
    gain_minimize: bool = True
    spectral_cap: float | None = 2000.0  # closed-loop spectral-radius target
    epsilon: float = 1e-4                # slack in the L2-gain block
    logdet_rounds: int = 10

    def __post_init__(self):
        if self.alphas is not None:
            a = tuple(float(v) for v in self.alphas)
            if len(a) not in (2, 3, 4):
                raise ValueError("alphas must have 2-4 entries")
            object.__setattr__(self, "alphas", a)
        if self.completion not in ("auto", "pi", "recipe"):
            raise ValueError(f"unknown completion mode {self.completion!r}")


@dataclass
class StageFailure:
    alphas: tuple
    stage: str
    message: str


@dataclass
class SynthResult:
    """Synthesized controller plus its audited certificate."""

    controller: SecondaryController
    P: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    alphas: tuple
    residuals: dict
    contained: bool
    rpi: matcore.Ellipsoid
    projection: matcore.Ellipsoid
    gamma: float | None = None
    warnings: list = field(default_factory=list)
    table: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def gain_norm(self) -> float:
        return matcore.spectral_norm(self.controller.gain())

    def as_dict(self) -> dict:
        d = {
            "K": {"A2": self.controller.A.tolist(),
                  "B2": self.controller.B.tolist(),
                  "C2": self.controller.C.tolist(),
                  "D2": self.controller.D.tolist()},
            "P": self.P.tolist(), "X": self.X.tolist(), "Y": self.Y.tolist(),
            "alphas": {"alpha1": self.alphas[0], "alpha2": self.alphas[1],
                       "alpha3": self.alphas[2], "alpha4": self.alphas[3]},
            "residuals": self.residuals,
            "contained": self.contained,
            "warnings": list(self.warnings),
        }
        if self.gamma is not None:
            d["gamma"] = self.gamma
        return d


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------


def _loop_data(bundle: SystemBundle):
    """Everything the synthesis conditions need, in stacked form."""
    G = bundle.stacked_G()
    H = bundle.stacked_H()
    B1 = bundle.attack_input()
    Ahat, Bhat, Chat = hat_matrices(bundle.plant, bundle.primary,
                                    bundle.selection)
    return Ahat, Bhat, Chat, G, H, B1


def _psd_factor(m: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Thin factor L with L L^T = m for PSD m (rank-revealing)."""
    m = matcore.as_symmetric(m, tol=1e-6)
    if m.shape[0] == 0:
        return np.zeros((0, 0))
    w, v = np.linalg.eigh(m)
    top = max(float(w[-1]), 0.0)
    keep = w > max(top, 1.0) * tol
    return v[:, keep] * np.sqrt(w[keep])


def _extend_attack(Q1, Q2, n2: int):
    """Embed the state-side attack weights into the full loop state."""
    nz = Q1.shape[0]
    Q1t = np.zeros((nz + n2, nz + n2))
    Q1t[:nz, :nz] = Q1
    Q2t = np.vstack([Q2, np.zeros((n2, Q2.shape[1]))])
    return Q1t, Q2t


def nonlinear_certificate_matrix(A, G, H, B1, sector, Q1, Q2, Q3,
                                 alphas, P) -> np.ndarray:
    """The invariance condition of the full loop at a concrete ``(P, A)``.

    Rows are (state, nonlinearity, attack, const); the matrix must be
    negative semidefinite for ``{z : z^T P z <= 1}`` to be robustly
    invariant.  Plain numpy; used as the independent audit of every
    synthesized controller.
    """
    a1, a2, a3, _ = alphas
    n = A.shape[0]
    q = G.shape[1]
    na = B1.shape[1]
    S1, S2, V = sector.S1, sector.S2, sector.V
    top = matcore.he(P @ A) + a1 * P - a2 * Q1
    if q:
        top = top - a3 * matcore.he(H.T @ S1.T @ V @ S2 @ H)
    c01 = P @ G + a3 * H.T @ (S1 + S2).T @ V
    c02 = P @ B1 - a2 * Q2
    return matcore.block([
        [top, c01, c02, np.zeros((n, 1))],
        [c01.T, -2.0 * a3 * V, np.zeros((q, na)), np.zeros((q, 1))],
        [c02.T, np.zeros((na, q)), -a2 * Q3, np.zeros((na, 1))],
        [np.zeros((1, n)), np.zeros((1, q)), np.zeros((1, na)),
         np.array([[a2 - a1]])],
    ])


def _containment_cells(X, Xi_inv, alpha4, nz):
    return sym_blocks([nz, 1, nz], {
        (0, 0): MatExpr.zeros(nz, nz).term(X, coeff=-alpha4),
        (0, 2): MatExpr.zeros(nz, nz).term(X),
        (1, 1): np.array([[alpha4 - 1.0]]),
        (2, 2): -Xi_inv,
    })


def _coupling_expr(X, Y, nz):
    e = MatExpr.zeros(2 * nz, 2 * nz)
    top = np.zeros((2 * nz, nz))
    top[:nz] = np.eye(nz)
    bot = np.zeros((2 * nz, nz))
    bot[nz:] = np.eye(nz)
    e.term(X, left=top, right=top.T)
    e.term(Y, left=bot, right=bot.T)
    e.add_const(matcore.block([[np.zeros((nz, nz)), np.eye(nz)],
                               [np.eye(nz), np.zeros((nz, nz))]]))
    return AffineExpr.wrap(e)


def _safe_inverse(Xi: np.ndarray) -> np.ndarray:
    if Xi.shape[0] == 0 or matcore.min_eig(Xi) <= 0:
        raise SynthesisError(
            "containment", "the safe-set shape must be positive definite "
            "for the synthesis containment condition")
    return np.linalg.inv(Xi)


def _add_linear_bound(prob: LmiProblem, weights: dict, bound: float,
                      name: str):
    """Add ``sum_v <W_v, v> <= bound`` as a 1x1 inequality (weights are
    rank-decomposed into expression terms)."""
    e = AffineExpr(1, const=np.array([[-float(bound)]]))
    for v, w in weights.items():
        if v.kind == "scalar":
            e.term(v, left=np.array([[float(w)]]), right=np.eye(1))
            continue
        wa = np.asarray(w, dtype=float)
        u, s, vt = np.linalg.svd(wa)
        for i in range(int(np.sum(s > (s[0] if s.size else 0.0) * 1e-14))):
            e.term(v, left=(s[i] * u[:, i]).reshape(1, -1),
                   right=vt[i].reshape(-1, 1))
    prob.require_neg_semidef(e, name=name)


def _warm_solve(prob, warm, **kw) -> lmi_engine.SolveOutcome:
    """Solve with a warm start, retrying cold if the warm path fails (a
    drifted warm start can leave the barrier badly centered)."""
    out = lmi_engine.solve(prob, warm_start=warm, **kw)
    if not out.feasible and warm is not None:
        out = lmi_engine.solve(prob, **kw)
    return out


def _balanced_solve(prob: LmiProblem, reg_var, *, objective: dict | None = None,
                    shrink: list | None = None,
                    backend: str = "native", tol: float = 1e-8,
                    leash_factor: float = 1.5,
                    pin_slack: float = 1e-3) -> lmi_engine.SolveOutcome:
    """Solve while keeping the solver off the cone's free directions.

    Several synthesis feasibility sets are unbounded along directions that
    only inflate some variables (the Y-block; jointly drifting transformed
    controller variables), where barrier iterates run to extreme scales and
    the completion/recovery steps downstream lose all precision.  Stages:

    1. with an ``objective``: optimize it first (iterate drift is harmless
       here) and pin it near its optimum; then find the natural scale of
       ``reg_var`` by trace minimization on the pinned face and leash it;
    2. without one: a pilot trace minimization of ``reg_var`` sets the
       leash directly;
    3. optionally shrink the ``shrink`` variables to minimal joint spectral
       norm (epigraph pass) and pin that too;
    4. re-center (pure feasibility) inside everything pinned.
    """
    best = None
    if objective is not None:
        prob.minimize(objective)
        opt = lmi_engine.solve(prob, backend=backend, tol=tol)
        prob.clear_objective()
        if not opt.feasible:
            return opt
        tau_p = opt.objective if opt.objective is not None else 0.0
        _add_linear_bound(prob, objective,
                          tau_p + pin_slack * (1.0 + abs(tau_p)),
                          name="objective pin")
        best = opt

    # Cold start: a warm start from a different objective's (possibly
    # drifted) optimum is worthless for the trace pilot.
    prob.minimize({reg_var: np.eye(reg_var.rows)})
    pilot = lmi_engine.solve(prob, backend=backend, tol=tol)
    prob.clear_objective()
    if not pilot.feasible:
        return pilot if best is None else best
    tau = float(np.trace(reg_var.coerce(pilot.assignment[reg_var])))
    _add_linear_bound(prob, {reg_var: np.eye(reg_var.rows)},
                      leash_factor * abs(tau) + 1.0,
                      name=f"trace({reg_var.name}) leash")
    best = pilot

    if objective is not None:
        # The unleashed objective solve may have stalled above the true
        # optimum; re-optimize on the leashed (drift-free) set and pin the
        # improved value.
        prob.minimize(objective)
        again = _warm_solve(prob, pilot.assignment, backend=backend, tol=tol)
        prob.clear_objective()
        if again.feasible and again.objective is not None:
            _add_linear_bound(prob, objective,
                              again.objective
                              + pin_slack * (1.0 + abs(again.objective)),
                              name="objective repin")
            best = again

    if shrink:
        bound = prob.scalar("norm_bound")
        for v in shrink:
            cap = sym_blocks([v.rows, v.cols], {
                (0, 0): MatExpr.zeros(v.rows, v.rows).term(bound, coeff=-1.0),
                (0, 1): MatExpr.zeros(v.rows, v.cols).term(v),
                (1, 1): MatExpr.zeros(v.cols, v.cols).term(bound, coeff=-1.0),
            })
            prob.require_neg_semidef(cap, name=f"norm cap {v.name}")
        start = dict(best.assignment)
        start[bound] = 1.0 + 2.0 * max(
            matcore.spectral_norm(np.atleast_2d(np.asarray(best.assignment[v])))
            for v in shrink)
        prob.minimize({bound: 1.0})
        small = lmi_engine.solve(prob, backend=backend, tol=tol,
                                 warm_start=start)
        if not small.feasible:
            small = lmi_engine.solve(prob, backend=backend, tol=tol)
        prob.clear_objective()
        if small.feasible:
            tau_n = float(small.assignment[bound])
            _add_linear_bound(prob, {bound: 1.0}, 1.1 * tau_n + 1e-9,
                              name="norm pin")
            best = small
        else:
            start[bound] = 2.0 * start[bound]
            _add_linear_bound(prob, {bound: 1.0}, start[bound],
                              name="norm pin")
            best = lmi_engine.SolveOutcome(best.status, start,
                                           best.residuals, best.objective,
                                           best.info)

    deep = _warm_solve(prob, best.assignment, backend=backend, tol=tol)
    if deep.feasible:
        if objective is not None:
            deep.objective = _linear_value(objective, deep.assignment)
        return deep
    if objective is not None and best.objective is None:
        best.objective = _linear_value(objective, best.assignment)
    return best


def _linear_value(weights: dict, assignment: dict) -> float:
    total = 0.0
    for v, w in weights.items():
        if v.kind == "scalar":
            total += float(w) * float(assignment[v])
        else:
            total += float(np.sum(np.asarray(w, dtype=float)
                                  * v.coerce(assignment[v])))
    return total


def _embed_partial_margin(expr: AffineExpr, rows: int) -> AffineExpr:
    """Fold a strictness margin into the leading ``rows`` rows only.

    The trailing homogenization entry of the invariance conditions equals
    ``alpha2 - alpha1`` and is structurally pinned to zero whenever the two
    multipliers coincide (a legitimate and common choice), so a uniform
    strict margin would be infeasible by construction.  The margin is what
    the elimination argument needs on the state blocks; the pinned scalar
    may sit at equality.
    """
    m = lmi_engine.STRICT_MARGIN_SCALE * \
        (1.0 + matcore.spectral_norm(expr.const))
    shift = np.zeros((expr.dim, expr.dim))
    shift[:rows, :rows] = m * np.eye(rows)
    expr.add_const(shift)
    return expr


# ---------------------------------------------------------------------------
# nonlinear route
# ---------------------------------------------------------------------------


def build_thm1_problem(bundle: SystemBundle, alphas: tuple) -> LmiProblem:
    """Projected feasibility conditions in ``(X, Y)`` at fixed multipliers.

    The X-side condition is the Schur-linearized version of the eliminated
    invariance inequality: the quadratic-in-X kernel
    ``(a3/2) H^T (S2-S1)^T V (S2-S1) H + a2 * (Q2 Q3^-1 Q2^T - Q1)`` is
    split into its sector part (through ``H``, inverted directly) and a thin
    factor of the attack part, each getting one Schur row.  The sector part
    must be positive definite, which is exactly the usable strict-sector
    requirement ``S1 != S2``.
    """
    a1, a2, a3, a4 = alphas
    if a2 <= 0 or a3 <= 0:
        raise SynthesisError(
            "build", "the sector and attack multipliers must be strictly "
            "positive on this route (their reciprocals enter the conditions)")
    if not 0.0 <= a4 <= 1.0:
        raise SynthesisError("build", f"alpha4={a4} outside [0, 1]")
    sector, attack = bundle.sector, bundle.attack
    if sector.is_linear:
        raise SynthesisError(
            "build", "S1 == S2 pins the nonlinearity to a single gain; use "
            "the linear route (synthesize_linear)")
    Ahat, Bhat, Chat, G, H, B1 = _loop_data(bundle)
    nz = Ahat.shape[0]
    q, h = sector.S1.shape
    na = B1.shape[1]
    S1, S2, V = sector.S1, sector.S2, sector.V
    Q1, Q2, Q3 = attack.Q1, attack.Q2, attack.Q3
    Q3inv = np.linalg.inv(Q3) if na else np.zeros((0, 0))
    Vinv = np.linalg.inv(V)

    D = S2 - S1
    W_sec = (a3 / 2.0) * (D.T @ V @ D)
    if h and matcore.min_eig(W_sec) <= 0:
        raise SynthesisError(
            "build", "(S2 - S1)^T V (S2 - S1) is singular: the sector gap "
            "must be strict in every channel of H for the Schur step; "
            "widen the sector or drop redundant H rows")
    growth = Q2 @ Q3inv @ Q2.T - Q1
    Lq = _psd_factor(a2 * growth)
    r = Lq.shape[1]

    W1 = matcore.null_space_basis(Bhat.T)
    W2 = matcore.null_space_basis(Chat)
    k1, k2 = W1.shape[1], W2.shape[1]

    prob = LmiProblem()
    X = prob.symmetric("X", nz)
    Y = prob.symmetric("Y", nz)

    # X-side projected condition.
    if k1:
        M_lin = (Ahat + 0.5 * (G @ (S1 + S2) @ H) - B1 @ Q3inv @ Q2.T
                 + (a1 / 2.0) * np.eye(nz))
        C0 = (G @ Vinv @ G.T) / (2.0 * a3) + (B1 @ Q3inv @ B1.T) / a2
        c00 = MatExpr.constant(W1.T @ C0 @ W1)
        c00.term(X, left=W1.T @ M_lin, right=W1, coeff=2.0)
        cells = {(0, 0): c00}
        if h:
            cells[(0, 1)] = MatExpr.zeros(k1, h).term(X, left=W1.T, right=H.T)
            cells[(1, 1)] = -np.linalg.inv(W_sec)
        if r:
            cells[(0, 2)] = MatExpr.zeros(k1, r).term(X, left=W1.T, right=Lq)
            cells[(2, 2)] = -np.eye(r)
        x_expr = sym_blocks([k1, h, r], cells)
        prob.require_neg_semidef(_embed_partial_margin(x_expr, x_expr.dim),
                                 name="x-side")

    # Y-side projected condition.
    cells = {}
    if k2:
        c00 = MatExpr.constant(
            W2.T @ (-a3 * matcore.he(H.T @ S1.T @ V @ S2 @ H) - a2 * Q1) @ W2)
        c00.term(Y, left=W2.T, right=Ahat @ W2, coeff=2.0)
        c00.term(Y, left=W2.T, right=W2, coeff=a1)
        cells[(0, 0)] = c00
        cells[(0, 1)] = (MatExpr.constant(a3 * W2.T @ H.T @ (S1 + S2).T @ V)
                         .term(Y, left=W2.T, right=G))
        if na:
            cells[(0, 2)] = (MatExpr.constant(-a2 * W2.T @ Q2)
                             .term(Y, left=W2.T, right=B1))
    cells[(1, 1)] = -2.0 * a3 * V
    if na:
        cells[(2, 2)] = -a2 * Q3
    cells[(3, 3)] = np.array([[a2 - a1]])
    y_expr = sym_blocks([k2, q, na, 1], cells)
    prob.require_neg_semidef(_embed_partial_margin(y_expr, k2 + q + na),
                             name="y-side")

    # Containment of the projected certificate in the safe set.
    Xi_inv = _safe_inverse(bundle.safe.Xi)
    prob.require_neg_semidef(_containment_cells(X, Xi_inv, a4, nz),
                             name="containment")

    # Coupling: [X I; I Y] >= 0, kept slightly strict so that the completion
    # step has an invertible I - X Y to work with.
    prob.require_pos_semidef(_coupling_expr(X, Y, nz), name="coupling",
                             strict=True)
    return prob


def complete_P(X: np.ndarray, Y: np.ndarray, mode: str = "auto",
               N: np.ndarray | None = None, tol: float = 1e-7):
    """Build the full certificate matrix ``P`` from a coupled pair.

    ``pi`` mode solves the inverse-partition relations so that the leading
    block of ``P^{-1}`` equals ``X`` exactly (what the elimination argument
    uses); ``recipe`` mode uses the direct completion
    ``Ytil = I + N^T Y^{-1} N``, which guarantees positive definiteness but
    not the inverse-block property.  ``auto`` tries ``pi`` first and falls
    back.  Returns ``(P, N, M)`` with ``M N^T = I - X Y``.
    """
    X = matcore.as_symmetric(X, name="X")
    Y = matcore.as_symmetric(Y, name="Y")
    nz = X.shape[0]
    if matcore.min_eig(Y) <= 0:
        raise SynthesisError("completion", "Y must be positive definite")
    gap = X - np.linalg.inv(Y)
    if matcore.min_eig(gap) <= tol * (1.0 + matcore.spectral_norm(X)) * 1e-6:
        raise SynthesisError(
            "completion", "X - Y^{-1} is not (numerically) positive "
            "definite; I - X Y is singular and no invertible coupling "
            "factorization exists")
    I = np.eye(nz)
    if N is not None:
        N = matcore.as_matrix(N, "N")
        if N.shape != (nz, nz) or abs(np.linalg.det(N)) < 1e-300:
            raise SynthesisError("completion",
                                 "N must be square and invertible")

    def build_pi():
        if N is None:
            # The coupling factor is a free choice; a scaled identity that
            # balances the diagonal blocks of P keeps it well conditioned
            # for the gain solve and the invariance sampling downstream.
            ytil_unit = matcore.spectral_norm(X @ np.linalg.inv(I - Y @ X))
            theta = math.sqrt(max(matcore.spectral_norm(Y), 1e-12)
                              / max(ytil_unit, 1e-12))
            Nv = theta * I
        else:
            Nv = N
        Mt = np.linalg.solve(Nv, I - Y @ X)  # M^T = N^{-1} (I - Y X)
        Ytil = matcore.as_symmetric(-Nv.T @ X @ np.linalg.inv(Mt),
                                    tol=1e-6, name="completion block")
        return matcore.block([[Y, Nv], [Nv.T, Ytil]]), Nv, Mt.T

    def build_recipe():
        Nv = I if N is None else N
        Mt = np.linalg.solve(Nv, I - Y @ X)
        Ytil = I + Nv.T @ np.linalg.solve(Y, Nv)
        return matcore.block([[Y, Nv], [Nv.T, Ytil]]), Nv, Mt.T

    order = {"pi": [build_pi], "recipe": [build_recipe],
             "auto": [build_pi, build_recipe]}[mode]
    last_error = None
    for builder in order:
        try:
            P, Nv, M = builder()
            if matcore.min_eig(P) <= 0:
                raise ValueError("completed P is not positive definite")
            return matcore.as_symmetric(P, tol=1e-6), Nv, M
        except ValueError as exc:
            last_error = exc
    raise SynthesisError("completion", str(last_error))


def solve_K_given_P(P: np.ndarray, bundle: SystemBundle, n2: int,
                    alphas: tuple, *, tol: float = 1e-8,
                    backend: str = "native",
                    gain_minimize: bool = True,
                    spectral_cap: float | None = 2000.0):
    """Solve the certificate inequality for the stacked secondary gain.

    With ``P`` fixed the invariance condition is linear in ``K`` through
    ``Omega + He(V^T K U)``, so any gain in that (convex) set certifies.
    Because the set is large and its extreme points produce needlessly stiff
    loops, two optional shaping devices are applied: a disk-region condition
    ``[[-rho P, P A(K)], [*, -rho P]] <= 0`` capping the closed-loop
    spectral radius at ``spectral_cap`` (relaxed geometrically, then dropped,
    if infeasible), and a second pass minimizing a spectral-norm bound on
    ``K``.  The default cap keeps certified loops integrable by the
    fixed-step simulator at its standard 1e-3 step.  Returns
    ``(controller, info)``.
    """
    a1, a2, a3, _ = alphas
    Ahat, Bhat, Chat, G, H, B1 = _loop_data(bundle)
    nz = Ahat.shape[0]
    n = nz + n2
    q = G.shape[1]
    na = B1.shape[1]
    sector, attack = bundle.sector, bundle.attack
    S1, S2, V = sector.S1, sector.S2, sector.V
    Q1t, Q2t = _extend_attack(attack.Q1, attack.Q2, n2)
    Gext = np.vstack([G, np.zeros((n2, q))])
    Hext = np.hstack([H, np.zeros((H.shape[0], n2))])
    B1ext = np.vstack([B1, np.zeros((n2, na))])
    P = matcore.as_symmetric(P, name="P")
    if P.shape[0] != n:
        raise matcore.DimensionError(
            f"P is {P.shape[0]}-dim, closed loop is {n}-dim")

    Atil, Btil, Ctil = gain_factorization(bundle.plant, bundle.primary,
                                          bundle.selection, n2)
    phi1 = matcore.he(P @ Atil) + a1 * P - a2 * Q1t
    if q:
        phi1 = phi1 - a3 * matcore.he(Hext.T @ S1.T @ V @ S2 @ Hext)
    o01 = P @ Gext + a3 * Hext.T @ (S1 + S2).T @ V
    o02 = P @ B1ext - a2 * Q2t
    omega = matcore.block([
        [phi1, o01, o02, np.zeros((n, 1))],
        [o01.T, -2.0 * a3 * V, np.zeros((q, na)), np.zeros((q, 1))],
        [o02.T, np.zeros((na, q)), -a2 * attack.Q3, np.zeros((na, 1))],
        [np.zeros((1, n)), np.zeros((1, q)), np.zeros((1, na)),
         np.array([[a2 - a1]])],
    ])
    dim = omega.shape[0]
    Umat = np.hstack([Ctil, np.zeros((Ctil.shape[0], dim - n))])
    Vmat = np.hstack([Btil.T @ P, np.zeros((Btil.shape[1], dim - n))])

    k_rows, k_cols = n2 + bundle.selection.n_secondary_inputs, \
        n2 + bundle.selection.n_meas

    def build(margin, radius=None):
        prob = LmiProblem()
        K = prob.rectangular("K", k_rows, k_cols)
        expr = MatExpr.constant(omega)
        expr.term(K, left=Vmat.T, right=Umat, coeff=2.0)
        e = AffineExpr.wrap(expr)
        # Margin on everything but the pinned homogenization scalar.
        shift = np.zeros((dim, dim))
        shift[:dim - 1, :dim - 1] = margin * np.eye(dim - 1)
        e.add_const(shift)
        prob.require_neg_semidef(e, name="K-certificate")
        if radius is not None:
            # scaled by 1/radius so the block norms stay comparable to the
            # certificate blocks (same constraint set)
            disk = MatExpr.constant(matcore.block(
                [[-P, P @ Atil / radius], [Atil.T @ P / radius, -P]]))
            disk.term(K, left=np.vstack([P @ Btil / radius,
                                         np.zeros((n, k_rows))]),
                      right=np.hstack([np.zeros((k_cols, n)), Ctil]),
                      coeff=2.0)
            prob.require_neg_semidef(AffineExpr.wrap(disk),
                                     name="spectral cap")
        return prob, K

    base_margin = lmi_engine.STRICT_MARGIN_SCALE * \
        (1.0 + matcore.spectral_norm(omega))
    radii = ([spectral_cap * 2.0 ** k for k in range(3)] + [None]
             if spectral_cap else [None])
    outcome, K, radius_used = None, None, None
    for radius in radii:
        margin = base_margin
        for _ in range(3):
            prob, K = build(margin, radius)
            outcome = lmi_engine.solve(prob, backend=backend, tol=tol)
            if outcome.feasible:
                break
            margin *= 1e-2
        if outcome.feasible:
            radius_used = radius
            break
    if outcome is None or not outcome.feasible:
        raise SynthesisError(
            "gain", "completion produced no admissible gain; retry with the "
            "other completion mode or another multiplier point")
    K_val = outcome.assignment[K]
    info = {"margin": margin, "feasibility_status": outcome.status,
            "spectral_cap": radius_used}

    if gain_minimize:
        prob, K = build(margin, radius_used)
        rho = prob.scalar("rho")
        cap = sym_blocks([k_rows, k_cols], {
            (0, 0): MatExpr.zeros(k_rows, k_rows).term(rho, coeff=-1.0),
            (0, 1): MatExpr.zeros(k_rows, k_cols).term(K),
            (1, 1): MatExpr.zeros(k_cols, k_cols).term(rho, coeff=-1.0),
        })
        prob.require_neg_semidef(cap, name="gain cap")
        prob.minimize({rho: 1.0})
        trimmed = lmi_engine.solve(prob, backend=backend, tol=tol,
                                   warm_start={
                                       K: K_val,
                                       rho: 2.0 * matcore.spectral_norm(K_val)
                                       + 1.0})
        if trimmed.feasible:
            K_val = trimmed.assignment[K]
            info["gain_bound"] = trimmed.assignment[rho]
    controller = SecondaryController.from_gain(K_val, n2)
    return controller, info


def _audit_nonlinear(bundle, controller, P, X, alphas, tol):
    loop = assemble_closed_loop(bundle.plant, bundle.primary, controller,
                                bundle.selection,
                                attack_input=bundle.attack_input())
    n2 = controller.order
    Q1t, Q2t = _extend_attack(bundle.attack.Q1, bundle.attack.Q2, n2)
    cert = nonlinear_certificate_matrix(
        loop.A, loop.G, loop.H, loop.B, bundle.sector, Q1t, Q2t,
        bundle.attack.Q3, alphas, P)
    Xinv = np.linalg.inv(X)
    return {
        "k_lmi_max_eig": matcore.max_eig(cert),
        "p_min_eig": matcore.min_eig(P),
        "projection_margin": matcore.min_eig(Xinv - bundle.safe.Xi),
        "contained": matcore.ellipsoid_contains(Xinv, bundle.safe.Xi,
                                                tol=1e-6),
    }


def synthesize_nonlinear(bundle: SystemBundle, n2: int | None = None,
                         options: SynthOptions | None = None) -> SynthResult:
    """Full nonlinear pipeline: solve the projected conditions, complete the
    certificate, solve for the gain, audit everything.

    Walks the multiplier grid in order and returns the first point whose
    every stage succeeds; raises :class:`SynthesisError` with the per-point
    failure table otherwise.
    """
    opts = options or SynthOptions()
    problems = validate_bundle(bundle)
    if problems:
        raise ValueError("bundle is invalid: " + "; ".join(problems))
    nz = bundle.n_loop
    n2 = nz if n2 is None else int(n2)
    if opts.alphas is not None:
        if len(opts.alphas) != 4:
            raise ValueError("the nonlinear route needs all four multipliers")
        grid = [opts.alphas]
    else:
        grid = list(opts.grid or DEFAULT_NONLINEAR_GRID)

    table: list[StageFailure] = []
    for alphas in grid:
        try:
            prob = build_thm1_problem(bundle, alphas)
        except SynthesisError as exc:
            table.append(StageFailure(alphas, exc.stage, str(exc)))
            continue
        outcome = _balanced_solve(prob, prob.variables[1],
                                  backend=opts.backend, tol=opts.tol)
        if not outcome.feasible:
            table.append(StageFailure(alphas, "feasibility",
                                      f"status {outcome.status}"))
            continue
        X = outcome.assignment[prob.variables[0]]
        Y = outcome.assignment[prob.variables[1]]
        modes = {"auto": ["pi", "recipe"], "pi": ["pi"],
                 "recipe": ["recipe"]}[opts.completion]
        result = None
        for mode in modes:
            try:
                P, N, M = complete_P(X, Y, mode=mode, N=opts.N)
                controller, kinfo = solve_K_given_P(
                    P, bundle, n2, alphas, tol=opts.tol,
                    backend=opts.backend, gain_minimize=opts.gain_minimize,
                    spectral_cap=opts.spectral_cap)
            except SynthesisError as exc:
                table.append(StageFailure(alphas, exc.stage,
                                          f"{mode}: {exc}"))
                continue
            audits = _audit_nonlinear(bundle, controller, P, X, alphas,
                                      opts.tol)
            if audits["k_lmi_max_eig"] > opts.tol or not audits["contained"] \
                    or audits["p_min_eig"] <= 0:
                table.append(StageFailure(
                    alphas, "audit",
                    f"{mode}: certificate residual "
                    f"{audits['k_lmi_max_eig']:.3e}, contained="
                    f"{audits['contained']}"))
                continue
            xy_audit = lmi_engine.check_solution(prob, outcome.assignment,
                                                 tol=opts.tol)
            residuals = dict(audits)
            residuals["xy_conditions"] = [r.as_dict() for r in xy_audit]
            warnings = []
            gain_norm = matcore.spectral_norm(controller.gain())
            if gain_norm > GAIN_WARN_THRESHOLD:
                msg = (f"synthesized gain has spectral norm {gain_norm:.3e} "
                       "(high-gain feedback: check actuator limits and "
                       "measurement quality before deployment)")
                warnings.append(msg)
                logger.warning(msg)
            result = SynthResult(
                controller=controller, P=P, X=X, Y=Y, alphas=alphas,
                residuals=residuals, contained=audits["contained"],
                rpi=matcore.Ellipsoid(P),
                projection=matcore.Ellipsoid(np.linalg.inv(X)),
                warnings=warnings, table=table,
                info={"completion": mode, **kinfo})
            break
        if result is not None:
            return result
    lines = "; ".join(f"{f.alphas}:{f.stage}" for f in table[:12])
    raise SynthesisError("pipeline",
                         f"no multiplier point succeeded ({lines})")


# ---------------------------------------------------------------------------
# linear route (state-independent attacks, absorbed sector)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Eta:
    """Change-of-variables tuple for the linear route."""

    X: np.ndarray
    Y: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray


def change_of_variables(controller: SecondaryController, X, Y, N, M,
                        Ahat, Bhat, Chat) -> Eta:
    """Forward map from a concrete controller and partitioned certificate to
    the convexifying variables."""
    A1c = Ahat + Bhat @ controller.D @ Chat
    A2c = Bhat @ controller.C
    A3c = controller.B @ Chat
    A4c = controller.A
    Av = Y @ A1c @ X + Y @ A2c @ M.T + N @ A3c @ X + N @ A4c @ M.T
    Bv = N @ controller.B + Y @ Bhat @ controller.D
    Cv = controller.C @ M.T + controller.D @ Chat @ X
    return Eta(X=X, Y=Y, A=Av, B=Bv, C=Cv, D=controller.D)


def recover_controller(eta: Eta, N: np.ndarray, M: np.ndarray,
                       Ahat, Bhat, Chat) -> SecondaryController:
    """Invert the change of variables (requires square invertible N, M)."""
    for name, mat in (("N", N), ("M", M)):
        if mat.shape[0] != mat.shape[1]:
            raise SynthesisError("recovery", f"{name} must be square for "
                                 "exact controller recovery")
        if abs(np.linalg.det(mat)) < 1e-300:
            raise SynthesisError("recovery", f"{name} is singular")
    X, Y = eta.X, eta.Y
    Minv_t = np.linalg.inv(M.T)
    Ninv = np.linalg.inv(N)
    D2 = eta.D
    C2 = (eta.C - D2 @ Chat @ X) @ Minv_t
    B2 = Ninv @ (eta.B - Y @ Bhat @ D2)
    A2 = Ninv @ (eta.A - N @ B2 @ Chat @ X - Y @ Bhat @ C2 @ M.T
                 - Y @ (Ahat + Bhat @ D2 @ Chat) @ X) @ Minv_t
    return SecondaryController(A=A2, B=B2, C=C2, D=D2)


def _linear_preconditions(bundle: SystemBundle):
    """Check the route's assumptions and return the absorbed hat matrices."""
    if np.any(bundle.attack.Q1) or np.any(bundle.attack.Q2):
        raise SynthesisError(
            "preconditions", "the linear route needs a state-independent "
            "attack budget (Q1 = 0, Q2 = 0); use synthesize_nonlinear")
    if not bundle.sector.is_linear:
        raise SynthesisError(
            "preconditions", "the linear route needs S1 == S2 (an exactly "
            "linear feedback term); use synthesize_nonlinear")
    Ahat, Bhat, Chat, G, H, B1 = _loop_data(bundle)
    # A pinned sector means phi(w) = S1 w exactly; absorb it into the
    # dynamics and treat the loop as linear.
    if bundle.sector.S1.size:
        Ahat = Ahat + G @ bundle.sector.S1 @ H
    return Ahat, Bhat, Chat, B1


def build_thm2_problem(Ahat, Bhat, Chat, B1, Q3, Xi, alpha1: float,
                       alpha4: float, *, with_gamma: bool = False,
                       epsilon: float = 1e-4, alpha2: float | None = None,
                       q3_variable: bool = False,
                       spectral_cap: float | None = None):
    """Convexified conditions in the changed variables at fixed
    ``alpha1``/``alpha4``.

    ``spectral_cap`` adds a disk-region condition on the closed-loop
    spectrum (exactly equivalent to the untransformed disk condition under
    the convexifying congruence); it bounds attacker-rejection aggressiveness
    so size/budget objectives stay well-posed, and keeps certified loops
    integrable at the simulator's standard step.  Returns
    ``(problem, vars)`` where ``vars`` maps names to the declared variable
    handles (``X``, ``Y``, ``A``, ``B``, ``C``, ``D``, ``alpha2``,
    optionally ``gamma``/``Q3``).
    """
    nz = Ahat.shape[0]
    na = B1.shape[1]
    nC = Chat.shape[0]
    nE = Bhat.shape[1]
    if q3_variable and alpha2 is None:
        raise ValueError("promoting Q3 to a variable requires a fixed alpha2")

    prob = LmiProblem()
    X = prob.symmetric("X", nz)
    Y = prob.symmetric("Y", nz)
    Av = prob.rectangular("Av", nz, nz)
    Bv = prob.rectangular("Bv", nz, nC)
    Cv = prob.rectangular("Cv", nE, nz)
    Dv = prob.rectangular("Dv", nE, nC)
    a2 = None if alpha2 is not None else prob.scalar("alpha2")
    Q3v = prob.symmetric("Q3", na) if q3_variable else None
    gam = prob.scalar("gamma") if with_gamma else None
    out = {"X": X, "Y": Y, "A": Av, "B": Bv, "C": Cv, "D": Dv,
           "alpha2": a2, "gamma": gam, "Q3": Q3v}

    def he_A_cells(include_shift: bool):
        """Cells of He(A(eta)) (+ alpha1 * P(eta) when requested) over the
        two nz-blocks of the transformed state."""
        c00 = MatExpr.zeros(nz, nz)
        c00.term(X, left=Ahat, coeff=2.0)
        c00.term(Cv, left=Bhat, coeff=2.0)
        c01 = MatExpr.constant(Ahat.copy())
        c01.term(Dv, left=Bhat, right=Chat)
        c01.term(Av, transpose=True)
        c11 = MatExpr.zeros(nz, nz)
        c11.term(Y, right=Ahat, coeff=2.0)
        c11.term(Bv, right=Chat, coeff=2.0)
        if include_shift:
            c00.term(X, coeff=alpha1)
            c01.add_const(alpha1 * np.eye(nz))
            c11.term(Y, coeff=alpha1)
        return c00, c01, c11

    c00, c01, c11 = he_A_cells(include_shift=True)
    cells = {(0, 0): c00, (0, 1): c01, (1, 1): c11}
    if na:
        cells[(0, 2)] = MatExpr.constant(B1.copy())
        cells[(1, 2)] = MatExpr.zeros(nz, na).term(Y, right=B1)
        if Q3v is not None:
            cells[(2, 2)] = MatExpr.zeros(na, na).term(Q3v, coeff=-alpha2)
        else:
            cells[(2, 2)] = MatExpr.zeros(na, na).term(a2, left=-Q3,
                                                       right=np.eye(na))
        c33 = MatExpr.zeros(1, 1)
        if a2 is None:
            c33.add_const([[alpha2 - alpha1]])
        else:
            c33.term(a2).add_const([[-alpha1]])
        cells[(3, 3)] = c33
    else:
        cells[(3, 3)] = np.array([[-alpha1]])
    prob.require_neg_semidef(sym_blocks([nz, nz, na, 1], cells),
                             name="invariance")

    Xi_inv = _safe_inverse(Xi)
    prob.require_neg_semidef(_containment_cells(X, Xi_inv, alpha4, nz),
                             name="containment")
    prob.require_pos_semidef(_coupling_expr(X, Y, nz), name="coupling",
                             strict=True)
    if a2 is not None:
        prob.require_nonneg(a2)
    if Q3v is not None:
        floor = AffineExpr(na, const=1e-9 * np.eye(na))
        floor.term(Q3v, coeff=-1.0)
        prob.require_neg_semidef(floor, name="Q3 floor")

    if spectral_cap is not None:
        rho = float(spectral_cap)

        def a_eta_cells():
            c02 = MatExpr.zeros(nz, nz)
            c02.term(X, left=Ahat)
            c02.term(Cv, left=Bhat)
            c03 = MatExpr.constant(Ahat.copy())
            c03.term(Dv, left=Bhat, right=Chat)
            c12 = MatExpr.zeros(nz, nz).term(Av)
            c13 = MatExpr.zeros(nz, nz)
            c13.term(Y, right=Ahat)
            c13.term(Bv, right=Chat)
            return c02, c03, c12, c13

        c02, c03, c12, c13 = a_eta_cells()
        # scaled by 1/rho so the block norms stay comparable (same set)
        dcells = {
            (0, 0): MatExpr.zeros(nz, nz).term(X, coeff=-1.0),
            (0, 1): -np.eye(nz),
            (1, 1): MatExpr.zeros(nz, nz).term(Y, coeff=-1.0),
            (0, 2): c02.scaled(1.0 / rho), (0, 3): c03.scaled(1.0 / rho),
            (1, 2): c12.scaled(1.0 / rho), (1, 3): c13.scaled(1.0 / rho),
            (2, 2): MatExpr.zeros(nz, nz).term(X, coeff=-1.0),
            (2, 3): -np.eye(nz),
            (3, 3): MatExpr.zeros(nz, nz).term(Y, coeff=-1.0),
        }
        prob.require_neg_semidef(sym_blocks([nz] * 4, dcells),
                                 name="spectral cap")

    if with_gamma:
        c00, c01, c11 = he_A_cells(include_shift=False)
        gcells = {(0, 0): c00, (0, 1): c01, (1, 1): c11}
        if na:
            gcells[(0, 2)] = MatExpr.constant(B1.copy())
            gcells[(1, 2)] = MatExpr.zeros(nz, na).term(Y, right=B1)
            g22 = MatExpr.constant(epsilon * np.eye(na))
            g22.term(gam, left=-np.eye(na), right=np.eye(na))
            gcells[(2, 2)] = g22
        gcells[(0, 3)] = MatExpr.zeros(nz, nE).term(Cv, transpose=True)
        gcells[(1, 3)] = MatExpr.zeros(nz, nE).term(Dv, left=Chat.T,
                                                    transpose=True)
        gcells[(3, 3)] = MatExpr.zeros(nE, nE).term(gam, left=-np.eye(nE),
                                                    right=np.eye(nE))
        prob.require_neg_semidef(sym_blocks([nz, nz, na, nE], gcells),
                                 name="l2-gain")
        floor = AffineExpr(1, const=np.array([[epsilon]]))
        floor.term(gam, coeff=-1.0)
        prob.require_neg_semidef(floor, name="gamma floor")
    return prob, out


def _linear_certificate_matrix(A, B, Q3, alphas, P):
    a1, a2 = alphas[0], alphas[1]
    n = A.shape[0]
    na = B.shape[1]
    return matcore.block_sym([
        [matcore.he(A.T @ P) + a1 * P, P @ B, np.zeros((n, 1))],
        [-a2 * Q3, np.zeros((na, 1))],
        [np.array([[a2 - a1]])],
    ])


def _l2_certificate_matrix(A, B, Cmat, gamma, epsilon, P):
    na = B.shape[1]
    nE = Cmat.shape[0]
    return matcore.block_sym([
        [matcore.he(A.T @ P), P @ B, Cmat.T],
        [-(gamma - epsilon) * np.eye(na), np.zeros((na, nE))],
        [-gamma * np.eye(nE)],
    ])


def _finish_linear(bundle, Ahat, Bhat, Chat, B1, values, alphas, opts,
                   gamma=None, table=()):
    """Recover the controller from a feasible eta and audit the result."""
    nz = Ahat.shape[0]
    X, Y = values["X"], values["Y"]
    eta = Eta(X=X, Y=Y, A=values["A"], B=values["B"], C=values["C"],
              D=values["D"])
    if opts.N is None:
        ytil_unit = matcore.spectral_norm(
            X @ np.linalg.inv(np.eye(nz) - Y @ X))
        theta = np.sqrt(max(matcore.spectral_norm(Y), 1e-12)
                        / max(ytil_unit, 1e-12))
        N = theta * np.eye(nz)
    else:
        N = opts.N
    M = (np.eye(nz) - X @ Y) @ np.linalg.inv(N).T
    if abs(np.linalg.det(M)) < 1e-300:
        raise SynthesisError("recovery", "I - X Y is numerically singular; "
                             "the coupling condition was not strict enough")
    controller = recover_controller(eta, N, M, Ahat, Bhat, Chat)
    P, _, _ = complete_P(X, Y, mode="pi", N=N)

    loop = assemble_closed_loop(bundle.plant, bundle.primary, controller,
                                bundle.selection,
                                attack_input=bundle.attack_input())
    A_eff = loop.A
    if bundle.sector.S1.size:
        A_eff = A_eff + loop.G @ bundle.sector.S1 @ loop.H
    a2_val = alphas[1]
    cert = _linear_certificate_matrix(A_eff, loop.B, bundle.attack.Q3,
                                      (alphas[0], a2_val), P)
    Xinv = np.linalg.inv(X)
    residuals = {
        "k_lmi_max_eig": matcore.max_eig(cert),
        "p_min_eig": matcore.min_eig(P),
        "projection_margin": matcore.min_eig(Xinv - bundle.safe.Xi),
        "contained": matcore.ellipsoid_contains(Xinv, bundle.safe.Xi,
                                                tol=1e-6),
    }
    if gamma is not None:
        Cmat = np.hstack([controller.D @ Chat, controller.C])
        residuals["l2_max_eig"] = matcore.max_eig(_l2_certificate_matrix(
            A_eff, loop.B, Cmat, gamma, opts.epsilon, P))
    warnings = []
    gain_norm = matcore.spectral_norm(controller.gain())
    if gain_norm > GAIN_WARN_THRESHOLD:
        msg = f"synthesized gain has spectral norm {gain_norm:.3e}"
        warnings.append(msg)
        logger.warning(msg)
    return SynthResult(
        controller=controller, P=P, X=X, Y=Y,
        alphas=(alphas[0], a2_val, 0.0, alphas[2]),
        residuals=residuals, contained=residuals["contained"],
        rpi=matcore.Ellipsoid(P), projection=matcore.Ellipsoid(Xinv),
        gamma=gamma, warnings=warnings, table=list(table))


def _linear_grid(opts: SynthOptions):
    """Points ``(alpha1, alpha4)``; a pinned alphas tuple uses its ends."""
    if opts.alphas is not None:
        return [(opts.alphas[0], opts.alphas[-1])]
    return list(opts.grid or DEFAULT_LINEAR_GRID)


def _cap_ladder(cap):
    """Spectral-cap attempts: none first (the disk is usually inactive and
    only hurts conditioning), then the requested cap and one relaxation."""
    if cap is None:
        return [None]
    return [None, float(cap), 4.0 * float(cap)]


def _spectrum_ok(bundle, result, cap):
    if cap is None:
        return True
    loop = assemble_closed_loop(bundle.plant, bundle.primary,
                                result.controller, bundle.selection,
                                attack_input=bundle.attack_input())
    return float(np.max(np.abs(np.linalg.eigvals(loop.A)))) <= 1.05 * cap


def synthesize_linear(bundle: SystemBundle,
                      options: SynthOptions | None = None) -> SynthResult:
    """Linear-route synthesis with exact controller recovery."""
    opts = options or SynthOptions()
    problems = validate_bundle(bundle)
    if problems:
        raise ValueError("bundle is invalid: " + "; ".join(problems))
    Ahat, Bhat, Chat, B1 = _linear_preconditions(bundle)
    grid = _linear_grid(opts)
    table: list[StageFailure] = []
    for a1, a4 in grid:
        fallback = None
        for cap in _cap_ladder(opts.spectral_cap):
            prob, vars_ = build_thm2_problem(Ahat, Bhat, Chat, B1,
                                             bundle.attack.Q3, bundle.safe.Xi,
                                             a1, a4, spectral_cap=cap)
            outcome = _balanced_solve(
                prob, vars_["Y"], backend=opts.backend, tol=opts.tol,
                shrink=[vars_["A"], vars_["B"], vars_["C"], vars_["D"]])
            if not outcome.feasible:
                table.append(StageFailure((a1, a4), "feasibility",
                                          f"cap {cap}: {outcome.status}"))
                continue
            values = {k: outcome.assignment[v] for k, v in vars_.items()
                      if v is not None}
            try:
                result = _finish_linear(bundle, Ahat, Bhat, Chat, B1, values,
                                        (a1, values["alpha2"], a4), opts,
                                        table=table)
            except SynthesisError as exc:
                table.append(StageFailure((a1, a4), exc.stage, str(exc)))
                continue
            if _spectrum_ok(bundle, result, opts.spectral_cap):
                return result
            fallback = result  # certified but stiffer than requested
        if fallback is not None:
            return fallback
    raise SynthesisError("pipeline", "no multiplier point succeeded "
                         f"({'; '.join(f.stage for f in table[:10])})")


def synthesize_l2(bundle: SystemBundle,
                  options: SynthOptions | None = None) -> SynthResult:
    """Linear-route synthesis minimizing the certified attack-to-secondary-
    input energy gain; returns the result with ``gamma`` attached."""
    opts = options or SynthOptions()
    problems = validate_bundle(bundle)
    if problems:
        raise ValueError("bundle is invalid: " + "; ".join(problems))
    Ahat, Bhat, Chat, B1 = _linear_preconditions(bundle)
    grid = _linear_grid(opts)
    best = None
    table: list[StageFailure] = []
    for a1, a4 in grid:
        prob, vars_ = build_thm2_problem(Ahat, Bhat, Chat, B1,
                                         bundle.attack.Q3, bundle.safe.Xi,
                                         a1, a4, with_gamma=True,
                                         epsilon=opts.epsilon)
        outcome = _balanced_solve(
            prob, vars_["Y"], objective={vars_["gamma"]: 1.0},
            backend=opts.backend, tol=opts.tol,
            shrink=[vars_["A"], vars_["B"], vars_["C"], vars_["D"]])
        if not outcome.feasible:
            table.append(StageFailure((a1, a4), "feasibility",
                                      f"status {outcome.status}"))
            continue
        gamma = float(outcome.assignment[vars_["gamma"]])
        if best is None or gamma < best[0]:
            values = {k: outcome.assignment[v] for k, v in vars_.items()
                      if v is not None}
            best = (gamma, values, (a1, a4))
    if best is None:
        raise SynthesisError("pipeline", "no multiplier point was feasible")
    gamma, values, (a1, a4) = best
    result = _finish_linear(bundle, Ahat, Bhat, Chat, B1, values,
                            (a1, values["alpha2"], a4), opts, gamma=gamma,
                            table=table)
    if _spectrum_ok(bundle, result, opts.spectral_cap):
        return result
    # Re-solve the winning point with the disk condition active.
    for cap in _cap_ladder(opts.spectral_cap)[1:]:
        prob, vars_ = build_thm2_problem(Ahat, Bhat, Chat, B1,
                                         bundle.attack.Q3, bundle.safe.Xi,
                                         a1, a4, with_gamma=True,
                                         epsilon=opts.epsilon,
                                         spectral_cap=cap)
        outcome = _balanced_solve(
            prob, vars_["Y"], objective={vars_["gamma"]: 1.0},
            backend=opts.backend, tol=opts.tol,
            shrink=[vars_["A"], vars_["B"], vars_["C"], vars_["D"]])
        if not outcome.feasible:
            continue
        values = {k: outcome.assignment[v] for k, v in vars_.items()
                  if v is not None}
        capped = _finish_linear(bundle, Ahat, Bhat, Chat, B1, values,
                                (a1, values["alpha2"], a4), opts,
                                gamma=float(outcome.assignment[vars_["gamma"]]),
                                table=table)
        if _spectrum_ok(bundle, capped, opts.spectral_cap):
            return capped
    return result


# ---------------------------------------------------------------------------
# optimization variants
# ---------------------------------------------------------------------------


@dataclass
class WorstAttackResult:
    Q3: np.ndarray
    trace: float
    alphas: tuple
    mode: str
    assignment: dict
    table: list
    reverified: bool = False


def worst_attack(bundle: SystemBundle, mode: str = "verify",
                 options: SynthOptions | None = None,
                 grid: tuple | None = None) -> WorstAttackResult:
    """Largest admissible attack set the loop provably tolerates.

    Promotes the attack weight ``Q3`` to a decision variable (``Q1``/``Q2``
    stay fixed) and minimizes its trace, a convex surrogate for maximizing
    the attack ellipsoid volume, subject to the verification conditions
    (``mode="verify"``) or the linear synthesis conditions
    (``mode="synthesize"``).  The attack multiplier must be pinned for the
    product with ``Q3`` to stay linear, so the grid ranges over
    ``(alpha1, alpha2, alpha4)``.
    """
    from .sysmodel import AttackModel as AM
    from .verify import build_prop3_problem
    from .sysmodel import assemble_primary_loop

    opts = options or SynthOptions()
    pts = list(grid or DEFAULT_WORST_ATTACK_GRID)
    table = []
    best = None
    if mode == "verify":
        loop = assemble_primary_loop(bundle.plant, bundle.primary)
        for a1, a2, a4 in pts:
            prob = build_prop3_problem(loop, bundle.sector, bundle.attack,
                                       bundle.safe, a1, a4, alpha2=a2,
                                       attack_input=bundle.attack_input(),
                                       q3_variable=True)
            q3v = next(v for v in prob.variables if v.name == "Q3")
            prob.minimize({q3v: np.eye(q3v.rows)})
            outcome = lmi_engine.solve(prob, backend=opts.backend,
                                       tol=opts.tol)
            table.append(((a1, a2, a4), outcome.status,
                          outcome.objective))
            if outcome.feasible and (best is None
                                     or outcome.objective < best[0]):
                best = (outcome.objective, outcome.assignment, q3v,
                        (a1, a2, a4))
    elif mode == "synthesize":
        Ahat, Bhat, Chat, B1 = _linear_preconditions(bundle)
        for a1, a2, a4 in pts:
            prob, vars_ = build_thm2_problem(
                Ahat, Bhat, Chat, B1, bundle.attack.Q3, bundle.safe.Xi,
                a1, a4, alpha2=a2, q3_variable=True,
                spectral_cap=opts.spectral_cap)
            outcome = _balanced_solve(
                prob, vars_["Y"],
                objective={vars_["Q3"]: np.eye(vars_["Q3"].rows)},
                shrink=[vars_["A"], vars_["B"], vars_["C"], vars_["D"]],
                backend=opts.backend, tol=opts.tol)
            table.append(((a1, a2, a4), outcome.status, outcome.objective))
            if outcome.feasible and (best is None
                                     or outcome.objective < best[0]):
                best = (outcome.objective, outcome.assignment,
                        vars_["Q3"], (a1, a2, a4))
    else:
        raise ValueError(f"unknown worst-attack mode {mode!r}")
    if best is None:
        raise SynthesisError("worst-attack",
                             "no grid point admitted a certificate")
    trace, assignment, q3v, alphas = best
    Q3_star = matcore.as_symmetric(assignment[q3v], tol=1e-6)

    # Consistency: solving again with the optimized budget pinned succeeds.
    new_attack = AM(Q1=bundle.attack.Q1, Q2=bundle.attack.Q2, Q3=Q3_star,
                    act_channels=bundle.attack.act_channels,
                    sense_channels=bundle.attack.sense_channels)
    new_bundle = replace(bundle, attack=new_attack)
    reverified = False
    try:
        if mode == "verify":
            from .verify import AlphaGrid, verify_safety
            out = verify_safety(new_bundle,
                                AlphaGrid(alpha1_values=(alphas[0],),
                                          alpha4_values=(alphas[2],)),
                                tol=opts.tol, backend=opts.backend)
            reverified = out.found
        else:
            synthesize_linear(new_bundle, replace(
                opts, alphas=None, grid=((alphas[0], alphas[2]),)))
            reverified = True
    except (SynthesisError, ValueError):
        reverified = False
    return WorstAttackResult(Q3=Q3_star, trace=float(trace), alphas=alphas,
                             mode=mode, assignment=assignment, table=table,
                             reverified=reverified)


def optimize_rpi(bundle: SystemBundle, objective: str = "min-trace-X",
                 options: SynthOptions | None = None) -> SynthResult:
    """Shape the certified state-projection ellipsoid.

    ``min-trace-X`` shrinks the projection ellipsoid (smallest certified
    footprint); ``max-logdet-X`` grows it (largest certified set of initial
    conditions), via iteratively linearized log-det maximization.  Uses the
    linear route when its preconditions hold, the nonlinear route otherwise.
    The volume proxy ``det(X)^{1/2}`` of the projection is reported in
    ``info``.
    """
    opts = options or SynthOptions()
    if objective not in ("min-trace-X", "max-logdet-X"):
        raise ValueError(f"unknown objective {objective!r}")
    linear = (not np.any(bundle.attack.Q1) and not np.any(bundle.attack.Q2)
              and bundle.sector.is_linear)
    if linear:
        Ahat, Bhat, Chat, B1 = _linear_preconditions(bundle)
        grid = _linear_grid(opts)
        table = []
        for a1, a4 in grid:
            prob, vars_ = build_thm2_problem(Ahat, Bhat, Chat, B1,
                                             bundle.attack.Q3,
                                             bundle.safe.Xi, a1, a4)
            X = vars_["X"]
            eta_vars = [vars_["A"], vars_["B"], vars_["C"], vars_["D"]]
            if objective == "min-trace-X":
                # The size optimum sits on a face where the coupling is
                # singular and no full-order realization exists; back off by
                # a few percent to keep the recovered controller finite.
                outcome = _balanced_solve(prob, vars_["Y"],
                                          objective={X: np.eye(X.rows)},
                                          shrink=eta_vars, pin_slack=5e-2,
                                          backend=opts.backend, tol=opts.tol)
            else:
                # Leash the free directions first, then run the log-det
                # rounds on the leashed problem.
                pre = _balanced_solve(prob, vars_["Y"], shrink=eta_vars,
                                      backend=opts.backend, tol=opts.tol)
                if not pre.feasible:
                    table.append(StageFailure((a1, a4), "feasibility",
                                              pre.status))
                    continue
                outcome = lmi_engine.minimize_logdet_iterative(
                    prob, X, rounds=opts.logdet_rounds, backend=opts.backend,
                    tol=opts.tol)
            if not outcome.feasible:
                table.append(StageFailure((a1, a4), "feasibility",
                                          outcome.status))
                continue
            values = {k: outcome.assignment[v] for k, v in vars_.items()
                      if v is not None}
            result = _finish_linear(bundle, Ahat, Bhat, Chat, B1, values,
                                    (a1, values["alpha2"], a4), opts,
                                    table=table)
            result.info["objective"] = objective
            result.info["volume_proxy"] = float(
                np.sqrt(max(np.linalg.det(values["X"]), 0.0)))
            if "logdet_history" in outcome.info:
                result.info["logdet_history"] = outcome.info["logdet_history"]
            return result
        raise SynthesisError("pipeline", "no multiplier point was feasible")

    # Nonlinear route: attach the objective to the X-side problem.
    nz = bundle.n_loop
    grid = [opts.alphas] if opts.alphas is not None else \
        list(opts.grid or DEFAULT_NONLINEAR_GRID)
    for alphas in grid:
        try:
            prob = build_thm1_problem(bundle, alphas)
        except SynthesisError:
            continue
        X = prob.variables[0]
        Yv_ref = prob.variables[1]
        if objective == "min-trace-X":
            outcome = _balanced_solve(prob, Yv_ref,
                                      objective={X: np.eye(nz)},
                                      backend=opts.backend, tol=opts.tol)
        else:
            pre = _balanced_solve(prob, Yv_ref, backend=opts.backend,
                                  tol=opts.tol)
            if not pre.feasible:
                continue
            outcome = lmi_engine.minimize_logdet_iterative(
                prob, X, rounds=opts.logdet_rounds, backend=opts.backend,
                tol=opts.tol)
        if not outcome.feasible:
            continue
        Xv = outcome.assignment[prob.variables[0]]
        Yv = outcome.assignment[prob.variables[1]]
        try:
            P, N, M = complete_P(Xv, Yv, mode=opts.completion, N=opts.N)
            controller, kinfo = solve_K_given_P(
                P, bundle, nz, alphas, tol=opts.tol, backend=opts.backend,
                gain_minimize=opts.gain_minimize,
                spectral_cap=opts.spectral_cap)
        except SynthesisError:
            continue
        audits = _audit_nonlinear(bundle, controller, P, Xv, alphas,
                                  opts.tol)
        if audits["k_lmi_max_eig"] > opts.tol or not audits["contained"]:
            continue
        result = SynthResult(
            controller=controller, P=P, X=Xv, Y=Yv, alphas=alphas,
            residuals=audits, contained=audits["contained"],
            rpi=matcore.Ellipsoid(P),
            projection=matcore.Ellipsoid(np.linalg.inv(Xv)),
            info={"objective": objective,
                  "volume_proxy": float(np.sqrt(max(np.linalg.det(Xv), 0.0))),
                  **kinfo})
        if "logdet_history" in outcome.info:
            result.info["logdet_history"] = outcome.info["logdet_history"]
        return result
    raise SynthesisError("pipeline", "no multiplier point succeeded")


# ---------------------------------------------------------------------------
# numeric audits of externally supplied synthesis points
# ---------------------------------------------------------------------------


def audit_synthesis_point(bundle: SystemBundle, X, Y, alphas,
                          soft_scale: float = 1e-2) -> dict:
    """Residuals of the four nonlinear-route conditions at a concrete
    ``(X, Y)`` pair, e.g. one transcribed from printed output at limited
    precision.

    Each entry reports the max eigenvalue, the constant-term norm used for
    the soft tolerance ``soft_scale * (1 + ||const||)``, whether the
    condition passes at that soft tolerance, and a ``rounding_consistent``
    flag for strict conditions that fail by no more than the soft tolerance.
    """
    a1, a2, a3, a4 = alphas
    X = matcore.as_symmetric(X, name="X")
    Y = matcore.as_symmetric(Y, name="Y")
    sector, attack = bundle.sector, bundle.attack
    Ahat, Bhat, Chat, G, H, B1 = _loop_data(bundle)
    nz = Ahat.shape[0]
    S1, S2, V = sector.S1, sector.S2, sector.V
    Q1, Q2, Q3 = attack.Q1, attack.Q2, attack.Q3
    Q3inv = np.linalg.inv(Q3)
    Vinv = np.linalg.inv(V)
    W1 = matcore.null_space_basis(Bhat.T)
    W2 = matcore.null_space_basis(Chat)

    D = S2 - S1
    W_sec = (a3 / 2.0) * (D.T @ V @ D)
    growth = Q2 @ Q3inv @ Q2.T - Q1
    Lq = _psd_factor(a2 * growth)
    r = Lq.shape[1]
    M_lin = (Ahat + 0.5 * (G @ (S1 + S2) @ H) - B1 @ Q3inv @ Q2.T
             + (a1 / 2.0) * np.eye(nz))
    C0 = (G @ Vinv @ G.T) / (2.0 * a3) + (B1 @ Q3inv @ B1.T) / a2
    h = H.shape[0]
    k1 = W1.shape[1]
    gamma3 = matcore.he(M_lin @ X) + C0
    x_side = matcore.block([
        [W1.T @ gamma3 @ W1, W1.T @ X @ H.T, W1.T @ X @ Lq],
        [H @ X @ W1, -np.linalg.inv(W_sec), np.zeros((h, r))],
        [Lq.T @ X @ W1, np.zeros((r, h)), -np.eye(r)],
    ]) if k1 else np.zeros((0, 0))
    x_const = matcore.block([
        [W1.T @ C0 @ W1, np.zeros((k1, h)), np.zeros((k1, r))],
        [np.zeros((h, k1)), -np.linalg.inv(W_sec), np.zeros((h, r))],
        [np.zeros((r, k1)), np.zeros((r, h)), -np.eye(r)],
    ]) if k1 else np.zeros((0, 0))

    q = G.shape[1]
    na = B1.shape[1]
    k2 = W2.shape[1]
    phi1 = (matcore.he(Y @ Ahat) - a3 * matcore.he(H.T @ S1.T @ V @ S2 @ H)
            - a2 * Q1 + a1 * Y)
    y01 = W2.T @ (Y @ G + a3 * H.T @ (S1 + S2).T @ V)
    y02 = W2.T @ (Y @ B1 - a2 * Q2)
    y_side = matcore.block([
        [W2.T @ phi1 @ W2, y01, y02, np.zeros((k2, 1))],
        [y01.T, -2.0 * a3 * V, np.zeros((q, na)), np.zeros((q, 1))],
        [y02.T, np.zeros((na, q)), -a2 * Q3, np.zeros((na, 1))],
        [np.zeros((1, k2)), np.zeros((1, q)), np.zeros((1, na)),
         np.array([[a2 - a1]])],
    ])
    yc01 = a3 * W2.T @ H.T @ (S1 + S2).T @ V
    yc02 = -a2 * W2.T @ Q2
    y_const = matcore.block([
        [W2.T @ (-a3 * matcore.he(H.T @ S1.T @ V @ S2 @ H) - a2 * Q1) @ W2,
         yc01, yc02, np.zeros((k2, 1))],
        [yc01.T, -2.0 * a3 * V, np.zeros((q, na)), np.zeros((q, 1))],
        [yc02.T, np.zeros((na, q)), -a2 * Q3, np.zeros((na, 1))],
        [np.zeros((1, k2)), np.zeros((1, q)), np.zeros((1, na)),
         np.array([[a2 - a1]])],
    ])

    Xi_inv = np.linalg.inv(bundle.safe.Xi)
    containment = matcore.block([
        [-a4 * X, np.zeros((nz, 1)), X],
        [np.zeros((1, nz)), np.array([[a4 - 1.0]]), np.zeros((1, nz))],
        [X, np.zeros((nz, 1)), -Xi_inv],
    ])
    cont_const = matcore.block([
        [np.zeros((nz, nz)), np.zeros((nz, 1)), np.zeros((nz, nz))],
        [np.zeros((1, nz)), np.array([[a4 - 1.0]]), np.zeros((1, nz))],
        [np.zeros((nz, nz)), np.zeros((nz, 1)), -Xi_inv],
    ])
    coupling = matcore.block([[X, np.eye(nz)], [np.eye(nz), Y]])

    def entry(mat, const, strict):
        top = matcore.max_eig(mat) if mat.size else float("-inf")
        norm = matcore.spectral_norm(const)
        soft = soft_scale * (1.0 + norm)
        return {"max_eig": top, "const_norm": norm, "soft_tol": soft,
                "pass_soft": top <= soft, "strict": strict,
                "rounding_consistent": bool(strict and 0.0 < top <= soft)}

    return {
        "x_side": entry(x_side, x_const, strict=True),
        "y_side": entry(y_side, y_const, strict=True),
        "containment": entry(containment, cont_const, strict=False),
        "coupling": entry(-coupling, np.eye(2 * nz), strict=False),
    }
