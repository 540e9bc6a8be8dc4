"""Safety verification for the plant + primary-controller loop.

Builds the robust-invariance feasibility conditions for a quadratic
certificate ``V(z) = z^T P1 z``: an S-procedure combination of the
derivative condition on the level set ``V = 1``, the sector bound on the
nonlinearity, and the quadratic attack budget, plus the containment of the
certified ellipsoid in the safe set.  Multipliers ``alpha1`` (level set) and
``alpha4`` (containment) make the conditions bilinear, so they are gridded;
the sector and attack multipliers stay solver variables.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import lmi_engine, matcore
from .lmi_engine import AffineExpr, LmiProblem, MatExpr, sym_blocks
from .sysmodel import (AttackModel, PrimaryLoop, SafeSet, SectorBound,
                       SystemBundle, assemble_primary_loop, validate_bundle)

__all__ = [
    "AlphaGrid",
    "GridCell",
    "SafetyCertificate",
    "VerificationOutcome",
    "build_prop3_problem",
    "check_rpi_certificate",
    "verify_safety",
]

NOT_A_PROOF = ("No certificate found on the grid; this is not a proof of "
               "unsafety, because the conditions are only sufficient.")

# Floor for the certificate shape: P1 >= eps * (1 + ||Xi||) * I, so a found
# certificate is a genuine ellipsoid rather than a degenerate one.
P1_FLOOR_SCALE = 1e-6


@dataclass(frozen=True)
class AlphaGrid:
    """Grid over the bilinear multipliers.

    ``alpha2``/``alpha3`` are solver variables by default ("variable"); a
    tuple of values pins them instead (needed when they multiply other
    decision variables, e.g. in worst-attack mode).
    """

    alpha1_values: tuple = (0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0)
    alpha4_values: tuple = (0.5, 0.9, 0.99, 1.0)
    alpha2: str | tuple = "variable"
    alpha3: str | tuple = "variable"

    def __post_init__(self):
        if not self.alpha1_values or not self.alpha4_values:
            raise ValueError("alpha grids must be non-empty")
        for a4 in self.alpha4_values:
            if not 0.0 <= a4 <= 1.0:
                raise ValueError(
                    f"alpha4={a4} outside [0, 1]; the containment condition "
                    "forces the multiplier into the unit interval")
        object.__setattr__(self, "alpha1_values",
                           tuple(float(a) for a in self.alpha1_values))
        object.__setattr__(self, "alpha4_values",
                           tuple(float(a) for a in self.alpha4_values))

    def points(self):
        """Lexicographic grid points ``(a1, a4, a2, a3)``; ``None`` marks a
        multiplier left to the solver."""
        a2s = [None] if self.alpha2 == "variable" else list(self.alpha2)
        a3s = [None] if self.alpha3 == "variable" else list(self.alpha3)
        return [(a1, a4, a2, a3)
                for a1 in self.alpha1_values
                for a4 in self.alpha4_values
                for a2 in a2s for a3 in a3s]


@dataclass
class SafetyCertificate:
    """A robust positively invariant ellipsoid inside the safe set."""

    P1: np.ndarray
    alpha1: float
    alpha2: float
    alpha3: float
    alpha4: float
    residuals: list
    contained: bool

    @property
    def alphas(self) -> tuple:
        return (self.alpha1, self.alpha2, self.alpha3, self.alpha4)

    def ellipsoid(self) -> matcore.Ellipsoid:
        return matcore.Ellipsoid(self.P1)

    def as_dict(self) -> dict:
        return {"P1": self.P1.tolist(),
                "alphas": {"alpha1": self.alpha1, "alpha2": self.alpha2,
                           "alpha3": self.alpha3, "alpha4": self.alpha4},
                "residuals": [r.as_dict() for r in self.residuals],
                "contained": self.contained}


@dataclass
class GridCell:
    alpha1: float
    alpha4: float
    status: str
    detail: str = ""
    alpha2: float | None = None
    alpha3: float | None = None


@dataclass
class VerificationOutcome:
    """Either a certificate or a per-grid-point status table."""

    certificate: SafetyCertificate | None
    table: list[GridCell] = field(default_factory=list)

    @property
    def found(self) -> bool:
        return self.certificate is not None

    def report(self) -> str:
        lines = []
        if self.found:
            c = self.certificate
            lines.append(f"certificate found at alpha1={c.alpha1:g}, "
                         f"alpha4={c.alpha4:g} (alpha2={c.alpha2:.6g}, "
                         f"alpha3={c.alpha3:.6g})")
        else:
            lines.append(NOT_A_PROOF)
        for cell in self.table:
            lines.append(f"  alpha1={cell.alpha1:<6g} alpha4={cell.alpha4:<5g}"
                         f" -> {cell.status}"
                         + (f" ({cell.detail})" if cell.detail else ""))
        return "\n".join(lines)


def build_prop3_problem(loop: PrimaryLoop, sector: SectorBound,
                        attack: AttackModel, safe: SafeSet,
                        alpha1: float, alpha4: float, *,
                        attack_input: np.ndarray | None = None,
                        alpha2: float | None = None,
                        alpha3: float | None = None,
                        q3_variable: bool = False) -> LmiProblem:
    """Invariance + containment conditions at fixed ``alpha1``/``alpha4``.

    Decision variables are the certificate shape ``P1`` and, unless pinned,
    the nonnegative multipliers ``alpha2`` (attack) and ``alpha3`` (sector).
    With ``q3_variable`` the attack weight ``Q3`` becomes a decision variable
    too (``alpha2`` must then be pinned).  Returns the assembled problem;
    callers attach objectives as needed.
    """
    if not 0.0 <= alpha4 <= 1.0:
        raise ValueError(f"alpha4={alpha4} outside [0, 1]")
    B1 = loop.B if attack_input is None else attack_input
    nz = loop.A.shape[0]
    q = loop.G.shape[1]
    na = B1.shape[1]
    if attack.Q3.shape[0] != na:
        raise matcore.DimensionError(
            f"attack weight Q3 is {attack.Q3.shape[0]}-dim but the attack "
            f"input has {na} columns")
    if q3_variable and alpha2 is None:
        raise ValueError("promoting Q3 to a variable requires a fixed alpha2")

    H, G = loop.H, loop.G
    S1, S2, V = sector.S1, sector.S2, sector.V
    Xi = safe.Xi

    prob = LmiProblem()
    P1 = prob.symmetric("P1", nz)
    a2 = None if alpha2 is not None else prob.scalar("alpha2")
    a3 = None if alpha3 is not None else (prob.scalar("alpha3") if q else None)
    Q3v = prob.symmetric("Q3", na) if q3_variable else None

    def times_a2(matrix):
        """alpha2 * matrix, as constant or scalar-variable term."""
        e = MatExpr.zeros(*matrix.shape)
        if a2 is None:
            e.add_const(alpha2 * matrix)
        else:
            e.term(a2, left=matrix, right=np.eye(matrix.shape[1]))
        return e

    def times_a3(matrix):
        e = MatExpr.zeros(*matrix.shape)
        if a3 is None:
            e.add_const((alpha3 if alpha3 is not None else 0.0) * matrix)
        else:
            e.term(a3, left=matrix, right=np.eye(matrix.shape[1]))
        return e

    # Main block condition over (state, nonlinearity, attack, const) rows.
    sizes = [nz, q, na, 1]
    cells: dict = {}
    c00 = MatExpr.zeros(nz, nz)
    c00.term(P1, right=loop.A, coeff=2.0)       # symmetrized: He(P1 A)
    c00.term(P1, coeff=alpha1)
    c00 += times_a2(-attack.Q1)
    if q:
        c00 += times_a3(-matcore.he(H.T @ S1.T @ V @ S2 @ H))
    cells[(0, 0)] = c00
    if q:
        c01 = MatExpr.zeros(nz, q)
        c01.term(P1, right=G)
        c01 += times_a3(H.T @ (S1 + S2).T @ V)
        cells[(0, 1)] = c01
        cells[(1, 1)] = times_a3(-2.0 * V)
    if na:
        c02 = MatExpr.zeros(nz, na)
        c02.term(P1, right=B1)
        c02 += times_a2(-attack.Q2)
        cells[(0, 2)] = c02
        if Q3v is not None:
            c22 = MatExpr.zeros(na, na)
            c22.term(Q3v, coeff=-alpha2)
            cells[(2, 2)] = c22
        else:
            cells[(2, 2)] = times_a2(-attack.Q3)
        c33 = times_a2(np.eye(1))
        c33.add_const([[-alpha1]])
        cells[(3, 3)] = c33
    else:
        cells[(3, 3)] = np.array([[-alpha1]])
    prob.require_neg_semidef(sym_blocks(sizes, cells), name="invariance")

    # Containment of the certified ellipsoid in the safe set.
    cont = sym_blocks([nz, 1], {
        (0, 0): MatExpr.constant(Xi).term(P1, coeff=-alpha4),
        (1, 1): np.array([[alpha4 - 1.0]]),
    })
    prob.require_neg_semidef(cont, name="containment")

    eps = P1_FLOOR_SCALE * (1.0 + matcore.spectral_norm(Xi))
    floor = AffineExpr(nz, const=eps * np.eye(nz))
    floor.term(P1, coeff=-1.0)
    prob.require_neg_semidef(floor, name="P1 floor")

    if a2 is not None:
        prob.require_nonneg(a2)
    if a3 is not None:
        prob.require_nonneg(a3)
    if Q3v is not None:
        q3f = AffineExpr(na, const=1e-9 * np.eye(na))
        q3f.term(Q3v, coeff=-1.0)
        prob.require_neg_semidef(q3f, name="Q3 floor")
    return prob


def _solve_cell(bundle: SystemBundle, loop: PrimaryLoop, point,
                tol: float, backend: str):
    a1, a4, a2, a3 = point
    prob = build_prop3_problem(loop, bundle.sector, bundle.attack,
                               bundle.safe, a1, a4, alpha2=a2, alpha3=a3,
                               attack_input=bundle.attack_input())
    outcome = lmi_engine.solve(prob, backend=backend, tol=tol)
    return prob, outcome


def verify_safety(bundle: SystemBundle, grid: AlphaGrid | None = None, *,
                  tol: float = 1e-8, backend: str = "native",
                  threads: int | None = None) -> VerificationOutcome:
    """Search the multiplier grid for an invariance certificate.

    Returns the certificate of the first feasible grid point in lexicographic
    order (audited independently of the solver), or the full status table
    when no point certifies.  ``threads`` caps concurrent grid evaluation
    (default from ``SAFEGUARD_THREADS``, falling back to sequential); the
    selected certificate does not depend on completion order.
    """
    problems = validate_bundle(bundle)
    if problems:
        raise ValueError("bundle is invalid: " + "; ".join(problems))
    grid = grid or AlphaGrid()
    loop = assemble_primary_loop(bundle.plant, bundle.primary)
    points = grid.points()
    if threads is None:
        threads = int(os.environ.get("SAFEGUARD_THREADS", "1"))

    def run(point):
        return _solve_cell(bundle, loop, point, tol, backend)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, points))
    else:
        results = [run(p) for p in points]

    table: list[GridCell] = []
    certificate = None
    for (a1, a4, a2, a3), (prob, outcome) in zip(points, results):
        if certificate is not None:
            table.append(GridCell(a1, a4, "skipped", alpha2=a2, alpha3=a3))
            continue
        if not outcome.feasible:
            detail = outcome.info.get("message", "")
            table.append(GridCell(a1, a4, outcome.status, detail,
                                  alpha2=a2, alpha3=a3))
            continue
        asn = outcome.assignment
        P1 = asn[prob.variables[0]]
        audit = lmi_engine.check_solution(prob, asn, tol=max(tol, 1e-9))
        contained = matcore.ellipsoid_contains(P1, bundle.safe.Xi, tol=1e-6)
        if all(r.satisfied for r in audit) and contained:
            values = {v.name: asn[v] for v in prob.variables}
            certificate = SafetyCertificate(
                P1=P1, alpha1=a1,
                alpha2=float(values["alpha2"]) if a2 is None else a2,
                alpha3=(float(values["alpha3"]) if "alpha3" in values
                        else (a3 if a3 is not None else 0.0)),
                alpha4=a4, residuals=audit, contained=contained)
            table.append(GridCell(a1, a4, "feasible", alpha2=a2, alpha3=a3))
        else:
            table.append(GridCell(a1, a4, "audit-failed",
                                  alpha2=a2, alpha3=a3))
    return VerificationOutcome(certificate, table)


def check_rpi_certificate(cert: SafetyCertificate,
                          bundle: SystemBundle) -> dict:
    """Rebuild the certificate conditions numerically and report residuals.

    Uses plain matrix arithmetic only (independent of the LMI layer):
    max eigenvalue of the invariance block, of the containment block, and
    the containment margin ``min_eig(P1 - Xi)``.
    """
    loop = assemble_primary_loop(bundle.plant, bundle.primary)
    B1 = bundle.attack_input()
    H, G = loop.H, loop.G
    S1, S2, V = bundle.sector.S1, bundle.sector.S2, bundle.sector.V
    Q1, Q2, Q3 = bundle.attack.Q1, bundle.attack.Q2, bundle.attack.Q3
    P1 = matcore.as_symmetric(cert.P1)
    a1, a2, a3, a4 = cert.alphas
    nz, q = loop.A.shape[0], G.shape[1]
    na = B1.shape[1]

    top = matcore.he(P1 @ loop.A) + a1 * P1 - a2 * Q1
    if q:
        top = top - a3 * matcore.he(H.T @ S1.T @ V @ S2 @ H)
    c01 = P1 @ G + a3 * H.T @ (S1 + S2).T @ V
    c02 = P1 @ B1 - a2 * Q2
    main = matcore.block([
        [top, c01, c02, np.zeros((nz, 1))],
        [c01.T, -2.0 * a3 * V, np.zeros((q, na)), np.zeros((q, 1))],
        [c02.T, np.zeros((na, q)), -a2 * Q3, np.zeros((na, 1))],
        [np.zeros((1, nz)), np.zeros((1, q)), np.zeros((1, na)),
         np.array([[a2 - a1]])],
    ])
    contain = matcore.block([
        [bundle.safe.Xi - a4 * P1, np.zeros((nz, 1))],
        [np.zeros((1, nz)), np.array([[a4 - 1.0]])],
    ])
    return {
        "invariance_max_eig": matcore.max_eig(main),
        "containment_max_eig": matcore.max_eig(contain),
        "containment_margin": matcore.min_eig(P1 - bundle.safe.Xi),
        "p1_min_eig": matcore.min_eig(P1),
    }
