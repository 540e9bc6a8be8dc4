"""Problem data model and closed-loop assembly.

Holds the plant, the pre-designed primary controller, the secondary
controller, the sensor/actuator selection matrices, the sector bound on the
nonlinearity, the attack budget, and the safe set, and assembles the
closed-loop matrices through which everything downstream works.

Conventions:

* the plant is ``dx_p = A x_p + G phi_p(H x_p) + B u``, ``y_p = C x_p``;
* the primary controller is dynamic output feedback with feedthrough; its
  state dimension may be zero (pure static feedback), in which case the
  dynamic blocks are empty arrays;
* the attack vector ``a`` stacks the attacked actuator channels followed by
  the attacked sensor channels.  By default every channel is attacked; a
  subset can be selected per channel, which shrinks the attack dimension and
  the corresponding input matrix columns accordingly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from . import matcore
from .matcore import DimensionError, block

__all__ = [
    "AttackModel",
    "ClosedLoop",
    "ModelError",
    "Plant",
    "PrimaryController",
    "PrimaryLoop",
    "SafeSet",
    "SecondaryController",
    "SectorBound",
    "Selection",
    "SystemBundle",
    "assemble_closed_loop",
    "assemble_primary_loop",
    "hat_matrices",
    "load_model",
    "save_model",
    "validate_attack_model",
    "validate_bundle",
    "validate_sector",
]


class ModelError(ValueError):
    """Problem data is inconsistent (dimensions, definiteness, schema)."""


def _mat(value, rows=None, cols=None, name="matrix") -> np.ndarray:
    a = np.asarray(value, dtype=float)
    if a.ndim != 2:
        raise ModelError(f"{name} must be a 2-d array, got shape {a.shape}")
    if rows is not None and a.shape[0] != rows:
        raise ModelError(f"{name} has {a.shape[0]} rows, expected {rows}")
    if cols is not None and a.shape[1] != cols:
        raise ModelError(f"{name} has {a.shape[1]} columns, expected {cols}")
    return a


@dataclass(frozen=True)
class Plant:
    """Plant matrices; ``G``/``H`` describe the nonlinearity channel."""

    A: np.ndarray
    G: np.ndarray
    H: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = _mat(self.A, name="plant.A")
        n = A.shape[0]
        if A.shape[1] != n:
            raise ModelError(f"plant.A must be square, got {A.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "G", _mat(self.G, rows=n, name="plant.G"))
        object.__setattr__(self, "H", _mat(self.H, cols=n, name="plant.H"))
        object.__setattr__(self, "B", _mat(self.B, rows=n, name="plant.B"))
        object.__setattr__(self, "C", _mat(self.C, cols=n, name="plant.C"))

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    @property
    def n_nonlin(self) -> int:
        return self.G.shape[1]

    @property
    def n_sector_rows(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True)
class PrimaryController:
    """Pre-designed controller; state dimension zero means static feedback."""

    A: np.ndarray
    G: np.ndarray
    H: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    @classmethod
    def static(cls, D) -> "PrimaryController":
        """Static output feedback ``u_p = D (y_p + a_y) + a_u``."""
        D = _mat(D, name="primary.D")
        n_u, n_y = D.shape
        return cls(A=np.zeros((0, 0)), G=np.zeros((0, 0)),
                   H=np.zeros((0, 0)), B=np.zeros((0, n_y)),
                   C=np.zeros((n_u, 0)), D=D)

    def __post_init__(self):
        A = _mat(self.A, name="primary.A")
        n1 = A.shape[0]
        if A.shape[1] != n1:
            raise ModelError(f"primary.A must be square, got {A.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "G", _mat(self.G, rows=n1, name="primary.G"))
        object.__setattr__(self, "H", _mat(self.H, cols=n1, name="primary.H"))
        object.__setattr__(self, "B", _mat(self.B, rows=n1, name="primary.B"))
        object.__setattr__(self, "C", _mat(self.C, cols=n1, name="primary.C"))
        object.__setattr__(self, "D", _mat(self.D, name="primary.D"))

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_nonlin(self) -> int:
        return self.G.shape[1]

    @property
    def n_sector_rows(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True)
class SecondaryController:
    """The designed add-on controller, fed only by protected sensors."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    @classmethod
    def zero(cls, n_meas: int, n_inputs: int,
             order: int = 0) -> "SecondaryController":
        return cls(A=np.zeros((order, order)), B=np.zeros((order, n_meas)),
                   C=np.zeros((n_inputs, order)), D=np.zeros((n_inputs, n_meas)))

    @classmethod
    def from_gain(cls, K, order: int) -> "SecondaryController":
        """Split the stacked gain ``[[A2, B2], [C2, D2]]`` at ``order``."""
        K = _mat(K, name="secondary gain")
        return cls(A=K[:order, :order], B=K[:order, order:],
                   C=K[order:, :order], D=K[order:, order:])

    def __post_init__(self):
        A = _mat(self.A, name="secondary.A")
        n2 = A.shape[0]
        if A.shape[1] != n2:
            raise ModelError(f"secondary.A must be square, got {A.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", _mat(self.B, rows=n2, name="secondary.B"))
        object.__setattr__(self, "C", _mat(self.C, cols=n2, name="secondary.C"))
        object.__setattr__(self, "D", _mat(self.D, name="secondary.D"))

    @property
    def order(self) -> int:
        return self.A.shape[0]

    def gain(self) -> np.ndarray:
        """Stacked gain ``[[A2, B2], [C2, D2]]``."""
        return block([[self.A, self.B], [self.C, self.D]])


@dataclass(frozen=True)
class Selection:
    """Protected-sensor selection ``Cs`` and input injection ``Eu``."""

    Cs: np.ndarray
    Eu: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Cs", _mat(self.Cs, name="selection.Cs"))
        object.__setattr__(self, "Eu", _mat(self.Eu, name="selection.Eu"))

    @property
    def n_meas(self) -> int:
        return self.Cs.shape[0]

    @property
    def n_secondary_inputs(self) -> int:
        return self.Eu.shape[1]


@dataclass(frozen=True)
class SectorBound:
    """Weighted sector condition on the stacked nonlinearity:
    ``(phi - S1 w)^T V (phi - S2 w) <= 0`` for ``w = H zeta1``."""

    S1: np.ndarray
    S2: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        S1 = _mat(self.S1, name="sector.S1")
        object.__setattr__(self, "S1", S1)
        object.__setattr__(self, "S2",
                           _mat(self.S2, rows=S1.shape[0], cols=S1.shape[1],
                                name="sector.S2"))
        V = matcore.as_symmetric(self.V, name="sector.V")
        if V.shape[0] != S1.shape[0]:
            raise ModelError(
                f"sector.V is {V.shape[0]}-dim but S1 has {S1.shape[0]} rows")
        if V.shape[0] and not matcore.is_pd(V, tol=0.0):
            raise ModelError("sector.V must be positive definite")
        object.__setattr__(self, "V", V)

    @property
    def is_linear(self) -> bool:
        """True when the sector pins the nonlinearity to a single gain."""
        return bool(np.array_equal(self.S1, self.S2))


@dataclass(frozen=True)
class AttackModel:
    """Quadratic attack budget ``[zeta1; a]^T [[Q1, Q2], [Q2^T, Q3]]
    [zeta1; a] <= 1``.

    ``Q1`` acts on the plant+primary state, ``Q3`` on the attack vector.
    ``act_channels``/``sense_channels`` select which actuator and sensor
    channels the attack covers (``None`` means all of them); the attack
    dimension is the total number of selected channels.
    """

    Q1: np.ndarray
    Q2: np.ndarray
    Q3: np.ndarray
    act_channels: tuple | None = None
    sense_channels: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "Q1", matcore.as_symmetric(self.Q1, name="attack.Q1"))
        object.__setattr__(self, "Q2", _mat(self.Q2, name="attack.Q2"))
        object.__setattr__(self, "Q3", matcore.as_symmetric(self.Q3, name="attack.Q3"))
        for attr in ("act_channels", "sense_channels"):
            v = getattr(self, attr)
            if v is not None:
                object.__setattr__(self, attr, tuple(int(i) for i in v))

    @property
    def n_attack(self) -> int:
        return self.Q3.shape[0]

    def growth_matrix(self) -> np.ndarray:
        """``Q2 Q3^{-1} Q2^T - Q1``: how the admissible set grows with the
        state.  Must be PSD for a valid budget."""
        q3inv = np.linalg.inv(self.Q3) if self.n_attack else np.zeros((0, 0))
        return matcore.as_symmetric(self.Q2 @ q3inv @ self.Q2.T - self.Q1,
                                    tol=1e-6)

    def resolve_channels(self, n_u: int, n_y: int) -> tuple[tuple, tuple]:
        act = tuple(range(n_u)) if self.act_channels is None else self.act_channels
        sense = tuple(range(n_y)) if self.sense_channels is None else self.sense_channels
        if any(i < 0 or i >= n_u for i in act):
            raise ModelError(f"attack actuator channels {act} out of range 0..{n_u - 1}")
        if any(i < 0 or i >= n_y for i in sense):
            raise ModelError(f"attack sensor channels {sense} out of range 0..{n_y - 1}")
        return act, sense


@dataclass(frozen=True)
class SafeSet:
    """Centered ellipsoidal safe set ``{zeta1 : zeta1^T Xi zeta1 <= 1}``."""

    Xi: np.ndarray

    def __post_init__(self):
        Xi = matcore.as_symmetric(self.Xi, name="safe.Xi")
        if not matcore.is_psd(Xi, tol=1e-10):
            raise ModelError("safe.Xi must be positive semidefinite")
        object.__setattr__(self, "Xi", Xi)

    @property
    def dim(self) -> int:
        return self.Xi.shape[0]

    def ellipsoid(self) -> matcore.Ellipsoid:
        return matcore.Ellipsoid(self.Xi)


@dataclass(frozen=True)
class SystemBundle:
    """Everything that defines one problem instance."""

    plant: Plant
    primary: PrimaryController
    selection: Selection
    sector: SectorBound
    attack: AttackModel
    safe: SafeSet
    phi: Callable | None = None  # simulation-only nonlinearity callback
    name: str = ""

    @property
    def n_loop(self) -> int:
        """Plant + primary state dimension (the safety-relevant state)."""
        return self.plant.n_states + self.primary.n_states

    def with_safe_scale(self, scale: float) -> "SystemBundle":
        return replace(self, safe=SafeSet(scale * np.eye(self.n_loop)))

    def stacked_G(self) -> np.ndarray:
        return block([
            [self.plant.G, np.zeros((self.plant.n_states, self.primary.n_nonlin))],
            [np.zeros((self.primary.n_states, self.plant.n_nonlin)), self.primary.G],
        ])

    def stacked_H(self) -> np.ndarray:
        return block([
            [self.plant.H, np.zeros((self.plant.n_sector_rows, self.primary.n_states))],
            [np.zeros((self.primary.n_sector_rows, self.plant.n_states)), self.primary.H],
        ])

    def attack_input(self) -> np.ndarray:
        """Columns of the attack input matrix for the plant+primary states,
        ordered as (attacked actuators, attacked sensors)."""
        p, c = self.plant, self.primary
        act, sense = self.attack.resolve_channels(p.n_inputs, p.n_outputs)
        act_cols = block([[p.B[:, list(act)].reshape(p.n_states, len(act))],
                          [np.zeros((c.n_states, len(act)))]])
        bd = p.B @ c.D
        sense_cols = block([[bd[:, list(sense)].reshape(p.n_states, len(sense))],
                            [c.B[:, list(sense)].reshape(c.n_states, len(sense))]])
        return np.hstack([act_cols, sense_cols])


class PrimaryLoop(NamedTuple):
    """Plant + primary controller loop ``dz = A z + G phi(H z) + B a``."""

    A: np.ndarray
    G: np.ndarray
    H: np.ndarray
    B: np.ndarray


@dataclass(frozen=True)
class ClosedLoop:
    """Full loop with the secondary controller attached:
    ``dz = A z + G phi(H z) + B a`` over ``z = (x_p, x_1, x_2)``."""

    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    H: np.ndarray
    n_plant: int
    n_primary: int
    n_secondary: int

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def n_loop(self) -> int:
        return self.n_plant + self.n_primary


def _check_bundle_dims(bundle: SystemBundle):
    p, c, sel = bundle.plant, bundle.primary, bundle.selection
    errors = []
    if c.D.shape != (p.n_inputs, p.n_outputs):
        errors.append(f"primary.D is {c.D.shape}, expected "
                      f"({p.n_inputs}, {p.n_outputs}) from plant.B/plant.C")
    if c.B.shape[1] != p.n_outputs:
        errors.append(f"primary.B has {c.B.shape[1]} columns, expected "
                      f"{p.n_outputs} (plant outputs)")
    if c.C.shape[0] != p.n_inputs:
        errors.append(f"primary.C has {c.C.shape[0]} rows, expected "
                      f"{p.n_inputs} (plant inputs)")
    if sel.Cs.shape[1] != p.n_outputs:
        errors.append(f"selection.Cs has {sel.Cs.shape[1]} columns, expected "
                      f"{p.n_outputs} (plant outputs)")
    if sel.Eu.shape[0] != p.n_inputs:
        errors.append(f"selection.Eu has {sel.Eu.shape[0]} rows, expected "
                      f"{p.n_inputs} (plant inputs)")
    q = p.n_nonlin + c.n_nonlin
    h = p.n_sector_rows + c.n_sector_rows
    if bundle.sector.S1.shape != (q, h):
        errors.append(f"sector.S1 is {bundle.sector.S1.shape}, expected "
                      f"({q}, {h}) from the stacked nonlinearity")
    nz = bundle.n_loop
    if bundle.attack.Q1.shape[0] != nz:
        errors.append(f"attack.Q1 is {bundle.attack.Q1.shape[0]}-dim, "
                      f"expected {nz} (plant+primary states)")
    try:
        act, sense = bundle.attack.resolve_channels(p.n_inputs, p.n_outputs)
        na = len(act) + len(sense)
        if bundle.attack.Q3.shape[0] != na:
            errors.append(f"attack.Q3 is {bundle.attack.Q3.shape[0]}-dim, "
                          f"expected {na} (selected attack channels)")
        if bundle.attack.Q2.shape != (nz, na):
            errors.append(f"attack.Q2 is {bundle.attack.Q2.shape}, expected "
                          f"({nz}, {na})")
    except ModelError as exc:
        errors.append(str(exc))
    if bundle.safe.dim != nz:
        errors.append(f"safe.Xi is {bundle.safe.dim}-dim, expected {nz}")
    return errors


def validate_bundle(bundle: SystemBundle) -> list[str]:
    """All dimension and definiteness problems, collected (not first-failure)."""
    errors = _check_bundle_dims(bundle)
    report = validate_attack_model(bundle.attack)
    if not report["valid"]:
        errors.extend(report["reasons"])
    return errors


def assemble_primary_loop(plant: Plant,
                          primary: PrimaryController) -> PrimaryLoop:
    """Close the loop with the primary controller only.

    The attack enters through every actuator and sensor channel here; pass
    the bundle's :meth:`SystemBundle.attack_input` instead when a channel
    subset is attacked.
    """
    n_p, n_1 = plant.n_states, primary.n_states
    if primary.D.shape != (plant.n_inputs, plant.n_outputs):
        raise DimensionError(
            f"primary.D is {primary.D.shape} but plant.B/plant.C give "
            f"({plant.n_inputs}, {plant.n_outputs})")
    if primary.B.shape[1] != plant.n_outputs:
        raise DimensionError(
            f"primary.B has {primary.B.shape[1]} columns, plant.C has "
            f"{plant.n_outputs} rows")
    A = block([
        [plant.A + plant.B @ primary.D @ plant.C, plant.B @ primary.C],
        [primary.B @ plant.C, primary.A],
    ])
    G = block([
        [plant.G, np.zeros((n_p, primary.n_nonlin))],
        [np.zeros((n_1, plant.n_nonlin)), primary.G],
    ])
    H = block([
        [plant.H, np.zeros((plant.n_sector_rows, n_1))],
        [np.zeros((primary.n_sector_rows, n_p)), primary.H],
    ])
    B = block([
        [plant.B, plant.B @ primary.D],
        [np.zeros((n_1, plant.n_inputs)), primary.B],
    ])
    return PrimaryLoop(A, G, H, B)


def hat_matrices(plant: Plant, primary: PrimaryController,
                 selection: Selection):
    """Open-loop-with-primary matrices through which the secondary controller
    enters linearly: returns ``(Ahat, Bhat, Chat)``."""
    n_p, n_1 = plant.n_states, primary.n_states
    if selection.Cs.shape[1] != plant.n_outputs:
        raise DimensionError(
            f"selection.Cs has {selection.Cs.shape[1]} columns, plant.C has "
            f"{plant.n_outputs} rows")
    if selection.Eu.shape[0] != plant.n_inputs:
        raise DimensionError(
            f"selection.Eu has {selection.Eu.shape[0]} rows, plant.B has "
            f"{plant.n_inputs} columns")
    Ahat = block([
        [plant.A + plant.B @ primary.D @ plant.C, plant.B @ primary.C],
        [primary.B @ plant.C, primary.A],
    ])
    Bhat = block([
        [plant.B @ selection.Eu],
        [np.zeros((n_1, selection.n_secondary_inputs))],
    ])
    Chat = block([[selection.Cs @ plant.C, np.zeros((selection.n_meas, n_1))]])
    return Ahat, Bhat, Chat


def gain_factorization(plant: Plant, primary: PrimaryController,
                       selection: Selection, order: int):
    """Matrices ``(Atil, Btil, Ctil)`` with ``A_closed = Atil + Btil K Ctil``
    for the stacked secondary gain ``K``."""
    Ahat, Bhat, Chat = hat_matrices(plant, primary, selection)
    nz = Ahat.shape[0]
    n2 = order
    Atil = block([[Ahat, np.zeros((nz, n2))],
                  [np.zeros((n2, nz)), np.zeros((n2, n2))]])
    Btil = block([[np.zeros((nz, n2)), Bhat],
                  [np.eye(n2), np.zeros((n2, Bhat.shape[1]))]])
    Ctil = block([[np.zeros((n2, nz)), np.eye(n2)],
                  [Chat, np.zeros((Chat.shape[0], n2))]])
    return Atil, Btil, Ctil


def assemble_closed_loop(plant: Plant, primary: PrimaryController,
                         secondary: SecondaryController,
                         selection: Selection,
                         attack_input: np.ndarray | None = None) -> ClosedLoop:
    """Assemble the full closed loop with the secondary controller.

    ``attack_input`` overrides the plant+primary attack columns (used when
    only a subset of channels is attacked); by default all actuator and
    sensor channels are attacked.
    """
    n_p, n_1, n_2 = plant.n_states, primary.n_states, secondary.order
    nz = n_p + n_1
    if secondary.B.shape[1] != selection.n_meas:
        raise DimensionError(
            f"secondary.B has {secondary.B.shape[1]} columns, selection.Cs "
            f"has {selection.n_meas} rows")
    if secondary.C.shape[0] != selection.n_secondary_inputs:
        raise DimensionError(
            f"secondary.C has {secondary.C.shape[0]} rows, selection.Eu has "
            f"{selection.n_secondary_inputs} columns")
    loop = assemble_primary_loop(plant, primary)
    CsC = selection.Cs @ plant.C
    BEu = plant.B @ selection.Eu
    feedback = np.zeros((nz, nz))
    feedback[:n_p, :n_p] = BEu @ secondary.D @ CsC
    A11 = loop.A + feedback
    A = block([
        [A11, np.vstack([BEu @ secondary.C, np.zeros((n_1, n_2))])],
        [np.hstack([secondary.B @ CsC, np.zeros((n_2, n_1))]), secondary.A],
    ])
    B1 = loop.B if attack_input is None else attack_input
    B = np.vstack([B1, np.zeros((n_2, B1.shape[1]))])
    G = np.vstack([loop.G, np.zeros((n_2, loop.G.shape[1]))])
    H = np.hstack([loop.H, np.zeros((loop.H.shape[0], n_2))])
    return ClosedLoop(A, B, G, H, n_p, n_1, n_2)


def validate_attack_model(am: AttackModel) -> dict:
    """Report-style check of the attack budget conditions.

    Returns ``{"valid", "q3_pd", "growth_psd", "q3_min_eig",
    "growth_min_eig", "reasons"}``; never raises.
    """
    reasons = []
    q3_min = matcore.min_eig(am.Q3) if am.n_attack else float("inf")
    q3_pd = q3_min > 0.0
    if not q3_pd:
        reasons.append("Q3 not positive definite "
                       f"(min eigenvalue {q3_min:.6g})")
    growth_min = float("nan")
    growth_psd = False
    if q3_pd:
        growth_min = matcore.min_eig(am.growth_matrix()) if am.Q1.shape[0] else float("inf")
        growth_psd = growth_min >= -1e-10
        if not growth_psd:
            reasons.append("Q2 Q3^-1 Q2^T - Q1 not positive semidefinite "
                           f"(min eigenvalue {growth_min:.6g})")
    return {"valid": q3_pd and growth_psd, "q3_pd": q3_pd,
            "growth_psd": growth_psd, "q3_min_eig": q3_min,
            "growth_min_eig": growth_min, "reasons": reasons}


def _kronecker_ball(dim: int, radius: float, count: int) -> np.ndarray:
    """Deterministic low-discrepancy points in the centered ball.

    Additive-recurrence (Kronecker) sequence on the cube, rejected to the
    ball; falls back to cube points scaled onto the ball if rejection is too
    wasteful in high dimension.
    """
    # Generalized golden-ratio increments.
    phi = 1.0
    for _ in range(64):
        phi = (1.0 + phi) ** (1.0 / (dim + 1))
    alphas = np.array([phi ** -(k + 1) % 1.0 for k in range(dim)])
    points = []
    k = 1
    budget = 50 * count + 1000
    while len(points) < count and k < budget:
        u = (0.5 + k * alphas) % 1.0
        x = (2.0 * u - 1.0) * radius
        if np.dot(x, x) <= radius * radius:
            points.append(x)
        k += 1
    while len(points) < count:  # ball fraction too small; project instead
        u = (0.5 + k * alphas) % 1.0
        x = (2.0 * u - 1.0)
        n = np.linalg.norm(x)
        points.append(x / max(n, 1e-12) * radius * (k % 97 + 1) / 97.0)
        k += 1
    return np.array(points)


def validate_sector(sector: SectorBound, phi: Callable, H: np.ndarray,
                    samples: int = 10000, radius: float = 10.0) -> dict:
    """Sample the sector inequality over a ball of states.

    Evaluates ``(phi(w) - S1 w)^T V (phi(w) - S2 w)`` at quasi-random states
    ``zeta1`` with ``w = H zeta1``; a positive maximum is a violation.
    Returns ``{"max_violation", "argmax_state", "samples", "ok"}``.
    Exceptions from the callback propagate.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if radius <= 0:
        raise ValueError("radius must be > 0")
    H = matcore.as_matrix(H, "H")
    n = H.shape[1]
    pts = _kronecker_ball(n, radius, samples)
    worst = -np.inf
    arg = np.zeros(n)
    for x in pts:
        w = H @ x
        f = np.asarray(phi(w), dtype=float).reshape(-1)
        r1 = f - sector.S1 @ w
        r2 = f - sector.S2 @ w
        val = float(r1 @ sector.V @ r2)
        if val > worst:
            worst = val
            arg = x
    return {"max_violation": worst, "argmax_state": arg,
            "samples": len(pts), "ok": worst <= 0.0}


# -- model file I/O -------------------------------------------------------------


def _matrix_from_json(obj, name, errors, rows=None, cols=None) -> np.ndarray:
    if obj is None:
        obj = []
    try:
        a = np.asarray(obj, dtype=float)
    except (TypeError, ValueError):
        errors.append(f"{name}: not a numeric nested array")
        return np.zeros((0, 0))
    if a.size == 0:
        r = rows if rows is not None else 0
        c = cols if cols is not None else 0
        return np.zeros((r, c))
    if a.ndim != 2:
        errors.append(f"{name}: expected a list of rows, got shape {a.shape}")
        return np.zeros((0, 0))
    if rows is not None and rows != 0 and a.shape[0] != rows:
        errors.append(f"{name}: has {a.shape[0]} rows, expected {rows}")
    if cols is not None and cols != 0 and a.shape[1] != cols:
        errors.append(f"{name}: has {a.shape[1]} columns, expected {cols}")
    return a


def load_model(path) -> SystemBundle:
    """Load a problem instance from a JSON model file.

    Expected fields: ``plant{A,G,H,B,C}``, ``primary{A,G,H,B,C,D}``,
    ``selection{Cs,Eu}``, ``sector{S1,S2,V}``, ``attack{Q1,Q2,Q3}`` with an
    optional ``channels{actuator,sensor}`` subset, ``safe{Xi}``, and an
    optional ``phi{"kind": "zero"|"sin"}`` simulation nonlinearity.  All
    matrices are row-major nested arrays; dimensions are cross-validated and
    every inconsistency is reported at once.
    """
    with open(path) as fh:
        doc = json.load(fh)
    errors: list[str] = []

    def section(key, required=True):
        s = doc.get(key)
        if s is None and required:
            errors.append(f"missing section {key!r}")
            return {}
        return s or {}

    pl, pr = section("plant"), section("primary")
    se, sc = section("selection"), section("sector")
    at, sf = section("attack"), section("safe")

    A_p = _matrix_from_json(pl.get("A"), "plant.A", errors)
    n_p = A_p.shape[0]
    plant_kwargs = dict(
        A=A_p,
        G=_matrix_from_json(pl.get("G"), "plant.G", errors, rows=n_p, cols=0),
        H=_matrix_from_json(pl.get("H"), "plant.H", errors, rows=0, cols=n_p),
        B=_matrix_from_json(pl.get("B"), "plant.B", errors, rows=n_p, cols=0),
        C=_matrix_from_json(pl.get("C"), "plant.C", errors, rows=0, cols=n_p),
    )
    A_1 = _matrix_from_json(pr.get("A"), "primary.A", errors)
    n_1 = A_1.shape[0]
    n_u = plant_kwargs["B"].shape[1]
    n_y = plant_kwargs["C"].shape[0]
    primary_kwargs = dict(
        A=A_1,
        G=_matrix_from_json(pr.get("G"), "primary.G", errors, rows=n_1, cols=0),
        H=_matrix_from_json(pr.get("H"), "primary.H", errors, rows=0, cols=n_1),
        B=_matrix_from_json(pr.get("B"), "primary.B", errors, rows=n_1, cols=n_y),
        C=_matrix_from_json(pr.get("C"), "primary.C", errors, rows=n_u, cols=n_1),
        D=_matrix_from_json(pr.get("D"), "primary.D", errors),
    )
    channels = at.get("channels") or {}
    act = channels.get("actuator")
    sense = channels.get("sensor")
    nz = n_p + n_1
    na_default = (len(act) if act is not None else n_u) + \
        (len(sense) if sense is not None else n_y)

    def build(section, ctor, **kwargs):
        """Construct a component, collecting (not raising) its complaints."""
        try:
            return ctor(**kwargs)
        except (ModelError, ValueError) as exc:
            errors.append(f"{section}: {exc}")
            return None

    parts = {
        "plant": build("plant", Plant, **plant_kwargs),
        "primary": build("primary", PrimaryController, **primary_kwargs),
        "selection": build("selection", Selection,
                           Cs=_matrix_from_json(se.get("Cs"), "selection.Cs",
                                                errors, rows=0, cols=n_y),
                           Eu=_matrix_from_json(se.get("Eu"), "selection.Eu",
                                                errors, rows=n_u, cols=0)),
        "sector": build("sector", SectorBound,
                        S1=_matrix_from_json(sc.get("S1"), "sector.S1", errors),
                        S2=_matrix_from_json(sc.get("S2"), "sector.S2", errors),
                        V=_matrix_from_json(sc.get("V"), "sector.V", errors)),
        "attack": build("attack", AttackModel,
                        Q1=_matrix_from_json(at.get("Q1"), "attack.Q1",
                                             errors, rows=nz, cols=nz),
                        Q2=_matrix_from_json(at.get("Q2"), "attack.Q2",
                                             errors, rows=nz, cols=na_default),
                        Q3=_matrix_from_json(at.get("Q3"), "attack.Q3", errors),
                        act_channels=None if act is None else tuple(act),
                        sense_channels=None if sense is None else tuple(sense)),
        "safe": build("safe", SafeSet,
                      Xi=_matrix_from_json(sf.get("Xi"), "safe.Xi", errors)),
    }
    if any(v is None for v in parts.values()):
        raise ModelError("; ".join(errors))
    bundle = SystemBundle(phi=_phi_from_json(doc.get("phi"), errors),
                          name=str(doc.get("name", "")), **parts)
    errors.extend(_check_bundle_dims(bundle))
    if errors:
        raise ModelError("; ".join(errors))
    return bundle


def _phi_from_json(obj, errors):
    if obj is None:
        return None
    kind = obj.get("kind", "zero")
    if kind == "zero":
        return lambda w: np.zeros_like(np.asarray(w, dtype=float))
    if kind == "sin":
        return lambda w: np.sin(np.asarray(w, dtype=float))
    errors.append(f"phi.kind {kind!r} not recognized (zero|sin)")
    return None


def save_model(bundle: SystemBundle, path, phi_kind: str | None = None):
    """Write a bundle back to the JSON model format."""
    doc = {
        "name": bundle.name,
        "plant": {k: getattr(bundle.plant, k).tolist()
                  for k in ("A", "G", "H", "B", "C")},
        "primary": {k: getattr(bundle.primary, k).tolist()
                    for k in ("A", "G", "H", "B", "C", "D")},
        "selection": {"Cs": bundle.selection.Cs.tolist(),
                      "Eu": bundle.selection.Eu.tolist()},
        "sector": {"S1": bundle.sector.S1.tolist(),
                   "S2": bundle.sector.S2.tolist(),
                   "V": bundle.sector.V.tolist()},
        "attack": {"Q1": bundle.attack.Q1.tolist(),
                   "Q2": bundle.attack.Q2.tolist(),
                   "Q3": bundle.attack.Q3.tolist()},
        "safe": {"Xi": bundle.safe.Xi.tolist()},
    }
    if bundle.attack.act_channels is not None or bundle.attack.sense_channels is not None:
        p = bundle.plant
        act, sense = bundle.attack.resolve_channels(p.n_inputs, p.n_outputs)
        doc["attack"]["channels"] = {"actuator": list(act), "sensor": list(sense)}
    if phi_kind is not None:
        doc["phi"] = {"kind": phi_kind}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
