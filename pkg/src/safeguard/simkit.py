"""Closed-loop simulation under admissible attacks.

Fixed-step classical Runge-Kutta integration, attack-set geometry and
samplers, safety/invariance monitoring, dissipation auditing, and the
Josephson-junction case-study builder.  Attacks are held constant across
each integration step (zero-order hold); the default step of 1e-3 s keeps
the induced constraint violation far below the monitoring tolerances for the
systems targeted here.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import matcore
from .matcore import Ellipsoid
from .sysmodel import (AttackModel, Plant, PrimaryController, SafeSet,
                       SectorBound, Selection, SystemBundle)

__all__ = [
    "AttackGenerator",
    "NonlinearityFn",
    "SimulationError",
    "Trajectory",
    "admissible_attack_set",
    "boundary_points",
    "dissipation_audit",
    "export_ellipsoid_json",
    "export_trajectory_csv",
    "josephson_case_study",
    "monitor_safety",
    "monte_carlo_invariance",
    "sample_attack",
    "simulate",
]


class SimulationError(RuntimeError):
    """Integration failed; carries the offending step index."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


@dataclass(frozen=True)
class NonlinearityFn:
    """Callback mapping the sector input ``H zeta1`` to the nonlinearity
    value, with its declared output dimension."""

    fn: Callable
    out_dim: int

    def __call__(self, w: np.ndarray) -> np.ndarray:
        out = np.asarray(self.fn(w), dtype=float)
        return out.reshape(self.out_dim) if out.ndim <= 1 else out

    @classmethod
    def zero(cls, out_dim: int) -> "NonlinearityFn":
        return cls(lambda w: np.zeros(out_dim), out_dim)

    @classmethod
    def sine(cls) -> "NonlinearityFn":
        return cls(lambda w: np.sin(np.asarray(w, dtype=float)), 1)


def admissible_attack_set(zeta1, am: AttackModel):
    """Ellipsoidal set of attacks admissible at the given state.

    Completing the square in the quadratic budget gives
    ``{a : (a - c)^T Q3 (a - c) <= r2}`` with ``c = -Q3^{-1} Q2^T zeta1`` and
    ``r2 = 1 + zeta1^T (Q2 Q3^{-1} Q2^T - Q1) zeta1``; the growth condition
    guarantees ``r2 >= 1``.  Returns ``(center, shape, r2)``.
    """
    z = np.asarray(zeta1, dtype=float).reshape(-1)
    q3inv = np.linalg.inv(am.Q3)
    center = -q3inv @ am.Q2.T @ z
    r2 = 1.0 + float(z @ (am.Q2 @ q3inv @ am.Q2.T - am.Q1) @ z)
    return center, am.Q3.copy(), r2


@dataclass
class AttackGenerator:
    """Per-step attack sampler; every emitted attack is admissible.

    Strategies: ``zero``; ``constant-boundary`` and ``sinusoid-boundary``
    along a fixed direction (the sinusoid touches the boundary at its
    peaks); ``random-admissible`` draws uniformly from the admissible
    ellipsoid, deterministically per seed.
    """

    model: AttackModel
    strategy: str = "zero"
    direction: np.ndarray | None = None
    frequency: float = 1.0
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False, default=None)
    _sqrt_inv: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.strategy not in ("zero", "constant-boundary",
                                 "sinusoid-boundary", "random-admissible"):
            raise ValueError(f"unknown attack strategy {self.strategy!r}")
        if self.strategy.endswith("boundary"):
            if self.direction is None:
                d = np.zeros(self.model.n_attack)
                if d.size:
                    d[0] = 1.0
            else:
                d = np.asarray(self.direction, dtype=float).reshape(-1)
            object.__setattr__(self, "direction", d)
        self.reset()

    def reset(self):
        self._rng = np.random.default_rng(self.seed)
        self._sqrt_inv = (matcore.inv_sqrtm_psd(self.model.Q3)
                          if self.model.n_attack else np.zeros((0, 0)))

    def sample(self, zeta1, t: float) -> np.ndarray:
        na = self.model.n_attack
        if na == 0:
            return np.zeros(0)
        center, q3, r2 = admissible_attack_set(zeta1, self.model)
        r = math.sqrt(max(r2, 0.0))
        if self.strategy == "zero":
            # 0 is admissible because the radius never drops below one.
            return np.zeros(na)
        if self.strategy in ("constant-boundary", "sinusoid-boundary"):
            d = self.direction
            norm = math.sqrt(float(d @ q3 @ d))
            if norm == 0.0:
                return center
            step = (math.sin(2.0 * math.pi * self.frequency * t)
                    if self.strategy == "sinusoid-boundary" else 1.0)
            return center + (r * step / norm) * d
        u = self._rng.normal(size=na)
        u /= max(np.linalg.norm(u), 1e-300)
        radius = self._rng.random() ** (1.0 / na)
        return center + self._sqrt_inv @ (r * radius * u)


def sample_attack(gen: AttackGenerator, zeta1, t: float) -> np.ndarray:
    return gen.sample(zeta1, t)


@dataclass
class Trajectory:
    """Uniform-step record of a closed-loop run."""

    times: np.ndarray
    states: np.ndarray   # (steps + 1, dim)
    attacks: np.ndarray  # (steps + 1, n_attack), zero-order held
    u_s: np.ndarray      # secondary input series
    u_p: np.ndarray      # primary input series
    n_loop: int          # plant + primary state dimension

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def loop_states(self) -> np.ndarray:
        return self.states[:, :self.n_loop]

    def quadratic_series(self, shape: np.ndarray) -> np.ndarray:
        """``x^T shape x`` over time, on as many leading states as fit."""
        d = shape.shape[0]
        xs = self.states[:, :d]
        return np.einsum("ti,ij,tj->t", xs, shape, xs)


def _loop_fields(loop):
    """Accept any object with A/B/G/H attributes (primary or full loop)."""
    return (np.asarray(loop.A, dtype=float), np.asarray(loop.B, dtype=float),
            np.asarray(loop.G, dtype=float), np.asarray(loop.H, dtype=float))


def simulate(loop, phi: NonlinearityFn | Callable | None,
             gen: AttackGenerator, x0, horizon: float, dt: float,
             *, n_loop: int | None = None,
             outputs: Callable | None = None) -> Trajectory:
    """Integrate ``dz = A z + G phi(H z) + B a`` with classical fourth-order
    Runge-Kutta at a fixed step; the attack is sampled once per step.

    ``outputs`` optionally maps a state to ``(u_s, u_p)`` for recording.
    Non-finite states abort with the step index.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if horizon < dt:
        raise ValueError("horizon must be at least one step")
    A, B, G, H = _loop_fields(loop)
    n = A.shape[0]
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape[0] != n:
        raise matcore.DimensionError(
            f"x0 has dimension {x.shape[0]}, loop is {n}-dimensional")
    nz = n_loop if n_loop is not None else getattr(loop, "n_loop", n)
    q = G.shape[1]
    if phi is None:
        phi = NonlinearityFn.zero(q)
    elif not isinstance(phi, NonlinearityFn):
        phi = NonlinearityFn(phi, q)

    steps = int(round(horizon / dt))
    times = np.arange(steps + 1) * dt

    def f(state, a):
        return A @ state + G @ phi(H @ state) + B @ a

    states = np.empty((steps + 1, n))
    attacks = np.empty((steps + 1, B.shape[1]))
    us_list, up_list = [], []

    def record_outputs(state):
        if outputs is None:
            us_list.append(np.zeros(0))
            up_list.append(np.zeros(0))
        else:
            us, up = outputs(state)
            us_list.append(np.asarray(us, dtype=float).reshape(-1))
            up_list.append(np.asarray(up, dtype=float).reshape(-1))

    states[0] = x
    for k in range(steps):
        a = gen.sample(x[:nz], times[k])
        attacks[k] = a
        record_outputs(x)
        k1 = f(x, a)
        k2 = f(x + 0.5 * dt * k1, a)
        k3 = f(x + 0.5 * dt * k2, a)
        k4 = f(x + dt * k3, a)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise SimulationError("state became non-finite", k + 1)
        states[k + 1] = x
    attacks[steps] = attacks[steps - 1] if steps else 0.0
    record_outputs(x)
    return Trajectory(times, states, attacks,
                      np.array(us_list), np.array(up_list), nz)


def monitor_safety(traj: Trajectory, safe: SafeSet,
                   rpi: Ellipsoid | None = None, tol: float = 0.0) -> dict:
    """Peak quadratic values and first-violation times for the safe set and,
    when given, the invariant ellipsoid."""
    safe_series = traj.quadratic_series(safe.Xi)
    out = {
        "max_safe_quadratic": float(np.max(safe_series)),
        "first_safe_violation": None,
        "max_rpi_quadratic": None,
        "first_rpi_violation": None,
    }
    bad = np.nonzero(safe_series > 1.0 + tol)[0]
    if bad.size:
        out["first_safe_violation"] = float(traj.times[bad[0]])
    if rpi is not None:
        series = traj.quadratic_series(rpi.shape)
        out["max_rpi_quadratic"] = float(np.max(series))
        bad = np.nonzero(series > 1.0 + tol)[0]
        if bad.size:
            out["first_rpi_violation"] = float(traj.times[bad[0]])
    return out


def dissipation_audit(traj: Trajectory, P: np.ndarray, gamma: float,
                      eps: float = 0.0) -> dict:
    """Check the integrated supply-rate inequality along a trajectory.

    For a certified storage ``V(z) = z^T P z`` and gain bound ``gamma``, the
    running quantity ``V(t) - V(0) - int[(gamma - eps)|a|^2 -
    |u_s|^2 / gamma]`` must stay nonpositive; its maximum over time is the
    reported violation (trapezoidal quadrature for the integrals).
    """
    if traj.u_s.size == 0 or traj.attacks.size == 0:
        raise ValueError("trajectory must carry attack and u_s series")
    P = matcore.as_symmetric(P)
    d = P.shape[0]
    xs = traj.states[:, :d]
    v = np.einsum("ti,ij,tj->t", xs, P, xs)
    supply = ((gamma - eps) * np.sum(traj.attacks ** 2, axis=1)
              - np.sum(traj.u_s ** 2, axis=1) / gamma)
    dt = traj.dt
    cum = np.concatenate([[0.0], np.cumsum((supply[1:] + supply[:-1]) * dt / 2.0)])
    excess = v - v[0] - cum
    return {"max_violation": float(np.max(excess)),
            "final_excess": float(excess[-1]),
            "violated": bool(np.max(excess) > 0.0)}


def boundary_points(P: np.ndarray, count: int, seed: int = 0) -> np.ndarray:
    """Points on the boundary of ``{x : x^T P x = 1}``: uniform directions
    mapped through ``P^{ -1/2}``."""
    P = matcore.as_symmetric(P)
    n = P.shape[0]
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(count, n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u @ matcore.inv_sqrtm_psd(P).T


def monte_carlo_invariance(loop, phi, attack_model: AttackModel,
                           P: np.ndarray, n_traj: int = 100,
                           horizon: float = 10.0, dt: float = 1e-3,
                           seed: int = 0, n_loop: int | None = None) -> dict:
    """Batch invariance audit: trajectories start on the boundary of the
    certified ellipsoid under random admissible attacks; reports the peak of
    ``V`` over all runs.

    Vectorized across trajectories (one RK4 step integrates the whole
    batch); per-step attacks are drawn uniformly from each trajectory's
    admissible set.  Deterministic for a fixed seed.
    """
    A, B, G, H = _loop_fields(loop)
    n = A.shape[0]
    nz = n_loop if n_loop is not None else getattr(loop, "n_loop", n)
    q = G.shape[1]
    if phi is None:
        phi = NonlinearityFn.zero(q)
    elif not isinstance(phi, NonlinearityFn):
        phi = NonlinearityFn(phi, q)
    P = matcore.as_symmetric(P)
    rng = np.random.default_rng(seed)
    X = boundary_points(P, n_traj, seed=seed)
    na = attack_model.n_attack
    q3inv = np.linalg.inv(attack_model.Q3)
    growth = attack_model.Q2 @ q3inv @ attack_model.Q2.T - attack_model.Q1
    qinv_sqrt = matcore.inv_sqrtm_psd(attack_model.Q3)

    steps = int(round(horizon / dt))
    vmax = np.einsum("ti,ij,tj->t", X, P, X).copy()

    At, Gt, Bt, Ht = A.T, G.T, B.T, H.T
    batched_phi = q > 0 and _vectorizable(phi)

    def rhs(Xb, Ab):
        val = Xb @ At + Ab @ Bt
        if q:
            W = Xb @ Ht
            vals = phi.fn(W) if batched_phi else np.stack([phi(w) for w in W])
            val = val + np.asarray(vals, dtype=float).reshape(-1, q) @ Gt
        return val

    for k in range(steps):
        Z1 = X[:, :nz]
        centers = -(Z1 @ attack_model.Q2 @ q3inv)
        r2 = 1.0 + np.einsum("ti,ij,tj->t", Z1, growth, Z1)
        u = rng.normal(size=(n_traj, na))
        u /= np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-300)
        radii = rng.random(size=n_traj) ** (1.0 / na) if na else np.zeros(n_traj)
        Ab = centers + (np.sqrt(np.maximum(r2, 0.0)) * radii)[:, None] * (u @ qinv_sqrt.T)
        k1 = rhs(X, Ab)
        k2 = rhs(X + 0.5 * dt * k1, Ab)
        k3 = rhs(X + 0.5 * dt * k2, Ab)
        k4 = rhs(X + dt * k3, Ab)
        X = X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(X)):
            raise SimulationError("batch state became non-finite", k + 1)
        vmax = np.maximum(vmax, np.einsum("ti,ij,tj->t", X, P, X))
    return {"max_v": float(np.max(vmax)), "per_trajectory_max": vmax,
            "n_trajectories": n_traj, "horizon": horizon, "dt": dt}


def _vectorizable(phi: NonlinearityFn) -> bool:
    """True when the callback already maps (batch, h) -> (batch, q)."""
    try:
        out = np.asarray(phi.fn(np.zeros((2, max(phi.out_dim, 1)))))
        return out.shape[0] == 2
    except Exception:
        return False


def export_trajectory_csv(traj: Trajectory, path, safe: SafeSet | None = None,
                          rpi: Ellipsoid | None = None):
    """CSV with header ``t, zeta..., a..., u_s..., V, safeQuad``."""
    n = traj.states.shape[1]
    na = traj.attacks.shape[1]
    ns = traj.u_s.shape[1] if traj.u_s.ndim == 2 else 0
    v = (traj.quadratic_series(rpi.shape) if rpi is not None
         else np.full(len(traj.times), float("nan")))
    sq = (traj.quadratic_series(safe.Xi) if safe is not None
          else np.full(len(traj.times), float("nan")))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"zeta{i + 1}" for i in range(n)]
                   + [f"a{i + 1}" for i in range(na)]
                   + [f"u_s{i + 1}" for i in range(ns)] + ["V", "safeQuad"])
        for k, t in enumerate(traj.times):
            row = ([f"{t:.12g}"] + [f"{x:.12g}" for x in traj.states[k]]
                   + [f"{x:.12g}" for x in traj.attacks[k]]
                   + ([f"{x:.12g}" for x in traj.u_s[k]] if ns else [])
                   + [f"{v[k]:.12g}", f"{sq[k]:.12g}"])
            w.writerow(row)


def export_ellipsoid_json(ell: Ellipsoid, path, surface_points: int = 0,
                          seed: int = 0):
    """Ellipsoid as JSON ``{shape, center}`` plus an optional sampled surface
    point cloud for external plotting."""
    doc = {"shape": ell.shape.tolist(), "center": ell.center.tolist()}
    if surface_points:
        pts = boundary_points(ell.shape, surface_points, seed=seed)
        doc["surface"] = (pts + ell.center).tolist()
    with open(path, "w") as fh:
        json.dump(doc, fh)


def josephson_case_study(safe_scale: float = 50.0) -> SystemBundle:
    """Shunted resistive-capacitive-inductive Josephson junction under a
    stabilizing state-feedback primary controller and a bounded actuator
    attack; the standard instance used throughout the docs and tests.

    ``safe_scale`` sets the safe set to ``scale * I``; 50 is the tight set
    for which primary-only verification fails, 11 the enlarged one for which
    it succeeds.
    """
    beta_c, beta_l, damping = 0.707, 2.6, 0.2135
    plant = Plant(
        A=[[0.0, 1.0, 0.0],
           [0.0, -damping / beta_c, 1.0 / beta_c],
           [0.0, 1.0 / beta_l, -1.0 / beta_l]],
        G=[[0.0], [-1.0 / beta_c], [0.0]],
        H=[[1.0, 0.0, 0.0]],
        B=[[0.0], [1.0], [0.0]],
        C=np.eye(3),
    )
    primary = PrimaryController.static([[-48.3832, -8.6234, 73.1825]])
    selection = Selection(Cs=[[1.0, 1.0, 0.0]], Eu=[[1.0]])
    sector = SectorBound(S1=[[-0.22]], S2=[[1.0]], V=[[1.0]])
    attack = AttackModel(Q1=np.zeros((3, 3)), Q2=np.zeros((3, 1)),
                         Q3=[[1.0]], act_channels=(0,), sense_channels=())
    return SystemBundle(
        plant=plant, primary=primary, selection=selection, sector=sector,
        attack=attack, safe=SafeSet(safe_scale * np.eye(3)),
        phi=NonlinearityFn.sine(), name="josephson-junction")
