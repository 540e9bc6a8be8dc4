"""Self-contained dense interior-point backend for small LMI problems.

Solves ``min c^T x  s.t.  A0_j + sum_i x_i A_ji <= 0`` (PSD order) for dense
symmetric blocks, via a log-det barrier with a standard two-phase scheme:

* phase 1 minimizes the uniform slack ``t`` in ``F_j(x) <= t I`` until the
  iterate is strictly feasible (early exit) or the slack optimum is located,
  which yields an infeasibility declaration when it is positive;
* phase 2 follows the central path for the linear objective.

Everything is plain numpy and deterministic.  Intended problem sizes are a
few dozen unknowns and blocks of dimension up to roughly 60; no sparsity is
exploited.  Iterates are kept inside a large box so that directions of
unbounded objective decrease are detected instead of diverging.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["solve_sdp"]

# Phase-1 knobs (in per-block normalized units): stop descending the slack
# once every block clears this depth; the slack variable itself is boxed a
# bit lower so the box never binds before the early exit triggers.
DEPTH_STOP = 0.02
T_CAP = 0.05

MU_SHRINK = 0.2
NEWTON_TOL = 1e-11
INNER_MAX = 60
LINESEARCH_MAX = 60

# Always-on per-direction Tikhonov ridge: relative damping on curved
# directions, an absolute floor on directions the barrier leaves flat (e.g.
# gain components acting through low-rank factors), which would otherwise
# produce gigantic zig-zagging Newton steps.
RIDGE = 1e-12


@dataclass
class _Cone:
    """Normalized constraint blocks plus simple box bounds."""

    A0: list[np.ndarray]
    A: list[np.ndarray]          # each (m, n_j, n_j)
    lows: np.ndarray
    highs: np.ndarray
    c: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.lows.shape[0]

    @property
    def barrier_degree(self) -> float:
        return sum(a.shape[0] for a in self.A0) + 2.0 * self.m

    def slack_blocks(self, z):
        """S_j = -(A0_j + sum z_i A_ji); None entries mark cone exits."""
        out = []
        for a0, a in zip(self.A0, self.A):
            f = a0 + np.tensordot(z, a, axes=(0, 0))
            out.append(-f)
        return out

    def cholesky(self, z):
        chols = []
        for s in self.slack_blocks(z):
            try:
                chols.append(np.linalg.cholesky(s))
            except np.linalg.LinAlgError:
                return None
        if np.any(z <= self.lows) or np.any(z >= self.highs):
            return None
        return chols

    def barrier_value(self, z, chols) -> float:
        val = 0.0
        for L in chols:
            val -= 2.0 * float(np.sum(np.log(np.diag(L))))
        val -= float(np.sum(np.log(self.highs - z)))
        val -= float(np.sum(np.log(z - self.lows)))
        return val

    def grad_hess(self, z, chols):
        m = self.m
        g = np.zeros(m)
        H = np.zeros((m, m))
        for L, a in zip(chols, self.A):
            t1 = np.linalg.solve(L, a)
            w = np.transpose(
                np.linalg.solve(L, np.transpose(t1, (0, 2, 1))), (0, 2, 1))
            g += np.trace(w, axis1=1, axis2=2)
            gmat = w.reshape(m, -1)
            H += gmat @ gmat.T
        hi = 1.0 / (self.highs - z)
        lo = 1.0 / (z - self.lows)
        g += hi - lo
        H[np.diag_indices(m)] += hi * hi + lo * lo
        return g, H

    def max_step(self, z, d, chols) -> float:
        alpha = np.inf
        for L, a in zip(chols, self.A):
            dmat = np.tensordot(d, a, axes=(0, 0))
            if not np.any(dmat):
                continue
            t1 = np.linalg.solve(L, dmat)
            msym = np.linalg.solve(L, t1.T).T
            lam = float(np.linalg.eigvalsh((msym + msym.T) / 2.0)[-1])
            if lam > 0:
                alpha = min(alpha, 1.0 / lam)
        pos = d > 0
        neg = d < 0
        if np.any(pos):
            alpha = min(alpha, float(np.min((self.highs[pos] - z[pos]) / d[pos])))
        if np.any(neg):
            alpha = min(alpha, float(np.min((self.lows[neg] - z[neg]) / d[neg])))
        return alpha

    def max_residual(self, z) -> float:
        worst = -np.inf
        for s in self.slack_blocks(z):
            if s.shape[0]:
                worst = max(worst, -float(np.linalg.eigvalsh(s)[0]))
        return worst


@dataclass
class _Trace:
    newton_steps: int = 0
    messages: list = field(default_factory=list)


def _newton_direction(H, g):
    base = np.maximum(1.0, np.diag(H))
    scale = 1.0
    for _ in range(4):
        try:
            L = np.linalg.cholesky(H + np.diag(RIDGE * scale * base))
            y = np.linalg.solve(L, -g)
            return np.linalg.solve(L.T, y)
        except np.linalg.LinAlgError:
            scale *= 1e4
    w, v = np.linalg.eigh((H + H.T) / 2.0)
    w = np.maximum(w, max(float(w[-1]), float(base.max())) * 1e-14)
    return -(v @ ((v.T @ g) / w))


def _center(cone: _Cone, z, mu, trace: _Trace, budget: int,
            stop_cb=None) -> tuple[np.ndarray, str]:
    """Newton-center ``c^T z / mu + barrier`` from a strictly feasible z."""
    for _ in range(INNER_MAX):
        if trace.newton_steps >= budget:
            return z, "exhausted"
        chols = cone.cholesky(z)
        if chols is None:
            return z, "lost_cone"  # should not happen; defensive
        g, H = cone.grad_hess(z, chols)
        if cone.c is not None:
            g = g + cone.c / mu
        d = _newton_direction(H, g)
        lam2 = float(-g @ d)
        if lam2 / 2.0 <= NEWTON_TOL:
            return z, "centered"
        step = min(1.0, 0.99 * cone.max_step(z, d, chols))
        f0 = cone.barrier_value(z, chols)
        if cone.c is not None:
            f0 += float(cone.c @ z) / mu
        gd = float(g @ d)
        accepted = False
        for _ in range(LINESEARCH_MAX):
            znew = z + step * d
            ch = cone.cholesky(znew)
            if ch is not None:
                fnew = cone.barrier_value(znew, ch)
                if cone.c is not None:
                    fnew += float(cone.c @ znew) / mu
                if fnew <= f0 + 0.01 * step * gd:
                    z = znew
                    accepted = True
                    break
            step *= 0.5
        trace.newton_steps += 1
        if not accepted:
            return z, "stalled"
        if stop_cb is not None and stop_cb(z):
            return z, "early"
    return z, "maxinner"


def _path_follow(cone: _Cone, z0, *, gap_tol, budget, trace,
                 stop_cb=None, mu0=1.0):
    """Decrease mu until the gap estimate mu * degree clears gap_tol."""
    z = z0.copy()
    mu = mu0
    nu = cone.barrier_degree
    while True:
        z, state = _center(cone, z, mu, trace, budget, stop_cb)
        if state in ("early", "exhausted", "lost_cone"):
            return z, state
        if stop_cb is not None and stop_cb(z):
            return z, "early"
        if mu * nu <= gap_tol:
            return z, "converged"
        if state == "stalled":
            # Line search cannot move at all; the gap estimate is only
            # trustworthy on the central path.
            return z, ("converged" if mu * nu <= gap_tol * 1e3 else "stalled")
        # Inexact centering ("maxinner") is tolerated: shrink mu and go on.
        mu *= MU_SHRINK


def _strip_zero_rows(A0s, As):
    """Remove rows/columns that are identically zero across a block.

    Constraints such as containment conditions with a multiplier of exactly
    one carry structurally zero rows; the PSD condition on the block is then
    equivalent to the one on the nonzero principal submatrix, and removing
    the zero rows restores a nonempty interior for the barrier.
    """
    outA0, outA, keeps = [], [], []
    for a0, a in zip(A0s, As):
        nz = np.abs(a0).max(axis=0) > 0.0
        if a.shape[0]:
            nz |= np.abs(a).max(axis=(0, 1)) > 0.0
            nz |= np.abs(a).max(axis=(0, 2)) > 0.0
        nz |= np.abs(a0).max(axis=1) > 0.0
        keep = np.where(nz)[0]
        keeps.append(keep)
        if keep.size == 0:
            outA0.append(np.zeros((0, 0)))
            outA.append(np.zeros((a.shape[0], 0, 0)))
        else:
            outA0.append(a0[np.ix_(keep, keep)])
            outA.append(a[:, keep][:, :, keep])
    return outA0, outA, keeps


def solve_sdp(A0s, As, c=None, *, x0=None, tol=1e-8, max_newton=4000,
              box_radius=1e9, verbose=False):
    """Entry point used by :func:`safeguard.lmi_engine.solve`.

    Returns ``(status, x, info)`` with status in ``{"feasible",
    "infeasible", "unknown"}``.  ``x`` is the best iterate (or ``None`` when
    nothing useful was produced).
    """
    A0s = [np.asarray(a, dtype=float) for a in A0s]
    As = [np.asarray(a, dtype=float) for a in As]
    m = As[0].shape[0] if As else (0 if x0 is None else len(x0))
    info: dict = {}

    if not A0s:
        x = np.zeros(m) if x0 is None else np.asarray(x0, dtype=float)
        if c is not None and np.any(np.asarray(c) != 0):
            return "unknown", x, {"message": "objective without constraints"}
        return "feasible", x, info

    # Normalize each block; drop structurally zero rows and empty blocks.
    A0n, An, _ = _strip_zero_rows(A0s, As)
    blocks = []
    for a0, a in zip(A0n, An):
        if a0.shape[0] == 0:
            continue
        scale = max(1.0, float(np.linalg.norm(a0)),
                    float(np.max(np.sqrt(np.sum(a * a, axis=(1, 2)))))
                    if a.shape[0] else 1.0)
        blocks.append((a0 / scale, a / scale))
    if not blocks:
        x = np.zeros(m) if x0 is None else np.asarray(x0, dtype=float)
        return "feasible", x, info

    if m == 0:
        worst = max(float(np.linalg.eigvalsh(a0)[-1]) for a0, _ in blocks)
        status = "feasible" if worst <= tol else "infeasible"
        return status, np.zeros(0), {"t_star": worst}

    cvec = None
    cscale = 1.0
    if c is not None:
        cvec = np.asarray(c, dtype=float)
        cscale = max(1.0, float(np.max(np.abs(cvec))))
        cvec = cvec / cscale

    trace = _Trace()
    x = np.zeros(m) if x0 is None else np.asarray(x0, dtype=float).copy()
    np.clip(x, -0.5 * box_radius, 0.5 * box_radius, out=x)

    feas_cone = _Cone([a0 for a0, _ in blocks], [a for _, a in blocks],
                      lows=np.full(m, -box_radius),
                      highs=np.full(m, box_radius))

    # ---- phase 1: find a strictly feasible point ---------------------------
    # With an objective, any strictly feasible warm start goes straight to
    # phase 2; for pure feasibility a shallow warm start is still deepened.
    start_depth = feas_cone.max_residual(x)
    if cvec is not None:
        needs_phase1 = start_depth >= -1e-12
    else:
        needs_phase1 = start_depth > -0.5 * DEPTH_STOP
    if needs_phase1:
        t0 = start_depth + 1.0
        p1 = _Cone(
            A0=[a0 for a0, _ in blocks],
            A=[np.concatenate([a, -np.eye(a.shape[1])[None]], axis=0)
               for _, a in blocks],
            lows=np.concatenate([np.full(m, -box_radius), [-T_CAP]]),
            highs=np.concatenate([np.full(m, box_radius), [t0 + 1.0]]),
            c=np.concatenate([np.zeros(m), [1.0]]),
        )
        z = np.concatenate([x, [t0]])

        def deep_enough(zz):
            return feas_cone.max_residual(zz[:m]) <= -DEPTH_STOP

        # A small initial mu biases the search toward descending the slack
        # before the barrier can wander along unconstrained directions.
        z, state = _path_follow(p1, z, gap_tol=min(tol, 1e-9),
                                budget=max_newton, trace=trace,
                                stop_cb=deep_enough, mu0=1e-2)
        x = z[:m]
        t_star = float(z[m])
        depth = feas_cone.max_residual(x)
        info.update(t_star=t_star, phase1_state=state,
                    normalized_depth=-depth, newton_steps=trace.newton_steps)
        if depth > 0.0:
            if state == "converged" and t_star > max(1e-7, 10.0 * tol):
                return "infeasible", x, info
            info["message"] = ("slack optimum is marginal" if state == "converged"
                               else f"phase 1 ended in state {state!r}")
            return "unknown", x, info
    else:
        info.update(phase1_state="warm_start",
                    normalized_depth=-start_depth)

    if cvec is None:
        info["newton_steps"] = trace.newton_steps
        return "feasible", x, info

    # ---- phase 2: follow the central path for the objective ----------------
    feas_cone.c = cvec
    unbounded = {"hit": False}

    def box_guard(zz):
        # Abort only when the objective itself is running away; iterates
        # merely wandering near the box along objective-neutral directions
        # are contained by the box barrier and handled by convergence.
        if (np.max(np.abs(zz)) >= 0.98 * box_radius
                and float(cvec @ zz) <= -1e-3 * box_radius):
            unbounded["hit"] = True
            return True
        return False

    z = x.copy()
    mu = 1.0
    nu = feas_cone.barrier_degree
    state = "converged"
    while True:
        z, state = _center(feas_cone, z, mu, trace, max_newton, box_guard)
        if state in ("early", "exhausted", "lost_cone", "stalled"):
            break
        obj = float(cvec @ z)
        if mu * nu <= tol * (1.0 + abs(obj)):
            break
        mu *= MU_SHRINK
    x = z
    info.update(newton_steps=trace.newton_steps, phase2_state=state,
                objective_scaled=float(cvec @ x) * cscale)
    if unbounded["hit"]:
        info["message"] = "objective appears unbounded (iterate reached box)"
        return "unknown", x, info
    if state in ("exhausted", "lost_cone"):
        info["message"] = f"phase 2 ended in state {state!r}"
        return "unknown", x, info
    if state == "stalled" and mu * nu > tol * 1e3 * (1.0 + abs(float(cvec @ x))):
        # Strictly feasible but off the central path: usable as a feasible
        # point, with no optimality claim.
        if feas_cone.max_residual(x) < 0.0:
            info["message"] = ("objective possibly suboptimal "
                               "(centering stalled)")
            return "feasible", x, info
        info["message"] = "phase 2 stalled before reaching the target gap"
        return "unknown", x, info
    return "feasible", x, info
