import logging

import numpy as np
import pytest

from safeguard import simkit, synth, verify
from safeguard.sysmodel import (AttackModel, Plant, PrimaryController,
                                SafeSet, SectorBound, Selection, SystemBundle)

logging.getLogger("safeguard").setLevel(logging.ERROR)


def expm(A):
    """Matrix exponential by scaling-and-squaring Taylor; plenty accurate
    for the small test matrices used here."""
    A = np.asarray(A, dtype=float)
    norm = float(np.linalg.norm(A, np.inf))
    s = max(0, int(np.ceil(np.log2(norm))) + 1) if norm > 0 else 0
    B = A / (2.0 ** s)
    E = np.eye(A.shape[0])
    T = np.eye(A.shape[0])
    for k in range(1, 25):
        T = T @ B / k
        E = E + T
    for _ in range(s):
        E = E @ E
    return E


def zoh_discretize(A, B, dt):
    """Exact zero-order-hold discretization of ``dx = A x + B u``."""
    n, m = A.shape[0], B.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A * dt
    aug[:n, n:] = B * dt
    big = expm(aug)
    return big[:n, :n], big[:n, n:]


def random_spd(rng, n, scale=1.0, cond=5.0):
    """Random symmetric positive definite matrix with bounded conditioning."""
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    eigs = scale * (1.0 + (cond - 1.0) * rng.random(n))
    return (q * eigs) @ q.T


def random_symmetric(rng, n, scale=1.0):
    a = rng.normal(size=(n, n)) * scale
    return (a + a.T) / 2.0


@pytest.fixture(scope="session")
def jj50():
    return simkit.josephson_case_study(50.0)


@pytest.fixture(scope="session")
def jj11():
    return simkit.josephson_case_study(11.0)


@pytest.fixture(scope="session")
def jj11_certificate(jj11):
    outcome = verify.verify_safety(jj11)
    assert outcome.found, "enlarged-safe-set verification must certify"
    return outcome.certificate


@pytest.fixture(scope="session")
def jj_synth(jj50):
    opts = synth.SynthOptions(alphas=(0.05, 0.05, 0.1, 0.99))
    return synth.synthesize_nonlinear(jj50, options=opts)


def double_integrator_bundle(safe_scale=0.05):
    """Linear test plant: double integrator, stabilizing static primary,
    bounded actuator attack, one protected measurement."""
    plant = Plant(A=[[0.0, 1.0], [0.0, 0.0]], G=np.zeros((2, 0)),
                  H=np.zeros((0, 2)), B=[[0.0], [1.0]], C=np.eye(2))
    primary = PrimaryController.static([[-1.0, -1.4]])
    return SystemBundle(
        plant=plant, primary=primary,
        selection=Selection(Cs=[[1.0, 0.0]], Eu=[[1.0]]),
        sector=SectorBound(S1=np.zeros((0, 0)), S2=np.zeros((0, 0)),
                           V=np.zeros((0, 0))),
        attack=AttackModel(Q1=np.zeros((2, 2)), Q2=np.zeros((2, 1)),
                           Q3=[[1.0]], act_channels=(0,), sense_channels=()),
        safe=SafeSet(safe_scale * np.eye(2)),
        name="double-integrator")


@pytest.fixture(scope="session")
def di_bundle():
    return double_integrator_bundle()


def scalar_decay_bundle(xi=0.01):
    """1-d plant ``dx = -x + a`` with |a| <= 1; analytic reach set [-1, 1]."""
    plant = Plant(A=[[-1.0]], G=np.zeros((1, 0)), H=np.zeros((0, 1)),
                  B=[[1.0]], C=[[1.0]])
    primary = PrimaryController.static([[0.0]])
    return SystemBundle(
        plant=plant, primary=primary,
        selection=Selection(Cs=[[1.0]], Eu=[[1.0]]),
        sector=SectorBound(S1=np.zeros((0, 0)), S2=np.zeros((0, 0)),
                           V=np.zeros((0, 0))),
        attack=AttackModel(Q1=np.zeros((1, 1)), Q2=np.zeros((1, 1)),
                           Q3=[[1.0]], act_channels=(0,), sense_channels=()),
        safe=SafeSet([[xi]]), name="scalar-decay")


def random_bundle_dims(rng, n_p=3, n_1=2, q_p=1, q_1=1, n_u=2, n_y=2,
                       n_C=1, n_E=1, with_attack=True):
    """Random dimension-consistent bundle for identity and assembly tests."""
    h_p, h_1 = q_p, q_1
    plant = Plant(A=rng.normal(size=(n_p, n_p)),
                  G=rng.normal(size=(n_p, q_p)),
                  H=rng.normal(size=(h_p, n_p)),
                  B=rng.normal(size=(n_p, n_u)),
                  C=rng.normal(size=(n_y, n_p)))
    primary = PrimaryController(A=rng.normal(size=(n_1, n_1)),
                                G=rng.normal(size=(n_1, q_1)),
                                H=rng.normal(size=(h_1, n_1)),
                                B=rng.normal(size=(n_1, n_y)),
                                C=rng.normal(size=(n_u, n_1)),
                                D=rng.normal(size=(n_u, n_y)))
    selection = Selection(Cs=rng.normal(size=(n_C, n_y)),
                          Eu=rng.normal(size=(n_u, n_E)))
    q, h = q_p + q_1, h_p + h_1
    S1 = rng.normal(size=(q, h))
    S2 = S1 + np.eye(q, h) + 0.2 * rng.normal(size=(q, h))
    V = random_spd(rng, q)
    nz = n_p + n_1
    na = n_u + n_y
    if with_attack:
        Q3 = random_spd(rng, na)
        Q2 = 0.3 * rng.normal(size=(nz, na))
        W = random_spd(rng, nz, scale=0.1)
        Q1 = Q2 @ np.linalg.inv(Q3) @ Q2.T - W  # growth matrix equals W >= 0
    else:
        Q1, Q2, Q3 = np.zeros((nz, nz)), np.zeros((nz, na)), np.eye(na)
    return SystemBundle(
        plant=plant, primary=primary, selection=selection,
        sector=SectorBound(S1=S1, S2=S2, V=V),
        attack=AttackModel(Q1=Q1, Q2=Q2, Q3=Q3),
        safe=SafeSet(random_spd(rng, nz)))
