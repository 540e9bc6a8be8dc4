import logging

import numpy as np
import pytest

from safeguard import lmi_engine, matcore, simkit, synth
from safeguard.sysmodel import (SecondaryController, assemble_closed_loop,
                                gain_factorization, hat_matrices)
from safeguard.synth import (Eta, SynthesisError, SynthOptions,
                             audit_synthesis_point, build_thm1_problem,
                             build_thm2_problem, change_of_variables,
                             complete_P, recover_controller, solve_K_given_P,
                             synthesize_l2, synthesize_linear,
                             synthesize_nonlinear, worst_attack)

from conftest import (double_integrator_bundle, random_bundle_dims,
                      random_spd, random_symmetric, scalar_decay_bundle)

logging.disable(logging.WARNING)

PAPER_ALPHAS = (0.05, 0.05, 0.1, 0.99)


def coupled_pair(rng, n, gap_scale=1.0):
    """Random (X, Y) with X - Y^{-1} strictly positive definite."""
    Y = random_spd(rng, n, scale=1.0 + rng.random() * 3)
    X = np.linalg.inv(Y) + gap_scale * random_spd(rng, n, scale=0.5)
    return X, Y


class TestEliminationIdentity:
    """The Schur-expanded eliminated condition equals its structured form."""

    def test_delta_identity_random(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            b = random_bundle_dims(rng, n_p=int(rng.integers(1, 4)),
                                   n_1=int(rng.integers(0, 3)))
            Ahat, Bhat, Chat = hat_matrices(b.plant, b.primary, b.selection)
            G, H = b.stacked_G(), b.stacked_H()
            B1 = b.attack_input()
            S1, S2, V = b.sector.S1, b.sector.S2, b.sector.V
            Q1, Q2, Q3 = b.attack.Q1, b.attack.Q2, b.attack.Q3
            nz = Ahat.shape[0]
            a1 = float(rng.uniform(0.01, 1.0))
            a2 = float(rng.uniform(0.05, 1.0))
            a3 = float(rng.uniform(0.05, 1.0))
            X = random_spd(rng, nz)
            Q3inv = np.linalg.inv(Q3)
            Vinv = np.linalg.inv(V)
            # direct Schur expansion of the eliminated blocks
            lam1 = (matcore.he(Ahat @ X)
                    - X @ (a3 * matcore.he(H.T @ S1.T @ V @ S2 @ H)
                           + a2 * Q1) @ X + a1 * X)
            lam2bar = G + a3 * X @ H.T @ (S1 + S2).T @ V
            lam3 = B1 - a2 * X @ Q2
            delta_direct = (lam1
                            + lam2bar @ Vinv @ lam2bar.T / (2.0 * a3)
                            + lam3 @ Q3inv @ lam3.T / a2)
            # structured form: linear part plus the quadratic kernel
            M_lin = (Ahat + 0.5 * G @ (S1 + S2) @ H - B1 @ Q3inv @ Q2.T
                     + (a1 / 2.0) * np.eye(nz))
            C0 = G @ Vinv @ G.T / (2.0 * a3) + B1 @ Q3inv @ B1.T / a2
            D = S2 - S1
            kernel = (a3 / 2.0) * H.T @ D.T @ V @ D @ H \
                + a2 * (Q2 @ Q3inv @ Q2.T - Q1)
            delta_structured = matcore.he(M_lin @ X) + C0 + X @ kernel @ X
            scale = max(1.0, np.abs(delta_direct).max())
            assert np.abs(delta_direct - delta_structured).max() \
                <= 1e-9 * scale

    def test_problem_schur_equivalence_at_random_point(self, jj50):
        # evaluating the linearized x-side condition at a random assignment
        # matches the hand-assembled block matrix
        rng = np.random.default_rng(1)
        prob = build_thm1_problem(jj50, PAPER_ALPHAS)
        X = random_spd(rng, 3, scale=0.01)
        Y = random_spd(rng, 3, scale=100.0)
        names = {v.name: v for v in prob.variables}
        val = lmi_engine.evaluate(prob.constraints[0].expr,
                                  {names["X"]: X, names["Y"]: Y})
        audit = audit_synthesis_point(jj50, X, Y, PAPER_ALPHAS)
        # strip the embedded margin before comparing to the raw audit matrix
        margin = 1e-7 * (1.0 + audit["x_side"]["const_norm"])
        assert val.shape == (3, 3)
        assert matcore.max_eig(val) == pytest.approx(
            audit["x_side"]["max_eig"] + margin, abs=1e-6)


class TestCompletion:
    def test_scalar_pi_completion(self):
        P, N, M = complete_P(np.array([[2.0]]), np.array([[1.0]]), mode="pi")
        assert np.linalg.inv(P)[0, 0] == pytest.approx(2.0, abs=1e-12)

    def test_recipe_matches_case_study_shape(self):
        rng = np.random.default_rng(2)
        X, Y = coupled_pair(rng, 3)
        P, N, M = complete_P(X, Y, mode="recipe")
        assert np.array_equal(N, np.eye(3))
        expected = matcore.block_sym([[Y, np.eye(3)],
                                      [np.eye(3) + np.linalg.inv(Y)]])
        assert np.allclose(P, expected)
        assert matcore.is_pd(P, 0.0)

    def test_pi_completion_inverse_block_property(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(1, 5))
            X, Y = coupled_pair(rng, n)
            P, N, M = complete_P(X, Y, mode="pi")
            assert matcore.min_eig(P) > 0
            lead = np.linalg.inv(P)[:n, :n]
            assert np.abs(lead - X).max() <= 1e-8 * (1.0 + np.abs(X).max())
            assert np.allclose(M @ N.T, np.eye(n) - X @ Y, atol=1e-9)

    def test_singular_coupling_rejected(self):
        X = np.eye(2)
        Y = np.eye(2)  # X - Y^{-1} = 0 -> no invertible factorization
        with pytest.raises(SynthesisError, match="singular"):
            complete_P(X, Y)


class TestGainSolve:
    def test_static_only_order_zero(self):
        # n2 = 0 collapses the gain to the static block; an invariance
        # certificate of the primary loop keeps the zero static gain in the
        # feasible set, so the solve must succeed and shrink dimensions.
        from safeguard import verify
        from safeguard.sysmodel import (AttackModel, Plant,
                                        PrimaryController, SafeSet,
                                        SectorBound, Selection, SystemBundle)
        bundle = SystemBundle(
            plant=Plant(A=[[-1.0]], G=[[1.0]], H=[[1.0]], B=[[1.0]],
                        C=[[1.0]]),
            primary=PrimaryController.static([[0.0]]),
            selection=Selection(Cs=[[1.0]], Eu=[[1.0]]),
            sector=SectorBound(S1=[[0.0]], S2=[[0.1]], V=[[1.0]]),
            attack=AttackModel(Q1=np.zeros((1, 1)), Q2=np.zeros((1, 1)),
                               Q3=[[1.0]], act_channels=(0,),
                               sense_channels=()),
            safe=SafeSet([[0.2]]))
        outcome = verify.verify_safety(bundle)
        assert outcome.found
        cert = outcome.certificate
        ctrl, info = solve_K_given_P(cert.P1, bundle, 0, cert.alphas)
        assert ctrl.order == 0
        assert ctrl.A.shape == (0, 0)
        assert ctrl.D.shape == (1, 1)

    def test_projection_guarantee_small_instances(self):
        # when both projected conditions hold, a gain exists and certifies;
        # when one fails, the gain inequality is infeasible
        rng = np.random.default_rng(4)
        feasible_seen = infeasible_seen = 0
        for _ in range(200):
            m = int(rng.integers(2, 9))
            U = rng.normal(size=(int(rng.integers(1, m + 1)), m))
            Vm = rng.normal(size=(int(rng.integers(1, m + 1)), m))
            psi = random_symmetric(rng, m, scale=1.0)
            psi -= (0.5 + rng.random()) * np.eye(m) * rng.integers(0, 2)
            Wu = matcore.null_space_basis(U)
            Wv = matcore.null_space_basis(Vm)
            cond_u = (Wu.shape[1] == 0
                      or matcore.max_eig(Wu.T @ psi @ Wu) < -1e-9)
            cond_v = (Wv.shape[1] == 0
                      or matcore.max_eig(Wv.T @ psi @ Wv) < -1e-9)
            prob = lmi_engine.LmiProblem()
            theta = prob.rectangular("theta", Vm.shape[0], U.shape[0])
            expr = lmi_engine.MatExpr.constant(psi)
            expr.term(theta, left=Vm.T, right=U, coeff=2.0)
            prob.require_neg_semidef(lmi_engine.AffineExpr.wrap(expr),
                                     "gain", strict=True, margin=1e-7)
            out = lmi_engine.solve(prob)
            if cond_u and cond_v:
                feasible_seen += 1
                assert out.feasible, "projected conditions hold -> solvable"
                tv = out.assignment[theta]
                closed = psi + Vm.T @ tv @ U + U.T @ tv.T @ Vm
                assert matcore.max_eig(closed) <= -1e-7 + 1e-9
            else:
                infeasible_seen += 1
                assert out.status in ("infeasible", "unknown")
        assert feasible_seen >= 20
        assert infeasible_seen >= 20


class TestNonlinearPipeline:
    def test_case_study_end_to_end(self, jj50, jj_synth):
        res = jj_synth
        assert res.contained
        assert res.residuals["k_lmi_max_eig"] <= 1e-6
        assert res.residuals["p_min_eig"] > 0
        assert matcore.min_eig(np.linalg.inv(res.X) - jj50.safe.Xi) >= -1e-6
        # dimensions match the reference design: order-3 controller,
        # one protected measurement, one injected input -> 4x4 gain
        assert res.controller.gain().shape == (4, 4)

    def test_before_after_headline_pair(self, jj50, jj_synth):
        from safeguard import verify
        outcome = verify.verify_safety(jj50)
        assert not outcome.found  # primary alone cannot be certified
        assert jj_synth.contained  # secondary loop can

    def test_monte_carlo_containment(self, jj50, jj_synth):
        loop = assemble_closed_loop(jj50.plant, jj50.primary,
                                    jj_synth.controller, jj50.selection,
                                    attack_input=jj50.attack_input())
        mc = simkit.monte_carlo_invariance(loop, jj50.phi, jj50.attack,
                                           jj_synth.P, n_traj=100,
                                           horizon=10.0, dt=1e-3, seed=7)
        assert mc["max_v"] <= 1.0 + 1e-3

    def test_linear_sector_rejected(self, di_bundle):
        with pytest.raises(SynthesisError, match="linear route"):
            build_thm1_problem(di_bundle, PAPER_ALPHAS)

    def test_nonpositive_multipliers_rejected(self, jj50):
        with pytest.raises(SynthesisError, match="strictly"):
            build_thm1_problem(jj50, (0.05, 0.0, 0.1, 0.99))

    def test_scalar_toy_with_state_growth(self):
        # 1-d sector-bounded plant with a gently state-dependent budget
        from safeguard.sysmodel import (AttackModel, Plant,
                                        PrimaryController, SafeSet,
                                        SectorBound, Selection, SystemBundle)
        plant = Plant(A=[[-1.0]], G=[[1.0]], H=[[1.0]], B=[[1.0]],
                      C=[[1.0]])
        bundle = SystemBundle(
            plant=plant, primary=PrimaryController.static([[0.0]]),
            selection=Selection(Cs=[[1.0]], Eu=[[1.0]]),
            sector=SectorBound(S1=[[0.0]], S2=[[0.1]], V=[[1.0]]),
            attack=AttackModel(Q1=[[-0.01]], Q2=[[0.0]], Q3=[[1.0]],
                               act_channels=(0,), sense_channels=()),
            safe=SafeSet([[0.2]]),
            phi=simkit.NonlinearityFn(lambda w: 0.1 * np.sin(w), 1))
        res = synthesize_nonlinear(bundle, options=SynthOptions(
            grid=((0.5, 0.5, 0.5, 0.99), (1.0, 0.5, 0.5, 0.99))))
        assert res.contained
        loop = assemble_closed_loop(bundle.plant, bundle.primary,
                                    res.controller, bundle.selection,
                                    attack_input=bundle.attack_input())
        mc = simkit.monte_carlo_invariance(loop, bundle.phi, bundle.attack,
                                           res.P, n_traj=200, horizon=5.0,
                                           dt=1e-3, seed=13)
        assert mc["max_v"] <= 1.0 + 1e-3


class TestChangeOfVariables:
    def _random_instance(self, rng, nz=None):
        b = random_bundle_dims(rng, n_p=int(rng.integers(1, 4)),
                               n_1=int(rng.integers(0, 3)),
                               with_attack=False)
        Ahat, Bhat, Chat = hat_matrices(b.plant, b.primary, b.selection)
        n = Ahat.shape[0]
        X, Y = coupled_pair(rng, n)
        N = rng.normal(size=(n, n)) + 3.0 * np.eye(n)
        M = (np.eye(n) - X @ Y) @ np.linalg.inv(N).T
        ctrl = SecondaryController(
            A=rng.normal(size=(n, n)), B=rng.normal(size=(n, b.selection.n_meas)),
            C=rng.normal(size=(b.selection.n_secondary_inputs, n)),
            D=rng.normal(size=(b.selection.n_secondary_inputs,
                               b.selection.n_meas)))
        return b, Ahat, Bhat, Chat, X, Y, N, M, ctrl

    def test_congruence_identities(self):
        # forward map then the transformed blocks equal the congruence of
        # the closed loop, for 30 random instances
        rng = np.random.default_rng(5)
        for _ in range(30):
            b, Ahat, Bhat, Chat, X, Y, N, M, ctrl = self._random_instance(rng)
            n = Ahat.shape[0]
            eta = change_of_variables(ctrl, X, Y, N, M, Ahat, Bhat, Chat)
            loop = assemble_closed_loop(b.plant, b.primary, ctrl, b.selection)
            Ytil = matcore.as_symmetric(-N.T @ X @ np.linalg.inv(M.T),
                                        tol=1e-5)
            P = matcore.block_sym([[Y, N], [Ytil]])
            Pi1 = matcore.block([[X, np.eye(n)], [M.T, np.zeros((n, n))]])
            Pi2 = matcore.block([[np.eye(n), Y], [np.zeros((n, n)), N.T]])
            assert np.allclose(P @ Pi1, Pi2, atol=1e-8 * (1 + np.abs(P).max()))
            A_eta = matcore.block([
                [Ahat @ X + Bhat @ eta.C, Ahat + Bhat @ eta.D @ Chat],
                [eta.A, Y @ Ahat + eta.B @ Chat]])
            target = Pi1.T @ P @ loop.A @ Pi1
            scale = 1.0 + np.abs(target).max()
            assert np.abs(A_eta - target).max() <= 1e-8 * scale
            B1 = loop.B[:n]
            B_eta = np.vstack([B1, Y @ B1])
            targetB = Pi1.T @ P @ loop.B
            assert np.abs(B_eta - targetB).max() <= 1e-8 * (1 + np.abs(targetB).max())

    def test_recovery_round_trip(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            b, Ahat, Bhat, Chat, X, Y, N, M, ctrl = self._random_instance(rng)
            eta = change_of_variables(ctrl, X, Y, N, M, Ahat, Bhat, Chat)
            back = recover_controller(eta, N, M, Ahat, Bhat, Chat)
            for got, want in ((back.A, ctrl.A), (back.B, ctrl.B),
                              (back.C, ctrl.C), (back.D, ctrl.D)):
                assert np.abs(got - want).max() <= 1e-8 * (1 + np.abs(want).max())
            # and forward again reproduces eta
            eta2 = change_of_variables(back, X, Y, N, M, Ahat, Bhat, Chat)
            for got, want in ((eta2.A, eta.A), (eta2.B, eta.B),
                              (eta2.C, eta.C), (eta2.D, eta.D)):
                assert np.abs(got - want).max() <= 1e-8 * (1 + np.abs(want).max())

    def test_zero_controller_fixed_point(self):
        rng = np.random.default_rng(7)
        b, Ahat, Bhat, Chat, X, Y, N, M, _ = self._random_instance(rng)
        n = Ahat.shape[0]
        eta = Eta(X=X, Y=Y, A=Y @ Ahat @ X,
                  B=np.zeros((n, b.selection.n_meas)),
                  C=np.zeros((b.selection.n_secondary_inputs, n)),
                  D=np.zeros((b.selection.n_secondary_inputs,
                              b.selection.n_meas)))
        back = recover_controller(eta, N, M, Ahat, Bhat, Chat)
        assert np.abs(back.D).max() <= 1e-10
        assert np.abs(back.C).max() <= 1e-8 * (1 + np.abs(Y @ Ahat @ X).max())
        assert np.abs(back.B).max() <= 1e-10


class TestThm2Structure:
    def test_zero_new_variables_block(self, di_bundle):
        Ahat, Bhat, Chat, B1 = synth._linear_preconditions(di_bundle)
        prob, vars_ = build_thm2_problem(Ahat, Bhat, Chat, B1,
                                         di_bundle.attack.Q3,
                                         di_bundle.safe.Xi, 0.1, 0.99)
        rng = np.random.default_rng(8)
        X = random_spd(rng, 2)
        Y = random_spd(rng, 2)
        asn = {vars_["X"]: X, vars_["Y"]: Y,
               vars_["A"]: np.zeros((2, 2)), vars_["B"]: np.zeros((2, 1)),
               vars_["C"]: np.zeros((1, 2)), vars_["D"]: np.zeros((1, 1)),
               vars_["alpha2"]: 0.0}
        val = lmi_engine.evaluate(prob.constraints[0].expr, asn)
        a1 = 0.1
        # with all new variables zero: He(A(eta)) has blocks He(AX), A, He(YA)
        top = matcore.he(Ahat @ X) + a1 * X
        mid = Ahat + a1 * np.eye(2)
        bot = matcore.he(Y @ Ahat) + a1 * Y
        assert np.allclose(val[:2, :2], top, atol=1e-12)
        assert np.allclose(val[:2, 2:4], mid, atol=1e-12)
        assert np.allclose(val[2:4, 2:4], bot, atol=1e-12)
        assert np.allclose(val[:2, 4:5], B1, atol=1e-12)
        assert np.allclose(val[2:4, 4:5], Y @ B1, atol=1e-12)


class TestLinearPipeline:
    def test_double_integrator_end_to_end(self, di_bundle):
        res = synthesize_linear(di_bundle,
                                SynthOptions(grid=((0.1, 0.99),)))
        assert res.contained
        assert res.residuals["k_lmi_max_eig"] <= 1e-6
        loop = assemble_closed_loop(di_bundle.plant, di_bundle.primary,
                                    res.controller, di_bundle.selection,
                                    attack_input=di_bundle.attack_input())
        mc = simkit.monte_carlo_invariance(loop, None, di_bundle.attack,
                                           res.P, n_traj=200, horizon=10.0,
                                           dt=1e-3, seed=5)
        assert mc["max_v"] <= 1.0 + 1e-3

    def test_stable_attack_free_plant_needs_no_injection(self):
        # with almost no attack energy and a stable plant, the synthesized
        # secondary effectively injects nothing (its output path vanishes)
        bundle = scalar_decay_bundle(xi=0.5)
        import dataclasses
        from safeguard.sysmodel import AttackModel
        quiet = dataclasses.replace(
            bundle, attack=AttackModel(Q1=np.zeros((1, 1)),
                                       Q2=np.zeros((1, 1)), Q3=[[1e4]],
                                       act_channels=(0,), sense_channels=()))
        res = synthesize_linear(quiet, SynthOptions(grid=((0.5, 0.99),)))
        assert res.contained
        assert res.residuals["k_lmi_max_eig"] <= 1e-8
        assert abs(res.controller.D).max() <= 1e-9
        assert np.abs(res.controller.C).max() <= 1e-9

    def test_nonlinear_bundle_rejected(self, jj50):
        with pytest.raises(SynthesisError, match="S1 == S2"):
            synthesize_linear(jj50)


class TestWorstAttack:
    def test_scalar_analytic_bound(self):
        # dx = -x + a with P1 = Xi = 1: the boundary condition forces the
        # attack weight to at least one.
        bundle = scalar_decay_bundle(xi=1.0)
        result = worst_attack(bundle, mode="verify")
        assert result.Q3[0, 0] == pytest.approx(1.0, abs=1e-3)
        assert result.reverified

    def test_trace_bound_inequality(self):
        # det(R)^(1/2) <= (1/sqrt(n)^n) Tr(R)^(n/2), zero violations
        rng = np.random.default_rng(9)
        for _ in range(1000):
            n = int(rng.integers(1, 6))
            R = random_spd(rng, n, scale=rng.random() * 4 + 0.2)
            # the inequality is tight exactly at multiples of the identity
            # (n = 1 always); the epsilon absorbs only the LU round-off
            # inside det(), not any mathematical slack
            assert np.linalg.det(R) <= (np.trace(R) ** n / float(n) ** n) \
                * (1.0 + 1e-12)

    def test_synthesize_mode_reverifies(self, di_bundle):
        result = worst_attack(di_bundle, mode="synthesize",
                              grid=((0.5, 0.5, 0.99),))
        assert result.trace > 0
        assert result.reverified


class TestOptimize:
    def test_binding_trace_floor(self):
        # engine-level: min trace(X) subject to X >= X0 lands on the floor
        rng = np.random.default_rng(10)
        X0 = random_spd(rng, 3)
        prob = lmi_engine.LmiProblem()
        X = prob.symmetric("X", 3)
        floor = lmi_engine.AffineExpr(3, const=X0)
        floor.term(X, coeff=-1.0)
        prob.require_neg_semidef(floor, "floor")
        prob.minimize({X: np.eye(3)})
        out = lmi_engine.solve(prob)
        assert out.feasible
        assert np.trace(out.assignment[X]) == pytest.approx(
            np.trace(X0), rel=1e-5)

    def test_objective_dominance_and_volume_ratio(self, di_bundle):
        opts = SynthOptions(grid=((0.1, 0.99),))
        small = synth.optimize_rpi(di_bundle, "min-trace-X", opts)
        big = synth.optimize_rpi(di_bundle, "max-logdet-X",
                                 SynthOptions(grid=((0.1, 0.99),)))
        ld_small = np.linalg.slogdet(small.X)[1]
        ld_big = np.linalg.slogdet(big.X)[1]
        assert ld_big >= ld_small - 1e-6
        assert big.info["volume_proxy"] >= small.info["volume_proxy"]
        assert small.contained and big.contained


class TestPaperPointAudit:
    X_PRINTED = np.array([[0.0122, -0.0035, -0.0002],
                          [-0.0035, 0.0140, -0.0005],
                          [-0.0002, -0.0005, 0.0152]])
    Y_PRINTED = np.array([[573.0413, 173.3292, -61.6569],
                          [173.3292, 173.3396, -0.5772],
                          [-61.6569, -0.5772, 509.5987]])

    def test_printed_solution_passes_soft_tolerance(self, jj50):
        audit = audit_synthesis_point(jj50, self.X_PRINTED, self.Y_PRINTED,
                                      PAPER_ALPHAS)
        for name in ("x_side", "y_side", "containment", "coupling"):
            entry = audit[name]
            assert entry["max_eig"] <= entry["soft_tol"], (name, entry)

    def test_corrupted_point_fails(self, jj50):
        bad = self.X_PRINTED.copy()
        bad[0, 0] = -bad[0, 0]
        audit = audit_synthesis_point(jj50, bad, self.Y_PRINTED, PAPER_ALPHAS)
        assert not audit["coupling"]["pass_soft"] \
            or not audit["containment"]["pass_soft"] \
            or not audit["x_side"]["pass_soft"]


class TestL2:
    def test_certified_gamma_bounds_empirical(self, di_bundle):
        from conftest import zoh_discretize
        res = synthesize_l2(di_bundle, SynthOptions(grid=((0.1, 0.99),),
                                                    spectral_cap=None))
        assert res.gamma is not None and res.gamma > 0
        assert res.residuals["l2_max_eig"] <= 1e-8
        loop = assemble_closed_loop(di_bundle.plant, di_bundle.primary,
                                    res.controller, di_bundle.selection,
                                    attack_input=di_bundle.attack_input())
        Cmat = np.hstack([res.controller.D @ np.array([[1.0, 0.0]]),
                          res.controller.C])
        # exact discretization: the loop may be stiff at the gain optimum
        dt, T = 1e-3, 12.0
        steps = int(T / dt)
        Ad, Bd = zoh_discretize(loop.A, loop.B, dt)
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(30):
            a = np.zeros(steps)
            tburst = int(rng.integers(1000, 4000))
            tt = np.arange(tburst) * dt
            a[:tburst] = np.sin(2 * np.pi * rng.uniform(0.05, 2.0) * tt) \
                * rng.uniform(0.2, 1.0)
            x = np.zeros(loop.A.shape[0])
            energy_in = float(np.sum(a ** 2)) * dt
            energy_out = 0.0
            for k in range(steps):
                u_s = Cmat @ x
                energy_out += float(u_s @ u_s) * dt
                x = Ad @ x + Bd[:, 0] * a[k]
            if energy_in > 0:
                worst = max(worst, np.sqrt(energy_out / energy_in))
        assert worst <= res.gamma * (1.0 + 1e-3)

    def test_gamma_monotone_in_safe_set(self, di_bundle):
        import dataclasses
        gammas = []
        for scale in (0.2, 0.1, 0.05, 0.02, 0.01):
            from safeguard.sysmodel import SafeSet
            b = dataclasses.replace(di_bundle,
                                    safe=SafeSet(scale * np.eye(2)))
            res = synthesize_l2(b, SynthOptions(grid=((0.1, 0.99),),
                                                spectral_cap=None))
            gammas.append(res.gamma)
        # looser safe set (smaller scale) never needs a larger gain bound
        for a, b in zip(gammas, gammas[1:]):
            assert b <= a * (1.0 + 5e-2)
