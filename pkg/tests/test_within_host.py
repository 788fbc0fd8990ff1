import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import immunoepi.within_host as wh
from immunoepi.numerics import IntegratorSpec, RootBracket, find_root

from conftest import REFERENCE_WITHIN, random_within

GAMMA_FOLD_REF = 1.5811388300841898
GAMMA_HOPF_REF = 0.9641582450344705
W_FOLD_REF = 3.6037961002806327  # (Gamma_fold - gamma) / delta at delta = 0.3

positive = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False)


class TestRhsFull:
    def test_infection_free_state_is_stationary(self, paper_within):
        p = paper_within
        out = wh.rhs_full((p.Lambda / p.mu, 0.0, 0.0), p)
        assert np.allclose(out, 0.0, atol=1e-14)

    def test_hand_evaluated_point(self, paper_within):
        # Lambda - mu T - alpha P^2 T = 1 - 0.05 - 0.405        = 0.545
        # alpha P^2 T - gamma P - delta P W = 0.405-0.45-0.243  = -0.288
        # epsilon (kappa P - c W) = 0.01 (0.9 - 0.45)           = +0.0045
        out = wh.rhs_full((0.5, 0.9, 0.9), paper_within)
        assert out == pytest.approx([0.545, -0.288, 0.0045], abs=1e-12)

    @given(T=positive, W=positive)
    def test_zero_load_is_invariant(self, paper_within, T, W):
        out = wh.rhs_full((T, 0.0, W), paper_within)
        assert out[1] == 0.0


class TestFastEquilibria:
    def test_reference_pair_at_frozen_status(self, paper_within):
        eq = wh.equilibria_fast(paper_within, 0.9)
        assert eq.exists
        T_hi, P_hi = eq.upper
        _, P_lo = eq.lower
        assert P_hi == pytest.approx(1.216498130886193, abs=1e-12)
        assert P_lo == pytest.approx(0.08220316781510556, abs=1e-12)
        assert T_hi == pytest.approx(0.632964392176313, abs=1e-12)

    def test_pair_disappears_at_high_status(self, paper_within):
        eq = wh.equilibria_fast(paper_within, 50.0)
        assert not eq.exists
        assert eq.lower is None and eq.upper is None
        assert eq.trivial == (10.0, 0.0)

    def test_double_root_at_exact_threshold(self, paper_within):
        # Lambda = 2*Gamma*sqrt(mu/alpha) makes the discriminant vanish
        W_star = (GAMMA_FOLD_REF - paper_within.gamma) / paper_within.delta
        eq = wh.equilibria_fast(paper_within, W_star)
        assert eq.exists
        assert eq.lower[1] == pytest.approx(eq.upper[1], abs=1e-7)

    def test_negative_status_rejected(self, paper_within):
        with pytest.raises(ValueError):
            wh.equilibria_fast(paper_within, -0.1)

    @given(W=st.floats(min_value=0.0, max_value=10.0))
    def test_returned_equilibria_are_stationary(self, paper_within, W):
        eq = wh.equilibria_fast(paper_within, W)
        assert np.allclose(wh.fast_rhs(eq.trivial, paper_within, W), 0.0, atol=1e-10)
        if eq.exists:
            for point in (eq.lower, eq.upper):
                res = wh.fast_rhs(point, paper_within, W)
                assert np.max(np.abs(res)) < 1e-10


class TestJacobianFast:
    def test_diagonal_at_infection_free_state(self, paper_within):
        p = paper_within
        J = wh.jacobian_fast((p.Lambda / p.mu, 0.0), p, 0.9)
        assert J[0, 1] == 0.0 and J[1, 0] == 0.0
        assert J[0, 0] == pytest.approx(-p.mu)
        assert J[1, 1] == pytest.approx(-(p.gamma + p.delta * 0.9))
        assert np.all(np.linalg.eigvals(J) < 0.0)

    def test_zero_load_column_structure(self, paper_within):
        J = wh.jacobian_fast((1.0, 0.0), paper_within, 0.0)
        assert np.allclose(J, np.diag([-0.1, -0.5]))

    def test_matches_finite_differences(self, paper_within):
        rng = np.random.default_rng(7)
        for _ in range(50):
            T, P = rng.uniform(0.05, 3.0, size=2)
            W = rng.uniform(0.0, 3.0)
            J = wh.jacobian_fast((T, P), paper_within, W)
            h = 1e-6
            fd = np.empty((2, 2))
            for j, dv in enumerate(((h, 0.0), (0.0, h))):
                up = wh.fast_rhs((T + dv[0], P + dv[1]), paper_within, W)
                dn = wh.fast_rhs((T - dv[0], P - dv[1]), paper_within, W)
                fd[:, j] = (up - dn) / (2 * h)
            assert np.allclose(J, fd, rtol=1e-5, atol=1e-7)


class TestCriticalLoci:
    def test_fold_rate_closed_form(self, paper_within):
        loci = wh.critical_loci(paper_within)
        assert loci.Gamma_fold == pytest.approx(GAMMA_FOLD_REF, abs=1e-12)
        assert loci.delta_fold(0.9) == pytest.approx(1.201265366760211, abs=1e-9)
        assert loci.W_fold(0.3) == pytest.approx(W_FOLD_REF, abs=1e-9)

    def test_oscillation_onset_roots(self, paper_within):
        loci = wh.critical_loci(paper_within)
        valid = [h for h in loci.hopf if h.valid]
        assert len(valid) == 1
        assert valid[0].Gamma == pytest.approx(GAMMA_HOPF_REF, abs=1e-9)
        assert loci.delta_hopf(0.9) == pytest.approx([0.5157313833716338], abs=1e-9)
        assert loci.W_hopf(0.3) == pytest.approx([1.5471941501149016], abs=1e-9)

    def test_trace_vanishes_at_onset_roots(self, paper_within):
        p = paper_within
        loci = wh.critical_loci(p)
        for root in loci.hopf:
            P_star = root.Gamma**2 / (p.alpha * p.Lambda)
            T_star = root.Gamma / (p.alpha * P_star)
            W = (root.Gamma - p.gamma) / p.delta
            if W <= 0:
                continue
            J = wh.jacobian_fast((T_star, P_star), p, W)
            assert abs(np.trace(J)) < 1e-8
            if root.valid:
                assert np.linalg.det(J) > 0.0

    def test_gate_flags_are_consistent(self, paper_within):
        for root in wh.critical_loci(paper_within).hopf:
            if root.det_gate_strict:
                assert root.det_gate_weak


class TestSlowManifold:
    def test_curve_values(self, paper_within):
        assert wh.slow_manifold_W(1.0, paper_within) == pytest.approx(
            1.3636363636363635, abs=1e-12
        )
        assert wh.slow_manifold_W(0.0, paper_within) == pytest.approx(
            -paper_within.gamma / paper_within.delta
        )

    def test_tip_location_and_height(self, paper_within):
        P_tip, W_max = wh.manifold_tip(paper_within)
        assert P_tip == pytest.approx(0.31622776601683794, abs=1e-12)
        assert W_max == pytest.approx(W_FOLD_REF, abs=1e-12)

    def test_tip_height_equals_fold_status(self, paper_within):
        # the manifold maximum and the fold locus are the same number
        loci = wh.critical_loci(paper_within)
        _, W_max = wh.manifold_tip(paper_within)
        assert abs(W_max - loci.W_fold(paper_within.delta)) < 1e-10

    def test_nullcline(self, paper_within):
        assert wh.w_nullcline(0.0, paper_within) == 0.0
        assert wh.w_nullcline(0.5, paper_within) == pytest.approx(1.0)

    def test_nullcline_meets_upper_branch(self, paper_within):
        p = paper_within

        def gap(P):
            return wh.w_nullcline(P, p) - wh.slow_manifold_W(P, p)

        P_cross = find_root(gap, RootBracket(0.5, 2.0))
        assert abs(gap(P_cross)) < 1e-8
        assert P_cross > wh.manifold_tip(p)[0]  # crossing on the infected branch


class TestImmuneGrowth:
    def test_entry_rate_positive(self, paper_within):
        P0 = wh.upper_branch_P(0.0, paper_within)
        assert P0 == pytest.approx(1.9486832980505138, abs=1e-12)
        g0 = wh.immune_growth_g(0.0, paper_within)
        assert g0 == pytest.approx(paper_within.kappa * P0)
        assert g0 > 0.0

    def test_value_at_fold_status(self, paper_within):
        g_tip = wh.immune_growth_g(W_FOLD_REF, paper_within)
        expected = 1.0 * 0.31622776601683794 - 0.5 * W_FOLD_REF
        assert g_tip == pytest.approx(expected, abs=1e-9)

    def test_branch_load_decreases_with_status(self, paper_within):
        grid = np.linspace(0.0, W_FOLD_REF, 200)
        loads = [wh.upper_branch_P(w, paper_within) for w in grid]
        assert np.all(np.diff(loads) < 0.0)

    def test_status_beyond_fold_rejected(self, paper_within):
        with pytest.raises(ValueError):
            wh.upper_branch_P(W_FOLD_REF * 1.01, paper_within)

    def test_vector_evaluation(self, paper_within):
        omega = np.array([0.0, 1.0, 2.0])
        vals = wh.immune_growth_g(omega, paper_within)
        assert vals.shape == omega.shape
        assert vals[0] == pytest.approx(wh.immune_growth_g(0.0, paper_within))


class TestSimulateInfection:
    def test_high_initial_immunity_clears_fast(self, paper_within):
        # above the fold no infected equilibrium exists, so clearance is forced
        run = wh.simulate_infection(
            paper_within, wh.WithinHostState(1.0, 0.5, W_FOLD_REF + 0.5), 200.0
        )
        assert run.recovery_time is not None
        assert run.fold_crossed
        assert run.recovery_time < 200.0

    def test_reference_course_clears_through_a_cycle_trough(self, paper_within):
        # At these rates the infected state is oscillatory for low immunity;
        # the loops deepen until a trough undershoots the clearance level,
        # so the run ends well before the fold status is reached.
        run = wh.simulate_infection(
            paper_within, wh.WithinHostState(0.5, 0.9, 0.0), 5000.0
        )
        assert run.recovery_time is not None
        assert not run.fold_crossed
        assert run.recovery_state[2] < run.w_fold
        # after clearance the immune status decays on the recovered branch
        assert run.W[-1] < run.recovery_state[2]

    def test_branch_riding_course_reaches_the_fold(self):
        # No oscillation onset exists for this set (the trace balance has no
        # positive root), so the infected branch is attracting all the way
        # up and immunity must climb to the fold before clearance.
        params = wh.WithinHostParams(
            Lambda=4.0, mu=2.0, alpha=4.0, gamma=1.2, delta=1.2,
            epsilon=0.01, kappa=1.0, c=0.3,
        )
        assert not [h for h in wh.critical_loci(params).hopf if h.valid]
        run = wh.simulate_infection(params, wh.WithinHostState(1.0, 1.0, 0.0), 400.0)
        assert run.recovery_time is not None
        assert run.fold_crossed
        assert run.recovery_state[2] == pytest.approx(run.w_fold, rel=0.05)
        # clearance follows within a few fast time units of crossing the fold
        near_fold = run.t[run.W >= 0.99 * run.w_fold]
        assert run.recovery_time - near_fold[0] < 50.0

    def test_zero_load_never_infects(self, paper_within):
        run = wh.simulate_infection(
            paper_within, wh.WithinHostState(2.0, 0.0, 1.0), 400.0
        )
        assert run.recovery_time is None
        assert np.all(run.P == 0.0)
        assert run.W[-1] < 1.0
        assert run.T[-1] == pytest.approx(10.0, rel=1e-3)

    def test_trajectories_stay_nonnegative(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            params = random_within(rng)
            initial = wh.WithinHostState(*rng.uniform(0.0, 3.0, size=3))
            run = wh.simulate_infection(params, initial, 150.0)
            assert np.min(run.states) >= -1e-10

    def test_metadata_and_csv_round_trip(self, paper_within, tmp_path):
        run = wh.simulate_infection(
            paper_within, wh.WithinHostState(0.5, 0.9, 0.0), 50.0
        )
        meta = wh.run_metadata(run, paper_within)
        assert json.loads(json.dumps(meta)) == meta
        assert meta["p_clear"] == wh.P_CLEAR_DEFAULT
        assert meta["parameters"] == REFERENCE_WITHIN
        path = tmp_path / "run.csv"
        wh.write_trajectory_csv(run, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,T,P,W"
        first = [float(x) for x in lines[1].split(",")]
        assert first == [0.0, 0.5, 0.9, 0.0]


class TestSlowFastConsistency:
    def slow_time_error(self, eps):
        params = wh.WithinHostParams(**{**REFERENCE_WITHIN, "epsilon": eps})
        W0 = 0.5
        P0 = wh.upper_branch_P(W0, params)
        T0 = params.Lambda / (params.mu + params.alpha * P0 * P0)
        tau_end = 1.5
        full = wh.simulate_infection(
            params,
            wh.WithinHostState(T0, P0, W0),
            tau_end / eps,
            spec=IntegratorSpec(rel_tol=1e-10, abs_tol=1e-12),
        )
        reduced = wh.integrate_slow_reduced(params, W0, (0.0, tau_end))
        w_red = np.interp(full.t * eps, reduced.t, reduced.y[:, 0])
        mask = full.t * eps <= reduced.t[-1]
        return float(np.max(np.abs(full.W[mask] - w_red[mask])))

    def test_reduced_flow_error_scales_with_epsilon(self):
        err_01 = self.slow_time_error(0.01)
        err_001 = self.slow_time_error(0.001)
        assert err_01 < 0.05
        ratio = err_01 / err_001
        assert 4.0 < ratio < 30.0
