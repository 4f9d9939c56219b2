import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fusedmtl.solver as solver
from fusedmtl.core import (
    InputError,
    PenaltyConfig,
    build_temporal_operator,
    objective_value,
)
from fusedmtl.solver import (
    CONTINUE,
    CONVERGED,
    MAX_ITER,
    ConvergenceTrace,
    SolverOptions,
    TraceRecord,
    check_stopping,
    init_state,
    optimality_residual,
    prox_l1,
    solve,
    update_duals,
    update_P,
    update_Q,
    update_V,
    update_W,
)

from conftest import build_dataset, random_dataset, random_similarity
from oracles import soft_threshold_grid

TIGHT = SolverOptions(max_iterations=50000, eps_abs=1e-10, eps_rel=1e-8)


class TestProx:
    def test_zero_fixed_point(self):
        np.testing.assert_array_equal(prox_l1(np.zeros((2, 2)), 0.7), np.zeros((2, 2)))

    def test_direct_values(self):
        np.testing.assert_array_equal(
            prox_l1(np.array([2.0, -2.0]), 0.5), [1.5, -1.5]
        )

    def test_kappa_zero_is_identity(self, rng):
        theta = rng.standard_normal((3, 4))
        np.testing.assert_array_equal(prox_l1(theta, 0.0), theta)

    def test_matches_scalar_grid_oracle(self):
        for theta in (-1.7, -0.2, 0.0, 0.35, 2.4):
            for kappa in (0.0, 0.3, 1.0):
                got = float(prox_l1(np.array([theta]), kappa)[0])
                ref = soft_threshold_grid(theta, kappa)
                assert got == pytest.approx(ref, abs=1e-5)

    @settings(max_examples=200, deadline=None)
    @given(
        theta=st.floats(-1e6, 1e6, allow_nan=False),
        kappa=st.floats(0, 1e6, allow_nan=False),
    )
    def test_shrinkage_properties(self, theta, kappa):
        out = float(prox_l1(np.array([theta]), kappa)[0])
        assert abs(out) <= abs(theta)
        if abs(theta) <= kappa:
            assert out == 0.0
        else:
            assert out == pytest.approx(np.sign(theta) * (abs(theta) - kappa))

    def test_rejects_negative_kappa(self):
        with pytest.raises(InputError):
            prox_l1(np.zeros(2), -0.1)


def _fresh_state(rng, p=4, t=3, lambda2=0.5, rho=1.3):
    data = random_dataset(rng, p=p, t=t)
    S = random_similarity(rng, p)
    cfg = PenaltyConfig(0.4, lambda2, 0.6, rho=rho)
    state = init_state(data, S, cfg, SolverOptions())
    # push the state off the all-zeros initial point
    state.W = rng.standard_normal((p, t))
    state.Q = rng.standard_normal((p, t))
    state.V = rng.standard_normal((p, t - 1))
    state.U_q = rng.standard_normal((p, t))
    state.U_v = rng.standard_normal((p, t - 1))
    if state.use_graph:
        state.P = rng.standard_normal((p, t))
        state.U_p = rng.standard_normal((p, t))
    state.SW = state.S @ state.W if state.use_graph else None
    state.WH = state.H.apply(state.W)
    return data, S, cfg, state


class TestBlockUpdates:
    def test_update_q_identity_when_lambda1_zero(self, rng):
        _, _, _, state = _fresh_state(rng)
        expected = state.W + state.U_q
        np.testing.assert_array_equal(update_Q(state, 0.0), expected)

    def test_update_q_zeroes_boundary_entry(self, rng):
        _, _, _, state = _fresh_state(rng, rho=1.0)
        state.U_q = np.zeros_like(state.U_q)
        state.W = np.full_like(state.W, 0.3)
        assert np.all(update_Q(state, 0.3) == 0.0)

    def test_updates_match_entrywise_grid_oracle(self, rng):
        _, S, cfg, state = _fresh_state(rng, rho=2.0)
        Q = update_Q(state, cfg.lambda1)
        theta_q = state.W + state.U_q
        P = update_P(state, cfg.lambda2)
        theta_p = state.SW + state.U_p
        V = update_V(state, cfg.lambda3)
        theta_v = state.WH + state.U_v
        for block, theta, lam in (
            (Q, theta_q, cfg.lambda1),
            (P, theta_p, cfg.lambda2),
            (V, theta_v, cfg.lambda3),
        ):
            it = np.nditer(theta, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                ref = soft_threshold_grid(float(theta[idx]), lam / cfg.rho)
                assert block[idx] == pytest.approx(ref, abs=1e-5)
                it.iternext()

    def test_update_p_with_zero_graph_matrix(self, rng):
        data = random_dataset(rng, p=3, t=2)
        cfg = PenaltyConfig(0.0, 0.5, 0.0)
        state = init_state(data, np.zeros((3, 3)), cfg, SolverOptions())
        state.W = rng.standard_normal((3, 2))
        state.SW = state.S @ state.W
        np.testing.assert_array_equal(update_P(state, cfg.lambda2), np.zeros((3, 2)))

    def test_update_p_with_identity_matches_q_behavior(self, rng):
        data = random_dataset(rng, p=3, t=2)
        cfg = PenaltyConfig(0.7, 0.7, 0.0)
        state = init_state(data, np.eye(3), cfg, SolverOptions())
        state.W = rng.standard_normal((3, 2))
        state.U_q = state.U_p = rng.standard_normal((3, 2))
        state.SW = state.S @ state.W
        np.testing.assert_array_equal(
            update_P(state, 0.7), update_Q(state, 0.7)
        )

    def test_update_v_zero_for_time_constant_weights(self, rng):
        _, _, _, state = _fresh_state(rng)
        state.W = np.tile(rng.standard_normal((4, 1)), (1, 3))
        state.WH = state.H.apply(state.W)
        state.U_v = np.zeros_like(state.U_v)
        np.testing.assert_array_equal(update_V(state, 0.9), np.zeros((4, 2)))

    def test_update_v_hand_example(self, rng):
        data = random_dataset(rng, p=2, t=2)
        cfg = PenaltyConfig(0.0, 0.0, 0.2, rho=1.0)
        state = init_state(data, None, cfg, SolverOptions())
        W = np.zeros((2, 2))
        W[:, 0] = [1.0, -0.1]
        state.W = W
        state.WH = state.H.apply(W)  # w_1 - w_2 = (1, -0.1)
        np.testing.assert_array_equal(update_V(state, 0.2), [[0.8], [0.0]])

    def test_duals_fixed_at_consensus(self, rng):
        _, _, cfg, state = _fresh_state(rng)
        state.Q = state.W.copy()
        state.P = state.SW.copy()
        state.V = state.WH.copy()
        before = (state.U_q.copy(), state.U_p.copy(), state.U_v.copy())
        update_duals(state)
        np.testing.assert_array_equal(state.U_q, before[0])
        np.testing.assert_array_equal(state.U_p, before[1])
        np.testing.assert_array_equal(state.U_v, before[2])

    def test_one_dual_step_from_zero(self, rng):
        _, _, _, state = _fresh_state(rng)
        state.U_q = np.zeros_like(state.U_q)
        expected = state.W - state.Q
        update_duals(state)
        np.testing.assert_array_equal(state.U_q, expected)

    def test_temporal_coupling_structure_for_two_tasks(self, rng):
        data = random_dataset(rng, p=3, t=2)
        state = init_state(data, None, PenaltyConfig(0.0, 0.0, 1.0), SolverOptions())
        np.testing.assert_array_equal(state.F, [[1.0, -1.0], [-1.0, 1.0]])
        W = rng.standard_normal((3, 2))
        np.testing.assert_array_equal(W @ state.F[:, 0], W[:, 0] - W[:, 1])


def _record_with(iteration, r_primal, s_dual, primal_scale=1.0, dual_scale=1.0):
    return TraceRecord(
        iteration=iteration, objective=1.0, loss=1.0, sparsity=0.0, graph=0.0,
        temporal=0.0, r_consensus=r_primal, r_graph=0.0, r_temporal=0.0,
        r_primal=r_primal, s_dual=s_dual, primal_scale=primal_scale,
        dual_scale=dual_scale, timestamp=0.0,
    )


class TestStopping:
    def test_zero_residuals_converge(self):
        trace = ConvergenceTrace(constraint_dim=10, variable_dim=5)
        trace.append(_record_with(1, 0.0, 0.0))
        assert check_stopping(trace, SolverOptions()) == CONVERGED

    def test_budget_exhaustion(self):
        trace = ConvergenceTrace(constraint_dim=10, variable_dim=5)
        trace.append(_record_with(50, 10.0, 10.0))
        assert check_stopping(trace, SolverOptions(max_iterations=50)) == MAX_ITER
        trace2 = ConvergenceTrace(constraint_dim=10, variable_dim=5)
        trace2.append(_record_with(49, 10.0, 10.0))
        assert check_stopping(trace2, SolverOptions(max_iterations=50)) == CONTINUE

    def test_tightening_never_creates_convergence(self):
        trace = ConvergenceTrace(constraint_dim=10, variable_dim=5)
        trace.append(_record_with(3, 1e-5, 1e-5, primal_scale=0.1, dual_scale=0.1))
        loose = SolverOptions(eps_abs=1e-6, eps_rel=1e-4)
        tight = SolverOptions(eps_abs=1e-6, eps_rel=1e-5)
        if check_stopping(trace, tight) == CONVERGED:
            assert check_stopping(trace, loose) == CONVERGED


class TestSolve:
    def test_bit_reproducible(self, rng):
        data = random_dataset(rng, p=5, t=3)
        S = random_similarity(rng, 5)
        cfg = PenaltyConfig(0.5, 0.05, 0.5)
        r1 = solve(data, S, cfg, SolverOptions(max_iterations=300))
        r2 = solve(data, S, cfg, SolverOptions(max_iterations=300))
        np.testing.assert_array_equal(r1.weights.values, r2.weights.values)
        np.testing.assert_array_equal(r1.sparse_weights.values, r2.sparse_weights.values)
        assert r1.trace.objectives().tolist() == r2.trace.objectives().tolist()

    def test_lambda2_zero_skips_graph_block(self, rng):
        data = random_dataset(rng, p=4, t=3)
        res = solve(data, random_similarity(rng, 4), PenaltyConfig(0.3, 0.0, 0.3), TIGHT)
        assert all(r.r_graph == 0.0 for r in res.trace.records)
        assert "graph" not in res.duals

    def test_least_squares_reduction(self, rng):
        data = random_dataset(rng, p=4, t=3)
        res = solve(data, None, PenaltyConfig(0.0, 0.0, 0.0), TIGHT)
        for i, task in enumerate(data.tasks):
            wls = np.linalg.solve(task.design.T @ task.design, task.design.T @ task.target)
            np.testing.assert_allclose(res.weights.values[:, i], wls, atol=1e-8)

    def test_huge_lambda1_gives_null_solution(self, rng):
        data = random_dataset(rng, p=4, t=3)
        thr = max(
            float(np.abs(task.design.T @ task.target).max()) for task in data.tasks
        )
        res = solve(data, None, PenaltyConfig(1.1 * thr, 0.0, 0.0), TIGHT)
        assert np.abs(res.weights.values).max() <= 1e-8
        assert np.all(res.sparse_weights.values == 0.0)

    def test_gauss_seidel_matches_exact_eigen_solve(self, rng):
        # shared design so the decoupled eigen path applies
        X = rng.standard_normal((30, 5))
        ys = [X @ rng.standard_normal(5) + 0.2 * rng.standard_normal(30) for _ in range(4)]
        data = build_dataset([X] * 4, ys)
        S = random_similarity(rng, 5)
        cfg = PenaltyConfig(0.5, 0.05, 0.8)
        res_gs = solve(data, S, cfg, TIGHT)
        res_eig = solve(
            data, S, cfg,
            SolverOptions(max_iterations=50000, eps_abs=1e-10, eps_rel=1e-8,
                          w_update="eigen"),
        )
        H = build_temporal_operator(4)
        f_gs = objective_value(res_gs.weights, data, S, H, cfg)
        f_eig = objective_value(res_eig.weights, data, S, H, cfg)
        assert f_gs == pytest.approx(f_eig, rel=1e-8)
        np.testing.assert_allclose(res_gs.weights.values, res_eig.weights.values, atol=1e-6)

    def test_eigen_mode_rejects_ragged_designs(self, rng):
        data = random_dataset(rng, p=4, t=3)
        with pytest.raises(InputError):
            solve(data, None, PenaltyConfig(0.1, 0.0, 0.1),
                  SolverOptions(w_update="eigen"))

    def test_feature_permutation_invariance(self, rng):
        data = random_dataset(rng, p=5, t=3)
        S = random_similarity(rng, 5)
        cfg = PenaltyConfig(0.4, 0.06, 0.7)
        res = solve(data, S, cfg, TIGHT)
        perm = rng.permutation(5)
        res_p = solve(data.permute_features(perm), S[np.ix_(perm, perm)], cfg, TIGHT)
        np.testing.assert_allclose(
            res_p.weights.values, res.weights.values[perm], atol=1e-6
        )

    def test_rho_robustness(self, rng):
        data = random_dataset(rng, p=5, t=3)
        S = random_similarity(rng, 5)
        H = build_temporal_operator(3)
        objectives = []
        for rho in (0.1, 1.0, 10.0):
            cfg = PenaltyConfig(0.5, 0.05, 0.5, rho=rho)
            res = solve(data, S, cfg, TIGHT)
            objectives.append(objective_value(res.weights, data, S, H, cfg))
        base = objectives[1]
        for f in objectives:
            assert abs(f - base) / base <= 1e-4

    def test_best_so_far_objective_non_increasing(self, rng):
        data = random_dataset(rng, p=5, t=3)
        res = solve(data, random_similarity(rng, 5), PenaltyConfig(0.5, 0.05, 0.5),
                    SolverOptions(max_iterations=500))
        best = np.minimum.accumulate(res.trace.objectives())
        assert np.all(np.diff(best) <= 0.0)

    def test_primal_residuals_reach_desk_tolerance(self, rng):
        data = random_dataset(rng, p=6, t=4)
        S = random_similarity(rng, 6)
        res = solve(data, S, PenaltyConfig(1.0, 0.05, 1.0),
                    SolverOptions(max_iterations=5000, eps_abs=1e-8, eps_rel=1e-6))
        last = res.trace.last()
        assert last.r_consensus < 1e-4
        assert last.r_graph < 1e-4
        assert last.r_temporal < 1e-4

    def test_dual_residual_matches_trace_primal_quantities(self, rng):
        data = random_dataset(rng, p=4, t=3)
        S = random_similarity(rng, 4)
        res = solve(data, S, PenaltyConfig(0.3, 0.04, 0.3), SolverOptions(max_iterations=50))
        # residual norms recorded in the trace equal the final-state residuals
        assert len(res.trace) == 50
        rec = res.trace.last()
        assert rec.iteration == 50
        assert rec.r_primal == pytest.approx(
            np.sqrt(rec.r_consensus**2 + rec.r_graph**2 + rec.r_temporal**2)
        )

    def test_status_reported_on_budget_exhaustion(self, rng):
        data = random_dataset(rng, p=4, t=3)
        res = solve(data, None, PenaltyConfig(0.5, 0.0, 0.5), SolverOptions(max_iterations=3))
        assert res.status == MAX_ITER
        assert not res.converged
        assert res.iterations == 3

    def test_trace_every_thins_records(self, rng):
        data = random_dataset(rng, p=4, t=3)
        res = solve(data, None, PenaltyConfig(0.5, 0.0, 0.5),
                    SolverOptions(max_iterations=10, trace_every=4))
        assert [r.iteration for r in res.trace.records] == [4, 8, 10]

    def test_kkt_certificate_at_convergence(self, rng):
        data = random_dataset(rng, p=5, t=3)
        S = random_similarity(rng, 5)
        cfg = PenaltyConfig(1.0, 0.07, 1.0)
        res = solve(data, S, cfg, TIGHT)
        assert res.converged
        resid, ref = optimality_residual(res, data, S, cfg)
        assert resid <= 1e-3 * ref

    def test_trace_csv_round_trip(self, rng, tmp_path):
        data = random_dataset(rng, p=4, t=3)
        res = solve(data, random_similarity(rng, 4), PenaltyConfig(0.2, 0.03, 0.2),
                    SolverOptions(max_iterations=40))
        path = tmp_path / "trace.csv"
        res.trace.to_csv(path)
        lines = path.read_text().strip().split("\n")
        header = lines[0].split(",")
        assert header[:3] == ["iteration", "objective", "loss"]
        assert len(lines) == 1 + len(res.trace)
        first = lines[1].split(",")
        assert float(first[1]) == res.trace.records[0].objective

    def test_graph_required_when_lambda2_positive(self, rng):
        data = random_dataset(rng, p=4, t=3)
        with pytest.raises(InputError):
            solve(data, None, PenaltyConfig(0.1, 0.5, 0.1), SolverOptions())

    def test_asymmetric_graph_rejected(self, rng):
        data = random_dataset(rng, p=3, t=2)
        S = np.array([[1.0, 0.5, 0.0], [0.4, 1.0, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(InputError):
            solve(data, S, PenaltyConfig(0.1, 0.5, 0.1), SolverOptions())
