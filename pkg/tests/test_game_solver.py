import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linprog

from netgame._backend import kernels
from netgame.adversarial_channel import ChannelConfig, GameSpec
from netgame.game_solver import (
    FiniteGame,
    LearningSchedule,
    PolicyPair,
    QTable,
    extract_policies,
    holding_time_game,
    learn_finite_game,
    nash_q_learning,
    shapley_value_iteration,
    solve_finite_game,
    solve_matrix_game_2x2,
    stage_cost,
    stage_game,
    value_vs_horizon,
)
from netgame.lti_model import ConvergenceError
from netgame.verification import occupation_measure, policy_evaluation

# Shapley values at tau = 0 for the reference configuration, N = 3..15.  Frozen
# after confirming each is a fixed point of the Bellman operator whose stage
# games are solved by linear programming (see test_shapley_fixed_point_lp).
VALUE_VS_N = [
    358313.8211, 403772.2281, 404767.2523, 406910.5484, 408221.4573, 409026.4405, 409522.3515,
    409828.6592, 410018.2565, 410135.8136, 410208.8036, 410254.1727, 410282.3982,
]


def lp_game_value(M):
    """Minimax value of a 2x2 game (rows minimize) by linear programming."""
    res = linprog(
        c=[0.0, 0.0, 1.0],
        A_ub=np.c_[np.asarray(M).T, -np.ones(2)],
        b_ub=np.zeros(2),
        A_eq=[[1.0, 1.0, 0.0]],
        b_eq=[1.0],
        bounds=[(0, 1), (0, 1), (None, None)],
        method="highs",
    )
    return res.x[2]


def lp_bellman(V, game):
    Q = game.q_from_values(V)
    out = np.empty_like(V)
    for s in range(game.n_states):
        out[s] = Q[s, 1, 1] if game.forced[s] else lp_game_value(Q[s])
    return out


def small_spec(spec, eta, N):
    """Same plant and costs but a short horizon and a stronger discount (fast LP oracle)."""
    return GameSpec(spec.channel, spec.c_s, spec.c_a, eta, N, spec.M_inf, spec.Pbar, spec.model)


# -- stage costs ---------------------------------------------------------------


def test_stage_cost_examples(spec):
    zero = GameSpec(spec.channel, 0.0, 0.0, spec.eta, 4, np.zeros((2, 2)), spec.Pbar, spec.model)
    assert stage_cost(2, 0, 0, zero) == 0.0
    assert stage_cost(0, 1, 0, spec) == pytest.approx(np.trace(spec.M_inf @ spec.Pbar) + 300.0, rel=1e-14)
    assert stage_cost(3, 1, 1, spec) == pytest.approx(spec.trace_costs[3] + 300.0 - 200.0, rel=1e-14)
    with pytest.raises(ValueError):
        stage_cost(spec.N, 0, 0, spec)


def test_stage_cost_monotone_in_holding_time(spec):
    for nu in (0, 1):
        for a in (0, 1):
            c = [stage_cost(t, nu, a, spec) for t in range(spec.N)]
            assert all(c2 >= c1 for c1, c2 in zip(c, c[1:]))


# -- 2x2 matrix games ----------------------------------------------------------


def test_matrix_game_examples():
    assert solve_matrix_game_2x2([[1, -1], [-1, 1]]) == (0.0, 0.5, 0.5)
    assert solve_matrix_game_2x2([[1, 2], [3, 4]]) == (2.0, 0.0, 1.0)
    assert solve_matrix_game_2x2([[7, 7], [7, 7]]) == (7.0, 0.5, 0.5)
    with pytest.raises(ValueError):
        solve_matrix_game_2x2([[1, 2, 3], [4, 5, 6]])
    with pytest.raises(ValueError):
        solve_matrix_game_2x2([[np.nan, 0], [0, 0]])


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (2, 2), elements=st.floats(-1e4, 1e4, allow_subnormal=False)))
def test_matrix_game_is_saddle_and_matches_lp(M):
    v, p, q = solve_matrix_game_2x2(M)
    x = np.array([1 - p, p])
    y = np.array([1 - q, q])
    scale = max(1.0, np.abs(M).max())
    # no pure deviation helps either player
    assert (x @ M).max() <= v + 1e-10 * scale
    assert (M @ y).min() >= v - 1e-10 * scale
    assert v == pytest.approx(lp_game_value(M), abs=1e-7 * scale)


# -- Shapley value iteration ---------------------------------------------------


def test_shapley_value_vs_horizon_frozen(spec):
    got = value_vs_horizon(spec, range(3, 16))
    assert [n for n, _ in got] == list(range(3, 16))
    np.testing.assert_allclose([v for _, v in got], VALUE_VS_N, rtol=1e-9)


def test_shapley_fixed_point_lp(spec):
    game = holding_time_game(spec)
    V, _, _ = shapley_value_iteration(spec)
    np.testing.assert_allclose(lp_bellman(V, game), V, rtol=1e-9)


def test_shapley_against_independent_iteration(spec):
    sp = small_spec(spec, 0.8, 5)
    game = holding_time_game(sp)
    V_ref = np.zeros(5)
    for _ in range(200):  # 0.8**200 ~ 4e-20
        V_ref = lp_bellman(V_ref, game)
    V, _, _ = shapley_value_iteration(sp)
    np.testing.assert_allclose(V, V_ref, rtol=1e-8)


def test_shapley_duality_per_state(spec):
    _, qt, pol = shapley_value_iteration(spec)
    for s in range(spec.N - 1):
        x = np.array([1 - pol.pi_c[s], pol.pi_c[s]])
        y = np.array([1 - pol.pi_a[s], pol.pi_a[s]])
        upper = (x @ qt.q[s]).max()
        lower = (qt.q[s] @ y).min()
        assert upper - lower < 1e-9 * abs(upper)


def test_shapley_contraction_ratio(spec):
    game = holding_time_game(spec)
    V = np.zeros(game.n_states)
    r = np.ascontiguousarray(game.expected_cost())
    steps = []
    prev = V.copy()
    for _ in range(30):
        kernels.shapley_iterate(r, game.succ, game.prob, game.forced, game.eta, V, 0.0, 1)
        steps.append(np.abs(V - prev).max())
        prev = V.copy()
    for d1, d2 in zip(steps[1:], steps[2:]):
        assert d2 <= spec.eta * d1 * (1 + 1e-12) + 1e-9


def test_shapley_nonconvergence_raises(spec):
    with pytest.raises(ConvergenceError):
        shapley_value_iteration(spec, tol=1e-12, max_iter=5)


def test_expensive_attack_is_never_launched(spec):
    _, _, pol = shapley_value_iteration(spec.with_costs(300.0, 1e6))
    np.testing.assert_array_equal(pol.pi_a[:-1], 0.0)


def test_ineffective_attack_is_never_launched(spec):
    sp = GameSpec(ChannelConfig(0.9, 0.9), 300.0, 200.0, spec.eta, 10, spec.M_inf, spec.Pbar, spec.model)
    _, _, pol = shapley_value_iteration(sp)
    np.testing.assert_array_equal(pol.pi_a[:-1], 0.0)


def test_free_transmission_is_always_used(spec):
    _, _, pol = shapley_value_iteration(spec.with_costs(0.0, 200.0))
    np.testing.assert_array_equal(pol.pi_c, 1.0)


def test_reference_equilibrium_policies(spec):
    # pure equilibrium: idle at tau = 0, transmit from tau = 1, attack from tau = 2
    _, _, pol = shapley_value_iteration(spec)
    np.testing.assert_array_equal(pol.pi_c, [0, 1, 1, 1, 1, 1, 1, 1, 1, 1])
    np.testing.assert_array_equal(pol.pi_a, [0, 0, 1, 1, 1, 1, 1, 1, 1, 1])


def test_attack_cost_shift_with_frozen_policies(spec):
    _, _, pol = shapley_value_iteration(spec)
    game = holding_time_game(spec)
    delta = 37.0
    base = policy_evaluation(pol, spec)[0]
    shifted = policy_evaluation(pol, spec.with_costs(spec.c_s, spec.c_a + delta))[0]
    om = occupation_measure(pol, game)
    attack_mass = om.omega[:, :, 1].sum() / (1 - spec.eta)
    assert shifted == pytest.approx(base - delta * attack_mass, rel=1e-10)


# -- policies and stage games --------------------------------------------------


def test_extract_policies_examples():
    q = np.zeros((3, 2, 2))
    q[0] = [[1, -1], [-1, 1]]
    q[1] = [[1, 2], [3, 4]]
    q[2] = [[5, 0], [0, 5]]
    pol = extract_policies(QTable(q))
    assert (pol.pi_c[0], pol.pi_a[0]) == (0.5, 0.5)
    assert (pol.pi_c[1], pol.pi_a[1]) == (0.0, 1.0)
    assert (pol.pi_c[2], pol.pi_a[2]) == (1.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 2, 2), elements=st.floats(-100, 100)))
def test_extract_policies_last_state_forced(q):
    pol = extract_policies(q)
    assert pol.pi_c[-1] == 1.0 and pol.pi_a[-1] == 1.0
    assert np.all((pol.pi_c >= 0) & (pol.pi_c <= 1) & (pol.pi_a >= 0) & (pol.pi_a <= 1))


def test_policy_pair_validation_and_extension():
    with pytest.raises(ValueError):
        PolicyPair([0.5, 1.2], [0.0, 1.0])
    with pytest.raises(ValueError):
        PolicyPair([0.5], [0.0, 1.0])
    pol = PolicyPair([0.2, 0.7, 1.0], [0.1, 0.3, 1.0])
    ext = pol.extended(6)
    np.testing.assert_array_equal(ext.pi_c, [0.2, 0.7, 1, 1, 1, 1])
    np.testing.assert_array_equal(ext.pi_a, [0.1, 0.3, 1, 1, 1, 1])
    u = PolicyPair.uniform(4)
    np.testing.assert_array_equal(u.pi_c, [0.5, 0.5, 0.5, 1.0])


def test_stage_game_solves_to_state_value(spec):
    V, _, _ = shapley_value_iteration(spec)
    game = holding_time_game(spec)
    for tau in range(spec.N - 1):
        v, _, _ = stage_game(tau, V, game).solve()
        assert v == pytest.approx(V[tau], rel=1e-9)


def test_finite_game_validation():
    succ = np.zeros((1, 2, 2, 2), dtype=np.int64)
    prob = np.full((1, 2, 2, 2), 0.5)
    cost = np.zeros((1, 2, 2, 2))
    FiniteGame(succ, prob, cost, np.zeros(1), 0.9)
    with pytest.raises(ValueError):
        FiniteGame(succ + 1, prob, cost, np.zeros(1), 0.9)
    with pytest.raises(ValueError):
        FiniteGame(succ, prob * 0.9, cost, np.zeros(1), 0.9)
    with pytest.raises(ValueError):
        FiniteGame(succ, prob, cost, np.zeros(1), 1.0)


# -- Nash Q-learning -----------------------------------------------------------


def single_state_game(c, eta):
    succ = np.zeros((1, 2, 2, 2), dtype=np.int64)
    prob = np.zeros((1, 2, 2, 2))
    prob[..., 0] = 1.0
    cost = np.repeat(np.asarray(c, dtype=float)[None, :, :, None], 2, axis=3)
    return FiniteGame(succ, prob, cost, np.zeros(1), eta)


def test_learning_single_state_closed_form():
    c = np.array([[1.0, 3.0], [4.0, 2.0]])
    eta = 0.9
    v_stage, _, _ = solve_matrix_game_2x2(c)  # 2.5 with mixes (0.5, 0.25)
    Q_exact = c + eta * v_stage / (1 - eta)
    sched = LearningSchedule(alpha_exponent=0.75, alpha_scale=1.0, epsilon_floor=0.5, steps_per_episode=10**9)
    res = learn_finite_game(single_state_game(c, eta), sched, 400_000, np.random.default_rng(3))
    np.testing.assert_allclose(res.qtable.q[0], Q_exact, rtol=0.01)


def test_learning_zero_costs_stay_zero(spec):
    zero = GameSpec(spec.channel, 0.0, 0.0, spec.eta, 6, np.zeros((2, 2)), spec.Pbar, spec.model)
    res = nash_q_learning(zero, LearningSchedule(), 50, np.random.default_rng(0))
    assert np.all(res.qtable.q == 0.0)
    assert res.qtable.visits.sum() == 50 * 200


def test_learning_is_deterministic_and_checkpoint_invariant(spec):
    sched = LearningSchedule()
    a = nash_q_learning(spec, sched, 100, np.random.default_rng(9))
    b = nash_q_learning(spec, sched, 100, np.random.default_rng(9), checkpoints=(1000, 7000))
    np.testing.assert_array_equal(a.qtable.q, b.qtable.q)
    np.testing.assert_array_equal(a.qtable.visits, b.qtable.visits)
    assert [c for c, _ in b.history] == [1000, 7000]


def test_learning_error_shrinks_over_checkpoints(spec):
    V, _, _ = shapley_value_iteration(spec)
    game = holding_time_game(spec)
    res = learn_finite_game(game, LearningSchedule(), 100_000, np.random.default_rng(5),
                            checkpoints=(1_000, 10_000, 100_000))
    errs = [np.abs(vals - V).max() / np.abs(V).max() for _, vals in res.history]
    for e1, e2 in zip(errs, errs[1:]):
        assert e2 <= e1 * 1.05


def test_learning_schedule_validation():
    with pytest.raises(ValueError):
        LearningSchedule(alpha_exponent=0.5)
    with pytest.raises(ValueError):
        LearningSchedule(epsilon_floor=1.5)
    with pytest.raises(ValueError):
        LearningSchedule(steps_per_episode=0)
    assert LearningSchedule().resolved_scale(0.999) == pytest.approx(0.001)
    assert LearningSchedule(alpha_scale=1.0).resolved_scale(0.999) == 1.0


def test_learned_policies_forced_at_boundary(spec):
    res = nash_q_learning(spec, LearningSchedule(), 20, np.random.default_rng(1))
    assert res.policies.pi_c[-1] == 1.0 and res.policies.pi_a[-1] == 1.0
    # the forced state only ever sees (transmit, attack)
    v = res.qtable.visits[-1]
    assert v[0, 0] == v[0, 1] == v[1, 0] == 0
