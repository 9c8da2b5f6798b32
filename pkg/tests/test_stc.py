import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpstc.config import validate
from gpstc.costs import CostConfig
from gpstc.gp import Dataset
from gpstc.plants import linear, pendulum
from gpstc.stc import (
    EpisodeTrace,
    LearnerState,
    act,
    run_episode,
    simulate,
    train,
)
from gpstc.vi import PolicyPair, RbfApproximator, box_grid, fit_rbf_weights


def learner_for(plant, M=10, seed=0, centers=None):
    centers = box_grid([-1.5] * plant.state_dim, [1.5] * plant.state_dim, 0.5) if centers is None else centers
    pair = PolicyPair.initial(centers, M, plant.input_low, plant.input_high, 0.75)
    return LearnerState(Dataset.empty(plant.state_dim, plant.input_dim), pair, seed)


def hold_policy(M, m_value, u_value):
    """A 1-D policy that always returns (u_value, m_value)."""
    centers = box_grid([-3.0], [3.0], 0.5)
    n = len(centers)
    mk = lambda t: RbfApproximator(centers, fit_rbf_weights(centers, np.full(n, t), 0.75, 1e-10), 0.75)
    return PolicyPair(mk(0.0), (mk(u_value),), mk(m_value), M, [-1.0], [1.0])


def check_protocol(trace, M):
    """Inputs constant between communications and gaps equal the recorded m."""
    idx = trace.comm_steps
    assert trace.comm[0]
    assert np.all((trace.m[idx] >= 1) & (trace.m[idx] <= M))
    bounds = list(idx) + [len(trace)]
    for a, b in zip(bounds[:-1], bounds[1:]):
        assert np.all(trace.inputs[a:b] == trace.inputs[a])
        if b < len(trace):
            assert b - a == trace.m[a]
        else:
            assert b - a <= trace.m[a]
    assert np.all(trace.m[~trace.comm] == 0)


def test_zero_policy_act():
    plant = pendulum()
    pair = learner_for(plant).pair
    u, m = act(pair, np.array([0.3, -0.2]))
    assert u[0] == 0.0 and m == 1


def test_greedy_zero_policy_is_open_loop():
    plant = pendulum()
    learner = learner_for(plant)
    cost = CostConfig(np.eye(2), M=10)
    trace, (xs, us, ys) = run_episode(plant, learner, 0.0, 12, [1.0, 0.2], cost)
    x = np.array([1.0, 0.2])
    ref = [x]
    for _ in range(12):
        x = plant(x, [0.0])
        ref.append(x)
    np.testing.assert_array_equal(trace.states, np.array(ref))
    assert trace.comm_count == 12 and len(xs) == 12
    np.testing.assert_array_equal(ys, trace.states[1:])


def test_full_exploration_gives_one_sample_per_round():
    plant = pendulum()
    trace, (xs, us, ys) = run_episode(plant, learner_for(plant), 1.0, 25, [1.0, 0.2], CostConfig(np.eye(2)))
    assert len(xs) == 25 == len(trace)
    assert np.all(np.abs(us) <= 1.5)
    for x, u, y in zip(xs, us, ys):
        np.testing.assert_array_equal(plant(x, u), y)


def test_seeded_episode_repeatable():
    plant = pendulum()
    a, _ = run_episode(plant, learner_for(plant, seed=4), 0.5, 20, [1.0, 0.2], CostConfig(np.eye(2)))
    b, _ = run_episode(plant, learner_for(plant, seed=4), 0.5, 20, [1.0, 0.2], CostConfig(np.eye(2)))
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.inputs, b.inputs)


def test_eps_out_of_range():
    plant = pendulum()
    with pytest.raises(ValueError):
        run_episode(plant, learner_for(plant), 1.5, 5, [0.0, 0.0], CostConfig(np.eye(2)))


@given(st.integers(1, 6), st.floats(0, 1), st.integers(0, 2**31), st.floats(-2, 2))
def test_protocol_and_data_invariants(m_value, eps, seed, x0):
    plant = linear()
    M = 6
    pair = hold_policy(M, m_value, 0.3)
    learner = LearnerState(Dataset.empty(1, 1), pair, seed)
    trace, (xs, us, ys) = run_episode(plant, learner, eps, 15, [x0], CostConfig(np.eye(1), M=M))
    check_protocol(trace, M)
    for x, u, y in zip(xs, us, ys):
        np.testing.assert_array_equal(plant(x, u), y)
    assert len(xs) == int(np.sum(trace.m[trace.comm] == 1))


def test_simulate_truncates_at_horizon():
    plant = linear()
    trace = simulate(plant, hold_policy(4, 4, 0.2), [1.0], 10, CostConfig(np.eye(1), M=4))
    assert len(trace) == 10
    np.testing.assert_array_equal(trace.comm_steps, [0, 4, 8])
    assert not trace.final_comm
    check_protocol(trace, 4)


def test_cumulative_cost_hand_computed():
    plant = linear()
    cfg = CostConfig(np.eye(1), gamma=0.1, M=4, stage_kind="quadratic")
    trace = simulate(plant, hold_policy(4, 2, 0.0), [1.0], 6, cfg)
    # x_k = 0.5^k; comm at 0, 2, 4 with m=2; final state x_6 is a comm instant
    expected = sum(0.25**k + 0.1 * 2 for k in (2, 4)) + 0.25**6
    assert trace.cumulative_cost == pytest.approx(expected)


@given(m_value=st.integers(1, 5), eps=st.floats(0, 1), seed=st.integers(0, 1000))
def test_trace_csv_round_trip(tmp_path_factory, m_value, eps, seed):
    plant = linear()
    learner = LearnerState(Dataset.empty(1, 1), hold_policy(5, m_value, -0.4), seed)
    cfg = CostConfig(np.eye(1), gamma=0.02, M=5)
    trace, _ = run_episode(plant, learner, eps, 7, [0.9], cfg)
    path = tmp_path_factory.mktemp("trace") / "t.csv"
    trace.to_csv(path)
    back = EpisodeTrace.from_csv(path, gamma=0.02, M=5)
    for name in ("states", "inputs", "comm", "m", "stage"):
        np.testing.assert_array_equal(getattr(back, name), getattr(trace, name))
    assert back.final_comm == trace.final_comm
    assert back.cumulative_cost == trace.cumulative_cost


def small_config(**kw):
    base = dict(
        plant="linear", input_low=[-1.0], input_high=[1.0], x_init=[1.0], M=3,
        state_low=[-2.0], state_high=[2.0], state_spacing=0.5, input_spacing=0.25,
        Q=[[1.0]], seed=3, n_epi=1, n_max=10, vi_n_ite=3, gp_restarts=1,
    )
    base.update(kw)
    return validate(base)


def test_train_zero_episodes():
    cfg = small_config(n_epi=0)
    res = train(cfg.make_plant(), cfg)
    assert res.traces == [] and res.model is None
    assert not np.any(res.pair.j_star.weights)


def test_train_one_exploratory_episode():
    cfg = small_config(eps=1.0, gp_cap=8)
    res = train(cfg.make_plant(), cfg)
    assert len(res.traces) == 1
    assert len(res.dataset) == 8
    assert len(res.model) == 8
    assert len(res.vi_history) == 1 and res.vi_history[0].sup_changes


def test_train_is_reproducible():
    cfg = small_config(n_epi=2, eps=0.5)
    a = train(cfg.make_plant(), cfg)
    b = train(cfg.make_plant(), cfg)
    np.testing.assert_array_equal(a.pair.j_star.weights, b.pair.j_star.weights)
    for ta, tb in zip(a.traces, b.traces):
        np.testing.assert_array_equal(ta.states, tb.states)


def test_epsilon_schedule():
    from gpstc.stc import epsilon_at

    cfg = small_config(n_epi=5, eps=0.3, eps_final=0.05)
    assert epsilon_at(cfg, 0) == pytest.approx(0.3)
    assert epsilon_at(cfg, 4) == pytest.approx(0.05)
    assert epsilon_at(small_config(eps=0.2), 3) == 0.2
