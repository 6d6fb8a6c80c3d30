import csv

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import default_model
from ehwsn.mdp_core import MdpModel
from ehwsn.ovi_solver import (
    NonConvergenceError,
    dual_function,
    dual_solve,
    evaluate_policy,
    full_rvi,
    greedy,
    postdecision_qvals,
    postdecision_rvi,
    reduced_rvi,
    relative_value_iteration,
    write_policy_csv,
    write_values_csv,
)
from ehwsn.sim_env import ArrivalModel, ChannelModel, EnvConfig, SystemModel


def test_single_state_single_action():
    res = relative_value_iteration([sp.csr_matrix([[1.0]])], np.array([[7.0]]))
    assert res.theta == pytest.approx(7.0)
    assert res.values.tolist() == [0.0]


def test_two_state_cycle():
    # a period-2 chain; the aperiodicity transform is what makes this converge
    P = sp.csr_matrix([[0.0, 1.0], [1.0, 0.0]])
    res = relative_value_iteration([P], np.array([[0.0], [4.0]]))
    assert res.theta == pytest.approx(2.0, abs=1e-8)
    assert res.values[1] - res.values[0] == pytest.approx(2.0, abs=1e-8)


def test_nonconvergence_carries_span():
    P = sp.csr_matrix([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(NonConvergenceError) as err:
        relative_value_iteration([P], np.array([[0.0], [4.0]]), max_sweeps=50, aperiodicity=1.0)
    assert err.value.span == pytest.approx(4.0) and err.value.sweeps == 50


def test_greedy_breaks_ties_low():
    assert greedy(np.array([[1.0, 1.0, 2.0], [3.0, 2.0, 2.0]])).tolist() == [0, 1]


def test_full_theta_matches_exact_evaluation(tiny_mdp):
    eta = (0.2, 0.4)
    res = full_rvi(tiny_mdp, eta)
    assert evaluate_policy(tiny_mdp, res.policy, eta).theta == pytest.approx(res.theta, abs=1e-6)


def test_bellman_hierarchy_on_tiny(tiny_mdp):
    eta = (0.3, 0.1)
    full = full_rvi(tiny_mdp, eta)
    red = reduced_rvi(tiny_mdp, eta)
    post = postdecision_rvi(tiny_mdp, eta)
    assert abs(full.theta - red.theta) < 1e-6 and abs(red.theta - post.theta) < 1e-6
    h, r = tiny_mdp.space.h_of, tiny_mdp.space.r_of
    assert np.array_equal(full.policy, red.policy[h, r])
    assert np.array_equal(red.policy, post.policy)


def test_single_channel_state_reduced_equals_full():
    cfg = EnvConfig(Q_max=3, B_max=4)
    ch = ChannelModel(("only",), np.array([4e-13]), np.array([[1.0]]))
    mdp = MdpModel(SystemModel(cfg, ch, ArrivalModel(np.array([0.4, 0.6]), np.array([0.5, 0.0, 0.5]))))
    full, red = full_rvi(mdp, 0.2), reduced_rvi(mdp, 0.2)
    assert red.theta == pytest.approx(full.theta, abs=1e-9)
    assert np.allclose(red.values, full.values, atol=1e-7)


def test_point_mass_arrivals_post_equals_reduced():
    cfg = EnvConfig(Q_max=3, B_max=4)
    ch = ChannelModel(("only",), np.array([4e-13]), np.array([[1.0]]))
    mdp = MdpModel(SystemModel(cfg, ch, ArrivalModel(np.array([0.0, 1.0]), np.array([0.0, 1.0]))))
    assert postdecision_rvi(mdp, 0.1).theta == pytest.approx(reduced_rvi(mdp, 0.1).theta, abs=1e-9)


def test_postdecision_greedy_matches_reduced_greedy_everywhere(tiny_mdp):
    eta = (0.5, 0.5)
    red = reduced_rvi(tiny_mdp, eta)
    post = postdecision_rvi(tiny_mdp, eta)
    # with the arrivals already observed, picking by R + V~(post) agrees with R + E[V(next)]
    q_post = postdecision_qvals(tiny_mdp, tiny_mdp.reduced_rewards(eta), post.values)
    assert np.array_equal(greedy(q_post), red.policy)


def test_greedy_policy_is_a_fixed_point(tiny_mdp):
    res = full_rvi(tiny_mdp, (0.1, 0.2))
    R = tiny_mdp.full_rewards((0.1, 0.2))
    Q = np.column_stack([R[:, a] + m @ res.values for a, m in enumerate(tiny_mdp.kernel.matrices)])
    assert np.array_equal(greedy(Q), res.policy)


def test_span_nonincreasing_after_burn_in(tiny_mdp):
    spans = full_rvi(tiny_mdp, (0.2, 0.2)).spans
    tail = spans[10:]
    assert all(b <= a * 1.01 + 1e-12 for a, b in zip(tail, tail[1:]))


def test_policies_are_admissible(default_mdp):
    pol = full_rvi(default_mdp, 0.0).policy
    assert default_mdp.kernel.admissible[np.arange(len(pol)), pol].all()


def test_slack_constraint_gives_zero_multiplier():
    mdp = MdpModel(default_model(D_max=1e6))
    res = dual_solve(mdp, outer_iters=5)
    assert res.eta.tolist() == [0.0]
    assert np.array_equal(res.policy, full_rvi(mdp, 0.0).policy)


def test_dual_policy_meets_delay_bound(default_mdp):
    res = dual_solve(default_mdp)
    assert res.evaluation.delay[0] <= 3.0 + 0.05
    assert res.eta[0] > 0
    # the unconstrained optimum violates the bound, so the multiplier matters
    free = evaluate_policy(default_mdp, full_rvi(default_mdp, 0.0).policy)
    assert free.delay[0] > 3.05


def test_dual_function_is_unimodal(default_mdp):
    grid = np.linspace(0.0, 0.05, 11)
    g = np.array([dual_function(default_mdp, e) for e in grid])
    peak = int(np.argmax(g))
    assert np.all(np.diff(g[: peak + 1]) >= -1e-7)
    assert np.all(np.diff(g[peak:]) <= 1e-7)


def test_value_and_policy_csv(tmp_path, tiny_mdp):
    res = full_rvi(tiny_mdp, 0.0)
    write_values_csv(tmp_path / "v.csv", res.values)
    write_policy_csv(tmp_path / "p.csv", res.policy)
    with open(tmp_path / "v.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["state_idx", "value"] and len(rows) == 325
    assert float(rows[1 + 5][1]) == res.values[5]
    with open(tmp_path / "p.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["state_idx", "action"]
    assert [int(r[1]) for r in rows[1:]] == res.policy.tolist()
