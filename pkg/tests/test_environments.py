import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from subspace_defense.environments import (
    LEFT,
    RIGHT,
    TOY_NAMES,
    PlantedEnvSpec,
    TabularMdp,
    ToyMdpSpec,
    planted_env,
    toy_mdp,
    toy_safe_projector,
)
from subspace_defense.errors import InvalidInput
from subspace_defense.linalg import eigendecompose, empirical_covariance
from subspace_defense.policies import ConstantPolicy, planted_backdoor_policy, toy_optimal_policy
from subspace_defense.attack import rollout
from subspace_defense.sanitizer import collect_clean_samples


@pytest.fixture
def toy():
    return toy_mdp(ToyMdpSpec(gamma=0.9, trigger_height=2.0))


# ---------------------------------------------------------------- toy MDP


def test_toy_layout(toy):
    expected = {"E": (-1, 0), "F": (0, 0), "G": (1, 0), "A": (-1, 2), "B": (0, 2), "C": (1, 2)}
    for name, xy in expected.items():
        np.testing.assert_array_equal(toy.state(name), xy)
    np.testing.assert_array_equal(toy.initial_dist, [0, 1, 0, 0, 0, 0])
    assert toy.gamma == 0.9 and toy.n_actions == 2 and toy.state_dim == 2


@pytest.mark.parametrize(
    "start, action, nxt, reward",
    [("F", LEFT, "E", 0.0), ("F", RIGHT, "G", 1.0), ("E", LEFT, "E", 1.0), ("G", LEFT, "G", 0.0), ("G", RIGHT, "G", 0.0)],
)
def test_toy_steps(toy, rng, start, action, nxt, reward):
    s, r = toy.step(toy.state(start), action, rng)
    np.testing.assert_array_equal(s, toy.state(nxt))
    assert r == reward


def test_toy_transitions_are_deterministic(toy):
    assert set(np.unique(toy.transitions)) == {0.0, 1.0}
    np.testing.assert_array_equal(toy.transitions.sum(axis=2), 1.0)


def test_top_row_is_unreachable(toy):
    # closure of {F} under every action never leaves the bottom row
    reach, frontier = {1}, [1]
    while frontier:
        s = frontier.pop()
        for a in range(2):
            t = int(np.argmax(toy.transitions[s, a]))
            if t not in reach:
                reach.add(t)
                frontier.append(t)
    assert {TOY_NAMES[i] for i in reach} == {"E", "F", "G"}


def test_clean_optimal_trajectory_visits_only_f_and_e(toy, rng):
    r = rollout(toy, toy_optimal_policy(), None, 30, 4, rng)
    names = {TOY_NAMES[i] for i in toy.index_of(r.true_states.reshape(-1, 2))}
    assert names == {"F", "E"}


def test_toy_rewards_in_unit_interval(toy):
    assert toy.rewards.min() >= 0 and toy.rewards.max() <= 1


def test_toy_safe_projector_is_x_axis():
    np.testing.assert_array_equal(toy_safe_projector().matrix, np.diag([1.0, 0.0]))


def test_invalid_action(toy, rng):
    for a in (2, -1):
        with pytest.raises(InvalidInput):
            toy.step(toy.state("F"), a, rng)


def test_off_table_state_rejected(toy, rng):
    with pytest.raises(InvalidInput):
        toy.step(np.array([0.5, 0.0]), LEFT, rng)


def test_bad_toy_spec():
    with pytest.raises(InvalidInput):
        ToyMdpSpec(gamma=1.0)
    with pytest.raises(InvalidInput):
        ToyMdpSpec(trigger_height=0.0)


def test_tabular_validation():
    with pytest.raises(InvalidInput):
        TabularMdp(np.eye(2), np.full((2, 1, 2), 0.7), np.zeros((2, 1)), [1.0, 0.0], 0.5)
    with pytest.raises(InvalidInput):
        TabularMdp(np.eye(2), np.full((2, 1, 2), 0.5), np.full((2, 1), 2.0), [1.0, 0.0], 0.5)
    with pytest.raises(InvalidInput):
        TabularMdp(np.eye(2), np.full((2, 1, 2), 0.5), np.zeros((2, 1)), [1.0, 0.0], 1.0)


def test_tabular_stochastic_transitions_match_table(rng):
    env = TabularMdp(np.eye(3), np.tile([0.2, 0.5, 0.3], (3, 1, 1)), np.zeros((3, 1)), [1.0, 0.0, 0.0], 0.5)
    s = np.repeat(env.coords[:1], 20_000, axis=0)
    nxt, _ = env.transition(s, np.zeros(20_000, dtype=int), rng)
    freq = np.bincount(env.index_of(nxt), minlength=3) / 20_000
    np.testing.assert_allclose(freq, [0.2, 0.5, 0.3], atol=0.015)


# ---------------------------------------------------------------- planted env


def spec(**kw):
    base = dict(D=8, d=2, eigenvalues=(3.0, 1.0), C0=0.0)
    base.update(kw)
    return PlantedEnvSpec.standard(**base)


def test_zero_c0_states_lie_in_the_planted_span(rng):
    env = planted_env(spec())
    x = collect_clean_samples(env, ConstantPolicy([0.5, 0.5, 0.0], 8), 500, rng=rng).samples
    assert np.abs(env.complement_coords(x)).max() <= 1e-12
    vals = eigendecompose(empirical_covariance(x)).eigenvalues
    assert np.all(vals[2:] <= 1e-12) and vals[1] > 0.1


def test_occupancy_eigenvalues_match_profile(rng):
    env = planted_env(spec())
    policy = planted_backdoor_policy(env)
    x = collect_clean_samples(env, policy, 10_000, rng=rng).samples
    vals = eigendecompose(empirical_covariance(x)).eigenvalues
    np.testing.assert_allclose(vals[:2], [3.0, 1.0], rtol=0.1)


def test_true_covariance_matches_fixed_time_moments(rng):
    # stationary latent chain: every time step shares the occupancy covariance
    env = planted_env(spec(C0=0.8))
    r = rollout(env, ConstantPolicy([0.2, 0.3, 0.5], 8), None, 6, 40_000, rng)
    emp = empirical_covariance(r.true_states[5]).matrix
    assert np.abs(emp - env.true_covariance()).max() < 0.08


@pytest.mark.parametrize("k", [1, 3, 10])
def test_complement_variance_matches_ball_moments(rng, k):
    C0 = 1.5
    env = planted_env(PlantedEnvSpec.standard(D=k + 1, d=1, eigenvalues=(1.0,), C0=C0))
    xi = env.complement_coords(env.initial(rng, 200_000))
    # radius r = C0 u^(1/k): E r^2 = k C0^2 / (k + 2), split evenly over k directions
    np.testing.assert_allclose(xi.var(axis=0), C0**2 / (k + 2), rtol=0.03)
    assert np.linalg.norm(xi, axis=1).max() <= C0


def test_support_bound_is_exact(rng):
    env = planted_env(spec(C0=0.4))
    r = rollout(env, ConstantPolicy([1 / 3] * 3, 8), None, 20, 500, rng)
    norms = np.linalg.norm(env.complement_coords(r.true_states), axis=2)
    assert norms.max() <= 0.4


def test_reward_range_under_random_probes(rng):
    env = planted_env(spec(C0=1.0))
    s = rng.standard_normal((100_000, 8)) * 10.0
    a = rng.integers(0, 3, 100_000)
    r = env.reward(s, a)
    assert r.min() >= 0.0 and r.max() <= 1.0


def test_standard_reward_structure(rng):
    env = planted_env(spec())
    z = np.array([[0.4, -0.2]])
    s = z @ env.U.T
    w = 1.0 / np.sqrt(2 * np.array([3.0, 1.0]))
    score = float(z[0] @ w)
    np.testing.assert_allclose(env.raw_scores(s)[0], [0.5 + 0.5 * score, 0.5 - 0.5 * score, 0.0])


def test_planted_determinism():
    env = planted_env(spec(C0=0.3))
    policy = planted_backdoor_policy(env)
    a = rollout(env, policy, None, 15, 7, np.random.default_rng(3))
    b = rollout(env, policy, None, 15, 7, np.random.default_rng(3))
    np.testing.assert_array_equal(a.true_states, b.true_states)
    np.testing.assert_array_equal(a.rewards, b.rewards)


def test_same_seed_same_basis():
    np.testing.assert_array_equal(planted_env(spec(seed=4)).U, planted_env(spec(seed=4)).U)
    assert not np.allclose(planted_env(spec(seed=4)).U, planted_env(spec(seed=5)).U)


def test_full_dimension_has_no_complement(rng):
    env = planted_env(PlantedEnvSpec.standard(D=3, d=3, eigenvalues=(3.0, 2.0, 1.0)))
    assert env.U_perp.shape == (3, 0)
    assert env.complement_projector.d == 0
    np.testing.assert_allclose(env.safe_projector.matrix, np.eye(3), atol=1e-12)


def test_bad_basis_rejected():
    s = spec()
    with pytest.raises(InvalidInput):
        planted_env(PlantedEnvSpec.from_dict({**s.to_dict(), "basis": np.ones((8, 2)).tolist()}))


@pytest.mark.parametrize(
    "kw", [dict(d=9), dict(d=0), dict(eigenvalues=(1.0, 3.0)), dict(C0=-1.0), dict(gamma=1.0), dict(persistence=1.0)]
)
def test_bad_planted_spec(kw):
    with pytest.raises(InvalidInput):
        spec(**kw)


def test_drift_makes_covariance_policy_dependent():
    s = spec()
    data = {**s.to_dict(), "drift": [[0.5, 0.0], [-0.5, 0.0], [0.0, 0.0]]}
    env = planted_env(PlantedEnvSpec.from_dict(data))
    assert env.has_drift
    with pytest.raises(ValueError):
        env.true_covariance()


def test_spec_round_trip():
    s = spec(C0=0.25, seed=9)
    back = PlantedEnvSpec.from_dict(json.loads(json.dumps(s.to_dict())))
    assert back == s
    np.testing.assert_array_equal(planted_env(back).U, planted_env(s).U)


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 3.0))
def test_planted_support_property(seed, C0):
    env = planted_env(spec(C0=C0))
    rng = np.random.default_rng(seed)
    s = env.initial(rng, 64)
    for _ in range(3):
        s, r = env.transition(s, rng.integers(0, 3, 64), rng)
        assert np.all(np.linalg.norm(env.complement_coords(s), axis=1) <= C0 + 1e-12)
        assert np.all((r >= 0) & (r <= 1))
