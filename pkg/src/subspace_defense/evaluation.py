"""Policy evaluation: truncated Monte Carlo, exact tabular solves, and the performance-difference identity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attack import TriggerFunction, rollout
from .environments import Mdp, TabularMdp
from .errors import InvalidInput, NotTabular
from .policies import Policy, TabularPolicy


@dataclass(frozen=True, eq=False)
class ValueEstimate:
    mean: float
    std: float
    episodes: int
    truncation_horizon: int
    truncation_bias_bound: float
    returns: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def stderr(self) -> float:
        return self.std / math.sqrt(self.episodes)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "episodes": self.episodes,
            "truncation_horizon": self.truncation_horizon,
            "truncation_bias_bound": self.truncation_bias_bound,
        }


def truncation_horizon(gamma: float, tol: float) -> int:
    """Smallest ``T >= 1`` with ``gamma^T / (1 - gamma) <= tol``."""
    if tol <= 0:
        raise InvalidInput("tol must be positive")
    if gamma == 0:
        return 1
    T = math.ceil(math.log(tol * (1.0 - gamma)) / math.log(gamma))
    T = max(T, 1)
    # guard against log round-off on either side
    while T > 1 and gamma ** (T - 1) / (1.0 - gamma) <= tol:
        T -= 1
    while gamma**T / (1.0 - gamma) > tol:
        T += 1
    return T


def mc_value(
    env: Mdp,
    policy: Policy,
    trigger: Optional[TriggerFunction] = None,
    episodes: int = 1000,
    tol: float = 1e-4,
    rng: Optional[np.random.Generator] = None,
) -> ValueEstimate:
    """Mean and standard deviation of discounted returns truncated at the ``tol`` horizon.

    Rewards lie in [0, 1], so truncation shifts the mean down by at most
    ``gamma^T / (1 - gamma)``.
    """
    if episodes < 1:
        raise InvalidInput("episodes must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    T = truncation_horizon(env.gamma, tol)
    returns = rollout(env, policy, trigger, T, episodes, rng).returns(env.gamma)
    # identical returns get an exact zero rather than round-off from the mean
    std = float(returns.std(ddof=1)) if episodes > 1 and np.ptp(returns) > 0 else 0.0
    return ValueEstimate(float(returns.mean()), std, episodes, T, env.gamma**T / (1.0 - env.gamma), returns)


def _require_tabular(env: Mdp) -> TabularMdp:
    if not isinstance(env, TabularMdp):
        raise NotTabular("exact evaluation needs a TabularMdp")
    return env


def state_action_probs(env: TabularMdp, policy: Policy, trigger_vectors: Optional[np.ndarray] = None) -> np.ndarray:
    seen = env.coords if trigger_vectors is None else env.coords + trigger_vectors
    return np.atleast_2d(policy.act(seen))


def state_values(env: TabularMdp, probs: np.ndarray) -> np.ndarray:
    """Solve ``(I - gamma P_pi) V = r_pi`` for per-state action probabilities ``(S, A)``."""
    p_pi, r_pi = env.policy_matrix(probs)
    return np.linalg.solve(np.eye(env.n_states) - env.gamma * p_pi, r_pi)


def occupancy(env: TabularMdp, probs: np.ndarray) -> np.ndarray:
    """Discounted occupancy ``(1 - gamma) mu^T (I - gamma P_pi)^{-1}``."""
    p_pi, _ = env.policy_matrix(probs)
    return (1.0 - env.gamma) * np.linalg.solve((np.eye(env.n_states) - env.gamma * p_pi).T, env.initial_dist)


def exact_value_tabular(
    env: Mdp,
    policy: Policy,
    trigger: Optional[TriggerFunction] = None,
    branch_cap: int = 100_000,
    tol: float = 1e-13,
) -> float:
    """Exact value from ``mu`` of ``policy`` (composed with ``trigger``) on a tabular MDP.

    Markov triggers fold into the policy and need one linear solve. Other
    triggers are handled by enumerating true-state histories until the
    trigger's declared ``horizon`` and solving for the untriggered tail; with no
    declared horizon the enumeration runs until ``gamma^T / (1 - gamma) <= tol``.
    """
    env = _require_tabular(env)
    if trigger is None or trigger.horizon == 0:
        return float(env.initial_dist @ state_values(env, state_action_probs(env, policy)))
    if trigger.markov:
        f = trigger(env.coords[None, :, :])
        return float(env.initial_dist @ state_values(env, state_action_probs(env, policy, f)))

    tail = state_values(env, state_action_probs(env, policy))
    H = trigger.horizon if trigger.horizon is not None else truncation_horizon(env.gamma, tol)
    starts = np.flatnonzero(env.initial_dist > 0)
    paths = starts[:, None]
    weights = env.initial_dist[starts]
    value = 0.0
    for t in range(H):
        history = env.coords[paths.T]  # (t + 1, branches, D)
        f = trigger(history)
        probs = np.atleast_2d(policy.act(env.coords[paths[:, -1]] + f))
        cur = paths[:, -1]
        value += env.gamma**t * float(np.sum(weights * np.einsum("ba,ba->b", probs, env.rewards[cur])))
        # branch over (action, next state) pairs with positive probability
        joint = probs[:, :, None] * env.transitions[cur]  # (branches, A, S)
        b_idx, _, s_idx = np.nonzero(joint > 0)
        if b_idx.size > branch_cap:
            raise NotTabular(f"history enumeration exceeded {branch_cap} branches at t={t}")
        w = (weights[:, None, None] * joint)[joint > 0]
        # merge identical (history, next) pairs reached by different actions
        new_paths = np.column_stack([paths[b_idx], s_idx])
        new_paths, inverse = np.unique(new_paths, axis=0, return_inverse=True)
        weights = np.bincount(inverse.ravel(), weights=w, minlength=new_paths.shape[0])
        paths = new_paths
    if trigger.horizon is not None:
        value += env.gamma**H * float(np.sum(weights * tail[paths[:, -1]]))
    return value


@dataclass(frozen=True)
class PerformanceDifferenceReport:
    lhs: float
    rhs: float

    @property
    def discrepancy(self) -> float:
        return abs(self.lhs - self.rhs)


def verify_performance_difference(env: Mdp, pi: Policy, pi_prime: Policy) -> PerformanceDifferenceReport:
    """Both sides of ``V^pi - V^pi' = E_{s ~ d^pi}[Q^pi'(s, pi) - V^pi'(s)] / (1 - gamma)``.

    The left side solves for both values; the right side only uses the
    occupancy of ``pi`` and the action values of ``pi'``.
    """
    env = _require_tabular(env)
    p = state_action_probs(env, pi)
    p2 = state_action_probs(env, pi_prime)
    v2 = state_values(env, p2)
    lhs = float(env.initial_dist @ state_values(env, p)) - float(env.initial_dist @ v2)

    q2 = env.rewards + env.gamma * np.einsum("sat,t->sa", env.transitions, v2)
    advantage = np.einsum("sa,sa->s", p, q2) - v2
    rhs = float(occupancy(env, p) @ advantage) / (1.0 - env.gamma)
    return PerformanceDifferenceReport(lhs, rhs)


def random_tabular_mdp(n_states: int, n_actions: int, rng: np.random.Generator, gamma: Optional[float] = None) -> TabularMdp:
    """Dense random MDP whose states are the standard basis vectors of R^S."""
    trans = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    rewards = rng.random((n_states, n_actions))
    mu = rng.dirichlet(np.ones(n_states))
    g = float(rng.uniform(0.5, 0.95)) if gamma is None else gamma
    return TabularMdp(np.eye(n_states), trans, rewards, mu, g)


def random_tabular_policy(env: TabularMdp, rng: np.random.Generator) -> TabularPolicy:
    return TabularPolicy(env.coords, rng.dirichlet(np.ones(env.n_actions), size=env.n_states))
