"""Subspace triggers and the backdoored interaction protocol.

At each step the trigger sees the true-state history ``s_0..s_t``, the agent
acts on ``s_t + f(s_0..s_t)``, and the environment moves and pays out on the
true ``(s_t, a_t)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .environments import Mdp
from .errors import InvalidInput, InvalidTrigger
from .linalg import Projector
from .policies import Policy

TRIGGER_TOL = 1e-10

# rule(history) -> trigger; history has shape (t + 1, N, D), result broadcasts to (N, D)
TriggerRule = Callable[[np.ndarray], np.ndarray]


class TriggerFunction:
    """Trigger constrained to the complement of the safe subspace.

    ``markov`` marks triggers that only look at the current state, and
    ``horizon`` (when known) is the first step from which the trigger is always
    zero. Exact tabular evaluation uses both.
    """

    def __init__(self, rule: TriggerRule, complement: Projector, *, markov: bool = False, horizon: Optional[int] = None):
        self.rule = rule
        self.complement = complement
        self.markov = markov
        self.horizon = horizon

    @property
    def dim(self) -> int:
        return self.complement.dim

    def safe_component(self, v: np.ndarray) -> np.ndarray:
        return v - self.complement.apply(v)

    def check(self, v: np.ndarray) -> np.ndarray:
        leak = np.linalg.norm(np.atleast_2d(self.safe_component(v)), axis=1)
        if leak.size and leak.max() > TRIGGER_TOL:
            raise InvalidTrigger(f"trigger has a safe-subspace component of norm {leak.max():.3g}")
        return v

    def __call__(self, history) -> np.ndarray:
        h = np.asarray(history, dtype=float)
        if h.ndim == 2:  # a single trajectory (t + 1, D)
            return self(h[:, None, :])[0]
        v = np.broadcast_to(np.asarray(self.rule(h), dtype=float), h.shape[1:]).copy()
        return self.check(v)


def _in_complement(direction: np.ndarray, complement: Projector) -> bool:
    return float(np.linalg.norm(direction - complement.apply(direction))) <= TRIGGER_TOL


def constant_trigger(direction, magnitude: float, complement: Projector) -> TriggerFunction:
    """``f(history) = magnitude * direction`` for a unit ``direction`` inside the complement."""
    u = np.asarray(direction, dtype=float)
    if u.shape != (complement.dim,):
        raise InvalidInput(f"direction must have shape ({complement.dim},)")
    if abs(np.linalg.norm(u) - 1.0) > 1e-9:
        raise InvalidInput("direction must have unit norm")
    if not _in_complement(u, complement):
        raise InvalidTrigger("direction is not inside the complement subspace")
    v = float(magnitude) * u
    return TriggerFunction(lambda h: v, complement, markov=True, horizon=0 if magnitude == 0 else None)


def adaptive_trigger(
    rule: TriggerRule, complement: Projector, *, horizon: Optional[int] = None, markov: bool = False
) -> TriggerFunction:
    """Wrap an arbitrary history rule; every emission is checked against the safe subspace."""
    return TriggerFunction(rule, complement, markov=markov, horizon=horizon)


def impulse_trigger(vector, complement: Projector, times=(0,)) -> TriggerFunction:
    """Fire ``vector`` at the listed time steps only."""
    v = np.asarray(vector, dtype=float)
    fire = frozenset(int(t) for t in times)

    def rule(h):
        return v if h.shape[0] - 1 in fire else np.zeros_like(v)

    return TriggerFunction(rule, complement, horizon=max(fire) + 1 if fire else 0)


@dataclass(frozen=True, eq=False)
class Rollout:
    """Batch of trajectories; arrays are indexed ``[t, episode, ...]``."""

    true_states: np.ndarray
    perceived_states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    triggers: np.ndarray

    def returns(self, gamma: float) -> np.ndarray:
        disc = gamma ** np.arange(self.rewards.shape[0])
        # column-wise reduction so identical episodes get bitwise-identical returns
        return (disc[:, None] * self.rewards).sum(axis=0)


@dataclass(frozen=True, eq=False)
class TriggeredTrajectory:
    true_states: np.ndarray
    perceived_states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    trigger_vectors: np.ndarray

    def __post_init__(self):
        T = self.actions.shape[0]
        if any(a.shape[0] != T for a in (self.true_states, self.perceived_states, self.rewards, self.trigger_vectors)):
            raise InvalidInput("trajectory fields have different lengths")
        if not np.array_equal(self.perceived_states, self.true_states + self.trigger_vectors):
            raise InvalidInput("perceived states must equal true states plus triggers")

    def __len__(self) -> int:
        return self.actions.shape[0]

    def to_jsonl(self) -> str:
        lines = []
        for t in range(len(self)):
            lines.append(json.dumps({
                "t": t,
                "true_state": self.true_states[t].tolist(),
                "perceived_state": self.perceived_states[t].tolist(),
                "action": int(self.actions[t]),
                "reward": float(self.rewards[t]),
                "trigger": self.trigger_vectors[t].tolist(),
            }))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "TriggeredTrajectory":
        recs = [json.loads(line) for line in text.splitlines() if line.strip()]
        recs.sort(key=lambda r: r["t"])
        return cls(
            np.array([r["true_state"] for r in recs], dtype=float),
            np.array([r["perceived_state"] for r in recs], dtype=float),
            np.array([r["action"] for r in recs], dtype=np.int64),
            np.array([r["reward"] for r in recs], dtype=float),
            np.array([r["trigger"] for r in recs], dtype=float),
        )


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(probs.shape[0])
    idx = (u[:, None] >= np.cumsum(probs, axis=1)).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def rollout(
    env: Mdp,
    policy: Policy,
    trigger: Optional[TriggerFunction],
    horizon: int,
    episodes: int,
    rng: np.random.Generator,
) -> Rollout:
    """Run ``episodes`` copies of the interaction protocol for ``horizon`` steps in lockstep."""
    if horizon < 1:
        raise InvalidInput("horizon must be >= 1")
    if episodes < 1:
        raise InvalidInput("episodes must be >= 1")
    if trigger is not None and trigger.dim != env.state_dim:
        raise InvalidInput("trigger and environment dimensions differ")
    D = env.state_dim
    true = np.empty((horizon, episodes, D))
    perceived = np.empty_like(true)
    trig = np.zeros_like(true)
    actions = np.empty((horizon, episodes), dtype=np.int64)
    rewards = np.empty((horizon, episodes))
    s = env.initial(rng, episodes)
    for t in range(horizon):
        true[t] = s
        if trigger is None:
            seen = s
        else:
            trig[t] = trigger(true[: t + 1])
            seen = s + trig[t]
        perceived[t] = seen
        a = sample_actions(policy.act(seen), rng)
        actions[t] = a
        s, rewards[t] = env.transition(s, a, rng)
    return Rollout(true, perceived, actions, rewards, trig)


def run_protocol(
    env: Mdp, policy: Policy, trigger: Optional[TriggerFunction], horizon: int, rng: np.random.Generator
) -> TriggeredTrajectory:
    r = rollout(env, policy, trigger, horizon, 1, rng)
    return TriggeredTrajectory(
        r.true_states[:, 0], r.perceived_states[:, 0], r.actions[:, 0], r.rewards[:, 0], r.triggers[:, 0]
    )


def perceived_norm_profile(r: Rollout) -> np.ndarray:
    """Mean ``||s_t + f(s_0..s_t)||_2`` over episodes, per time step."""
    return np.linalg.norm(r.perceived_states, axis=2).mean(axis=1)


def estimate_B(
    env: Mdp,
    policy: Policy,
    trigger: Optional[TriggerFunction],
    rollouts: int,
    horizon: int,
    rng: np.random.Generator,
) -> float:
    """Monte-Carlo estimate of ``max_t E||s_t + f(s_0..s_t)||_2`` for ``t < horizon``."""
    if rollouts < 1:
        raise InvalidInput("rollouts must be >= 1")
    return float(perceived_norm_profile(rollout(env, policy, trigger, horizon, rollouts, rng)).max())
