"""Policies mapping states to action distributions, and an empirical Lipschitz estimator.

Policies return full probability vectors: ``act(s)`` with ``s`` of shape ``(D,)``
gives ``(A,)`` and a batch ``(N, D)`` gives ``(N, A)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .environments import LEFT, RIGHT, PlantedEnv, PlantedEnvSpec, ToyMdpSpec, planted_env
from .errors import DimensionMismatch, InvalidInput

# clean support membership slack on ||Proj_perp s|| (round-off of the projection itself)
SUPPORT_SLACK = 1e-9


class Policy:
    state_dim: int
    n_actions: int

    def _probs(self, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def act(self, states) -> np.ndarray:
        s = np.asarray(states, dtype=float)
        single = s.ndim == 1
        s = np.atleast_2d(s)
        if s.shape[1] != self.state_dim:
            raise DimensionMismatch(f"policy expects {self.state_dim}-dim states, got {s.shape[1]}")
        p = self._probs(s)
        return p[0] if single else p

    __call__ = act


def one_hot(index: int, n: int) -> np.ndarray:
    v = np.zeros(n)
    v[index] = 1.0
    return v


def check_simplex(p, tol: float = 1e-12) -> bool:
    p = np.atleast_2d(p)
    return bool(np.all(p >= 0) and np.all(np.abs(p.sum(axis=1) - 1.0) <= tol))


class ConstantPolicy(Policy):
    def __init__(self, probs, state_dim: int):
        self.probs = np.asarray(probs, dtype=float)
        if not check_simplex(self.probs):
            raise InvalidInput("probs must be a probability vector")
        self.n_actions = self.probs.shape[0]
        self.state_dim = state_dim

    def _probs(self, states):
        return np.broadcast_to(self.probs, (states.shape[0], self.n_actions)).copy()


class TabularPolicy(Policy):
    """Lookup table over labelled points; other inputs use the nearest table entry.

    Distance ties go to the lexicographically smallest coordinate vector.
    """

    def __init__(self, coords, probs):
        coords = np.asarray(coords, dtype=float)
        probs = np.asarray(probs, dtype=float)
        if coords.shape[0] != probs.shape[0]:
            raise InvalidInput("need one action distribution per tabulated state")
        if not check_simplex(probs):
            raise InvalidInput("every row of probs must be a probability vector")
        order = np.lexsort(coords.T[::-1])
        self.coords = coords[order]
        self.table = probs[order]
        self.state_dim = coords.shape[1]
        self.n_actions = probs.shape[1]

    def lookup(self, states) -> np.ndarray:
        s = np.atleast_2d(np.asarray(states, dtype=float))
        dist = np.sum((s[:, None, :] - self.coords[None, :, :]) ** 2, axis=2)
        return dist.argmin(axis=1)

    def _probs(self, states):
        return self.table[self.lookup(states)].copy()


def _toy_table(spec: ToyMdpSpec, bottom: int, top: int):
    h = spec.trigger_height
    coords = [(-1.0, 0.0), (0.0, 0.0), (1.0, 0.0), (-1.0, h), (0.0, h), (1.0, h)]
    actions = [bottom] * 3 + [top] * 3
    return TabularPolicy(coords, np.array([one_hot(a, 2) for a in actions]))


def toy_backdoor_policy(spec: ToyMdpSpec = ToyMdpSpec()) -> TabularPolicy:
    """Left on the bottom row (optimal there), right on every top-row state."""
    return _toy_table(spec, LEFT, RIGHT)


def toy_optimal_policy(spec: ToyMdpSpec = ToyMdpSpec()) -> TabularPolicy:
    return _toy_table(spec, LEFT, LEFT)


def toy_right_policy(spec: ToyMdpSpec = ToyMdpSpec()) -> TabularPolicy:
    return _toy_table(spec, RIGHT, RIGHT)


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class PlantedCleanPolicy(Policy):
    """Softmax of the env's linear reward scores at temperature ``softness``, read off ``Proj_E s``."""

    def __init__(self, env: PlantedEnv, softness: float):
        if not softness > 0:
            raise InvalidInput("softness must be positive")
        self.env = env
        self.softness = float(softness)
        self.state_dim = env.state_dim
        self.n_actions = env.n_actions

    def _probs(self, states):
        return _softmax(self.env.raw_scores(states) / self.softness)

    @property
    def lipschitz_bound(self) -> float:
        w = np.asarray(self.env.spec.reward_weights, dtype=float)
        spread = max(np.linalg.norm(w[a] - w[b]) for a in range(len(w)) for b in range(len(w)))
        return float(spread / (2.0 * self.softness))


class PlantedBackdoorPolicy(Policy):
    """``(1 - w) pi_opt(s) + w one_hot(bad_action)`` with ``w`` ramping on ``||Proj_perp s||``.

    ``w`` is 0 up to ``C0`` and reaches 1 at ``C0 + margin``, so on the clean
    support the policy is exactly the clean softmax policy.
    """

    def __init__(self, env: PlantedEnv, softness: float, bad_action: int, margin: float):
        if not margin > 10 * SUPPORT_SLACK:
            raise InvalidInput("margin must be positive")
        if not (isinstance(bad_action, (int, np.integer)) and 0 <= bad_action < env.n_actions):
            raise InvalidInput(f"bad_action must be an action index in [0, {env.n_actions})")
        self.env = env
        self.clean = PlantedCleanPolicy(env, softness)
        self.bad_action = int(bad_action)
        self.margin = float(margin)
        self.state_dim = env.state_dim
        self.n_actions = env.n_actions
        self._bad = one_hot(self.bad_action, self.n_actions)

    def blend_weight(self, states) -> np.ndarray:
        s = np.atleast_2d(np.asarray(states, dtype=float))
        r = np.linalg.norm(self.env.complement_coords(s), axis=1)
        # the slack keeps round-off on the support boundary at w = 0; the ramp
        # still reaches 1 exactly at C0 + margin
        return np.clip((r - self.env.spec.C0 - SUPPORT_SLACK) / (self.margin - SUPPORT_SLACK), 0.0, 1.0)

    def _probs(self, states):
        w = self.blend_weight(states)[:, None]
        p = self.clean._probs(states)
        out = p.copy()
        mix = w[:, 0] > 0
        out[mix] = (1.0 - w[mix]) * p[mix] + w[mix] * self._bad
        return out

    @property
    def lipschitz_bound(self) -> float:
        """Analytic L for Assumption-2 style smoothness: softmax bound plus ``2 / margin``."""
        return self.clean.lipschitz_bound + 2.0 / (self.margin - SUPPORT_SLACK)


def planted_backdoor_policy(
    env: Union[PlantedEnv, PlantedEnvSpec], softness: float = 0.05, bad_action: int = 2, margin: float = 0.5
) -> PlantedBackdoorPolicy:
    if isinstance(env, PlantedEnvSpec):
        env = planted_env(env)
    return PlantedBackdoorPolicy(env, softness, bad_action, margin)


@dataclass(frozen=True)
class LipschitzCertificate:
    """Empirical lower bound on the policy's Lipschitz constant (never an upper bound)."""

    estimated_L: float
    probe_count: int
    max_violating_pair: tuple

    label: str = "empirical lower bound"


def lipschitz_ratio(policy: Policy, s, s2) -> float:
    """``||pi(s) - pi(s')||_1 / ||s - s'||_2``."""
    s, s2 = np.asarray(s, dtype=float), np.asarray(s2, dtype=float)
    dist = np.linalg.norm(s - s2)
    if dist == 0:
        raise InvalidInput("states coincide")
    return float(np.abs(policy.act(s) - policy.act(s2)).sum() / dist)


Region = Union[np.ndarray, Callable[[np.random.Generator, int], np.ndarray]]


def estimate_lipschitz(policy: Policy, region: Region, probes: int, rng: np.random.Generator) -> LipschitzCertificate:
    """Largest observed ratio ``||pi(s) - pi(s')||_1 / ||s - s'||_2`` over probe pairs.

    ``region`` is either a finite array of candidate states (pairs drawn from
    it, all of them when there are few enough) or a sampler
    ``sampler(rng, size) -> (size, D)``. With a sampler, half the pairs are
    independent draws and half are local perturbations at log-uniform radii in
    ``[1e-3, 1]``. Zero-distance pairs are skipped.
    """
    if probes < 1:
        raise InvalidInput("probes must be >= 1")
    if callable(region):
        n_far = probes // 2
        n_near = probes - n_far
        a = np.asarray(region(rng, probes), dtype=float)
        b_far = np.asarray(region(rng, n_far), dtype=float)
        direction = rng.standard_normal((n_near, a.shape[1]))
        direction /= np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-300)
        radius = 10.0 ** rng.uniform(-3.0, 0.0, n_near)
        b_near = a[n_far:] + direction * radius[:, None]
        x, y = a, np.vstack([b_far, b_near])
    else:
        pts = np.atleast_2d(np.asarray(region, dtype=float))
        m = pts.shape[0]
        if m * (m - 1) // 2 <= probes:
            i, j = np.triu_indices(m, k=1)
        else:
            i = rng.integers(0, m, probes)
            j = rng.integers(0, m, probes)
        x, y = pts[i], pts[j]
    dist = np.linalg.norm(x - y, axis=1)
    keep = dist > 0
    if not np.any(keep):
        raise InvalidInput("every probe pair has zero distance")
    x, y, dist = x[keep], y[keep], dist[keep]
    ratio = np.abs(policy.act(x) - policy.act(y)).sum(axis=1) / dist
    k = int(np.argmax(ratio))
    return LipschitzCertificate(float(ratio[k]), int(keep.sum()), (x[k].copy(), y[k].copy()))
