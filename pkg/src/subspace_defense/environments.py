"""MDPs with states in R^D: a generic tabular MDP, the six-state toy MDP, and planted-subspace envs.

Every environment works on batches: ``initial`` returns ``(N, D)`` states and
``transition`` advances ``(N, D)`` states under ``(N,)`` actions. The random
draws per call don't depend on the actions taken, so two rollouts that share a
seed see the same environment noise (common random numbers).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import InvalidInput
from .linalg import Projector, fix_signs, random_orthonormal

LEFT, RIGHT = 0, 1
STATE_TOL = 1e-9


class Mdp:
    """Interface shared by all environments."""

    state_dim: int
    n_actions: int
    gamma: float

    def initial(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def transition(self, states: np.ndarray, actions: np.ndarray, rng: np.random.Generator):
        """Return ``(next_states, rewards)`` for a batch."""
        raise NotImplementedError

    def check_actions(self, actions) -> np.ndarray:
        a = np.asarray(actions)
        if a.size and (not np.issubdtype(a.dtype, np.integer) or a.min() < 0 or a.max() >= self.n_actions):
            raise InvalidInput(f"actions must be integers in [0, {self.n_actions})")
        return a.astype(np.int64)

    def step(self, state, action: int, rng: np.random.Generator):
        """Single-state step; returns ``(next_state, reward)``."""
        s = np.asarray(state, dtype=float)
        if s.shape != (self.state_dim,):
            raise InvalidInput(f"state must have shape ({self.state_dim},), got {s.shape}")
        a = self.check_actions(np.array([action]))
        nxt, r = self.transition(s[None, :], a, rng)
        return nxt[0], float(r[0])


class TabularMdp(Mdp):
    """Finite MDP whose states are labelled points in R^D.

    ``transitions[s, a]`` is the next-state distribution and ``rewards[s, a]``
    the reward; states passed to :meth:`transition` must coincide with one of
    ``coords`` (within 1e-9).
    """

    def __init__(self, coords, transitions, rewards, initial_dist, gamma: float, names: Optional[Sequence[str]] = None):
        self.coords = np.array(coords, dtype=float)
        self.transitions = np.array(transitions, dtype=float)
        self.rewards = np.array(rewards, dtype=float)
        self.initial_dist = np.array(initial_dist, dtype=float)
        n_states, self.state_dim = self.coords.shape
        self.n_actions = self.transitions.shape[1]
        if self.transitions.shape != (n_states, self.n_actions, n_states):
            raise InvalidInput("transitions must have shape (S, A, S)")
        if self.rewards.shape != (n_states, self.n_actions):
            raise InvalidInput("rewards must have shape (S, A)")
        if np.any(self.rewards < 0) or np.any(self.rewards > 1):
            raise InvalidInput("rewards must lie in [0, 1]")
        if not np.allclose(self.transitions.sum(axis=2), 1.0, atol=1e-12) or np.any(self.transitions < 0):
            raise InvalidInput("transition rows must be probability vectors")
        if not math.isclose(self.initial_dist.sum(), 1.0, abs_tol=1e-12) or np.any(self.initial_dist < 0):
            raise InvalidInput("initial distribution must be a probability vector")
        if not 0 <= gamma < 1:
            raise InvalidInput("gamma must lie in [0, 1)")
        self.gamma = float(gamma)
        self.names = list(names) if names is not None else [str(i) for i in range(n_states)]
        self.coords.setflags(write=False)
        self.transitions.setflags(write=False)
        self.rewards.setflags(write=False)
        self._cum_trans = np.cumsum(self.transitions, axis=2)
        self._cum_init = np.cumsum(self.initial_dist)

    @property
    def n_states(self) -> int:
        return self.coords.shape[0]

    def index_of(self, states) -> np.ndarray:
        s = np.atleast_2d(np.asarray(states, dtype=float))
        dist = np.linalg.norm(s[:, None, :] - self.coords[None, :, :], axis=2)
        idx = dist.argmin(axis=1)
        if np.any(dist[np.arange(len(idx)), idx] > STATE_TOL):
            raise InvalidInput("state is not one of the tabulated states")
        return idx

    def state(self, name: str) -> np.ndarray:
        return self.coords[self.names.index(name)].copy()

    @staticmethod
    def _sample(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
        idx = (u[:, None] >= cum).sum(axis=1)
        return np.minimum(idx, cum.shape[-1] - 1)

    def initial(self, rng, size):
        u = rng.random(size)
        idx = np.minimum(np.searchsorted(self._cum_init, u, side="right"), self.n_states - 1)
        return self.coords[idx].copy()

    def transition(self, states, actions, rng):
        idx = self.index_of(states)
        a = self.check_actions(actions)
        u = rng.random(idx.shape[0])
        nxt = self._sample(self._cum_trans[idx, a], u)
        return self.coords[nxt].copy(), self.rewards[idx, a].copy()

    def policy_matrix(self, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """State-to-state kernel and expected reward under per-state action probabilities ``(S, A)``."""
        p_pi = np.einsum("sa,sat->st", probs, self.transitions)
        r_pi = np.einsum("sa,sa->s", probs, self.rewards)
        return p_pi, r_pi


@dataclass(frozen=True)
class ToyMdpSpec:
    gamma: float = 0.9
    trigger_height: float = 2.0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise InvalidInput("toy MDP needs gamma in (0, 1)")
        if not self.trigger_height > 0:
            raise InvalidInput("trigger_height must be positive")


TOY_NAMES = ("E", "F", "G", "A", "B", "C")


def toy_mdp(spec: ToyMdpSpec = ToyMdpSpec()) -> TabularMdp:
    """Six states in R^2: E, F, G on the x-axis and A, B, C lifted by ``trigger_height``.

    Start is always F. Left at F goes to E (reward 0), left at E loops (reward 1),
    right at F goes to G (reward 1), G absorbs with reward 0. The top row copies
    the bottom row's dynamics among itself and is unreachable from F.
    """
    h = spec.trigger_height
    coords = [(-1.0, 0.0), (0.0, 0.0), (1.0, 0.0), (-1.0, h), (0.0, h), (1.0, h)]
    # (state, action) -> (next, reward), bottom row; top row is the same shifted by 3
    table = {
        (0, LEFT): (0, 1.0),
        (0, RIGHT): (1, 0.0),
        (1, LEFT): (0, 0.0),
        (1, RIGHT): (2, 1.0),
        (2, LEFT): (2, 0.0),
        (2, RIGHT): (2, 0.0),
    }
    trans = np.zeros((6, 2, 6))
    rew = np.zeros((6, 2))
    for (s, a), (t, r) in table.items():
        for off in (0, 3):
            trans[s + off, a, t + off] = 1.0
            rew[s + off, a] = r
    mu = np.zeros(6)
    mu[1] = 1.0
    return TabularMdp(coords, trans, rew, mu, spec.gamma, names=TOY_NAMES)


def toy_safe_projector() -> Projector:
    """The x-axis, i.e. the span of the toy MDP's clean states."""
    return Projector.from_basis(np.array([[1.0], [0.0]]))


@dataclass(frozen=True)
class PlantedEnvSpec:
    """Synthetic env whose clean states live near a planted d-dimensional subspace.

    States are ``s = U z + U_perp xi``. The latent ``z`` follows a stationary
    AR(1) with covariance ``diag(eigenvalues)`` (plus per-action ``drift``),
    ``xi`` is drawn uniformly from the radius-``C0`` ball of the complement
    each step. Reward is ``clip(reward_bias[a] + reward_weights[a] . z, 0, 1)``.
    ``basis`` (U) is drawn from ``seed`` when not given.
    """

    D: int
    d: int
    eigenvalues: tuple
    C0: float = 0.0
    gamma: float = 0.9
    persistence: float = 0.5
    reward_weights: tuple = ()
    reward_bias: tuple = ()
    drift: Optional[tuple] = None
    seed: int = 0
    basis: Optional[tuple] = None

    def __post_init__(self):
        if not 1 <= self.d <= self.D:
            raise InvalidInput(f"need 1 <= d <= D, got d={self.d}, D={self.D}")
        if len(self.eigenvalues) != self.d or any(v <= 0 for v in self.eigenvalues):
            raise InvalidInput("eigenvalues must be d positive numbers")
        if list(self.eigenvalues) != sorted(self.eigenvalues, reverse=True):
            raise InvalidInput("eigenvalues must be non-increasing")
        if self.C0 < 0:
            raise InvalidInput("C0 must be non-negative")
        if not 0 <= self.gamma < 1:
            raise InvalidInput("gamma must lie in [0, 1)")
        if not 0 <= self.persistence < 1:
            raise InvalidInput("persistence must lie in [0, 1)")
        w = np.asarray(self.reward_weights, dtype=float)
        if w.ndim != 2 or w.shape[1] != self.d or w.shape[0] < 2:
            raise InvalidInput("reward_weights must be an (A, d) table with A >= 2")
        if len(self.reward_bias) != w.shape[0]:
            raise InvalidInput("reward_bias needs one entry per action")
        if self.drift is not None and np.asarray(self.drift, dtype=float).shape != w.shape:
            raise InvalidInput("drift must be an (A, d) table")

    @property
    def n_actions(self) -> int:
        return len(self.reward_bias)

    @property
    def complement_variance(self) -> float:
        """Per-direction variance of the uniform-ball complement noise: ``C0^2 / (D - d + 2)``."""
        k = self.D - self.d
        return self.C0**2 / (k + 2) if k else 0.0

    @classmethod
    def standard(
        cls,
        D: int = 16,
        d: int = 3,
        eigenvalues: Sequence[float] = (4.0, 2.0, 1.0),
        C0: float = 0.0,
        gamma: float = 0.9,
        persistence: float = 0.5,
        seed: int = 0,
    ) -> "PlantedEnvSpec":
        """Two mirrored 'good' actions plus a zero-reward 'sabotage' action (index 2).

        Weights are scaled by ``1/sqrt(d lambda_i)`` so every latent direction
        contributes equally to the score, which therefore has unit variance.
        """
        lam = np.asarray(eigenvalues, dtype=float)
        if d < 1 or lam.shape != (d,) or np.any(lam <= 0):
            raise InvalidInput("eigenvalues must be d >= 1 positive numbers")
        w = 1.0 / np.sqrt(d * lam)
        weights = (tuple(0.5 * w), tuple(-0.5 * w), tuple(np.zeros(d)))
        return cls(
            D=D, d=d, eigenvalues=tuple(float(v) for v in lam), C0=C0, gamma=gamma,
            persistence=persistence, reward_weights=weights, reward_bias=(0.5, 0.5, 0.0), seed=seed,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("eigenvalues", "reward_weights", "reward_bias", "drift", "basis"):
            if out[key] is not None:
                out[key] = np.asarray(out[key], dtype=float).tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PlantedEnvSpec":
        kw = dict(data)
        kw["eigenvalues"] = tuple(float(v) for v in kw["eigenvalues"])
        kw["reward_weights"] = tuple(tuple(float(v) for v in row) for row in kw["reward_weights"])
        kw["reward_bias"] = tuple(float(v) for v in kw["reward_bias"])
        for key in ("drift", "basis"):
            if kw.get(key) is not None:
                kw[key] = tuple(tuple(float(v) for v in row) for row in kw[key])
        return cls(**kw)


class PlantedEnv(Mdp):
    def __init__(self, spec: PlantedEnvSpec):
        self.spec = spec
        self.state_dim = spec.D
        self.n_actions = spec.n_actions
        self.gamma = spec.gamma
        if spec.basis is not None:
            U = np.asarray(spec.basis, dtype=float)
            if U.shape != (spec.D, spec.d):
                raise InvalidInput(f"basis must have shape ({spec.D}, {spec.d})")
            if np.abs(U.T @ U - np.eye(spec.d)).max() > 1e-10:
                raise InvalidInput("basis columns are not orthonormal")
        else:
            U = random_orthonormal(spec.D, spec.d, np.random.default_rng(spec.seed))
        self.U = U
        self.U_perp = fix_signs(scipy.linalg.null_space(U.T)) if spec.d < spec.D else np.zeros((spec.D, 0))
        self.U.setflags(write=False)
        self.U_perp.setflags(write=False)
        self._lam = np.asarray(spec.eigenvalues, dtype=float)
        self._w = np.asarray(spec.reward_weights, dtype=float)
        self._b = np.asarray(spec.reward_bias, dtype=float)
        self._drift = np.zeros_like(self._w) if spec.drift is None else np.asarray(spec.drift, dtype=float)
        self._noise = np.sqrt(1.0 - spec.persistence**2) * np.sqrt(self._lam)

    @property
    def safe_projector(self) -> Projector:
        return Projector.from_basis(self.U)

    @property
    def complement_projector(self) -> Projector:
        if self.U_perp.shape[1] == 0:
            return Projector(np.zeros((self.state_dim, 0)), np.zeros((self.state_dim, self.state_dim)))
        return Projector.from_basis(self.U_perp)

    @property
    def has_drift(self) -> bool:
        return bool(np.any(self._drift))

    def true_covariance(self) -> np.ndarray:
        """Occupancy covariance ``U diag(lambda) U^T + C0^2/(D-d+2) U_perp U_perp^T``.

        Exact when there is no drift: the latent chain is then stationary from
        ``t = 0`` so every time step, and hence the discounted occupancy, has
        this covariance whatever the policy.
        """
        if self.has_drift:
            raise ValueError("occupancy covariance depends on the policy when drift is non-zero")
        cov = (self.U * self._lam) @ self.U.T + self.spec.complement_variance * (self.U_perp @ self.U_perp.T)
        return 0.5 * (cov + cov.T)

    def true_spectrum(self) -> np.ndarray:
        k = self.spec.D - self.spec.d
        return np.concatenate([self._lam, np.full(k, self.spec.complement_variance)])

    def latent(self, states) -> np.ndarray:
        return np.asarray(states, dtype=float) @ self.U

    def complement_coords(self, states) -> np.ndarray:
        return np.asarray(states, dtype=float) @ self.U_perp

    def _ball(self, rng, size):
        k = self.U_perp.shape[1]
        direction = rng.standard_normal((size, k))
        u = rng.random(size)
        if k == 0 or self.spec.C0 == 0:
            return np.zeros((size, k))
        norms = np.linalg.norm(direction, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        radius = self.spec.C0 * u ** (1.0 / k)
        return direction / norms * radius[:, None]

    def _embed(self, z, xi):
        return z @ self.U.T + xi @ self.U_perp.T

    def initial(self, rng, size):
        z = rng.standard_normal((size, self.spec.d)) * np.sqrt(self._lam)
        return self._embed(z, self._ball(rng, size))

    def raw_scores(self, states) -> np.ndarray:
        """Unclipped reward ``bias + weights . z`` for every action, shape ``(N, A)``."""
        z = self.latent(np.atleast_2d(states))
        return self._b + z @ self._w.T

    def reward(self, states, actions) -> np.ndarray:
        scores = self.raw_scores(states)
        a = self.check_actions(actions)
        return np.clip(scores[np.arange(a.shape[0]), a], 0.0, 1.0)

    def transition(self, states, actions, rng):
        s = np.atleast_2d(np.asarray(states, dtype=float))
        if s.shape[1] != self.state_dim:
            raise InvalidInput(f"states must have {self.state_dim} columns")
        a = self.check_actions(actions)
        r = self.reward(s, a)
        z = self.latent(s)
        eps = rng.standard_normal(z.shape)
        z_next = self.spec.persistence * z + self._drift[a] + self._noise * eps
        return self._embed(z_next, self._ball(rng, s.shape[0])), r


def planted_env(spec: PlantedEnvSpec) -> PlantedEnv:
    return PlantedEnv(spec)
