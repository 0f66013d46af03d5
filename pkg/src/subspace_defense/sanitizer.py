"""Clean-sample collection, safe-subspace fitting and the projection wrapper."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np

from .attack import sample_actions
from .environments import Mdp
from .errors import DimensionMismatch, InvalidInput
from .linalg import (
    CovarianceEstimate,
    EigenModel,
    Projector,
    as_states,
    eigendecompose,
    empirical_covariance,
    projector,
    select_dimension,
)
from .policies import Policy

SamplingMode = Literal["geometric_iid", "correlated"]


@dataclass(frozen=True, eq=False)
class CleanSampleSet:
    samples: np.ndarray
    episodes_used: int
    sampling_mode: str

    def __post_init__(self):
        x = as_states(self.samples)
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def to_json(self) -> str:
        return json.dumps({
            "dim": self.dim,
            "episodes_used": self.episodes_used,
            "sampling_mode": self.sampling_mode,
            "samples": self.samples.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "CleanSampleSet":
        data = json.loads(text)
        samples = np.asarray(data["samples"], dtype=float).reshape(-1, data["dim"])
        return cls(samples, int(data["episodes_used"]), data["sampling_mode"])


def effective_horizon(gamma: float) -> int:
    # 1 / (1 - 0.9) evaluates to 10.000000000000002; don't let round-off add a step
    return max(1, math.ceil(1.0 / (1.0 - gamma) - 1e-9))


def collect_clean_samples(
    env: Mdp,
    policy: Policy,
    n: int,
    mode: SamplingMode = "geometric_iid",
    rng: Optional[np.random.Generator] = None,
    horizon: Optional[int] = None,
) -> CleanSampleSet:
    """Draw clean (untriggered) states visited by ``policy``.

    ``geometric_iid`` runs ``n`` episodes and keeps one state from each, at a
    stopping time ``t ~ Geometric(1 - gamma)`` on ``{0, 1, ...}``; that state is
    an exact draw from the discounted occupancy, independent across episodes.
    ``correlated`` keeps every state of ``ceil(n / horizon)`` episodes of length
    ``horizon`` (default ``ceil(1 / (1 - gamma))``), truncated to ``n``.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidInput("n must be a positive integer")
    rng = np.random.default_rng() if rng is None else rng
    if mode == "geometric_iid":
        stops = rng.geometric(1.0 - env.gamma, size=n) - 1
        out = np.empty((n, env.state_dim))
        alive = np.arange(n)
        s = env.initial(rng, n)
        t = 0
        while True:
            done = stops[alive] == t
            out[alive[done]] = s[done]
            alive, s = alive[~done], s[~done]
            if alive.size == 0:
                break
            a = sample_actions(policy.act(s), rng)
            s, _ = env.transition(s, a, rng)
            t += 1
        return CleanSampleSet(out, n, mode)
    if mode == "correlated":
        H = effective_horizon(env.gamma) if horizon is None else int(horizon)
        if H < 1:
            raise InvalidInput("horizon must be >= 1")
        episodes = math.ceil(n / H)
        s = env.initial(rng, episodes)
        states = np.empty((episodes, H, env.state_dim))
        for t in range(H):
            states[:, t] = s
            if t + 1 < H:
                s, _ = env.transition(s, sample_actions(policy.act(s), rng), rng)
        return CleanSampleSet(states.reshape(-1, env.state_dim)[:n], episodes, mode)
    raise InvalidInput(f"unknown sampling mode {mode!r}")


@dataclass(frozen=True, eq=False)
class SafeSubspace:
    projector: Projector
    model: EigenModel
    covariance: CovarianceEstimate

    @property
    def d(self) -> int:
        return self.projector.d

    @property
    def mean(self) -> np.ndarray:
        return self.covariance.mean


DimensionChoice = Union[int, Literal["absolute_threshold", "largest_relative_gap"]]


def fit_safe_subspace(
    samples: Union[CleanSampleSet, np.ndarray],
    d: DimensionChoice = "absolute_threshold",
    center: bool = False,
    threshold: float = 1e-10,
) -> SafeSubspace:
    """Covariance, eigendecomposition and top-``d`` projector of the clean samples.

    ``d`` is either an explicit dimension or a selection strategy name;
    selection raises :class:`EmptySubspace` when nothing passes.
    """
    x = samples.samples if isinstance(samples, CleanSampleSet) else samples
    cov = empirical_covariance(x, center=center)
    model = eigendecompose(cov)
    if isinstance(d, str):
        k = select_dimension(model, d, threshold)
    else:
        k = int(d)
        if not 1 <= k <= model.dim:
            raise InvalidInput(f"d must lie in [1, {model.dim}], got {d}")
    return SafeSubspace(projector(model, k), model, cov)


class SanitizedPolicy(Policy):
    """``act(s) = inner.act(mean + P (s - mean))``."""

    def __init__(self, inner: Policy, proj: Projector, mean=None):
        if proj.dim != inner.state_dim:
            raise DimensionMismatch(f"projector is {proj.dim}-dim, policy expects {inner.state_dim}")
        self.inner = inner
        self.projector = proj
        self.mean = np.zeros(proj.dim) if mean is None else np.asarray(mean, dtype=float)
        if self.mean.shape != (proj.dim,):
            raise DimensionMismatch("mean has the wrong length")
        self.state_dim = inner.state_dim
        self.n_actions = inner.n_actions
        self._centered = bool(np.any(self.mean))

    def project(self, states) -> np.ndarray:
        s = np.asarray(states, dtype=float)
        if not self._centered:
            return self.projector.apply(s)
        return self.mean + self.projector.apply(s - self.mean)

    def _probs(self, states):
        return self.inner.act(self.project(states))


def sanitize(policy: Policy, proj: Projector, mean=None) -> SanitizedPolicy:
    return SanitizedPolicy(policy, proj, mean)
