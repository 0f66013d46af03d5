"""Covariance estimation, eigen-subspaces, projectors and perturbation diagnostics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
import scipy.linalg

from .errors import DegenerateGap, DimensionMismatch, EmptySubspace, InvalidInput

SYMMETRY_RTOL = 1e-12
PSD_RTOL = 1e-10
SIGN_TOL = 1e-12
# eigenvalues closer than this (relative to the largest magnitude) share a canonical basis
CLUSTER_RTOL = 1e-12

Strategy = Literal["absolute_threshold", "largest_relative_gap"]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def as_states(samples) -> np.ndarray:
    """Stack samples into an ``(n, D)`` float array, checking shape and finiteness."""
    if isinstance(samples, np.ndarray):
        arr = np.asarray(samples, dtype=float)
        if arr.ndim == 1:
            arr = arr[None, :]
    else:
        rows = [np.asarray(s, dtype=float).ravel() for s in samples]
        if not rows:
            raise InvalidInput("sample list is empty")
        lengths = {r.shape[0] for r in rows}
        if len(lengths) != 1:
            raise DimensionMismatch(f"samples have inconsistent lengths {sorted(lengths)}")
        arr = np.vstack(rows)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise InvalidInput("sample list is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("samples contain non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class CovarianceEstimate:
    matrix: np.ndarray
    sample_count: int
    mean: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidInput("covariance must be a square matrix")
        if self.sample_count < 1:
            raise InvalidInput("sample_count must be positive")
        object.__setattr__(self, "matrix", _frozen(m))
        object.__setattr__(self, "mean", _frozen(np.asarray(self.mean, dtype=float).ravel()))
        if self.mean.shape[0] != m.shape[0]:
            raise DimensionMismatch("mean length differs from matrix size")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def exact(cls, matrix) -> "CovarianceEstimate":
        """Wrap a known (population) covariance, e.g. for bound computations."""
        m = np.asarray(matrix, dtype=float)
        return cls(m, 1, np.zeros(m.shape[0]))


def empirical_covariance(samples, center: bool = False) -> CovarianceEstimate:
    """Second-moment matrix ``(1/n) sum s s^T``, optionally after removing the sample mean."""
    x = as_states(samples)
    n = x.shape[0]
    if center:
        mean = x.mean(axis=0)
        x = x - mean
    else:
        mean = np.zeros(x.shape[1])
    cov = x.T @ x / n
    cov = 0.5 * (cov + cov.T)
    return CovarianceEstimate(cov, n, mean)


@dataclass(frozen=True, eq=False)
class EigenModel:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", _frozen(self.eigenvalues))
        object.__setattr__(self, "eigenvectors", _frozen(self.eigenvectors))

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def gap(self, d: int) -> float:
        """``lambda_d - lambda_{d+1}`` with 1-based ``d``."""
        if not 1 <= d < self.dim:
            raise InvalidInput(f"gap needs 1 <= d < D, got d={d}, D={self.dim}")
        return float(self.eigenvalues[d - 1] - self.eigenvalues[d])

    def tail_energy(self, d: int) -> float:
        """Sum of the eigenvalues past index ``d``, clipped at zero."""
        return float(max(self.eigenvalues[d:].sum(), 0.0))

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenvectors": self.eigenvectors.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EigenModel":
        vals = np.asarray(data["eigenvalues"], dtype=float)
        vecs = np.asarray(data["eigenvectors"], dtype=float)
        if vals.shape != (data["dim"],) or vecs.shape != (data["dim"], data["dim"]):
            raise DimensionMismatch("serialized eigen model has inconsistent shapes")
        return cls(vals, vecs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "EigenModel":
        return cls.from_dict(json.loads(text))


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for j in range(out.shape[1]):
        nz = np.flatnonzero(np.abs(out[:, j]) > SIGN_TOL)
        if nz.size and out[nz[0], j] < 0:
            out[:, j] = -out[:, j]
    return out


def _canonical_basis(block: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal basis of ``span(block)``.

    Projects the standard basis vectors onto the span in coordinate order and
    Gram-Schmidts them, so the first vector leans as far as possible onto the
    earliest coordinate.
    """
    dim, k = block.shape
    proj = block @ block.T
    basis: list[np.ndarray] = []
    for j in range(dim):
        v = proj[:, j].copy()
        for b in basis:
            v -= (b @ v) * b
        for b in basis:  # second pass for numerical orthogonality
            v -= (b @ v) * b
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            basis.append(v / norm)
            if len(basis) == k:
                break
    return np.column_stack(basis)


def eigendecompose(cov) -> EigenModel:
    """Symmetric eigendecomposition with descending eigenvalues and canonical eigenvectors.

    Each eigenvector's first entry above 1e-12 in magnitude is positive.
    Repeated eigenvalues get a basis that doesn't depend on the LAPACK driver.
    """
    m = cov.matrix if isinstance(cov, CovarianceEstimate) else np.asarray(cov, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInput("eigendecompose needs a square matrix")
    scale = max(np.abs(m).max(), np.finfo(float).tiny)
    if np.abs(m - m.T).max() > SYMMETRY_RTOL * scale:
        raise InvalidInput("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    order = np.argsort(vals, kind="stable")[::-1]
    vals, vecs = vals[order], vecs[:, order]

    tol = CLUSTER_RTOL * max(np.abs(vals).max(), 1.0)
    start = 0
    dim = vals.shape[0]
    while start < dim:
        stop = start + 1
        while stop < dim and vals[stop - 1] - vals[stop] <= tol:
            stop += 1
        if stop - start > 1:
            vecs[:, start:stop] = _canonical_basis(vecs[:, start:stop])
        start = stop
    return EigenModel(vals, fix_signs(vecs))


@dataclass(frozen=True, eq=False)
class Projector:
    """Orthogonal projection onto ``span(basis)``; ``basis`` has orthonormal columns."""

    basis: np.ndarray
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "basis", _frozen(self.basis))
        object.__setattr__(self, "matrix", _frozen(self.matrix))

    @classmethod
    def from_basis(cls, basis) -> "Projector":
        b = np.asarray(basis, dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        if b.shape[1] > b.shape[0]:
            raise InvalidInput("basis has more columns than rows")
        if b.shape[1] and np.abs(b.T @ b - np.eye(b.shape[1])).max() > 1e-10:
            raise InvalidInput("basis columns are not orthonormal")
        mat = b @ b.T
        return cls(b, 0.5 * (mat + mat.T))

    @classmethod
    def spanning(cls, vectors) -> "Projector":
        """Projector onto the span of arbitrary (not necessarily orthonormal) columns."""
        return cls.from_basis(scipy.linalg.orth(np.asarray(vectors, dtype=float)))

    @property
    def dim(self) -> int:
        """Ambient dimension D."""
        return self.basis.shape[0]

    @property
    def d(self) -> int:
        return self.basis.shape[1]

    def apply(self, x) -> np.ndarray:
        """Project a state ``(D,)`` or a batch ``(..., D)``."""
        return np.asarray(x, dtype=float) @ self.matrix

    def complement(self) -> "Projector":
        if self.d == self.dim:
            return Projector(np.zeros((self.dim, 0)), np.zeros((self.dim, self.dim)))
        if self.d == 0:
            return Projector.from_basis(np.eye(self.dim))
        return Projector.from_basis(fix_signs(scipy.linalg.null_space(self.basis.T)))

    def to_dict(self) -> dict:
        return {"dim": self.dim, "d": self.d, "basis": self.basis.tolist(), "matrix": self.matrix.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Projector":
        basis = np.asarray(data["basis"], dtype=float).reshape(data["dim"], data["d"])
        mat = np.asarray(data["matrix"], dtype=float)
        if mat.shape != (data["dim"], data["dim"]):
            raise DimensionMismatch("serialized projector has inconsistent shapes")
        return cls(basis, mat)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Projector":
        return cls.from_dict(json.loads(text))


def projector(model: EigenModel, d: int) -> Projector:
    """Projector onto the span of the top-``d`` eigenvectors."""
    if not isinstance(d, (int, np.integer)) or not 1 <= d <= model.dim:
        raise InvalidInput(f"d must be an integer in [1, {model.dim}], got {d!r}")
    return Projector.from_basis(model.eigenvectors[:, :d])


def _check_pair(p: Projector, q: Projector) -> None:
    if p.dim != q.dim or p.d != q.d:
        raise DimensionMismatch(f"projectors differ: (D={p.dim}, d={p.d}) vs (D={q.dim}, d={q.d})")


def projector_distance(p: Projector, q: Projector, norm: Literal["spectral", "frobenius"] = "spectral") -> float:
    _check_pair(p, q)
    diff = p.matrix - q.matrix
    return float(np.linalg.norm(diff, 2 if norm == "spectral" else "fro"))


def principal_cosines(p: Projector, q: Projector) -> np.ndarray:
    _check_pair(p, q)
    s = np.linalg.svd(p.basis.T @ q.basis, compute_uv=False)
    return np.clip(s, 0.0, 1.0)


def _sines(p: Projector, q: Projector) -> np.ndarray:
    # singular values of (I - P) basis(Q) are the sines of the principal angles;
    # this avoids the cancellation in sqrt(1 - cos^2) for nearly equal spans
    _check_pair(p, q)
    resid = q.basis - p.basis @ (p.basis.T @ q.basis)
    return np.clip(np.linalg.svd(resid, compute_uv=False), 0.0, 1.0)


def sin_theta_frobenius(p: Projector, q: Projector) -> float:
    """``||sin Theta(P, Q)||_F``, the root-sum-square of the principal-angle sines."""
    return float(np.linalg.norm(_sines(p, q)))


def sin_theta_spectral(p: Projector, q: Projector) -> float:
    s = _sines(p, q)
    return float(s.max()) if s.size else 0.0


def _matrix(cov) -> np.ndarray:
    return cov.matrix if isinstance(cov, CovarianceEstimate) else np.asarray(cov, dtype=float)


def davis_kahan_bound(true_cov, est_cov, d: int) -> float:
    """``2 sqrt(d) / gap * ||Sigma - Sigma_hat||_2`` where ``gap = lambda_d - lambda_{d+1}`` of ``true_cov``."""
    sigma, sigma_hat = _matrix(true_cov), _matrix(est_cov)
    if sigma.shape != sigma_hat.shape:
        raise DimensionMismatch(f"covariances have shapes {sigma.shape} and {sigma_hat.shape}")
    model = eigendecompose(sigma)
    gap = model.gap(d)
    if not gap > CLUSTER_RTOL * max(abs(model.eigenvalues[0]), 1.0):
        raise DegenerateGap(f"eigen gap lambda_{d} - lambda_{d + 1} = {gap:.3g} is not positive")
    return 2.0 * math.sqrt(d) / gap * float(np.linalg.norm(sigma - sigma_hat, 2))


def select_dimension(
    model: EigenModel,
    strategy: Strategy = "absolute_threshold",
    threshold: float = 1e-10,
) -> int:
    """Pick the safe-subspace dimension from a descending spectrum.

    ``absolute_threshold`` counts eigenvalues ``>= threshold``.
    ``largest_relative_gap`` returns the index just before the largest ratio
    ``lambda_i / lambda_{i+1}``; eigenvalues below round-off level
    (``lambda_1 * D * eps``) are floored there so exact zeros count as a dip.
    """
    vals = np.asarray(model.eigenvalues, dtype=float)
    if np.any(np.diff(vals) > CLUSTER_RTOL * max(np.abs(vals).max(), 1.0)):
        raise InvalidInput("eigenvalues must be sorted in descending order")
    if strategy == "absolute_threshold":
        k = int(np.count_nonzero(vals >= threshold))
        if k == 0:
            raise EmptySubspace(f"no eigenvalue is >= {threshold:g}")
        return k
    if strategy == "largest_relative_gap":
        if vals[0] <= 0:
            raise EmptySubspace("spectrum has no positive eigenvalue")
        if vals.size == 1:
            return 1
        floor = vals[0] * vals.size * np.finfo(float).eps
        clipped = np.maximum(vals, floor)
        ratios = clipped[:-1] / clipped[1:]
        return int(np.argmax(ratios)) + 1
    raise InvalidInput(f"unknown strategy {strategy!r}")


def lemma3_sample_size(
    d: int, K: float, sigma_norm: float, gap: float, eps: float, D: int, delta: float, C: float = 1.0
) -> float:
    """Samples needed for ``||P_E - P_En||_2 <= eps`` w.p. ``1 - delta``, up to the unknown constant ``C``."""
    if gap <= 0:
        raise DegenerateGap("eigen gap must be positive")
    if eps <= 0 or not 0 < delta < 1:
        raise InvalidInput("need eps > 0 and 0 < delta < 1")
    return C * d * K**4 * sigma_norm**2 / (gap**2 * eps**2) * (D + math.log(2.0 / delta))


def random_orthonormal(D: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed ``D x k`` orthonormal frame."""
    q, r = np.linalg.qr(rng.standard_normal((D, k)))
    return q * np.sign(np.diag(r))


def mean_squared_residual(samples: Sequence, proj: Projector) -> float:
    """Average ``||(I - P) s||^2`` over the samples."""
    x = as_states(samples)
    resid = x - proj.apply(x)
    return float(np.mean(np.sum(resid**2, axis=1)))
