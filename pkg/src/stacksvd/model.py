"""Domain types shared by every module.

All containers are frozen dataclasses holding read-only numpy arrays, so they
can be passed between threads without copying.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    InvalidWeights,
    NegativeTheta,
    NonPositiveAspectRatio,
    ShapeMismatch,
)

__all__ = [
    "ProblemSpec",
    "TableSet",
    "WeightVector",
    "SubspaceEstimate",
    "GroundTruth",
    "AlignmentReport",
    "validate_spec",
    "alignment",
    "canonicalize_signs",
]


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ProblemSpec:
    """Asymptotic problem instance.

    Parameters
    ----------
    theta : array_like
        Signal strengths. A length-m vector gives a rank-1 instance; an
        ``(m, r)`` matrix gives a rank-r instance with ``theta[i, j]`` the
        strength of component ``j`` in table ``i``.
    c : array_like
        Aspect ratios ``c_i = n_i / d``, length m.

    Raises
    ------
    NonPositiveAspectRatio, NegativeTheta, ShapeMismatch
        If the instance is invalid (see :func:`validate_spec`).
    """

    theta: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim == 0:
            theta = theta.reshape(1, 1)
        elif theta.ndim == 1:
            theta = theta[:, None]
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        object.__setattr__(self, "theta", _frozen(theta))
        object.__setattr__(self, "c", _frozen(c))
        validate_spec(self)

    @property
    def m(self) -> int:
        return self.theta.shape[0]

    @property
    def rank(self) -> int:
        return self.theta.shape[1]

    @property
    def theta_vector(self) -> np.ndarray:
        """Length-m view of theta for rank-1 instances."""
        if self.rank != 1:
            raise ShapeMismatch(f"theta_vector requires rank 1, spec has rank {self.rank}")
        return self.theta[:, 0]

    def column(self, j: int) -> "ProblemSpec":
        """Rank-1 instance for component ``j``."""
        return ProblemSpec(self.theta[:, j], self.c)

    def subset(self, idx) -> "ProblemSpec":
        """Instance restricted to the tables in ``idx``."""
        idx = np.asarray(idx)
        return ProblemSpec(self.theta[idx], self.c[idx])

    def to_dict(self) -> dict:
        th = self.theta_vector.tolist() if self.rank == 1 else self.theta.tolist()
        return {"theta": th, "c": self.c.tolist()}


def validate_spec(spec) -> None:
    """Check the invariants of a :class:`ProblemSpec`.

    Returns ``None`` on success and raises an error naming the bad field
    otherwise.
    """
    theta = np.asarray(spec.theta, dtype=float)
    c = np.asarray(spec.c, dtype=float)
    if theta.ndim == 1:
        theta = theta[:, None]
    if theta.ndim != 2 or c.ndim != 1:
        raise ShapeMismatch("theta must be a vector or matrix and c a vector")
    if theta.shape[0] != c.shape[0]:
        raise ShapeMismatch(
            f"theta has {theta.shape[0]} rows but c has length {c.shape[0]}"
        )
    if theta.shape[0] < 1 or theta.shape[1] < 1:
        raise ShapeMismatch("need at least one table and one component")
    if not np.all(np.isfinite(c)) or np.any(c <= 0):
        raise NonPositiveAspectRatio(f"c must be finite and > 0, got {c.tolist()}")
    if not np.all(np.isfinite(theta)) or np.any(theta < 0):
        raise NegativeTheta("theta must be finite and >= 0")


@dataclass(frozen=True)
class TableSet:
    """Observed matrices ``X_1, ..., X_m`` sharing ``d`` columns."""

    tables: tuple
    d: int

    def __init__(self, tables: Sequence[np.ndarray], d: Optional[int] = None):
        tabs = []
        for X in tables:
            X = np.asarray(X, dtype=float)
            if X.ndim != 2:
                raise ShapeMismatch("each table must be a 2-d matrix")
            if not X.flags.writeable:
                tabs.append(X)
                continue
            X = X.view()
            X.flags.writeable = False
            tabs.append(X)
        if not tabs:
            raise ShapeMismatch("a TableSet needs at least one table")
        if d is None:
            d = tabs[0].shape[1]
        for i, X in enumerate(tabs):
            if X.shape[1] != d:
                raise ShapeMismatch(f"table {i} has {X.shape[1]} columns, expected {d}")
            if X.shape[0] < 1:
                raise ShapeMismatch(f"table {i} has no rows")
        object.__setattr__(self, "tables", tuple(tabs))
        object.__setattr__(self, "d", int(d))

    @property
    def m(self) -> int:
        return len(self.tables)

    @property
    def n(self) -> np.ndarray:
        return np.array([X.shape[0] for X in self.tables])

    @property
    def c(self) -> np.ndarray:
        """Empirical aspect ratios ``n_i / d``."""
        return self.n / self.d

    def __len__(self):
        return self.m

    def __getitem__(self, i):
        return self.tables[i]

    def subset(self, idx) -> "TableSet":
        return TableSet([self.tables[i] for i in idx], self.d)


@dataclass(frozen=True)
class WeightVector:
    """Nonnegative per-table weights (length m, or ``(m, r)`` for rank r)."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim == 0:
            w = w.reshape(1)
        if w.ndim > 2:
            raise ShapeMismatch("weights must be a vector or a matrix")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidWeights("weights must be finite and >= 0")
        cols = w if w.ndim == 2 else w[:, None]
        if np.any(np.all(cols == 0, axis=0)):
            raise InvalidWeights("at least one weight must be positive")
        object.__setattr__(self, "weights", _frozen(w))

    def __len__(self):
        return self.weights.shape[0]

    def normalized(self) -> "WeightVector":
        """Copy rescaled to unit maximum (per column in the rank-r case)."""
        return WeightVector(self.weights / self.weights.max(axis=0))


def _as_weights(w, m: int) -> np.ndarray:
    if w is None:
        return np.ones(m)
    if not isinstance(w, WeightVector):
        w = WeightVector(w)
    arr = w.weights
    if arr.shape[0] != m:
        raise ShapeMismatch(f"expected {m} weights, got {arr.shape[0]}")
    return arr


def canonicalize_signs(V: np.ndarray) -> np.ndarray:
    """Flip columns so the first entry of largest magnitude is nonnegative."""
    V = np.array(V, dtype=float, copy=True)
    if V.ndim == 1:
        return canonicalize_signs(V[:, None])[:, 0]
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


@dataclass(frozen=True)
class SubspaceEstimate:
    """Estimated shared right singular vectors.

    Attributes
    ----------
    vectors : ndarray, shape (d, r)
        Unit-norm, sign-canonicalized columns.
    singular_values : ndarray, shape (r,)
        Singular value attached to each column.
    method : str
        ``"<family>/<weighting>"``, e.g. ``"stack-svd/weighted"``.
    componentwise : bool
        False when columns cannot be matched to individual components
        (tied ``S_j`` in rank-r SVD-Stack); only the subspace is meaningful.
    """

    vectors: np.ndarray
    singular_values: np.ndarray
    method: str
    componentwise: bool = True

    def __post_init__(self):
        V = np.asarray(self.vectors, dtype=float)
        if V.ndim == 1:
            V = V[:, None]
        V = V / np.linalg.norm(V, axis=0)
        object.__setattr__(self, "vectors", _frozen(canonicalize_signs(V)))
        object.__setattr__(self, "singular_values", _frozen(np.atleast_1d(self.singular_values)))

    @property
    def d(self) -> int:
        return self.vectors.shape[0]

    @property
    def rank(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class GroundTruth:
    """True shared subspace ``V`` (d x r) and optional left factors."""

    v: np.ndarray
    u: Optional[tuple] = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        object.__setattr__(self, "v", _frozen(v))
        if self.u is not None:
            object.__setattr__(self, "u", tuple(_frozen(ui) for ui in self.u))

    @property
    def d(self) -> int:
        return self.v.shape[0]

    @property
    def rank(self) -> int:
        return self.v.shape[1]


@dataclass(frozen=True)
class AlignmentReport:
    """Agreement between an estimate and the truth.

    ``per_component`` is ``None`` when the estimate is not componentwise.
    """

    per_component: Optional[np.ndarray]
    frobenius: float
    projection_distance: float

    def to_dict(self) -> dict:
        pc = None if self.per_component is None else self.per_component.tolist()
        return {
            "per_component": pc,
            "frobenius": self.frobenius,
            "projection_distance": self.projection_distance,
        }


def _column_space_basis(A):
    Q, _ = np.linalg.qr(A)
    return Q


def alignment(estimate, truth) -> AlignmentReport:
    """Squared overlaps, ``||V^T Vhat||_F^2`` and projection distance.

    Parameters
    ----------
    estimate : SubspaceEstimate or ndarray
    truth : GroundTruth or ndarray

    Returns
    -------
    AlignmentReport
    """
    componentwise = True
    if isinstance(estimate, SubspaceEstimate):
        Vh = estimate.vectors
        componentwise = estimate.componentwise
    else:
        Vh = np.asarray(estimate, dtype=float)
        Vh = Vh[:, None] if Vh.ndim == 1 else Vh
    V = truth.v if isinstance(truth, GroundTruth) else np.asarray(truth, dtype=float)
    V = V[:, None] if V.ndim == 1 else V
    if V.shape != Vh.shape:
        raise ShapeMismatch(f"estimate {Vh.shape} and truth {V.shape} differ in shape")

    G = V.T @ Vh
    per = np.clip(np.diag(G) ** 2, 0.0, 1.0)
    frob = float(np.sum(G**2))

    # Projectors are basis independent, so use orthonormal bases.
    Q1 = _column_space_basis(Vh)
    Q2 = _column_space_basis(V)
    r1, r2 = Q1.shape[1], Q2.shape[1]
    sq = r1 + r2 - 2.0 * np.sum((Q1.T @ Q2) ** 2)
    dist = float(np.sqrt(max(sq, 0.0)))
    return AlignmentReport(per if componentwise else None, frob, dist)
