"""Asymptotic performance of Stack-SVD and SVD-Stack.

Every predictor maps a :class:`~stacksvd.model.ProblemSpec` to the limiting
squared overlap between the estimated and true shared direction. Notation:

* ``beta_i^2 = (theta_i^4 - c_i) / (theta_i^4 + theta_i^2)`` is the
  single-table overlap, zero at or below the threshold ``theta_i^4 = c_i``.
* ``A_beta = beta beta^T + diag(1 - beta^2)`` is the limiting Gram matrix of
  the per-table singular vectors.

Detectability flags use strict inequalities throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    AmbiguousComponentOrder,
    DegenerateTopEigenvalue,
    EpsilonOutOfRange,
    NoSecularRoot,
    ShapeMismatch,
    SubsetEmpty,
    TooManyTablesForEnumeration,
)
from .linalg import sym_eig
from .model import ProblemSpec, WeightVector, _as_weights

__all__ = [
    "BetaVector",
    "PredictionReport",
    "WeightedStackSpectrum",
    "ThresholdReport",
    "RankRPrediction",
    "Bookkeeping",
    "EULER_GAMMA",
    "BISECTION_TOL",
    "SUBSET_CAP",
    "beta_squared",
    "beta_from_theta",
    "build_a_beta",
    "predict_unweighted_svdstack",
    "predict_binary_svdstack",
    "predict_weighted_svdstack",
    "predict_unweighted_stacksvd",
    "predict_binary_stacksvd",
    "predict_weighted_stacksvd",
    "optimal_weights_stacksvd",
    "optimal_weights_svdstack",
    "eval_general_weighted_stacksvd",
    "detection_thresholds",
    "predict_rank_r",
    "rank_r_weight_bookkeeping",
    "inadmissibility_instance",
    "predict_all",
]

EULER_GAMMA = 0.57721566490153286061
BISECTION_TOL = 1e-12
BISECTION_MAX_ITER = 200
SUBSET_CAP = 20
# refuse instances whose table count would not fit in memory
_MAX_INADMISSIBLE_M = 10_000_000


@dataclass(frozen=True)
class BetaVector:
    """Single-table squared overlaps ``beta_i^2`` (vector, or m x r)."""

    squared: np.ndarray

    @property
    def beta(self) -> np.ndarray:
        return np.sqrt(self.squared)


@dataclass(frozen=True)
class PredictionReport:
    """Limiting squared overlap of one estimator on one instance.

    Attributes
    ----------
    method : str
    overlap : float
        Squared overlap in [0, 1]; zero whenever ``detectable`` is false.
    detectable : bool
    weights : ndarray or None
        Weights the estimator uses, when it has any.
    diagnostics : dict
        Method specific scalars such as ``S``, ``gamma_star`` or
        ``lambda_max``.
    degenerate : bool
        SVD-Stack only: exactly one table is informative and the overlap is
        that table's ``beta^2`` (the single informative table is used on its
        own).
    """

    method: str
    overlap: float
    detectable: bool
    weights: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)
    degenerate: bool = False

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "overlap": self.overlap,
            "detectable": self.detectable,
            "degenerate": self.degenerate,
            "diagnostics": {k: _jsonable(v) for k, v in self.diagnostics.items()},
        }
        if self.weights is not None:
            out["weights"] = np.asarray(self.weights).tolist()
        return out


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return v


@dataclass(frozen=True)
class WeightedStackSpectrum:
    """Spectral summary of a weighted stack.

    Attributes
    ----------
    gamma1 : float
        Top eigenvalue of the population matrix ``R``.
    assumption_check : float
        ``A = sum_i c_i w_i^4 / (gamma1 - w_i^2)^2``; an outlier exists iff
        ``A < 1``.
    performance : float
        Limiting squared overlap ``L(w)``.
    outlier : bool
        True when the secular root lies above every ``w_i^2``.
    """

    gamma1: float
    assumption_check: float
    performance: float
    outlier: bool


@dataclass(frozen=True)
class ThresholdReport:
    """Detectability flag and margin (lhs - rhs) per method."""

    flags: dict
    margins: dict

    def to_dict(self) -> dict:
        return {"flags": dict(self.flags), "margins": dict(self.margins)}


@dataclass(frozen=True)
class RankRPrediction:
    """Componentwise predictions for weighted rank-r estimators."""

    gamma: np.ndarray
    S: np.ndarray

    @property
    def stack_overlaps(self) -> np.ndarray:
        return self.gamma

    @property
    def svdstack_overlaps(self) -> np.ndarray:
        return self.S / (self.S + 1.0)

    @property
    def stack_total(self) -> float:
        return float(np.sum(self.gamma))

    @property
    def svdstack_total(self) -> float:
        return float(np.sum(self.svdstack_overlaps))

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma.tolist(),
            "S": self.S.tolist(),
            "stacksvd_weighted": self.stack_overlaps.tolist(),
            "svdstack_weighted": self.svdstack_overlaps.tolist(),
            "stacksvd_weighted_total": self.stack_total,
            "svdstack_weighted_total": self.svdstack_total,
        }


@dataclass(frozen=True)
class Bookkeeping:
    """Weights, cross strengths and singular-vector rank for one component.

    ``order`` is zero based: the component is read off the
    ``order``-th leading right singular vector of its weighted stack.
    """

    weights: np.ndarray
    cross_strengths_sq: np.ndarray
    order: int


# ---------------------------------------------------------------------------
# single-table quantities


def beta_squared(theta, c) -> np.ndarray:
    """Elementwise ``beta^2``; broadcasts ``c`` over rank-r columns."""
    theta = np.asarray(theta, dtype=float)
    c = np.asarray(c, dtype=float)
    if theta.ndim == 2 and c.ndim == 1:
        c = c[:, None]
    t2 = theta**2
    t4 = t2**2
    above = t4 > c
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        b2 = np.where(above, (t4 - c) / (t4 + t2), 0.0)
    return b2


def beta_from_theta(spec: ProblemSpec) -> BetaVector:
    """``beta_i^2`` for every table (and component)."""
    th = spec.theta_vector if spec.rank == 1 else spec.theta
    return BetaVector(beta_squared(th, spec.c))


def build_a_beta(beta, w=None) -> np.ndarray:
    """``(w*beta)(w*beta)^T + diag(w^2 (1 - beta^2))``.

    Parameters
    ----------
    beta : BetaVector or array_like
        A :class:`BetaVector`, or the unsquared overlaps ``beta_i``.
    w : WeightVector or array_like, optional
        Defaults to all ones.
    """
    b = beta.beta if isinstance(beta, BetaVector) else np.asarray(beta, dtype=float)
    if b.ndim != 1:
        raise ShapeMismatch("build_a_beta expects a vector of overlaps")
    wv = np.ones_like(b) if w is None else _as_weights(w, b.shape[0])
    if wv.ndim != 1:
        raise ShapeMismatch("build_a_beta expects a weight vector")
    wb = wv * b
    return np.outer(wb, wb) + np.diag(wv**2 * (1.0 - b**2))


def _rank1(spec: ProblemSpec):
    if spec.rank != 1:
        raise ShapeMismatch("this predictor needs a rank-1 spec; use predict_rank_r")
    return spec.theta_vector, spec.c


# ---------------------------------------------------------------------------
# SVD-Stack


def _svdstack_from_beta(b2, degenerate_fix=True):
    b = np.sqrt(b2)
    active = b > 0
    n_active = int(active.sum())
    if n_active == 0:
        return 0.0, False, False, {"lambda_max": 1.0}
    if n_active == 1 and b.size > 1:
        ov = float(b2[active][0]) if degenerate_fix else 0.0
        return ov, degenerate_fix, True, {"informative_table": int(np.flatnonzero(active)[0])}
    A = build_a_beta(b)
    evals, evecs = sym_eig(A)
    if evals.size > 1 and evals[0] - evals[1] <= 1e-12 * evals[0]:
        raise DegenerateTopEigenvalue("top eigenvalue of A_beta is not simple")
    vmax = evecs[:, 0]
    ov = float((b @ vmax) ** 2 / evals[0])
    return min(max(ov, 0.0), 1.0), True, False, {"lambda_max": float(evals[0])}


def predict_unweighted_svdstack(spec: ProblemSpec, *, degenerate_fix: bool = True) -> PredictionReport:
    """Unweighted SVD-Stack: ``(beta^T v_max(A_beta))^2 / lambda_max(A_beta)``.

    With exactly one informative table the limit of the stacked estimate is
    random. In that case ``degenerate`` is set and, when ``degenerate_fix``
    is true, the overlap of the informative table alone is reported.
    """
    theta, c = _rank1(spec)
    b2 = beta_squared(theta, c)
    ov, det, degen, diag = _svdstack_from_beta(b2, degenerate_fix)
    return PredictionReport("svdstack", ov, det, np.ones_like(theta), diag, degen)


def predict_binary_svdstack(spec: ProblemSpec) -> PredictionReport:
    """SVD-Stack restricted to the tables with ``theta_i^4 > c_i``."""
    theta, c = _rank1(spec)
    b2 = beta_squared(theta, c)
    keep = b2 > 0
    w = keep.astype(float)
    if not keep.any():
        return PredictionReport("svdstack_binary", 0.0, False, w, {"lambda_max": 1.0})
    ov, det, _, diag = _svdstack_from_beta(b2[keep])
    return PredictionReport("svdstack_binary", ov, det, w, diag)


def optimal_weights_svdstack(spec: ProblemSpec) -> WeightVector:
    """``w_i = theta_i sqrt((theta_i^2 + 1) / (theta_i^2 + c_i))``."""
    return WeightVector(_svdstack_weights(spec.theta if spec.rank > 1 else spec.theta_vector, spec.c))


def _svdstack_weights(theta, c):
    theta = np.asarray(theta, dtype=float)
    c = np.asarray(c, dtype=float)
    if theta.ndim == 2:
        c = c[:, None]
    t2 = theta**2
    return theta * np.sqrt((t2 + 1.0) / (t2 + c))


def predict_weighted_svdstack(spec: ProblemSpec) -> PredictionReport:
    """Optimally weighted SVD-Stack: ``S / (S + 1)``, ``S = sum beta^2/(1-beta^2)``."""
    theta, c = _rank1(spec)
    b2 = beta_squared(theta, c)
    S = float(np.sum(b2 / (1.0 - b2)))
    ratio = float(np.max(theta**4 / c))
    det = ratio > 1.0
    ov = S / (S + 1.0) if det else 0.0
    return PredictionReport(
        "svdstack_weighted", ov, det, _svdstack_weights(theta, c), {"S": S}
    )


# ---------------------------------------------------------------------------
# Stack-SVD


def _stack_overlap(tsq_sum, c_sum):
    """``(T^2 - C) / (T (T + 1))`` with ``T = sum theta^2``, else 0."""
    num = tsq_sum**2 - c_sum
    if num <= 0:
        return 0.0
    return float(num / (tsq_sum * (tsq_sum + 1.0)))


def predict_unweighted_stacksvd(spec: ProblemSpec) -> PredictionReport:
    """Unweighted Stack-SVD: ``(|theta|^4 - |c|_1) / (|theta|^2 (|theta|^2 + 1))``."""
    theta, c = _rank1(spec)
    T = float(np.sum(theta**2))
    C = float(np.sum(c))
    ov = _stack_overlap(T, C)
    return PredictionReport("stacksvd", ov, ov > 0, np.ones_like(theta), {"norm_theta_sq": T})


def _subset_mask(m, subset):
    mask = np.zeros(m, dtype=bool)
    idx = np.asarray(list(subset), dtype=int)
    if idx.size == 0:
        raise SubsetEmpty("binary Stack-SVD needs a nonempty table subset")
    if np.any(idx < 0) or np.any(idx >= m):
        raise ShapeMismatch(f"subset indices must lie in [0, {m})")
    mask[idx] = True
    return mask


def _best_subset(t2, c, cap):
    m = t2.size
    if m > cap:
        raise TooManyTablesForEnumeration(f"M={m} exceeds the enumeration cap {cap}")
    # subset sums for every bitmask, built by doubling
    T = np.zeros(1)
    C = np.zeros(1)
    for i in range(m):
        T = np.concatenate([T, T + t2[i]])
        C = np.concatenate([C, C + c[i]])
    T, C = T[1:], C[1:]
    num = T**2 - C
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(num > 0, num / (T * (T + 1.0)), 0.0)
    k = int(np.argmax(val)) + 1
    return np.array([(k >> i) & 1 for i in range(m)], dtype=bool)


def predict_binary_stacksvd(spec: ProblemSpec, subset="auto", *, max_tables: int = SUBSET_CAP) -> PredictionReport:
    """Stack-SVD on a subset of tables, all other tables discarded.

    Parameters
    ----------
    subset : "auto", "best" or iterable of int
        ``"auto"`` keeps ``{i : theta_i^4 >= c_i}``. ``"best"`` searches all
        nonempty subsets (at most ``max_tables`` tables). Otherwise the zero-based
        indices to keep.
    """
    theta, c = _rank1(spec)
    t2 = theta**2
    if isinstance(subset, str) and subset == "auto":
        mask = t2**2 >= c
    elif isinstance(subset, str) and subset == "best":
        mask = _best_subset(t2, c, max_tables)
    else:
        mask = _subset_mask(theta.size, subset)
    T = float(np.sum(t2[mask]))
    C = float(np.sum(c[mask]))
    ov = _stack_overlap(T, C) if mask.any() else 0.0
    return PredictionReport(
        "stacksvd_binary",
        ov,
        ov > 0,
        mask.astype(float),
        {"subset": np.flatnonzero(mask), "numerator": T**2 - C},
    )


def _stack_weights(theta, c):
    theta = np.asarray(theta, dtype=float)
    c = np.asarray(c, dtype=float)
    if theta.ndim == 2:
        c = c[:, None]
    return theta / np.sqrt(theta**2 + c)


def optimal_weights_stacksvd(spec: ProblemSpec) -> WeightVector:
    """``w_i = theta_i / sqrt(theta_i^2 + c_i)``, per column for rank r.

    Raises
    ------
    InvalidWeights
        If some component has no signal in any table.
    """
    return WeightVector(_stack_weights(spec.theta if spec.rank > 1 else spec.theta_vector, spec.c))


def _bisect_decreasing(f, lo, hi, tol, max_iter):
    """Root of a decreasing function with ``f(lo) > 0 > f(hi)``."""
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= tol:
            break
        if fm > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(mid)):
            break
    return mid


def _gamma_star(theta, c, tol=BISECTION_TOL, max_iter=BISECTION_MAX_ITER):
    t2 = theta**2
    t4 = t2**2
    if np.sum(t4 / c) <= 1.0:
        return 0.0

    def f(x):
        return float(np.sum(t4 * (1.0 - x) / (c + x * t2))) - 1.0

    return float(_bisect_decreasing(f, 0.0, 1.0, tol, max_iter))


def predict_weighted_stacksvd(
    spec: ProblemSpec, *, tol: float = BISECTION_TOL, max_iter: int = BISECTION_MAX_ITER
) -> PredictionReport:
    """Optimally weighted Stack-SVD.

    The overlap is the root ``x`` in (0, 1) of
    ``sum_i theta_i^4 (1 - x) / (c_i + x theta_i^2) = 1``, found by
    bisection. Detectable iff ``sum_i theta_i^4 / c_i > 1``.
    """
    theta, c = _rank1(spec)
    ratio = float(np.sum(theta**4 / c))
    g = _gamma_star(theta, c, tol, max_iter)
    return PredictionReport(
        "stacksvd_weighted",
        g,
        ratio > 1.0,
        _stack_weights(theta, c),
        {"gamma_star": g, "snr_sum": ratio},
    )


def eval_general_weighted_stacksvd(
    spec: ProblemSpec, w, *, tol: float = BISECTION_TOL, max_iter: int = BISECTION_MAX_ITER
) -> WeightedStackSpectrum:
    """Limiting overlap ``L(w)`` of Stack-SVD under arbitrary weights.

    ``gamma1`` is the largest root of the secular equation
    ``1 + sum_i theta_i^2 w_i^2 / (w_i^2 - lambda) = 0``. If a table with
    no signal carries a larger weight than that root the noise of that
    table dominates and ``L(w) = 0``.

    Raises
    ------
    NoSecularRoot
        If every ``theta_i w_i`` is zero.
    """
    theta, c = _rank1(spec)
    w = _as_weights(w, theta.size)
    if w.ndim != 1:
        raise ShapeMismatch("eval_general_weighted_stacksvd takes a weight vector")
    w2 = w**2
    if not np.any(theta**2 * w2 > 0):
        raise NoSecularRoot("all theta_i * w_i are zero")
    # A and L are invariant under w -> s w; solve at max w^2 = 1 so the
    # absolute bisection tolerance is also a relative one
    scale = float(w2.max())
    w2 = w2 / scale
    a = theta**2 * w2  # theta_i^2 w_i^2
    active = a > 0
    wa, aa = w2[active], a[active]

    def f(lam):
        return 1.0 + float(np.sum(aa / (wa - lam)))

    # f increases from -inf just above max(wa) to below 1; bisect on -f
    lo = float(wa.max())
    hi = float(w2.max() + a.sum() + 1.0)
    with np.errstate(divide="ignore"):
        root = _bisect_decreasing(lambda x: -f(x), lo, hi, tol, max_iter)
    # the noise eigenvalue max w^2 wins if the root sits below it
    outlier = root > w2.max()
    if not outlier:
        return WeightedStackSpectrum(scale, math.inf, 0.0, False)
    g = float(root)
    A = float(np.sum(c * w2**2 / (g - w2) ** 2))
    if A >= 1.0:
        return WeightedStackSpectrum(g * scale, A, 0.0, True)
    denom = g * float(np.sum(a / (w2 - g) ** 2))
    L = (1.0 - A) / denom
    return WeightedStackSpectrum(g * scale, A, float(min(max(L, 0.0), 1.0)), True)


# ---------------------------------------------------------------------------
# thresholds, rank r, constructions


def detection_thresholds(spec: ProblemSpec) -> ThresholdReport:
    """Detectability flag and margin for every rank-1 method."""
    theta, c = _rank1(spec)
    t2 = theta**2
    t4 = t2**2
    b = np.sort(np.sqrt(beta_squared(theta, c)))[::-1]
    second = b[1] if b.size > 1 else b[0]
    auto = t4 >= c
    T_auto = float(np.sum(t2[auto]))
    margins = {
        "svdstack": float(second),
        "svdstack_weighted": float(np.max(t4 / c) - 1.0),
        "stacksvd": float(np.sum(t2) ** 2 - np.sum(c)),
        "stacksvd_weighted": float(np.sum(t4 / c) - 1.0),
        "stacksvd_binary_auto": T_auto**2 - float(np.sum(c[auto])),
    }
    flags = {k: bool(v > 0) for k, v in margins.items()}
    return ThresholdReport(flags, margins)


def predict_rank_r(spec: ProblemSpec, *, tol: float = BISECTION_TOL) -> RankRPrediction:
    """Componentwise ``gamma_j`` and ``S_j`` for weighted rank-r estimators."""
    gam = np.array([_gamma_star(spec.theta[:, j], spec.c, tol) for j in range(spec.rank)])
    b2 = beta_squared(spec.theta, spec.c)
    S = np.sum(b2 / (1.0 - b2), axis=0)
    return RankRPrediction(gam, S)


def rank_r_weight_bookkeeping(spec: ProblemSpec, j: int, *, rtol: float = 1e-12) -> Bookkeeping:
    """Weights and singular-vector rank for component ``j`` (zero based).

    Under the weights ``w_ij = theta_ij / sqrt(theta_ij^2 + c_i)`` the
    signal part of the stack for component ``j`` has Gram matrix
    ``V diag(theta~_j.^2) V^T`` with
    ``theta~_jk^2 = sum_i w_ij^2 theta_ik^2``, so component ``j`` sits at
    the ``order``-th largest of these.

    Raises
    ------
    AmbiguousComponentOrder
        If ``theta~_jj`` ties with another ``theta~_jk``.
    """
    r = spec.rank
    if not 0 <= j < r:
        raise ShapeMismatch(f"component index {j} outside [0, {r})")
    th = spec.theta
    tj = th[:, j]
    w = tj / np.sqrt(tj**2 + spec.c)
    cross = (w**2) @ (th**2)  # length r
    scale = max(float(np.max(np.abs(cross))), np.finfo(float).tiny)
    others = np.delete(cross, j)
    if np.any(np.abs(others - cross[j]) <= rtol * scale):
        raise AmbiguousComponentOrder(f"component {j} ties with another component")
    order = int(np.sum(cross > cross[j]))
    return Bookkeeping(w, cross, order)


def inadmissibility_instance(epsilon: float) -> ProblemSpec:
    """Instance where only optimally weighted Stack-SVD detects the signal.

    ``M = ceil(exp(-gamma_EM) exp(2 / epsilon))`` tables with
    ``theta_i = 1`` and ``c_i = 2i - 1``. Every prefix sits exactly on the
    Stack-SVD threshold, while the weighted overlap exceeds
    ``1 - epsilon``.
    """
    if not 0.0 < epsilon < 1.0:
        raise EpsilonOutOfRange(f"epsilon must lie in (0, 1), got {epsilon}")
    M = math.ceil(math.exp(-EULER_GAMMA) * math.exp(2.0 / epsilon))
    if M > _MAX_INADMISSIBLE_M:
        raise EpsilonOutOfRange(f"epsilon={epsilon} needs M={M} tables, too many to build")
    i = np.arange(1, M + 1, dtype=float)
    return ProblemSpec(np.ones(M), 2.0 * i - 1.0)


def predict_all(spec: ProblemSpec) -> dict:
    """All six rank-1 predictors keyed by method tag."""
    reports = [
        predict_unweighted_svdstack(spec),
        predict_binary_svdstack(spec),
        predict_weighted_svdstack(spec),
        predict_unweighted_stacksvd(spec),
        predict_binary_stacksvd(spec),
        predict_weighted_stacksvd(spec),
    ]
    return {r.method: r for r in reports}
