"""Stack-SVD, SVD-Stack and signal-strength estimation on observed tables."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate, optimize

from .errors import (
    AllTablesBelowThreshold,
    NoOutlierSingularValue,
    RankTooLarge,
    ReferenceBelowThreshold,
    ShapeMismatch,
)
from .linalg import gram_svd, gram_truncated_svd, stacked_truncated_svd, truncated_svd
from .model import ProblemSpec, SubspaceEstimate, TableSet, WeightVector, _as_weights
from .theory import _stack_weights, _svdstack_weights, predict_rank_r, rank_r_weight_bookkeeping

__all__ = [
    "ThetaEstimate",
    "stack_svd",
    "svd_stack",
    "lowest_noise_only",
    "stack_svd_rank_r",
    "svd_stack_rank_r",
    "theta_from_top_singular_value",
    "estimate_theta_above_threshold",
    "estimate_theta_cross_table",
    "estimate_thetas",
    "auto_weights",
    "center_columns",
    "bulk_edge_margin",
    "estimate_noise_scale",
]


def _as_tableset(tables) -> TableSet:
    return tables if isinstance(tables, TableSet) else TableSet(tables)


def center_columns(X: np.ndarray) -> np.ndarray:
    """Subtract column means."""
    X = np.asarray(X, dtype=float)
    return X - X.mean(axis=0, keepdims=True)


def _maybe_center(ts: TableSet, center: bool) -> TableSet:
    if not center:
        return ts
    return TableSet([center_columns(X) for X in ts.tables], ts.d)


def _tag(family, w, weighting):
    if weighting is not None:
        return f"{family}/{weighting}"
    return f"{family}/unweighted" if w is None else f"{family}/custom"


# ---------------------------------------------------------------------------
# rank-1 and generic estimators


def _stack_decomp(ts, keep, wv, k, grams):
    if grams is None:
        return stacked_truncated_svd([ts.tables[i] for i in keep], wv[keep], k)
    G = sum(wv[i] ** 2 * grams[i] for i in keep)
    return gram_truncated_svd(G, k)


def stack_svd(
    tables,
    w=None,
    k: int = 1,
    *,
    center: bool = False,
    weighting: Optional[str] = None,
    grams=None,
) -> SubspaceEstimate:
    """Leading right singular vectors of ``[w_1 X_1; ...; w_m X_m]``.

    Parameters
    ----------
    tables : TableSet or sequence of ndarray
    w : WeightVector or array_like, optional
        Per-table weights; all ones when omitted. Tables with zero weight are
        dropped before decomposing.
    k : int
        Number of vectors.
    center : bool
        Center the columns of every table first.
    weighting : str, optional
        Label recorded in ``method``.
    grams : sequence of ndarray, optional
        Precomputed ``X_i^T X_i``. The stack is then decomposed through
        ``sum_i w_i^2 X_i^T X_i``, which is cheaper when several weightings
        of the same tables are needed.
    """
    ts = _maybe_center(_as_tableset(tables), center)
    wv = _as_weights(w, ts.m)
    if wv.ndim != 1:
        raise ShapeMismatch("stack_svd takes one weight per table")
    keep = np.flatnonzero(wv > 0)
    blocks = [ts.tables[i] for i in keep]
    n = sum(B.shape[0] for B in blocks)
    if not 1 <= k <= min(n, ts.d):
        raise RankTooLarge(f"k={k} outside [1, {min(n, ts.d)}]")
    trip = _stack_decomp(ts, keep, wv, k, grams)
    return SubspaceEstimate(trip.v, trip.s, _tag("stack-svd", w, weighting))


def _per_table_vectors(ts: TableSet, idx, k):
    return [truncated_svd(ts.tables[i], k).v for i in idx]


def svd_stack(
    tables,
    w=None,
    k: int = 1,
    *,
    per_table: int = 1,
    center: bool = False,
    weighting: Optional[str] = None,
    vectors=None,
) -> SubspaceEstimate:
    """SVD of the stacked, weighted per-table singular vectors.

    Each table contributes its ``per_table`` leading right singular vectors
    as rows of ``V~``, all scaled by that table's weight. The estimate is
    the ``k`` leading right singular vectors of ``V~``.

    ``vectors`` may carry precomputed per-table right singular vectors
    (one ``d x per_table`` array per table) to avoid recomputing them.
    """
    ts = _maybe_center(_as_tableset(tables), center)
    wv = _as_weights(w, ts.m)
    if wv.ndim != 1:
        raise ShapeMismatch("svd_stack takes one weight per table; see svd_stack_rank_r")
    keep = np.flatnonzero(wv > 0)
    if k > keep.size * per_table:
        raise RankTooLarge(f"k={k} exceeds the {keep.size * per_table} stacked vectors")
    if vectors is None:
        vecs = _per_table_vectors(ts, keep, per_table)
    else:
        vecs = [np.asarray(vectors[i])[:, :per_table] for i in keep]
    Vt = np.vstack([wv[i] * V.T for i, V in zip(keep, vecs)])
    trip = truncated_svd(Vt, k)
    return SubspaceEstimate(trip.v, trip.s, _tag("svd-stack", w, weighting))


def lowest_noise_only(tables, index: int, k: int = 1, *, center: bool = False) -> SubspaceEstimate:
    """Baseline that keeps only table ``index``."""
    ts = _as_tableset(tables)
    est = svd_stack(ts.subset([index]), None, k, per_table=k, center=center)
    return SubspaceEstimate(est.vectors, est.singular_values, "svd-stack/single-table")


# ---------------------------------------------------------------------------
# rank r


def stack_svd_rank_r(tables, spec: ProblemSpec, *, center: bool = False, grams=None) -> SubspaceEstimate:
    """Weighted Stack-SVD, one weighted stack per component.

    Component ``j`` uses ``w_ij = theta_ij / sqrt(theta_ij^2 + c_i)`` and is
    read off the singular vector whose rank is given by
    :func:`~stacksvd.theory.rank_r_weight_bookkeeping`.
    """
    ts = _maybe_center(_as_tableset(tables), center)
    if spec.m != ts.m:
        raise ShapeMismatch(f"spec has {spec.m} tables, data has {ts.m}")
    cols, svals = [], []
    for j in range(spec.rank):
        book = rank_r_weight_bookkeeping(spec, j)
        w = book.weights
        keep = np.flatnonzero(w > 0)
        if keep.size == 0:
            # no table carries this component; nothing to weight by
            keep, w = np.arange(ts.m), np.ones(ts.m)
        trip = _stack_decomp(ts, keep, w, book.order + 1, grams)
        cols.append(trip.v[:, book.order])
        svals.append(trip.s[book.order])
    return SubspaceEstimate(np.column_stack(cols), np.array(svals), "stack-svd/weighted")


def svd_stack_rank_r(
    tables, spec: ProblemSpec, *, center: bool = False, rtol: float = 1e-12, vectors=None
) -> SubspaceEstimate:
    """Weighted SVD-Stack for rank r.

    Table ``i`` contributes its top ``r`` right singular vectors. The vector
    at position ``q`` belongs to the component with the ``q``-th largest
    ``theta_ij`` in that table and is weighted by
    ``w_ij = theta_ij sqrt((theta_ij^2 + 1) / (theta_ij^2 + c_i))``.
    Output columns are matched to components by ranking
    ``S_j = sum_i beta_ij^2 / (1 - beta_ij^2)``; if two ``S_j`` tie only the
    subspace is identified and ``componentwise`` is False.
    """
    ts = _maybe_center(_as_tableset(tables), center)
    if spec.m != ts.m:
        raise ShapeMismatch(f"spec has {spec.m} tables, data has {ts.m}")
    r = spec.rank
    W = _svdstack_weights(spec.theta, spec.c)
    rows = []
    for i in range(ts.m):
        if not np.any(W[i] > 0):
            continue
        V = truncated_svd(ts.tables[i], r).v if vectors is None else np.asarray(vectors[i])[:, :r]
        comp = np.argsort(-spec.theta[i], kind="stable")
        rows.append(W[i, comp][:, None] * V.T)
    if not rows:
        rows = [truncated_svd(X, r).v.T for X in ts.tables]
    Vt = np.vstack(rows)
    trip = truncated_svd(Vt, r)
    S = predict_rank_r(spec).S
    comp_order = np.argsort(-S, kind="stable")  # component owning each output slot
    vecs = np.empty_like(trip.v)
    svals = np.empty_like(trip.s)
    vecs[:, comp_order] = trip.v
    svals[comp_order] = trip.s
    Ss = np.sort(S)
    tied = bool(np.any(np.diff(Ss) <= rtol * max(1.0, Ss[-1])))
    return SubspaceEstimate(vecs, svals, "svd-stack/weighted", componentwise=not tied)


# ---------------------------------------------------------------------------
# signal-strength estimation


@dataclass(frozen=True)
class ThetaEstimate:
    """Estimated signal strength of one table.

    Attributes
    ----------
    theta : float
        ``theta_hat >= 0``.
    beta_sq : float
        Plug-in single-table overlap ``(t^4 - c) / (t^4 + t^2)`` at
        ``t = theta_hat``, clipped to [0, 1).
    method : str
        ``"above-threshold-quadratic"`` or ``"cross-table"``.
    reference : int or None
        Index of the reference table for cross-table estimates.
    sigma1 : float
        Top singular value of the table.
    c : float
        Aspect ratio used.
    """

    theta: float
    beta_sq: float
    method: str
    reference: Optional[int] = None
    sigma1: float = float("nan")
    c: float = float("nan")

    def to_dict(self) -> dict:
        return dict(
            theta=self.theta,
            beta_sq=self.beta_sq,
            method=self.method,
            reference=self.reference,
            sigma1=self.sigma1,
            c=self.c,
        )


def _plugin_beta_sq(theta, c):
    t2 = theta * theta
    t4 = t2 * t2
    if t4 <= c:
        return 0.0
    return float(min((t4 - c) / (t4 + t2), np.nextafter(1.0, 0.0)))


def theta_from_top_singular_value(sigma1_sq: float, c: float, margin: float = 1e-6) -> float:
    """Invert ``sigma_1^2 = theta^2 + 1 + c + c / theta^2``.

    Raises
    ------
    NoOutlierSingularValue
        If ``sigma1_sq <= (1 + sqrt(c))^2 + margin``.
    """
    edge = (1.0 + np.sqrt(c)) ** 2
    if not sigma1_sq > edge + margin:
        raise NoOutlierSingularValue(
            f"sigma_1^2 = {sigma1_sq:.6g} is not above the bulk edge {edge:.6g}"
        )
    a = sigma1_sq - (1.0 + c)
    disc = a * a - 4.0 * c
    if disc < 0:
        raise NoOutlierSingularValue("negative discriminant")
    return float(np.sqrt((a + np.sqrt(disc)) / 2.0))


def estimate_theta_above_threshold(table, c: Optional[float] = None, *, margin: float = 1e-6) -> ThetaEstimate:
    """Bias-corrected ``theta_hat`` from the top singular value of one table.

    ``c`` defaults to ``n / d``.
    """
    X = np.asarray(table, dtype=float)
    if c is None:
        c = X.shape[0] / X.shape[1]
    s1 = float(truncated_svd(X, 1).s[0])
    th = theta_from_top_singular_value(s1 * s1, c, margin)
    return ThetaEstimate(th, _plugin_beta_sq(th, c), "above-threshold-quadratic", None, s1, float(c))


def theta_from_projection(proj_sq: float, c_tgt: float, beta_sq_ref: float) -> float:
    """Invert ``|X_t v_ref|^2 -> theta_t^2 beta_ref^2 + c_t``."""
    return float(np.sqrt(max(proj_sq - c_tgt, 0.0) / beta_sq_ref))


def estimate_theta_cross_table(
    reference,
    target,
    c_ref: Optional[float] = None,
    c_tgt: Optional[float] = None,
    *,
    margin: float = 1e-6,
    reference_index: Optional[int] = None,
) -> ThetaEstimate:
    """Estimate the target's ``theta`` through a reference table's singular vector.

    ``theta_t = sqrt(max(|X_t v_ref|^2 - c_t, 0)) / beta_ref`` where
    ``v_ref`` and ``beta_ref`` come from the reference table, which must
    have an outlier singular value.
    """
    R = np.asarray(reference, dtype=float)
    T = np.asarray(target, dtype=float)
    if R.shape[1] != T.shape[1]:
        raise ShapeMismatch("reference and target must share the column dimension")
    if c_ref is None:
        c_ref = R.shape[0] / R.shape[1]
    if c_tgt is None:
        c_tgt = T.shape[0] / T.shape[1]
    trip = truncated_svd(R, 1)
    s1 = float(trip.s[0])
    try:
        th_ref = theta_from_top_singular_value(s1 * s1, c_ref, margin)
    except NoOutlierSingularValue as exc:
        raise ReferenceBelowThreshold(str(exc)) from exc
    b2 = _plugin_beta_sq(th_ref, c_ref)
    if b2 <= 0:
        raise ReferenceBelowThreshold("reference overlap estimate is zero")
    proj = float(np.sum((T @ trip.v[:, 0]) ** 2))
    th = theta_from_projection(proj, c_tgt, b2)
    return ThetaEstimate(th, _plugin_beta_sq(th, c_tgt), "cross-table", reference_index, float("nan"), float(c_tgt))


def bulk_edge_margin(n: int, d: int, k: float = 3.0) -> float:
    """``k`` fluctuation scales of the largest noise eigenvalue.

    The top eigenvalue of ``X^T X`` for pure noise of variance ``1/d``
    fluctuates around ``(1 + sqrt(c))^2`` on the scale
    ``(sqrt(n) + sqrt(d)) (1/sqrt(n) + 1/sqrt(d))^(1/3) / d``.
    """
    sn, sd = np.sqrt(n), np.sqrt(d)
    return float(k * (sn + sd) * (1.0 / sn + 1.0 / sd) ** (1.0 / 3.0) / d)


def estimate_thetas(tables, c=None, *, edge_sigmas: float = 3.0, reference: Optional[int] = None) -> list:
    """``theta_hat`` for every table.

    A table is treated as above threshold when ``sigma_1^2`` clears the
    bulk edge by ``edge_sigmas`` finite-sample fluctuation scales (see
    :func:`bulk_edge_margin`). Those tables use the quadratic inversion; all
    others are estimated through the reference table, the one with the
    largest ``sigma_1^2 / (1 + sqrt(c))^2``.

    Parameters
    ----------
    reference : int, optional
        Index of a table known to be above threshold. Only that table is
        decomposed and every other table is estimated through it.

    Raises
    ------
    AllTablesBelowThreshold
    ReferenceBelowThreshold
        If ``reference`` is given and has no outlier singular value.
    """
    ts = _as_tableset(tables)
    c = ts.c if c is None else np.asarray(c, dtype=float)
    if c.shape != (ts.m,):
        raise ShapeMismatch("need one aspect ratio per table")
    edge = (1.0 + np.sqrt(c)) ** 2
    out = [None] * ts.m

    if reference is not None:
        ref = int(reference)
        trip = gram_svd(ts.tables[ref], 1)
        s1sq_ref = float(trip.s[0] ** 2)
        try:
            th = theta_from_top_singular_value(s1sq_ref, c[ref], 0.0)
        except NoOutlierSingularValue as exc:
            raise ReferenceBelowThreshold(str(exc)) from exc
        out[ref] = ThetaEstimate(th, _plugin_beta_sq(th, c[ref]), "above-threshold-quadratic", None, float(trip.s[0]), float(c[ref]))
        s1 = np.full(ts.m, np.nan)
        s1[ref] = trip.s[0]
        above = np.zeros(ts.m, dtype=bool)
        above[ref] = True
        v_ref = trip.v[:, 0]
    else:
        trips = [gram_svd(X, 1) for X in ts.tables]
        s1 = np.array([t.s[0] for t in trips])
        margin = np.array([bulk_edge_margin(X.shape[0], ts.d, edge_sigmas) for X in ts.tables])
        above = s1**2 > edge + margin
        if not above.any():
            raise AllTablesBelowThreshold("no table has an outlier singular value")
        ref = int(np.argmax(np.where(above, s1**2 / edge, -np.inf)))
        for i in np.flatnonzero(above):
            th = theta_from_top_singular_value(s1[i] ** 2, c[i], 0.0)
            out[i] = ThetaEstimate(th, _plugin_beta_sq(th, c[i]), "above-threshold-quadratic", None, float(s1[i]), float(c[i]))
        v_ref = trips[ref].v[:, 0]

    b2_ref = out[ref].beta_sq
    for i in np.flatnonzero(~above):
        proj = float(np.sum((ts.tables[i] @ v_ref) ** 2))
        th = theta_from_projection(proj, c[i], b2_ref)
        out[i] = ThetaEstimate(th, _plugin_beta_sq(th, c[i]), "cross-table", ref, float(s1[i]), float(c[i]))
    return out


def auto_weights(tables, method: str = "stack", c=None, *, edge_sigmas: float = 3.0) -> WeightVector:
    """Optimal weights evaluated at estimated signal strengths.

    Parameters
    ----------
    method : {"stack", "svdstack"}
    """
    ts = _as_tableset(tables)
    c = ts.c if c is None else np.asarray(c, dtype=float)
    est = estimate_thetas(ts, c, edge_sigmas=edge_sigmas)
    th = np.array([e.theta for e in est])
    if method == "stack":
        return WeightVector(_stack_weights(th, c))
    if method == "svdstack":
        return WeightVector(_svdstack_weights(th, c))
    raise ValueError(f"unknown method {method!r}; expected 'stack' or 'svdstack'")


# ---------------------------------------------------------------------------
# experimental noise-level normalization


def _mp_median(c: float) -> float:
    """Median nonzero eigenvalue of ``X^T X`` for ``n x d`` noise of variance ``1/d``."""
    y, scale = (c, 1.0) if c <= 1 else (1.0 / c, c)
    a, b = (1 - np.sqrt(y)) ** 2, (1 + np.sqrt(y)) ** 2

    def dens(x):
        return np.sqrt(max((b - x) * (x - a), 0.0)) / (2 * np.pi * y * x)

    def cdf(t):
        return integrate.quad(dens, a, t, limit=200)[0]

    return scale * optimize.brentq(lambda t: cdf(t) - 0.5, a, b, xtol=1e-13)


def estimate_noise_scale(table, c: Optional[float] = None) -> float:
    """Experimental: noise standard deviation relative to the ``1/d`` model.

    Ratio of the observed median squared singular value to the
    Marchenko-Pastur median, square-rooted. Dividing a table by the result
    puts it on the model's scale. The model itself assumes a known noise
    level, so this is a convenience for real data only.
    """
    X = np.asarray(table, dtype=float)
    n, d = X.shape
    if c is None:
        c = n / d
    s = np.linalg.svd(X, compute_uv=False)
    return float(np.sqrt(np.median(s**2) / _mp_median(c)))
