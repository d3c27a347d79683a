"""Synthetic data, the Monte Carlo harness, and the count-matrix pipeline."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import estimators as est
from . import theory
from .errors import InvalidPlan, NegativeCounts, RankTooLarge, ShapeMismatch
from .linalg import as_generator, gram_truncated_svd, haar_orthonormal
from .model import GroundTruth, ProblemSpec, TableSet, alignment

__all__ = [
    "NoiseSpec",
    "ExperimentPlan",
    "ExperimentResult",
    "ResultRow",
    "METHODS",
    "table_rows",
    "generate_tables",
    "run_experiment",
    "sample_random_spec",
    "count_pipeline",
    "planted_counts",
    "resolve_threads",
]

NOISE_FAMILIES = ("gaussian", "centered-exponential", "rademacher")
METHODS = (
    "stacksvd",
    "stacksvd_binary",
    "stacksvd_weighted",
    "svdstack",
    "svdstack_binary",
    "svdstack_weighted",
)
DEFAULT_METHODS = ("stacksvd", "stacksvd_weighted", "svdstack", "svdstack_weighted")


@dataclass(frozen=True)
class NoiseSpec:
    """i.i.d. noise with mean 0 and variance ``1/d``."""

    family: str = "gaussian"

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}; choose from {NOISE_FAMILIES}")

    def sample(self, rng: np.random.Generator, shape, d: int) -> np.ndarray:
        scale = 1.0 / math.sqrt(d)
        if self.family == "gaussian":
            E = rng.standard_normal(shape)
        elif self.family == "centered-exponential":
            E = rng.standard_exponential(shape)
            E -= 1.0
        else:
            E = rng.integers(0, 2, size=shape, dtype=np.int8).astype(float)
            E *= 2.0
            E -= 1.0
        E *= scale
        return E


def table_rows(c, d: int) -> np.ndarray:
    """``n_i = round(d c_i)`` with halves rounded up."""
    return np.floor(np.asarray(c, dtype=float) * d + 0.5).astype(int)


def generate_tables(spec: ProblemSpec, d: int, noise="gaussian", seed=None):
    """Draw ``X_i = U_i diag(theta_i) V^T + E_i`` for every table.

    Parameters
    ----------
    spec : ProblemSpec
    d : int
        Column dimension.
    noise : NoiseSpec or str
    seed : int, SeedSequence or Generator

    Returns
    -------
    tables : TableSet
    truth : GroundTruth
        ``V`` and the left factors ``U_i``.
    """
    noise = noise if isinstance(noise, NoiseSpec) else NoiseSpec(noise)
    rng = as_generator(seed)
    r = spec.rank
    n = table_rows(spec.c, d)
    if r > d or np.any(n < r):
        raise RankTooLarge(f"need d >= {r} and every n_i >= {r}; got d={d}, n={n.tolist()}")
    V = haar_orthonormal(d, r, rng)
    tables, us = [], []
    for i in range(spec.m):
        U = haar_orthonormal(int(n[i]), r, rng)
        X = noise.sample(rng, (int(n[i]), d), d)
        th = spec.theta[i]
        if np.any(th > 0):
            X += (U * th) @ V.T
        tables.append(X)
        us.append(U)
    return TableSet(tables, d), GroundTruth(V, tuple(us))


def sample_random_spec(mu: float, m: int, seed=None) -> ProblemSpec:
    """Random instance with ``c_i^(1/4) ~ Expo(1) + 0.1`` and
    ``theta_i = c_i^(1/4) exp(W)``, ``W ~ N(mu, 1/100)``."""
    rng = as_generator(seed)
    c4 = rng.standard_exponential(m) + 0.1
    W = rng.normal(mu, 0.1, size=m)
    return ProblemSpec(c4 * np.exp(W), c4**4)


# ---------------------------------------------------------------------------
# count data


def count_pipeline(counts, ambient_rates, splits: int = 1, seed=None, *, center: bool = True) -> TableSet:
    """Split a count matrix into tables and add ambient Poisson noise.

    Rows are assigned uniformly at random to ``splits`` blocks. Block ``i``
    gets independent ``Poisson(lambda_i)`` counts added to every entry and
    is then transformed as ``X_i = 2 sqrt(Y_i / d)``. Columns are centered
    unless ``center`` is False.

    Raises
    ------
    NegativeCounts
    """
    Y = np.asarray(counts)
    if Y.ndim != 2:
        raise ShapeMismatch("counts must be a matrix")
    if np.any(Y < 0):
        raise NegativeCounts("count matrix has negative entries")
    if not np.all(np.equal(np.mod(Y, 1), 0)):
        raise ValueError("counts must be integers")
    if splits < 1 or splits > Y.shape[0]:
        raise ValueError(f"splits must lie in [1, {Y.shape[0]}]")
    lam = np.broadcast_to(np.asarray(ambient_rates, dtype=float), (splits,))
    if np.any(lam < 0):
        raise ValueError("ambient rates must be >= 0")
    rng = as_generator(seed)
    n, d = Y.shape
    perm = rng.permutation(n) if splits > 1 else np.arange(n)
    blocks = np.array_split(perm, splits)
    tables = []
    for idx, li in zip(blocks, lam):
        Yi = Y[np.sort(idx)].astype(float)
        if li > 0:
            Yi = Yi + rng.poisson(li, size=Yi.shape)
        Xi = 2.0 * np.sqrt(Yi / d)
        if center:
            Xi = est.center_columns(Xi)
        tables.append(Xi)
    return TableSet(tables, d)


def planted_counts(n: int, d: int, rank: int, *, depth: float = 20.0, strength: float = 1.0, seed=None):
    """Poisson counts with a planted rank-``rank`` column structure.

    Rates are ``depth * exp(strength * L)`` with ``L = A B^T`` low rank, so
    the square-root transform leaves a dominant low-rank signal. Returns the
    count matrix and the true column factor ``B`` (orthonormalized).
    """
    rng = as_generator(seed)
    A = rng.standard_normal((n, rank)) / math.sqrt(rank)
    B = haar_orthonormal(d, rank, rng) * math.sqrt(d) / 4.0
    rates = depth * np.exp(strength * np.tanh(A @ B.T))
    Y = rng.poisson(rates)
    Q, _ = np.linalg.qr(B)
    return Y, Q


# ---------------------------------------------------------------------------
# experiment harness


def resolve_threads(requested: Optional[int] = None) -> int:
    """Worker count: ``requested`` (default cpu count) capped by ``SSVD_THREADS``."""
    n = requested if requested else (os.cpu_count() or 1)
    cap = os.environ.get("SSVD_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise InvalidPlan(f"SSVD_THREADS must be an integer, got {cap!r}") from None
    return max(1, int(n))


@dataclass(frozen=True)
class ExperimentPlan:
    """Monte Carlo design.

    Attributes
    ----------
    spec : ProblemSpec
        Base instance. With ``m_grid`` the first ``M`` tables are used at
        grid value ``M``.
    d : int or sequence of int
        Column dimension; a sequence makes ``d`` the grid.
    replicates : int
    seed : int
    methods : tuple of str
        Subset of :data:`METHODS`.
    noise : str
        Noise family.
    m_grid : sequence of int, optional
        Table counts; requires a single ``d``.
    weights : {"oracle", "estimated"}
        Use the true ``theta`` or :func:`estimators.auto_weights`.
    threads : int, optional
        Worker threads, capped by ``SSVD_THREADS``.
    """

    spec: ProblemSpec
    d: object = 1000
    replicates: int = 10
    seed: int = 0
    methods: tuple = DEFAULT_METHODS
    noise: str = "gaussian"
    m_grid: Optional[tuple] = None
    weights: str = "oracle"
    threads: Optional[int] = None

    def grid(self):
        """``(kind, values)`` with kind ``"d"`` or ``"m"``."""
        if self.m_grid is not None:
            return "m", [int(m) for m in self.m_grid]
        ds = [self.d] if np.isscalar(self.d) else list(self.d)
        return "d", [int(x) for x in ds]

    def validate(self):
        if self.replicates < 1:
            raise InvalidPlan("replicates must be >= 1")
        kind, values = self.grid()
        if not values:
            raise InvalidPlan("empty grid")
        if kind == "m":
            if not np.isscalar(self.d):
                raise InvalidPlan("an M grid needs a single d")
            if min(values) < 1 or max(values) > self.spec.m:
                raise InvalidPlan(f"M grid must lie in [1, {self.spec.m}]")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise InvalidPlan(f"unknown methods {bad}; choose from {METHODS}")
        if self.weights not in ("oracle", "estimated"):
            raise InvalidPlan("weights must be 'oracle' or 'estimated'")
        NoiseSpec(self.noise)
        for (g, spec, d) in self._points():
            n = table_rows(spec.c, d)
            if np.any(n < max(1, spec.rank)):
                raise InvalidPlan(f"round(d*c_i) must be >= rank at grid value {g}")

    def _points(self):
        kind, values = self.grid()
        if kind == "m":
            return [(m, self.spec.subset(np.arange(m)), int(self.d)) for m in values]
        return [(d, self.spec, d) for d in values]

    def to_dict(self) -> dict:
        kind, values = self.grid()
        return {
            "spec": self.spec.to_dict(),
            "grid_kind": kind,
            "grid": values,
            "d": self.d if np.isscalar(self.d) else list(self.d),
            "replicates": self.replicates,
            "seed": self.seed,
            "methods": list(self.methods),
            "noise": self.noise,
            "weights": self.weights,
        }


@dataclass(frozen=True)
class ResultRow:
    grid_value: int
    method: str
    mean_overlap: float
    std_err: float
    theory: float
    bias: float
    replicates: int


@dataclass(frozen=True)
class ExperimentResult:
    """Aggregated Monte Carlo output.

    ``raw[(grid_value, method)]`` holds the per-replicate metric: squared
    overlap for rank 1, ``||V^T Vhat||_F^2`` for rank r.
    """

    plan: ExperimentPlan
    rows: tuple
    raw: dict = field(repr=False, default_factory=dict)

    def row(self, grid_value, method) -> ResultRow:
        for r in self.rows:
            if r.grid_value == grid_value and r.method == method:
                return r
        raise KeyError((grid_value, method))

    CSV_COLUMNS = ("grid_value", "method", "mean_overlap", "std_err", "theory", "bias")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.grid_value, r.method] + [repr(float(x)) for x in (r.mean_overlap, r.std_err, r.theory, r.bias)])
        return buf.getvalue()

    def to_json(self) -> str:
        body = {"plan": self.plan.to_dict(), "rows": [asdict(r) for r in self.rows]}
        return json.dumps(body, indent=2, sort_keys=True)


def _theory(spec: ProblemSpec, method: str) -> float:
    if spec.rank > 1:
        pr = theory.predict_rank_r(spec)
        return {"stacksvd_weighted": pr.stack_total, "svdstack_weighted": pr.svdstack_total}.get(method, float("nan"))
    fn = {
        "stacksvd": theory.predict_unweighted_stacksvd,
        "stacksvd_binary": theory.predict_binary_stacksvd,
        "stacksvd_weighted": theory.predict_weighted_stacksvd,
        "svdstack": theory.predict_unweighted_svdstack,
        "svdstack_binary": theory.predict_binary_svdstack,
        "svdstack_weighted": theory.predict_weighted_svdstack,
    }[method]
    return fn(spec).overlap


def _run_methods(ts: TableSet, truth: GroundTruth, spec: ProblemSpec, methods, weights_mode):
    """Metric for every method on one replicate; per-table SVDs are shared."""
    r = spec.rank
    if weights_mode == "estimated":
        if r > 1:
            raise InvalidPlan("estimated weights are only supported for rank 1")
        th_hat = np.array([e.theta for e in est.estimate_thetas(ts)])
        work = ProblemSpec(th_hat, spec.c)
    else:
        work = spec
    # one Gram matrix per table serves every method
    grams = [X.T @ X for X in ts.tables]
    vec_cache = {}

    def vectors():
        if not vec_cache:
            vec_cache["v"] = [gram_truncated_svd(G, r).v for G in grams]
        return vec_cache["v"]

    out = {}
    for m in methods:
        if m == "stacksvd":
            e = est.stack_svd(ts, None, r, grams=grams)
        elif m == "svdstack":
            e = est.svd_stack(ts, None, r, per_table=r, vectors=vectors())
        elif r > 1 and m == "stacksvd_weighted":
            e = est.stack_svd_rank_r(ts, work, grams=grams)
        elif r > 1 and m == "svdstack_weighted":
            e = est.svd_stack_rank_r(ts, work, vectors=vectors())
        elif r > 1:
            out[m] = float("nan")
            continue
        else:
            th = work.theta_vector
            if m == "stacksvd_binary":
                w = (th**4 >= work.c).astype(float)
            elif m == "svdstack_binary":
                w = (th**4 > work.c).astype(float)
            elif m == "stacksvd_weighted":
                w = theory._stack_weights(th, work.c)
            else:
                w = theory._svdstack_weights(th, work.c)
            if not np.any(w > 0):
                out[m] = float("nan")  # estimator undefined: every table discarded
                continue
            if m.startswith("stacksvd"):
                e = est.stack_svd(ts, w, 1, grams=grams)
            else:
                e = est.svd_stack(ts, w, 1, vectors=vectors())
        out[m] = alignment(e, truth).frobenius
    return out


def run_experiment(plan: ExperimentPlan) -> ExperimentResult:
    """Run every grid point and replicate, then aggregate.

    Replicate ``k`` of grid point ``g`` draws from
    ``SeedSequence(seed, spawn_key=(g, k))``, so results do not depend on
    scheduling or thread count.

    Raises
    ------
    InvalidPlan
    """
    plan.validate()
    points = plan._points()
    tasks = [(gi, k) for gi in range(len(points)) for k in range(plan.replicates)]

    def work(task):
        gi, k = task
        g, spec, d = points[gi]
        rng = np.random.default_rng(np.random.SeedSequence(plan.seed, spawn_key=(gi, k)))
        ts, truth = generate_tables(spec, d, plan.noise, rng)
        return _run_methods(ts, truth, spec, plan.methods, plan.weights)

    threads = resolve_threads(plan.threads)
    if threads == 1:
        results = [work(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, tasks))

    rows, raw = [], {}
    for gi, (g, spec, _) in enumerate(points):
        chunk = results[gi * plan.replicates : (gi + 1) * plan.replicates]
        for m in plan.methods:
            vals = np.array([res[m] for res in chunk])
            raw[(g, m)] = vals
            mean = float(np.mean(vals))
            se = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else float("nan")
            th = _theory(spec, m)
            rows.append(ResultRow(g, m, mean, se, th, mean - th, plan.replicates))
    return ExperimentResult(plan, tuple(rows), raw)
