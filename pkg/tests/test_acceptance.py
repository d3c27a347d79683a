"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``PASS``/``FAIL`` line; the lines are repeated in the
pytest terminal summary. The Monte Carlo criteria are marked ``slow``.
"""

import math

import numpy as np
import pytest

from stacksvd import estimators as E
from stacksvd import theory as T
from stacksvd.model import ProblemSpec
from stacksvd.simulate import ExperimentPlan, generate_tables, run_experiment

FOUR = ("stacksvd", "stacksvd_weighted", "svdstack", "svdstack_weighted")


def _fmt(d):
    return ", ".join(f"{k}={v:.4f}" for k, v in d.items())


# ---------------------------------------------------------------------------
# 1. closed-form golden values


def test_c1_golden_values(verdict):
    sqrt5 = math.sqrt(5.0)
    cases = {
        # name: (computed, paper's rounded value, exact expression)
        "beta2(2,1)": (T.beta_squared(2.0, 1.0), 0.75, 15 / 20),
        "beta2(sqrt5,1)": (T.beta_squared(sqrt5, 1.0), 0.8, 24 / 30),
        "beta2(4,38.4)": (T.beta_squared(4.0, 38.4), 0.8, 217.6 / 272),
        "svdstack[2,2]": (T.predict_unweighted_svdstack(ProblemSpec([2, 2], [1, 1])).overlap, 0.8571, 6 / 7),
        "svdstack_w[2,2]": (T.predict_weighted_svdstack(ProblemSpec([2, 2], [1, 1])).overlap, 0.8571, 6 / 7),
        "svdstack_w[sqrt5,4,0]": (
            T.predict_weighted_svdstack(ProblemSpec([sqrt5, 4, 0], [1, 38.4, 1])).overlap, 0.8889, 8 / 9),
        "stack_binary[sqrt5,4]": (
            T.predict_binary_stacksvd(ProblemSpec([sqrt5, 4], [1, 38.4])).overlap, 0.869, (441 - 39.4) / (21 * 22)),
        "stack_weighted[.95,.95,0]": (
            T.predict_weighted_stacksvd(ProblemSpec([0.95, 0.95, 0], [1, 1, 2])).overlap,
            0.2485, 0.6290125 / (1.6290125 + 0.9025)),
    }
    # further paper-tagged closed forms
    th0, c0, M = 1.5, 2.0, 6
    cases["cor1"] = (
        T.predict_unweighted_svdstack(ProblemSpec([th0] * M, [c0] * M)).overlap,
        None, M * (th0**4 - c0) / (M * th0**4 + th0**2 - (M - 1) * c0))
    cases["cor1_stack"] = (
        T.predict_unweighted_stacksvd(ProblemSpec([th0] * M, [c0] * M)).overlap,
        None, 1 - (c0 + th0**2) / (M * th0**4 + th0**2))
    cases["ones_M5"] = (T.predict_unweighted_stacksvd(ProblemSpec([1] * 5, [1] * 5)).overlap, None, 1 - 2 / 6)
    cases["gamma1_w1"] = (
        T.eval_general_weighted_stacksvd(ProblemSpec([1.2, 0.8], [1, 2]), [1, 1]).gamma1, None, 1.44 + 0.64 + 1)
    cases["w*_theta2"] = (T.optimal_weights_svdstack(ProblemSpec([2], [1])).weights[0], None, 2.0)

    bad = []
    for name, (got, rounded, exact) in cases.items():
        if abs(got - exact) > 1e-9 or (rounded is not None and abs(got - rounded) > 1e-3):
            bad.append(f"{name}={got!r}")
    flags = T.detection_thresholds(ProblemSpec([0.95, 0.95, 0], [1, 1, 2])).flags
    if [k for k, v in flags.items() if v] != ["stacksvd_weighted"]:
        bad.append(f"flags={flags}")
    f5 = T.detection_thresholds(ProblemSpec([1] * 5, [1] * 5)).flags
    if not (f5["stacksvd"] and not f5["svdstack"] and f5["stacksvd_weighted"]):
        bad.append(f"flags_ones={f5}")
    verdict("criterion 1 (golden values)", not bad, f"{len(cases)} values checked" + (f"; bad: {bad}" if bad else ""))


# ---------------------------------------------------------------------------
# 2. dominance


def _random_spec(rng, c_hi=5.0):
    m = int(rng.integers(1, 9))
    return ProblemSpec(np.abs(rng.normal(0.0, 2.0, m)), rng.uniform(0.2, c_hi, m))


def test_c2_dominance(verdict):
    rng = np.random.default_rng(20240601)
    worst_main = np.inf
    for _ in range(10_000):
        s = _random_spec(rng)
        g = T.predict_weighted_stacksvd(s).overlap
        other = max(T.predict_unweighted_stacksvd(s).overlap, T.predict_weighted_svdstack(s).overlap)
        worst_main = min(worst_main, g - other)
    worst_bin = np.inf
    for _ in range(10_000):
        s = _random_spec(rng, c_hi=1.0)
        gap = T.predict_binary_stacksvd(s).overlap - T.predict_weighted_svdstack(s).overlap
        worst_bin = min(worst_bin, gap)
    ok = worst_main >= -1e-9 and worst_bin >= -1e-9
    verdict("criterion 2 (dominance)", ok,
            f"min weighted-minus-others {worst_main:.3e}; min binary-minus-weighted-svdstack (c<=1) {worst_bin:.3e}")


# ---------------------------------------------------------------------------
# 3. cross-path consistency


def test_c3_cross_path(verdict):
    rng = np.random.default_rng(7)
    err_opt = err_one = err_sub = 0.0
    for _ in range(1000):
        s = _random_spec(rng)
        th = s.theta_vector
        w = T.optimal_weights_stacksvd(s).weights
        L = T.eval_general_weighted_stacksvd(s, w).performance
        err_opt = max(err_opt, abs(L - T.predict_weighted_stacksvd(s).overlap))
        L = T.eval_general_weighted_stacksvd(s, np.ones(s.m)).performance
        err_one = max(err_one, abs(L - T.predict_unweighted_stacksvd(s).overlap))
        mask = rng.random(s.m) < 0.5
        mask[rng.integers(s.m)] = True
        idx = np.flatnonzero(mask)
        cor2 = T.predict_binary_stacksvd(s, idx.tolist()).overlap
        L = T.eval_general_weighted_stacksvd(s, mask.astype(float)).performance if np.any(th[idx] > 0) else 0.0
        err_sub = max(err_sub, abs(L - cor2))
    ok = max(err_opt, err_one, err_sub) <= 1e-9
    verdict("criterion 3 (cross-path)", ok,
            f"max |diff|: optimal {err_opt:.2e}, ones {err_one:.2e}, subsets {err_sub:.2e}")


# ---------------------------------------------------------------------------
# 4. desk-scale replication of the two-table experiment


@pytest.mark.slow
def test_c4_two_table_replication(verdict):
    details, ok = [], True
    for theta in ([1.2, 1.05], [2.0, 1.3]):
        spec = ProblemSpec(theta, [1.0, 1.0])
        res = run_experiment(ExperimentPlan(spec, d=2000, replicates=100, seed=4, methods=FOUR))
        for m in FOUR:
            r = res.row(2000, m)
            ok &= abs(r.bias) <= 0.04
            details.append(f"{theta}/{m}: {r.mean_overlap:.4f} vs {r.theory:.4f}")
    spec = ProblemSpec([0.98, 0.76], [1.0, 1.0])
    ds = (500, 1000, 2000, 4000)
    res = run_experiment(ExperimentPlan(spec, d=ds, replicates=20, seed=5, methods=("svdstack",)))
    means = [res.row(d, "svdstack").mean_overlap for d in ds]
    ok &= means[0] > 0.0 and means[-1] < means[0] and res.row(500, "svdstack").theory == 0.0
    details.append("below-threshold svdstack by d " + ", ".join(f"{d}:{m:.4f}" for d, m in zip(ds, means)))
    verdict("criterion 4 (two-table replication)", ok, "; ".join(details))


# ---------------------------------------------------------------------------
# 5. qualitative thresholds


@pytest.mark.slow
def test_c5a_equal_tables_threshold(verdict):
    M = 12
    spec = ProblemSpec([0.7] * M, [1.0] * M)
    grid = (1, 2, 3, 4, 7, 8, 10)
    res = run_experiment(ExperimentPlan(spec, d=2000, replicates=50, seed=6, m_grid=grid, methods=("stacksvd",)))
    means = {m: res.row(m, "stacksvd").mean_overlap for m in grid}
    ok = all(means[m] < 0.1 for m in grid if m <= 4) and all(means[m] > 0.3 for m in grid if m >= 7)
    theory = {m: res.row(m, "stacksvd").theory for m in grid}
    verdict("criterion 5a (M threshold, theta=0.7)", ok,
            "mean by M " + ", ".join(f"{m}:{means[m]:.4f}(th {theory[m]:.4f})" for m in grid))


@pytest.mark.slow
def test_c5b_noise_tables(verdict):
    theta = [1.2, 1.2] + [0.0] * 10
    spec = ProblemSpec(theta, [1.0] * 12)
    res = run_experiment(ExperimentPlan(spec, d=2000, replicates=50, seed=7, m_grid=(2, 12),
                                        methods=("stacksvd", "stacksvd_weighted")))
    u12 = res.row(12, "stacksvd").mean_overlap
    w2, w12 = res.row(2, "stacksvd_weighted").mean_overlap, res.row(12, "stacksvd_weighted").mean_overlap
    ok = u12 < 0.1 and abs(w12 - w2) <= 0.05
    verdict("criterion 5b (added noise tables)", ok,
            f"unweighted M=12 {u12:.4f}; weighted M=2 {w2:.4f}, M=12 {w12:.4f}")


@pytest.mark.slow
def test_c5c_only_weighted_detects(verdict):
    spec = ProblemSpec([0.95, 0.95, 0.0], [1.0, 1.0, 2.0])
    res = run_experiment(ExperimentPlan(spec, d=4000, replicates=50, seed=8, methods=FOUR))
    means = {m: res.row(4000, m).mean_overlap for m in FOUR}
    target = T.predict_weighted_stacksvd(spec).overlap
    ok = abs(means["stacksvd_weighted"] - target) <= 0.07 and all(
        v < 0.1 for k, v in means.items() if k != "stacksvd_weighted")
    verdict("criterion 5c (only weighted Stack-SVD detects)", ok, _fmt(means) + f"; target {target:.4f}")


# ---------------------------------------------------------------------------
# 6. theta estimation


@pytest.mark.slow
def test_c6_theta_estimation(verdict):
    inv = E.theta_from_top_singular_value(6.25, 1.0)
    theta = np.r_[3.0, np.linspace(0.1, 0.9, 9)]
    c = np.r_[2.0, np.linspace(1.0, 1.5, 9)]
    spec = ProblemSpec(theta, c)
    errs = []
    for seed in range(50):
        ts, _ = generate_tables(spec, 4000, seed=seed)
        est = E.estimate_thetas(ts, reference=0)
        errs.extend(abs(e.theta - t) for e, t in zip(est[1:], theta[1:]))
        del ts
    med = float(np.median(errs))
    ok = abs(inv - 2.0) <= 1e-12 and med <= 0.15
    verdict("criterion 6 (theta estimation)", ok,
            f"inversion {inv!r}; median |theta_hat - theta| over {len(errs)} target estimates {med:.4f}")


# ---------------------------------------------------------------------------
# 7. inadmissibility construction


def test_c7_inadmissibility(verdict):
    s = T.inadmissibility_instance(0.5)
    th, c = s.theta_vector, s.c
    prefix = np.cumsum(th**2) ** 2 - np.cumsum(c)
    flags = T.detection_thresholds(s).flags
    L = T.predict_weighted_stacksvd(s).overlap
    others = {k: v for k, v in flags.items() if k != "stacksvd_weighted"}
    ok = (s.m == 31 and np.all(th == 1.0) and np.array_equal(c, 2 * np.arange(1, 32) - 1.0)
          and np.all(prefix == 0.0) and L >= 0.5 and flags["stacksvd_weighted"] and not any(others.values()))
    verdict("criterion 7 (inadmissibility)", ok, f"M={s.m}, weighted overlap {L:.4f}, other flags {others}")


# ---------------------------------------------------------------------------
# 8. delocalization


@pytest.mark.slow
def test_c8_delocalization(verdict):
    spec = ProblemSpec([2.0, 2.0], [1.0, 1.0])
    vals = []
    for seed in range(100):
        ts, _ = generate_tables(spec, 2000, seed=1000 + seed)
        v1, v2 = (E.svd_stack(ts.subset([i])).vectors[:, 0] for i in range(2))
        vals.append((v1 @ v2) ** 2)
    mean = float(np.mean(vals))
    verdict("criterion 8 (delocalization)", abs(mean - 0.5625) <= 0.05, f"mean |<v1,v2>|^2 {mean:.4f} vs 0.5625")


# ---------------------------------------------------------------------------
# 9. exponential noise


@pytest.mark.slow
def test_c9_exponential_noise(verdict):
    spec = ProblemSpec([1.7, 1.6, 1.5], [1.0, 1.0, 1.0])
    res = run_experiment(ExperimentPlan(spec, d=2000, replicates=100, seed=9, methods=FOUR,
                                        noise="centered-exponential"))
    rows = {m: res.row(2000, m) for m in FOUR}
    ok = all(abs(r.bias) <= 0.04 for r in rows.values())
    verdict("criterion 9 (exponential noise)", ok,
            "; ".join(f"{m}: {r.mean_overlap:.4f} vs {r.theory:.4f}" for m, r in rows.items()))


# ---------------------------------------------------------------------------
# 10. rank r


@pytest.mark.slow
def test_c10_rank_r(verdict):
    spec = ProblemSpec([[2.0, 1.5], [2.0, 1.5]], [1.0, 1.0])
    res = run_experiment(ExperimentPlan(spec, d=2000, replicates=50, seed=10,
                                        methods=("stacksvd_weighted", "svdstack_weighted")))
    pr = T.predict_rank_r(spec)
    a, b = res.row(2000, "stacksvd_weighted"), res.row(2000, "svdstack_weighted")
    ok = abs(a.mean_overlap - pr.stack_total) <= 0.1 and abs(b.mean_overlap - pr.svdstack_total) <= 0.1
    verdict("criterion 10 (rank r)", ok,
            f"stack {a.mean_overlap:.4f} vs {pr.stack_total:.4f}; svdstack {b.mean_overlap:.4f} vs {pr.svdstack_total:.4f}")
