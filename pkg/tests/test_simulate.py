import math

import numpy as np
import pytest

from stacksvd import simulate as S
from stacksvd.errors import InvalidPlan, NegativeCounts, RankTooLarge
from stacksvd.model import ProblemSpec


class TestGenerate:
    def test_shapes_and_rows(self):
        spec = ProblemSpec([1.0, 2.0, 0.0], [0.5, 1.25, 0.0015])
        ts, truth = S.generate_tables(spec, 1000, seed=0)
        np.testing.assert_array_equal(ts.n, [500, 1250, 2])
        assert truth.v.shape == (1000, 1)
        assert [u.shape for u in truth.u] == [(500, 1), (1250, 1), (2, 1)]

    def test_rounding(self):
        # n = floor(d c + 0.5)
        np.testing.assert_array_equal(S.table_rows([0.0025, 0.0015, 0.00149], 1000), [3, 2, 1])

    def test_noise_variance(self):
        ts, _ = S.generate_tables(ProblemSpec([0.0], [1.0]), 800, seed=1)
        assert np.var(ts[0]) * 800 == pytest.approx(1.0, abs=0.01)

    def test_signal(self):
        spec = ProblemSpec([[3.0, 1.0]], [1.0])
        ts, truth = S.generate_tables(spec, 400, seed=2)
        E = ts[0] - (truth.u[0] * [3.0, 1.0]) @ truth.v.T
        assert np.var(E) * 400 == pytest.approx(1.0, abs=0.02)

    def test_deterministic(self):
        spec = ProblemSpec([1.0, 2.0], [1.0, 0.5])
        a, _ = S.generate_tables(spec, 100, seed=7)
        b, _ = S.generate_tables(spec, 100, seed=7)
        for x, y in zip(a.tables, b.tables):
            np.testing.assert_array_equal(x, y)

    def test_rank_too_large(self):
        with pytest.raises(RankTooLarge):
            S.generate_tables(ProblemSpec([[1, 1, 1]], [0.002]), 1000, seed=0)

    @pytest.mark.parametrize("family", S.NOISE_FAMILIES)
    def test_noise_moments(self, family):
        rng = np.random.default_rng(0)
        E = S.NoiseSpec(family).sample(rng, (400, 500), 500)
        assert abs(E.mean()) < 3e-3
        assert E.var() * 500 == pytest.approx(1.0, abs=0.02)

    def test_bad_noise(self):
        with pytest.raises(ValueError):
            S.NoiseSpec("cauchy")

    def test_random_spec(self):
        s = S.sample_random_spec(0.1, 200, seed=0)
        ratio = s.theta_vector / s.c**0.25
        assert np.mean(np.log(ratio)) == pytest.approx(0.1, abs=0.03)
        assert np.all(s.c**0.25 >= 0.1)


class TestCounts:
    def test_pipeline(self):
        Y = np.arange(60).reshape(12, 5) % 7
        ts = S.count_pipeline(Y, [0.0, 0.0, 0.0], splits=3, seed=0, center=False)
        assert ts.m == 3 and ts.d == 5
        assert sorted(ts.n.tolist()) == [4, 4, 4]
        rows = np.vstack(ts.tables)
        np.testing.assert_allclose(np.sort((rows**2 * 5 / 4).sum(axis=1)), np.sort(Y.sum(axis=1)))

    def test_centered(self):
        Y = np.random.default_rng(0).poisson(3, size=(50, 8))
        ts = S.count_pipeline(Y, 1.0, splits=2, seed=1)
        for X in ts.tables:
            np.testing.assert_allclose(X.mean(axis=0), 0.0, atol=1e-12)

    def test_ambient_raises_level(self):
        Y = np.zeros((200, 10), dtype=int)
        ts = S.count_pipeline(Y, 4.0, seed=0, center=False)
        assert np.mean(ts[0] ** 2 * 10 / 4) == pytest.approx(4.0, abs=0.2)

    def test_errors(self):
        with pytest.raises(NegativeCounts):
            S.count_pipeline(-np.ones((2, 2)), 0.0)
        with pytest.raises(ValueError):
            S.count_pipeline(np.full((2, 2), 0.5), 0.0)
        with pytest.raises(ValueError):
            S.count_pipeline(np.ones((2, 2)), 0.0, splits=3)

    def test_planted(self):
        Y, Q = S.planted_counts(300, 60, 2, seed=0)
        assert Y.shape == (300, 60) and Q.shape == (60, 2)
        assert Y.min() >= 0
        ts = S.count_pipeline(Y, 0.0, seed=0)
        _, _, Vt = np.linalg.svd(ts[0], full_matrices=False)
        assert np.linalg.norm(Vt[:2] @ Q) ** 2 > 1.5


class TestHarness:
    def test_single_point_one_replicate(self):
        plan = S.ExperimentPlan(ProblemSpec([2.0, 1.5], [1.0, 1.0]), d=200, replicates=1)
        res = S.run_experiment(plan)
        assert len(res.rows) == len(S.DEFAULT_METHODS)
        assert all(math.isnan(r.std_err) for r in res.rows)
        lines = res.to_csv().splitlines()
        assert lines[0] == "grid_value,method,mean_overlap,std_err,theory,bias"
        assert len(lines) == 1 + len(S.DEFAULT_METHODS)

    def test_determinism_and_threads(self, monkeypatch):
        spec = ProblemSpec([2.0, 1.5, 0.5], [1.0, 0.5, 1.0])
        plan = S.ExperimentPlan(spec, d=(150, 200), replicates=3, seed=5, methods=S.METHODS)
        a = S.run_experiment(plan)
        b = S.run_experiment(S.ExperimentPlan(spec, d=(150, 200), replicates=3, seed=5, methods=S.METHODS, threads=3))
        assert a.to_csv() == b.to_csv()
        monkeypatch.setenv("SSVD_THREADS", "1")
        assert S.resolve_threads(8) == 1
        c = S.run_experiment(S.ExperimentPlan(spec, d=(150, 200), replicates=3, seed=6))
        assert c.to_csv() != a.to_csv()

    def test_theory_column(self):
        spec = ProblemSpec([2.0, 2.0], [1.0, 1.0])
        res = S.run_experiment(S.ExperimentPlan(spec, d=300, replicates=2))
        assert res.row(300, "svdstack").theory == pytest.approx(6 / 7)
        assert res.row(300, "stacksvd").theory == pytest.approx(62 / 72)
        r = res.row(300, "stacksvd")
        assert r.bias == pytest.approx(r.mean_overlap - r.theory)

    def test_m_grid(self):
        spec = ProblemSpec([1.5] * 4, [1.0] * 4)
        res = S.run_experiment(S.ExperimentPlan(spec, d=150, replicates=2, m_grid=(1, 4), methods=("stacksvd",)))
        assert [r.grid_value for r in res.rows] == [1, 4]
        assert res.row(4, "stacksvd").mean_overlap > res.row(1, "stacksvd").mean_overlap

    def test_rank_r(self):
        spec = ProblemSpec([[2.0, 1.5], [2.0, 1.5]], [1.0, 1.0])
        res = S.run_experiment(S.ExperimentPlan(spec, d=200, replicates=2, methods=("stacksvd_weighted", "stacksvd_binary")))
        assert res.row(200, "stacksvd_weighted").theory > 1.0
        assert math.isnan(res.row(200, "stacksvd_binary").mean_overlap)

    def test_empty_binary_subset_is_nan(self):
        spec = ProblemSpec([0.95, 0.95, 0.0], [1.0, 1.0, 2.0])
        res = S.run_experiment(S.ExperimentPlan(spec, d=100, replicates=1, methods=("stacksvd_binary",)))
        assert math.isnan(res.row(100, "stacksvd_binary").mean_overlap)

    def test_estimated_weights(self):
        spec = ProblemSpec([2.5, 1.0], [1.0, 1.0])
        res = S.run_experiment(S.ExperimentPlan(spec, d=400, replicates=2, weights="estimated", methods=("stacksvd_weighted",)))
        assert res.row(400, "stacksvd_weighted").mean_overlap > 0.7

    def test_json(self):
        import json

        res = S.run_experiment(S.ExperimentPlan(ProblemSpec([2.0], [1.0]), d=50, replicates=2, methods=("stacksvd",)))
        body = json.loads(res.to_json())
        assert body["plan"]["grid"] == [50] and len(body["rows"]) == 1

    @pytest.mark.parametrize(
        "kw",
        [
            dict(replicates=0),
            dict(methods=("nope",)),
            dict(methods=()),
            dict(m_grid=(1, 5)),
            dict(m_grid=(1, 2), d=(10, 20)),
            dict(weights="magic"),
            dict(d=1),
        ],
    )
    def test_invalid_plans(self, kw):
        spec = ProblemSpec([1.0, 1.0], [1.0, 0.2])
        with pytest.raises((InvalidPlan, ValueError)):
            S.run_experiment(S.ExperimentPlan(spec, **{"d": 50, **kw}))

    def test_bad_thread_env(self, monkeypatch):
        monkeypatch.setenv("SSVD_THREADS", "many")
        with pytest.raises(InvalidPlan):
            S.resolve_threads()
