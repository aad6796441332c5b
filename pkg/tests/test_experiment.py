import math

import numpy as np
import pytest

from coherentfl import config, experiment
from coherentfl.analysis import LearningRateWarning
from coherentfl.errors import ConfigurationError
from coherentfl.signaling import Scheme

from small_configs import QUADRATIC, SMALL


@pytest.fixture
def small():
    return config.resolve(SMALL)


class TestScenario:
    def test_pool_layout(self, small):
        sc = experiment.build_scenario(small)
        assert [p.is_static for p in sc.profiles] == [True, True, False, False]
        assert [p.coherence_time for p in sc.profiles[2:]] == [20, 10]
        assert sum(ds.n for ds in sc.datasets.values()) == 480

    def test_explicit_coherence_times(self):
        cfg = config.resolve({**SMALL, "pool": {"static": 1, "dynamic": 2,
                                                "coherence_times": [30, 7]}})
        assert [p.coherence_time for p in experiment.build_scenario(cfg).profiles[1:]] == [30, 7]

    def test_coherence_count_mismatch(self):
        cfg = config.resolve({**SMALL, "pool": {"static": 1, "dynamic": 2,
                                                "coherence_times": [30]}})
        with pytest.raises(ConfigurationError):
            experiment.build_scenario(cfg)

    def test_budget(self, small):
        assert experiment.budget(small) == pytest.approx(100.0)


class TestPlanRound:
    def test_overhead_and_masks(self, small):
        sc = experiment.build_scenario(small)
        plan = experiment.plan_round(small, sc, 0, 0, Scheme.PRODUCT)
        assert plan.t_k == 10
        assert plan.lam == pytest.approx(0.2)
        assert plan.frame_len % 10 == 0
        for k in (0, 1):
            assert plan.impairments[k].mask.popcount == sc.d
        for k in (2, 3):
            assert plan.impairments[k].mask.missing.size == pytest.approx(0.2 * sc.d, abs=2)
        assert plan.allocation.energy() == pytest.approx(100.0 * 10)

    def test_conventional_pays_for_pilots(self, small):
        sc = experiment.build_scenario(small)
        conv = experiment.plan_round(small, sc, 0, 0, Scheme.CONVENTIONAL)
        prod = experiment.plan_round(small, sc, 0, 0, Scheme.PRODUCT)
        assert conv.slots == pytest.approx(sc.d / 0.8)
        assert prod.slots == sc.d

    def test_static_only_has_no_overhead(self):
        cfg = config.resolve({**SMALL, "lambda": 0})
        sc = experiment.build_scenario(cfg)
        plan = experiment.plan_round(cfg, sc, 0, 0, Scheme.CONVENTIONAL)
        assert plan.lam == 0.0 and plan.slots == sc.d

    def test_fresh_block_decode_restores_coordinates(self, small):
        cfg = config.resolve({**SMALL, "fresh_block_full_decode": True})
        sc = experiment.build_scenario(cfg)
        plain = experiment.plan_round(small, sc, 0, 0, Scheme.PRODUCT)
        fresh = experiment.plan_round(cfg, sc, 0, 0, Scheme.PRODUCT)
        assert fresh.impairments[2].mask.popcount >= plain.impairments[2].mask.popcount
        assert fresh.impairments[3].mask.popcount == plain.impairments[3].mask.popcount


class TestTraining:
    def test_trace_shape_and_cost(self, small):
        res = experiment.run_training(small)
        assert len(res.trace) == 3
        np.testing.assert_allclose(res.trace.column("normalized_cost"), [1, 2, 3])
        assert res.sigma2_D > 0 and res.dynamic_noise > 0

    def test_deterministic(self, small):
        a = experiment.run_training(small)
        b = experiment.run_training(small)
        np.testing.assert_array_equal(a.final_theta, b.final_theta)

    def test_all_static_identical_across_schemes(self):
        cfg = config.resolve({**SMALL, "lambda": 0})
        thetas = [experiment.run_training(cfg, scheme=s).final_theta for s in Scheme]
        for t in thetas[1:]:
            np.testing.assert_array_equal(t, thetas[0])

    def test_quadratic_bound_holds(self):
        cfg = config.resolve(QUADRATIC)
        res = experiment.run_training(cfg, n_probes=2)
        report = experiment.bound_report(cfg, res)
        assert report.passed and not report.informational

    def test_logistic_bound_report(self, small):
        res = experiment.run_training(small, n_probes=2)
        with pytest.warns(LearningRateWarning):
            report = experiment.bound_report(small, res)
        assert not report.constants.lr_condition_ok
        assert report.f_star <= report.f0
        assert math.isfinite(report.bound)


class TestCompare:
    def test_rows_and_summaries(self, small):
        rows, summaries = experiment.compare_schemes(small, lambdas=[0.2], seeds=[0])
        assert len(rows) == 4 * 3
        assert [s.variant for s in summaries] == [v[0] for v in experiment.VARIANTS]
        conv = [r for r in rows if r["scheme"] == "conventional"]
        assert conv[-1]["cost"] == pytest.approx(3 / 0.8)

    def test_parallel_matches_serial(self, small, monkeypatch):
        serial = experiment.compare_schemes(small, lambdas=[0.2], seeds=[0])[0]
        monkeypatch.setenv("COHERENTFL_THREADS", "2")
        parallel = experiment.compare_schemes(small, lambdas=[0.2], seeds=[0])[0]
        assert repr(serial) == repr(parallel)

    def test_bad_thread_count(self, monkeypatch):
        monkeypatch.setenv("COHERENTFL_THREADS", "many")
        with pytest.raises(ConfigurationError):
            experiment.worker_count()


class TestPowerSweep:
    def test_rows(self, small):
        rows = experiment.power_sweep(small)
        assert len(rows) == 4
        status = {(r["T_K"], r["rho"]): r["status"] for r in rows}
        assert status[(2, 0.1)] == status[(2, 1.0)] == "infeasible: T_K <= M"
        assert status[(6, 0.1)].startswith("infeasible: rho below")
        ok = next(r for r in rows if r["T_K"] == 6 and r["rho"] == 1.0)
        assert ok["rho_d"] == pytest.approx(7 / 12, abs=1e-6)
        assert ok["rho_p"] == pytest.approx(2 / 3, abs=1e-6)
