import asyncio
import math
import unittest

import numpy as np

from app.models.metanet import FeatureScaler, FeatureVector, MetaNetParams, TrainingSample
from app.models.scheduling import SchedulerConfig
from app.models.tuning import SearchSpace, TunerReport
from app.services import network
from app.services.metanet_service import MetaNetService
from app.services.tuner_service import SimulationEvaluator, TunerService
from app.services.workload_service import WorkloadService
from app.utils.errors import ConfigurationError, EvaluatorError
from tests.factories import (
    SMALL_DIMS, TINY_DIMS as TINY, credit_monotone_params, make_cluster, make_profile, simulated_metrics
)

tuner_service = TunerService()
workload_service = WorkloadService()

SMALL_SPACE = SearchSpace(partition_grid=(2 ** 16, 2 ** 17, 2 ** 18), credit_grid=(1, 2, 3))


def planted(config: SchedulerConfig) -> float:
    """Smooth surface peaking at (2^17, 2)."""
    return 100.0 - (np.log2(config.partition_bytes) - 17) ** 2 - (config.credit_multiplier - 2) ** 2


def bowl(config: SchedulerConfig) -> float:
    return 500.0 - 3.0 * (np.log2(config.partition_bytes) - 15) ** 2 - 2.0 * (config.credit_multiplier - 5) ** 2


class TestGridSearch(unittest.TestCase):
    def test_finds_planted_optimum(self):
        report = tuner_service.grid_search(SMALL_SPACE, planted)
        self.assertEqual(report.best_config, SchedulerConfig(partition_bytes=2 ** 17, credit_multiplier=2))
        self.assertEqual(len(report.evaluations), 9)
        self.assertEqual(report.total_cost_iterations, 9)

    def test_ties_go_to_smallest_config(self):
        report = tuner_service.grid_search(SMALL_SPACE, lambda config: 1.0)
        self.assertEqual(report.best_config, SchedulerConfig(partition_bytes=2 ** 16, credit_multiplier=1))

    def test_cost_follows_evaluator(self):
        profile = make_profile([100_000, 100_000], [0.5, 0.5], [1.0, 1.0])
        evaluator = SimulationEvaluator(profile, make_cluster(1), workload_service.static_trace(5.0), eval_iters=4)
        report = tuner_service.grid_search(SMALL_SPACE, evaluator)
        self.assertEqual(report.total_cost_iterations, 36)
        self.assertTrue(all(e.cost_iterations == 4 for e in report.evaluations))

    def test_evaluator_failure_keeps_partial_report(self):
        calls = []

        def flaky(config):
            calls.append(config)
            if len(calls) == 4:
                raise RuntimeError("simulated crash")
            return 1.0

        with self.assertRaises(EvaluatorError) as caught:
            tuner_service.grid_search(SMALL_SPACE, flaky)
        partial = caught.exception.partial_report
        self.assertIsInstance(partial, TunerReport)
        self.assertEqual(len(partial.evaluations), 3)

    def test_parallel_matches_sequential(self):
        profile = make_profile([100_000, 50_000], [0.5, 0.5], [1.0, 1.0])
        evaluator = SimulationEvaluator(profile, make_cluster(1), workload_service.static_trace(2.0), eval_iters=3)
        sequential = tuner_service.grid_search(SMALL_SPACE, evaluator)
        parallel = asyncio.run(tuner_service.grid_search_parallel(SMALL_SPACE, evaluator, pool_workers=2))
        inline = asyncio.run(tuner_service.grid_search_parallel(SMALL_SPACE, evaluator, pool_workers=0))
        for report in (parallel, inline):
            self.assertEqual([e.speed for e in report.evaluations], [e.speed for e in sequential.evaluations])
            self.assertEqual(report.best_config, sequential.best_config)


class TestBayesOpt(unittest.TestCase):
    space = SearchSpace(partition_grid=tuple(2 ** k for k in range(12, 20)), credit_grid=tuple(range(1, 9)))

    def test_budget_is_respected(self):
        report = tuner_service.bayes_opt(self.space, bowl, budget=15, seed=0)
        self.assertLessEqual(len(report.evaluations), 15)
        configs = [e.config for e in report.evaluations]
        self.assertEqual(len(configs), len(set(configs)))
        grid = tuner_service.grid_search(self.space, bowl)
        self.assertLessEqual(report.best_speed, grid.best_speed)
        self.assertEqual(grid.best_config, SchedulerConfig(partition_bytes=2 ** 15, credit_multiplier=5))

    def test_lands_near_the_optimum_for_most_seeds(self):
        hits = 0
        for seed in range(50):
            best = tuner_service.bayes_opt(self.space, bowl, budget=15, seed=seed).best_config
            if abs(math.log2(best.partition_bytes) - 15) <= 1 and abs(best.credit_multiplier - 5) <= 1:
                hits += 1
        self.assertGreaterEqual(hits, 45)

    def test_minimum_budget(self):
        report = tuner_service.bayes_opt(self.space, bowl, budget=3, seed=1)
        self.assertEqual(len(report.evaluations), 3)
        with self.assertRaises(ConfigurationError):
            tuner_service.bayes_opt(self.space, bowl, budget=2)

    def test_deterministic_per_seed(self):
        a = tuner_service.bayes_opt(self.space, bowl, budget=10, seed=4)
        b = tuner_service.bayes_opt(self.space, bowl, budget=10, seed=4)
        self.assertEqual([e.config for e in a.evaluations], [e.config for e in b.evaluations])

    def test_flat_surface_still_spends_budget(self):
        report = tuner_service.bayes_opt(self.space, lambda config: 7.0, budget=6, seed=2)
        self.assertEqual(len(report.evaluations), 6)

    def test_budget_larger_than_space(self):
        report = tuner_service.bayes_opt(SMALL_SPACE, planted, budget=30, seed=0)
        self.assertEqual(len(report.evaluations), 9)
        self.assertEqual(report.best_config, SchedulerConfig(partition_bytes=2 ** 17, credit_multiplier=2))


class TestMetaSelect(unittest.TestCase):
    def test_uninformative_network_picks_smallest_config(self):
        scaler = FeatureScaler(log_speed_mean=math.log(250.0))
        params = MetaNetParams(dims=TINY, scaler=scaler, weights=network.zero_weights(TINY))
        space = SearchSpace()
        selection = tuner_service.meta_select(params, simulated_metrics(), space)
        self.assertEqual(selection.best_config, SchedulerConfig(partition_bytes=4096, credit_multiplier=1))
        self.assertEqual(len(selection.scores), len(space))
        self.assertAlmostEqual(selection.best_speed, 250.0)
        self.assertAlmostEqual(selection.current_speed, 250.0)

    def test_follows_predicted_speed(self):
        selection = tuner_service.meta_select(credit_monotone_params(), simulated_metrics(), SearchSpace())
        self.assertEqual(selection.best_config, SchedulerConfig(partition_bytes=4096, credit_multiplier=16))
        self.assertGreater(selection.best_speed, selection.current_speed)

    def test_trained_on_a_credit_law_picks_its_best_credit(self):
        metrics = simulated_metrics()
        base = FeatureVector.from_metrics(metrics)
        partitions = (2 ** 14, 2 ** 16, 2 ** 18, 2 ** 20)
        samples = []
        for partition in partitions:
            for credit in range(1, 9):
                features = base.with_candidate(SchedulerConfig(partition_bytes=partition, credit_multiplier=credit))
                samples.append(TrainingSample(features=features, label=(400.0 + 40.0 * credit,) * base.n_workers))
        params = MetaNetService().train_offline(samples, epochs=300, lr=5e-3, seed=3, dims=SMALL_DIMS, batch_size=8)
        space = SearchSpace(partition_grid=partitions, credit_grid=(1, 2, 4, 8))
        selection = tuner_service.meta_select(params, metrics, space)
        self.assertEqual(selection.best_config.credit_multiplier, 8)
        for partition in partitions:
            row = {c.credit_multiplier: speed for c, speed in selection.scores if c.partition_bytes == partition}
            self.assertEqual(max(row, key=row.get), 8)

    def test_report_costs_nothing(self):
        space = SMALL_SPACE
        selection = tuner_service.meta_select(credit_monotone_params(), simulated_metrics(), space)
        report = tuner_service.meta_report(selection)
        self.assertEqual(report.total_cost_iterations, 0)
        self.assertEqual(len(report.evaluations), len(space))
        self.assertTrue(all(e.predicted for e in report.evaluations))
        self.assertEqual(report.best_config, SchedulerConfig(partition_bytes=2 ** 16, credit_multiplier=3))


if __name__ == "__main__":
    unittest.main()
