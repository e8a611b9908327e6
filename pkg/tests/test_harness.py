import asyncio
import math
import os
import tempfile
import unittest
from pathlib import Path

from pydantic import ValidationError

from app.models.harness import CollectSpec, Scenario, config_from_text
from app.models.metanet import FeatureScaler, MetaNetParams
from app.models.scheduling import SchedulerConfig
from app.models.tuning import SearchSpace
from app.services import network
from app.services.controller_service import ControllerService
from app.services.harness_service import HarnessService, measure_window
from app.services.workload_service import WorkloadService
from app.storage.files import read_csv, read_json, write_json
from app.storage.repositories.checkpoint_repo import CheckpointRepository
from app.storage.repositories.dataset_repo import DatasetRepository
from app.storage.repositories.record_repo import (
    RECONFIG_FILE, RUN_RECORD_FILE, SPEEDS_FILE, SUMMARY_FILE, TUNER_REPORT_FILE
)
from app.storage.repositories.scenario_repo import ScenarioRepository
from app.utils.errors import ConfigurationError, ScenarioError
from app.utils.helpers import TunerEnum
from tests.factories import TINY_DIMS, credit_index, credit_monotone_params

DATA = Path(__file__).resolve().parent.parent / "data"
SPACE = SearchSpace(partition_grid=(4096, 8192, 16384), credit_grid=(1, 2, 4))

harness_service = HarnessService()
workload_service = WorkloadService()


def _scenario(**overrides) -> Scenario:
    fields = dict(
        name="tiny_ps",
        profile=str(DATA / "profiles" / "tiny.json"),
        cluster=str(DATA / "clusters" / "ps1.json"),
        trace=str(DATA / "traces" / "dynamic_3_10.json"),
        tuner=TunerEnum.DEFAULT,
        n_iters=20,
        eval_iters=2,
        bo_budget=3,
        space=SPACE,
    )
    fields.update(overrides)
    return Scenario(**fields)


class TestScenarioDocuments(unittest.TestCase):
    def test_validation(self):
        with self.assertRaises(ValidationError):
            _scenario(n_iters=10)
        with self.assertRaises(ValidationError):
            _scenario(initial_config="160KB")
        with self.assertRaises(ValidationError):
            _scenario(bo_budget=2)
        with self.assertRaises(ValidationError):
            Scenario(name="x", profile="p", cluster="c", trace="t", surprise=1)
        self.assertEqual(_scenario(initial_config="4MB,2").initial, config_from_text("4MB,2"))

    def test_shipped_scenarios_load(self):
        repo = ScenarioRepository()
        for name in sorted(os.listdir(DATA / "scenarios")):
            scenario = repo.load_scenario(DATA / "scenarios" / name)
            self.assertEqual(scenario.tuner, TunerEnum.META)
            self.assertTrue(scenario.resolve(scenario.profile).is_file())
        spec = repo.load_collect_spec(DATA / "collect" / "small.json")
        self.assertEqual(spec.n_iters, 40)

    def test_relative_references_and_errors(self):
        repo = ScenarioRepository()
        with tempfile.TemporaryDirectory() as tmp:
            good = os.path.join(tmp, "good.json")
            write_json(good, {"name": "rel", "profile": str(DATA / "profiles" / "tiny.json"),
                              "cluster": str(DATA / "clusters" / "ps1.json"), "trace": "trace.json"})
            with self.assertRaises(ConfigurationError):
                repo.load_scenario(good)
            write_json(os.path.join(tmp, "trace.json"), {"segments": [
                {"start_iteration": 0, "up_gbps": [5.0], "down_gbps": [5.0]}]})
            scenario = repo.load_scenario(good)
            self.assertEqual(scenario.resolve(scenario.trace), Path(tmp) / "trace.json")

            bad = os.path.join(tmp, "bad.json")
            write_json(bad, {"name": "bad", "profile": "p", "cluster": "c", "trace": "t", "n_iters": 5})
            with self.assertRaises(ConfigurationError):
                repo.load_scenario(bad)
            with self.assertRaises(ConfigurationError):
                repo.load_scenario(os.path.join(tmp, "absent.json"))


class TestMeasureWindow(unittest.TestCase):
    def test_windows(self):
        self.assertEqual(measure_window(60), (10, 60))
        self.assertEqual(measure_window(20), (10, 20))
        self.assertEqual(measure_window(100), (10, 60))


class TestRunScenario(unittest.TestCase):
    def test_outputs_are_reproducible(self):
        scenario = _scenario()
        with tempfile.TemporaryDirectory() as tmp:
            first = asyncio.run(harness_service.run_scenario(scenario, os.path.join(tmp, "a"), pool_workers=0))
            second = asyncio.run(harness_service.run_scenario(scenario, os.path.join(tmp, "b"), pool_workers=0))
            self.assertEqual(first, second)
            self.assertEqual(sorted(first.files), sorted([RUN_RECORD_FILE, SPEEDS_FILE, RECONFIG_FILE, SUMMARY_FILE]))
            for name in first.files:
                with open(os.path.join(tmp, "a", name), "rb") as a, open(os.path.join(tmp, "b", name), "rb") as b:
                    self.assertEqual(a.read(), b.read(), name)
            rows = read_csv(os.path.join(tmp, "a", RUN_RECORD_FILE))
            self.assertEqual(len(rows), 2)
            self.assertEqual(read_json(os.path.join(tmp, "a", SUMMARY_FILE))["scenario"], "tiny_ps")
        self.assertEqual(first.measure_window, (10, 20))
        self.assertEqual(first.configs_used, ["<160KB,1X>"])
        self.assertGreater(first.speedup, 0.0)

    def test_grid_run_writes_tuner_report(self):
        scenario = _scenario(tuner=TunerEnum.GRID)
        with tempfile.TemporaryDirectory() as tmp:
            outcome = asyncio.run(harness_service.run_scenario(scenario, tmp, pool_workers=0))
            report = read_json(os.path.join(tmp, TUNER_REPORT_FILE))
        self.assertIn(TUNER_REPORT_FILE, outcome.files)
        self.assertNotIn("wall_clock_s", report)
        self.assertEqual(outcome.tuner_evaluations, 9)
        self.assertEqual(outcome.tuner_cost_iterations, 18)

    def test_vanilla_run_has_unit_speedup(self):
        with tempfile.TemporaryDirectory() as tmp:
            outcome = asyncio.run(harness_service.run_scenario(_scenario(tuner=TunerEnum.NONE), tmp, 0))
        self.assertAlmostEqual(outcome.speedup, 1.0)
        self.assertEqual(outcome.configs_used, ["vanilla"])

    def test_meta_run_uses_checkpoint(self):
        with tempfile.TemporaryDirectory() as tmp:
            checkpoint = os.path.join(tmp, "metanet.ckpt")
            CheckpointRepository().save(checkpoint, credit_monotone_params())
            scenario = _scenario(tuner=TunerEnum.META, params=checkpoint, initial_config="8KB,1")
            outcome = asyncio.run(harness_service.run_scenario(scenario, os.path.join(tmp, "out"), 0))
        self.assertGreaterEqual(outcome.inference_count, 2)
        self.assertEqual(outcome.tuner_cost_iterations, 0)
        self.assertEqual(outcome.configs_used[0], "<8KB,1X>")

    def test_meta_without_checkpoint_names_the_scenario(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ScenarioError) as caught:
                asyncio.run(harness_service.run_scenario(_scenario(tuner=TunerEnum.META), tmp, 0))
            self.assertEqual(caught.exception.scenario, "tiny_ps")
            missing = _scenario(tuner=TunerEnum.META, params=os.path.join(tmp, "nope.ckpt"))
            with self.assertRaises(ScenarioError):
                asyncio.run(harness_service.run_scenario(missing, tmp, 0))


class TestCompareTuners(unittest.TestCase):
    def test_costs_and_table(self):
        scenario = _scenario()
        tuners = [TunerEnum.NONE, TunerEnum.DEFAULT, TunerEnum.GRID, TunerEnum.BO]
        with tempfile.TemporaryDirectory() as tmp:
            out = os.path.join(tmp, "compare.csv")
            rows = asyncio.run(harness_service.compare_tuners(scenario, tuners, out, pool_workers=0))
            table = read_csv(out)
            timed = asyncio.run(harness_service.compare_tuners(scenario, [TunerEnum.DEFAULT],
                                                               os.path.join(tmp, "timed.csv"), 0, wall_clock=True))
            timed_table = read_csv(os.path.join(tmp, "timed.csv"))
        by_tuner = {row.tuner: row for row in rows}
        self.assertAlmostEqual(by_tuner[TunerEnum.NONE].speedup, 1.0)
        self.assertEqual(by_tuner[TunerEnum.GRID].evaluations, 9)
        self.assertEqual(by_tuner[TunerEnum.GRID].search_cost_iterations, 18)
        self.assertEqual(by_tuner[TunerEnum.BO].evaluations, 3)
        self.assertEqual(by_tuner[TunerEnum.BO].search_cost_iterations, 6)
        self.assertEqual(by_tuner[TunerEnum.DEFAULT].search_cost_iterations, 0)
        self.assertLessEqual(by_tuner[TunerEnum.BO].best_speed_found, by_tuner[TunerEnum.GRID].best_speed_found)
        self.assertEqual([r["tuner"] for r in table], ["none", "default", "grid", "bo"])
        self.assertNotIn("wall_clock_s", table[0])
        self.assertIn("wall_clock_s", timed_table[0])
        self.assertIsNotNone(timed[0].wall_clock_s)


class TestCollectDataset(unittest.TestCase):
    def _spec(self, **overrides) -> CollectSpec:
        fields = dict(profiles=(str(DATA / "profiles" / "tiny.json"),), architectures=("ps",), n_workers=2,
                      bandwidth_levels=(1.0, 10.0), iters_per_level=10,
                      space=SearchSpace(partition_grid=(4096, 8192), credit_grid=(1, 2)))
        fields.update(overrides)
        return CollectSpec(**fields)

    def test_sample_counts_and_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = os.path.join(tmp, "dataset.jsonl")
            samples = asyncio.run(harness_service.collect_dataset(self._spec(), out, pool_workers=0))
            loaded = DatasetRepository().load(out)
        self.assertEqual(len(samples), 8)
        self.assertEqual(loaded, samples)
        self.assertEqual({s.features.credit_multiplier for s in samples}, {1, 2})
        self.assertTrue(all(len(s.label) == 2 for s in samples))

    def test_label_noise_is_seeded(self):
        spec = self._spec(label_noise=0.1)
        clean = asyncio.run(harness_service.collect_dataset(self._spec(), pool_workers=0))
        a = asyncio.run(harness_service.collect_dataset(spec, seed=5, pool_workers=0))
        b = asyncio.run(harness_service.collect_dataset(spec, seed=5, pool_workers=0))
        self.assertEqual(a, b)
        self.assertNotEqual([s.label for s in a], [s.label for s in clean])
        self.assertEqual([s.features for s in a], [s.features for s in clean])

    def test_skip_transitions_drops_groups_starting_on_a_step(self):
        clean = asyncio.run(harness_service.collect_dataset(self._spec(), pool_workers=0))
        skipped = asyncio.run(harness_service.collect_dataset(self._spec(skip_transitions=True), pool_workers=0))
        self.assertEqual(len(skipped), 4)
        self.assertEqual(skipped, [s for s in clean if s.features.b_down[0] == 1.0])

    def test_pool_matches_inline(self):
        inline = asyncio.run(harness_service.collect_dataset(self._spec(), pool_workers=0))
        pooled = asyncio.run(harness_service.collect_dataset(self._spec(), pool_workers=2))
        self.assertEqual(inline, pooled)


class TestSweep(unittest.TestCase):
    def test_rows_per_bandwidth(self):
        profile = workload_service.load_profile(DATA / "profiles" / "tiny.json")
        cluster = workload_service.load_cluster(DATA / "clusters" / "ps1.json")
        rows = asyncio.run(harness_service.motivation_sweep(profile, cluster, [1.0, 20.0], space=SPACE,
                                                            eval_iters=2, pool_workers=0))
        self.assertEqual([row["gbps"] for row in rows], [1.0, 20.0])
        for row in rows:
            self.assertIn(row["best_partition_bytes"], SPACE.partition_grid)
            self.assertAlmostEqual(row["speedup"], row["best_speed"] / row["vanilla_speed"])


def _bandwidth_bump_params() -> MetaNetParams:
    """Predicted speed peaks where the credit is about 3 * log2(B_d) - 6 and ignores everything else."""
    credit = credit_index(TINY_DIMS)
    b_down = credit + 3
    weights = network.zero_weights(TINY_DIMS)
    for unit, bias in ((0, 7.0), (1, 5.0)):
        weights["dense1_W"][unit, credit] = 1.0
        weights["dense1_W"][unit, b_down] = -3.0
        weights["dense1_b"][unit] = bias
    weights["dense2_W"][0, 0] = 1.0
    weights["dense2_W"][0, 1] = -1.0
    return MetaNetParams(dims=TINY_DIMS, scaler=FeatureScaler.identity(), weights=weights)


class TestReactionGroups(unittest.TestCase):
    def setUp(self):
        self.profile = workload_service.load_profile(DATA / "profiles" / "tiny.json")
        self.cluster = workload_service.load_cluster(DATA / "clusters" / "ps1.json")
        self.trace = workload_service.load_trace(DATA / "traces" / "jobs_20g.json")
        self.start = SchedulerConfig(partition_bytes=65536, credit_multiplier=1)

    def test_arriving_jobs_are_answered_within_a_group(self):
        space = SearchSpace(partition_grid=(65536,), credit_grid=tuple(range(1, 9)))
        record = ControllerService().run_autobyte(self.profile, self.cluster, self.trace, self.start,
                                                  _bandwidth_bump_params(), 60, space=space,
                                                  drift_threshold=math.inf, gain_reference="predicted")
        self.assertEqual(self.trace.change_points(), (0, 20, 40))
        self.assertEqual([entry.iteration for entry in record.reconfig_log], [10, 30, 50])
        self.assertEqual([entry.new_config.credit_multiplier for entry in record.reconfig_log], [7, 4, 2])
        self.assertEqual(harness_service.reaction_groups(record, self.trace), [1, 1])

    def test_fixed_config_never_reacts(self):
        record = ControllerService().run_fixed_config(self.profile, self.cluster, self.trace, self.start, 60)
        self.assertEqual(harness_service.reaction_groups(record, self.trace), [None, None])


if __name__ == "__main__":
    unittest.main()
