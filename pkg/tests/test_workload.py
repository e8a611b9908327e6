import math
import os
import tempfile
import unittest

from pydantic import ValidationError

from app.models.scheduling import SchedulerConfig
from app.models.workload import BandwidthSegment, BandwidthTrace, CompetingJob
from app.services.workload_service import WorkloadService
from app.storage.files import write_json
from app.storage.repositories.profile_repo import ProfileRepository
from app.storage.repositories.trace_repo import TraceRepository
from app.utils.errors import WorkloadError
from app.utils import helpers
from tests.factories import make_cluster, make_profile

DATA = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data")

workload_service = WorkloadService()


class TestHelpers(unittest.TestCase):
    def test_parse_size(self):
        self.assertEqual(helpers.parse_size("4MB"), 4 * 1024 * 1024)
        self.assertEqual(helpers.parse_size("160KB"), 160 * 1024)
        self.assertEqual(helpers.parse_size("65536"), 65536)
        self.assertEqual(helpers.parse_size("1g"), 1024 ** 3)
        with self.assertRaises(ValueError):
            helpers.parse_size("4 parsecs")

    def test_parse_config_pair(self):
        self.assertEqual(helpers.parse_config_pair("4MB,2"), (4 * 1024 * 1024, 2))
        self.assertEqual(helpers.parse_config_pair("4096, 16X"), (4096, 16))
        for bad in ("4MB", "4MB,two", "4MB,2,3"):
            with self.assertRaises(ValueError):
                helpers.parse_config_pair(bad)

    def test_format_bytes(self):
        self.assertEqual(helpers.format_bytes(4096), "4KB")
        self.assertEqual(helpers.format_bytes(160 * 1024), "160KB")
        self.assertEqual(helpers.format_bytes(1024 ** 3), "1GB")
        self.assertEqual(helpers.format_bytes(100), "100B")

    def test_powers_of_two_grid(self):
        grid = helpers.powers_of_two(4096, 1024 ** 3)
        self.assertEqual(len(grid), 19)
        self.assertEqual((grid[0], grid[-1]), (4096, 1024 ** 3))

    def test_vocabularies(self):
        self.assertEqual(helpers.model_vocab_index("ResNet50"), helpers.MODEL_VOCAB.index("resnet50"))
        self.assertEqual(helpers.model_vocab_index("transformer"), len(helpers.MODEL_VOCAB) - 1)
        self.assertEqual(helpers.TunerEnum.parse_list("grid, BO ,meta"),
                         [helpers.TunerEnum.GRID, helpers.TunerEnum.BO, helpers.TunerEnum.META])
        with self.assertRaises(ValueError):
            helpers.TunerEnum.parse_list("grid,annealing")

    def test_harmonic_rate(self):
        self.assertAlmostEqual(helpers.harmonic_rate(4.0, 12.0), 6.0)
        self.assertEqual(helpers.harmonic_rate(math.inf, math.inf), math.inf)


class TestModels(unittest.TestCase):
    def test_config_bounds(self):
        with self.assertRaises(ValidationError):
            SchedulerConfig(partition_bytes=1024, credit_multiplier=1)
        with self.assertRaises(ValidationError):
            SchedulerConfig(partition_bytes=4096, credit_multiplier=0)
        self.assertEqual(SchedulerConfig(partition_bytes=160 * 1024, credit_multiplier=1).label(), "<160KB,1X>")
        self.assertEqual(SchedulerConfig.vanilla().label(), "vanilla")

    def test_profile_validation(self):
        with self.assertRaises(ValidationError):
            make_profile([0, 0], [1.0, 1.0], [1.0, 1.0])
        profile = make_profile([10, 20], [1.0, 2.0], [3.0, 4.0], name="VGG16")
        self.assertEqual(profile.total_bytes, 30)
        self.assertEqual(profile.bp_times, (0.003, 0.004))
        self.assertEqual(sum(profile.model_embedding), 1.0)

    def test_cluster_defaults(self):
        cluster = make_cluster(3, "ring")
        self.assertEqual(cluster.compute_scale, (1.0, 1.0, 1.0))
        with self.assertRaises(ValidationError):
            make_cluster(2, compute_scale=(1.0,))

    def test_trace_validation(self):
        segment = BandwidthSegment(start_iteration=0, up_gbps=(1.0,), down_gbps=(1.0,))
        later = BandwidthSegment(start_iteration=5, up_gbps=(2.0,), down_gbps=(2.0,))
        with self.assertRaises(ValidationError):
            BandwidthTrace(segments=(later,))
        with self.assertRaises(ValidationError):
            BandwidthTrace(segments=(segment, later, later))
        with self.assertRaises(ValidationError):
            BandwidthSegment(start_iteration=0, up_gbps=(0.0,), down_gbps=(1.0,))


class TestEnvironment(unittest.TestCase):
    def test_competing_job_halves_bandwidth(self):
        trace = BandwidthTrace(
            segments=(BandwidthSegment(start_iteration=0, up_gbps=(20.0,), down_gbps=(20.0,)),),
            jobs=(CompetingJob(arrive_iter=5, init_iters=15),),
        )
        self.assertEqual(workload_service.bandwidth_at(trace, 19, 0), (20.0, 20.0))
        self.assertEqual(workload_service.bandwidth_at(trace, 20, 0), (10.0, 10.0))
        self.assertEqual(trace.change_points(), (0, 20))

    def test_segment_lookup(self):
        trace = workload_service.alternating_trace(10.0, 3.0, period=20, n_iters=60)
        self.assertEqual(workload_service.segment_at(trace, 19).up_gbps, (10.0,))
        self.assertEqual(workload_service.segment_at(trace, 20).up_gbps, (3.0,))
        self.assertEqual(workload_service.segment_at(trace, 500).up_gbps, (10.0,))
        with self.assertRaises(ValueError):
            workload_service.segment_at(trace, -1)

    def test_environment_broadcast_and_compute(self):
        trace = BandwidthTrace(
            segments=(BandwidthSegment(start_iteration=0, up_gbps=(4.0,), down_gbps=(8.0,)),),
            jobs=(CompetingJob(arrive_iter=0, compute_share=0.5),),
        )
        env = workload_service.environment_at(trace, make_cluster(2, compute_scale=(1.0, 2.0)), 0)
        self.assertEqual(env.up_gbps, (2.0, 2.0))
        self.assertEqual(env.down_gbps, (4.0, 4.0))
        self.assertEqual(env.compute, (1.5, 3.0))

    def test_trace_worker_mismatch(self):
        trace = workload_service.static_trace(5.0, n_workers=3)
        with self.assertRaises(WorkloadError):
            workload_service.environment_at(trace, make_cluster(2), 0)

    def test_stepped_trace(self):
        trace = workload_service.stepped_trace((0.5, 1.0, 5.0), every=20)
        self.assertEqual([s.start_iteration for s in trace.segments], [0, 20, 40])
        self.assertEqual(workload_service.bandwidth_at(trace, 45, 0), (5.0, 5.0))


class TestWorkloadFiles(unittest.TestCase):
    def test_shipped_files_load(self):
        for name in ("alexnet", "vgg16", "resnet50", "three_layer", "tiny"):
            profile = workload_service.load_profile(os.path.join(DATA, "profiles", f"{name}.json"))
            self.assertGreater(profile.total_bytes, 0)
        self.assertEqual(workload_service.load_cluster(os.path.join(DATA, "clusters", "ps8.json")).n_workers, 8)
        trace = workload_service.load_trace(os.path.join(DATA, "traces", "jobs_20g.json"))
        self.assertEqual(len(trace.jobs), 2)

    def test_round_trip(self):
        profile = make_profile([6000, 4096], [0.2, 0.3], [0.4, 0.6], name="alexnet", batch_size=16)
        trace = workload_service.alternating_trace(10.0, 3.0, period=7, n_iters=30)
        with tempfile.TemporaryDirectory() as tmp:
            ProfileRepository().save_profile(os.path.join(tmp, "p.json"), profile)
            TraceRepository().save_trace(os.path.join(tmp, "t.json"), trace)
            self.assertEqual(workload_service.load_profile(os.path.join(tmp, "p.json")), profile)
            self.assertEqual(workload_service.load_trace(os.path.join(tmp, "t.json")), trace)

    def test_malformed_documents(self):
        with tempfile.TemporaryDirectory() as tmp:
            missing_field = os.path.join(tmp, "bad_profile.json")
            write_json(missing_field, {"name": "x", "layers": [{"param_bytes": 10}]})
            with self.assertRaises(WorkloadError):
                workload_service.load_profile(missing_field)
            bad_cluster = os.path.join(tmp, "bad_cluster.json")
            write_json(bad_cluster, {"n_workers": 2, "architecture": "mesh"})
            with self.assertRaises(WorkloadError):
                workload_service.load_cluster(bad_cluster)
            not_json = os.path.join(tmp, "trace.json")
            with open(not_json, "w") as handle:
                handle.write("{segments: nope")
            with self.assertRaises(WorkloadError):
                workload_service.load_trace(not_json)
            with self.assertRaises(WorkloadError):
                workload_service.load_trace(os.path.join(tmp, "absent.json"))


if __name__ == "__main__":
    unittest.main()
