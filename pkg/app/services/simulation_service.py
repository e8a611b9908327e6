"""
Simulation service.
Runs one training job iteration by iteration on top of the cycle kernel. Cycles only depend on the
resources of their iteration, so they are memoized per (config, environment).
"""

from typing import Dict, List, Optional, Tuple

import structlog

from app.models.scheduling import (
    ChunkTiming, IterationTimeline, LayerTiming, RuntimeMetrics, SchedulerConfig, SimEvent, SimResult
)
from app.models.workload import BandwidthTrace, ClusterSpec, Environment, ModelProfile
from app.services.cycle import CycleOutcome, comm_factor, link_rate_gbps, simulate_cycle
from app.services.workload_service import WorkloadService
from app.utils.errors import ConfigurationError
from app.utils.helpers import EventKindEnum
from config.settings import settings

logger = structlog.get_logger(__name__)


class SimulationService:
    """Simulates one job on a cluster; cycle outcomes are cached per (config, environment)."""

    def __init__(self, profile: ModelProfile, cluster: ClusterSpec, overhead_s: Optional[float] = None):
        self.profile = profile
        self.cluster = cluster
        self.overhead_s = settings.CHUNK_OVERHEAD_S if overhead_s is None else overhead_s
        if self.overhead_s < 0:
            raise ConfigurationError("per-chunk overhead must be >= 0")
        self.factor = comm_factor(cluster.architecture, cluster.n_workers)
        self._cache: Dict[Tuple[SchedulerConfig, float, float, float, bool], CycleOutcome] = {}
        self.workload_service = WorkloadService()

    def worker_cycle(self, config: SchedulerConfig, up: float, down: float, compute: float,
                     record: bool = False) -> CycleOutcome:
        key = (config, up, down, compute, record)
        outcome = self._cache.get(key)
        if outcome is None:
            bp = [layer.bp_time * compute for layer in self.profile.layers]
            fp = [layer.fp_time * compute for layer in self.profile.layers]
            outcome = simulate_cycle(
                bp, fp, self.profile.layer_bytes, config,
                link_rate_gbps(self.cluster.architecture, up, down), self.factor,
                self.overhead_s if config.scheduling_enabled else 0.0, record,
            )
            self._cache[key] = outcome
        return outcome

    def cycle(self, config: SchedulerConfig, env: Environment, record: bool = False) -> Tuple[int, CycleOutcome]:
        """Outcome of the slowest worker (lowest index on ties); identical workers are simulated once."""
        slowest, slowest_outcome = 0, None
        seen = set()
        for worker in range(env.n_workers):
            resources = env.worker(worker)
            if resources in seen:
                continue
            seen.add(resources)
            outcome = self.worker_cycle(config, *resources, record=record)
            if slowest_outcome is None or outcome.period > slowest_outcome.period:
                slowest, slowest_outcome = worker, outcome
        return slowest, slowest_outcome

    def simulate(self, config: SchedulerConfig, trace: BandwidthTrace, n_iters: int, start_iter: int = 0,
                 record_events: bool = False) -> SimResult:
        if n_iters < 1:
            raise ConfigurationError(f"n_iters must be >= 1, got {n_iters}")
        if start_iter < 0:
            raise ConfigurationError(f"start_iter must be >= 0, got {start_iter}")

        timelines: List[IterationTimeline] = []
        previous_env = self.workload_service.environment_at(trace, self.cluster, max(start_iter - 1, 0))
        _, previous = self.cycle(config, previous_env)
        cycle_start = 0.0
        for iteration in range(start_iter, start_iter + n_iters):
            env = self.workload_service.environment_at(trace, self.cluster, iteration)
            worker, current = self.cycle(config, env, record=record_events)
            iteration_time = previous.period + current.fp0_offset - previous.fp0_offset
            if not iteration_time > 0:
                raise ConfigurationError("degenerate workload: iteration time is zero")
            timelines.append(self._timeline(iteration, iteration_time, cycle_start, env, worker, current,
                                            record_events))
            cycle_start += current.period
            previous = current

        logger.debug("simulated", model=self.profile.name, config=config.label(), start=start_iter,
                     iters=n_iters, cached_cycles=len(self._cache))
        result = SimResult(start_iter=start_iter, n_workers=self.cluster.n_workers,
                           batch_size=self.profile.batch_size, config=config, timelines=timelines,
                           profile=self.profile, cluster=self.cluster)
        result.groups = self.collect_all_metrics(result)
        return result

    @staticmethod
    def _timeline(iteration: int, iteration_time: float, cycle_start: float, env: Environment, worker: int,
                  outcome: CycleOutcome, record: bool) -> IterationTimeline:
        timeline = IterationTimeline(
            iteration=iteration, iteration_time=iteration_time, cycle_start=cycle_start,
            overlap_fraction=outcome.overlap_fraction, link_busy_time=outcome.link_busy,
            up_gbps=env.up_gbps, down_gbps=env.down_gbps, compute=env.compute,
        )
        if record:
            kinds = list(EventKindEnum)
            timeline.chunks = [
                ChunkTiming(layer=layer, seq=seq, bytes=size, admit_time=cycle_start + admit,
                            transfer_start=cycle_start + begin, finish_time=cycle_start + end)
                for layer, seq, size, admit, begin, end in outcome.chunks
            ]
            timeline.layers = [
                LayerTiming(layer=layer, bp_start=cycle_start + a, bp_end=cycle_start + b,
                            comm_done=cycle_start + c, fp_start=cycle_start + d, fp_end=cycle_start + e)
                for layer, a, b, c, d, e in outcome.layers
            ]
            timeline.events = [
                SimEvent(t_s=cycle_start + t, kind=kinds[rank], layer=layer, seq=seq, worker=worker)
                for t, rank, layer, seq in outcome.events
            ]
        return timeline

    def collect_metrics(self, sim: SimResult, group: int, group_iters: Optional[int] = None) -> RuntimeMetrics:
        """
        Runtime metrics of the group-th window of a result (0-based, group_iters iterations each).

        B_u/B_d are window averages of each worker's available link rates, not the rates the job
        achieved. T is the l x n matrix of scaled BP times. The speed is samples per second over the
        window, batch_size * iterations / total time, identical for every worker.
        """
        size = group_iters or settings.METRICS_GROUP_ITERS
        window = sim.timelines[group * size:(group + 1) * size]
        if group < 0 or len(window) < size:
            raise ValueError(f"group {group} is not fully simulated ({len(window)} of {size} iterations)")
        profile, cluster = sim.profile, sim.cluster
        n = cluster.n_workers
        count = float(len(window))

        b_up = tuple(sum(t.up_gbps[w] for t in window) / count for w in range(n))
        b_down = tuple(sum(t.down_gbps[w] for t in window) / count for w in range(n))
        compute = [sum(t.compute[w] for t in window) / count for w in range(n)]
        t_matrix = tuple(tuple(layer.bp_time * compute[w] for w in range(n)) for layer in profile.layers)
        per_worker_speed = profile.batch_size * count / sum(t.iteration_time for t in window)
        iter_start = window[0].iteration

        return RuntimeMetrics(
            group=iter_start // size,
            iter_start=iter_start,
            partition_bytes=sim.config.partition_bytes,
            credit_multiplier=sim.config.credit_multiplier,
            scheduling_enabled=sim.config.scheduling_enabled,
            n_workers=n,
            n_layers=profile.n_layers,
            model_name=profile.name,
            architecture=cluster.architecture,
            model_embedding=profile.model_embedding,
            arch_embedding=cluster.arch_embedding,
            layer_bytes=profile.layer_bytes,
            b_down=b_down,
            b_up=b_up,
            t_matrix=t_matrix,
            speed=(per_worker_speed,) * n,
        )

    def collect_all_metrics(self, sim: SimResult, group_iters: Optional[int] = None) -> List[RuntimeMetrics]:
        size = group_iters or settings.METRICS_GROUP_ITERS
        return [self.collect_metrics(sim, group, size) for group in range(len(sim.timelines) // size)]
