"""
Harness service.
End-to-end pipelines: run a scenario with one configuration strategy, collect a training dataset
from simulator sweeps, compare tuners on one scenario and sweep grid-search optima over bandwidths.
Independent simulations are spread over a process pool and gathered in submission order.
"""

import asyncio
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from app.models.control import RunRecord
from app.models.harness import DEFAULT_CONFIG, CollectSpec, CompareRow, Scenario, ScenarioOutcome
from app.models.metanet import TrainingSample
from app.models.scheduling import SchedulerConfig, SimResult
from app.models.tuning import SearchSpace, TunerReport
from app.models.workload import BandwidthTrace, ClusterSpec, ModelProfile
from app.services.controller_service import ControllerService
from app.services.metanet_service import MetaNetService
from app.services.simulation_service import SimulationService
from app.services.tuner_service import SimulationEvaluator, TunerService
from app.services.workload_service import WorkloadService
from app.storage.repositories.dataset_repo import DatasetRepository
from app.storage.repositories.record_repo import SUMMARY_FILE, RecordRepository
from app.utils.errors import AutoByteError, ConfigurationError, ScenarioError
from app.utils.helpers import ArchitectureEnum, TunerEnum
from config.settings import settings

logger = structlog.get_logger(__name__)

Workload = Tuple[ModelProfile, ClusterSpec, BandwidthTrace]


def measure_window(n_iters: int) -> Tuple[int, int]:
    """Iterations [warm-up, warm-up + measured) that enter the reported mean speed."""
    first = min(settings.WARMUP_ITERS, max(n_iters - settings.METRICS_GROUP_ITERS, 0))
    return first, min(first + settings.MEASURE_ITERS, n_iters)


def _collect_point(profile: ModelProfile, architecture: ArchitectureEnum, n_workers: int,
                   levels: Tuple[float, ...], every: int, compute: float, config: SchedulerConfig,
                   skip_transitions: bool = False) -> List[TrainingSample]:
    """Samples of one sweep point: one config on one workload over the stepped bandwidth trace."""
    cluster = ClusterSpec(n_workers=n_workers, architecture=architecture, compute_scale=(compute,) * n_workers)
    trace = WorkloadService().stepped_trace(levels, every)
    result = SimulationService(profile, cluster).simulate(config, trace, len(levels) * every)
    steps = set(trace.change_points()) - {0}
    return [TrainingSample.from_metrics(metrics) for metrics in result.groups
            if not (skip_transitions and metrics.iter_start in steps)]


def _sweep_point(profile: ModelProfile, cluster: ClusterSpec, gbps: float, space: SearchSpace,
                 eval_iters: Optional[int]) -> Dict[str, float]:
    evaluator = SimulationEvaluator(profile, cluster, WorkloadService().static_trace(gbps), eval_iters=eval_iters)
    report = TunerService().grid_search(space, evaluator)
    vanilla = evaluator(SchedulerConfig.vanilla())
    return {
        "gbps": gbps,
        "best_partition_bytes": report.best_config.partition_bytes,
        "best_credit_multiplier": report.best_config.credit_multiplier,
        "best_speed": report.best_speed,
        "vanilla_speed": vanilla,
        "speedup": report.best_speed / vanilla,
    }


def _with_noise(samples: List[TrainingSample], noise: float, seed: int, point: int) -> List[TrainingSample]:
    if noise <= 0:
        return samples
    rng = np.random.default_rng([seed, point])
    noisy = []
    for sample in samples:
        scale = np.maximum(1.0 + noise * rng.standard_normal(len(sample.label)), 0.05)
        noisy.append(sample.model_copy(update={"label": tuple(float(v) for v in np.asarray(sample.label) * scale)}))
    return noisy


async def _gather(calls: List[tuple], pool_workers: Optional[int]) -> list:
    """Run (fn, *args) calls in a process pool; results keep submission order."""
    workers = settings.POOL_WORKERS if pool_workers is None else pool_workers
    if workers <= 0:
        return [fn(*args) for fn, *args in calls]
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return await asyncio.gather(*(loop.run_in_executor(pool, fn, *args) for fn, *args in calls))


class HarnessService:
    def __init__(self):
        self.workload_service = WorkloadService()
        self.metanet_service = MetaNetService()
        self.tuner_service = TunerService()
        self.controller_service = ControllerService()
        self.dataset_repo = DatasetRepository()

    def load_workload(self, scenario: Scenario) -> Workload:
        return (
            self.workload_service.load_profile(scenario.resolve(scenario.profile)),
            self.workload_service.load_cluster(scenario.resolve(scenario.cluster)),
            self.workload_service.load_trace(scenario.resolve(scenario.trace)),
        )

    def reaction_groups(self, record: RunRecord, trace: BandwidthTrace,
                        group_iters: Optional[int] = None) -> List[Optional[int]]:
        """
        For every resource change after iteration 0 inside the run, the number of groups until the
        first reconfiguration decided on post-change metrics, or None if the next change (or the
        end of the run) comes first.
        """
        size = group_iters or settings.METRICS_GROUP_ITERS
        n_iters = len(record.iteration_costs)
        changes = [point for point in trace.change_points() if 0 < point < n_iters]
        reactions: List[Optional[int]] = []
        for position, change in enumerate(changes):
            horizon = changes[position + 1] if position + 1 < len(changes) else n_iters
            after = [entry.iteration for entry in record.reconfig_log if change < entry.iteration <= horizon]
            reactions.append(math.ceil((after[0] - change) / size) if after else None)
        return reactions

    async def _static_tune(self, scenario: Scenario, tuner: TunerEnum, workload: Workload,
                           pool_workers: Optional[int]) -> Tuple[SchedulerConfig, Optional[TunerReport]]:
        """Configuration chosen before training starts, tuned on the first iterations of the trace."""
        if tuner == TunerEnum.NONE:
            return SchedulerConfig.vanilla(), None
        if tuner == TunerEnum.DEFAULT:
            return DEFAULT_CONFIG, None
        evaluator = SimulationEvaluator(*workload, start_iter=0, eval_iters=scenario.eval_iters)
        if tuner == TunerEnum.GRID:
            report = await self.tuner_service.grid_search_parallel(scenario.space, evaluator, pool_workers)
        else:
            report = self.tuner_service.bayes_opt(scenario.space, evaluator, budget=scenario.bo_budget,
                                                  seed=scenario.seed)
        return report.best_config, report

    async def run_strategy(self, scenario: Scenario, tuner: TunerEnum, workload: Optional[Workload] = None,
                           pool_workers: Optional[int] = None) -> Tuple[RunRecord, Optional[TunerReport]]:
        """One full run of the scenario under a configuration strategy."""
        profile, cluster, trace = workload or self.load_workload(scenario)
        if tuner == TunerEnum.META:
            if not scenario.params:
                raise ConfigurationError("the meta tuner needs a trained checkpoint ('params')")
            params = self.metanet_service.load_checkpoint(scenario.resolve(scenario.params))
            record = self.controller_service.run_autobyte(profile, cluster, trace, scenario.initial, params,
                                                          scenario.n_iters, space=scenario.space)
            return record, None
        config, report = await self._static_tune(scenario, tuner, (profile, cluster, trace), pool_workers)
        record = self.controller_service.run_fixed_config(profile, cluster, trace, config, scenario.n_iters)
        return record, report

    async def run_scenario(self, scenario: Scenario, out_dir: Union[str, Path],
                           pool_workers: Optional[int] = None) -> ScenarioOutcome:
        """Run a scenario, write its run record, speeds, reconfiguration log and summary."""
        try:
            workload = self.load_workload(scenario)
            profile, cluster, trace = workload
            record, report = await self.run_strategy(scenario, scenario.tuner, workload, pool_workers)
            if scenario.tuner == TunerEnum.NONE:
                baseline = record
            else:
                baseline = self.controller_service.run_fixed_config(profile, cluster, trace,
                                                                    SchedulerConfig.vanilla(), scenario.n_iters)
            first, last = measure_window(scenario.n_iters)
            mean_speed = record.mean_speed(first, last)
            baseline_speed = baseline.mean_speed(first, last)

            repo = RecordRepository(out_dir)
            files = await repo.save_run(record)
            if report is not None:
                files.append(await repo.save_tuner_report(report))
            outcome = ScenarioOutcome(
                scenario=scenario.name,
                tuner=scenario.tuner,
                model=profile.name,
                architecture=cluster.architecture,
                n_workers=cluster.n_workers,
                mean_speed=mean_speed,
                baseline_mean_speed=baseline_speed,
                speedup=mean_speed / baseline_speed,
                measure_window=(first, last),
                configs_used=[config.label() for config in record.configs_used],
                tuner_best_speed=None if report is None else report.best_speed,
                tuner_cost_iterations=0 if report is None else report.total_cost_iterations,
                tuner_evaluations=0 if report is None else len(report.evaluations),
                inference_count=record.inference_count,
                reconfigurations=len(record.reconfig_log),
                adaptations=record.adapt_count,
                reaction_groups=self.reaction_groups(record, trace),
                files=[path.name for path in files] + [SUMMARY_FILE],
            )
            await repo.save_summary(outcome)
        except ScenarioError:
            raise
        except AutoByteError as e:
            raise ScenarioError(scenario.name, str(e)) from e
        logger.info("scenario_done", scenario=scenario.name, tuner=scenario.tuner.value,
                    speed=round(outcome.mean_speed, 3), speedup=round(outcome.speedup, 4),
                    reconfigurations=outcome.reconfigurations)
        return outcome

    async def compare_tuners(self, scenario: Scenario, tuners: Sequence[TunerEnum],
                             out_path: Optional[Union[str, Path]] = None, pool_workers: Optional[int] = None,
                             wall_clock: bool = False) -> List[CompareRow]:
        """
        Run every tuner on the same scenario. Search cost is counted in simulated iterations;
        the meta tuner spends none (its cost is its inference count).
        """
        try:
            workload = self.load_workload(scenario)
            first, last = measure_window(scenario.n_iters)
            baseline = self.controller_service.run_fixed_config(*workload, SchedulerConfig.vanilla(),
                                                                scenario.n_iters)
            baseline_speed = baseline.mean_speed(first, last)
            rows = []
            for tuner in tuners:
                started = time.perf_counter()
                record, report = await self.run_strategy(scenario, tuner, workload, pool_workers)
                elapsed = time.perf_counter() - started
                mean_speed = record.mean_speed(first, last)
                best = report.best_config if report else record.final_config
                rows.append(CompareRow(
                    tuner=tuner,
                    best_config=best.label() if best else None,
                    best_speed_found=report.best_speed if report else mean_speed,
                    mean_speed=mean_speed,
                    speedup=mean_speed / baseline_speed,
                    search_cost_iterations=report.total_cost_iterations if report else 0,
                    evaluations=len(report.evaluations) if report else 0,
                    inferences=record.inference_count,
                    wall_clock_s=elapsed if wall_clock else None,
                ))
                logger.info("tuner_compared", scenario=scenario.name, tuner=tuner.value,
                            cost=rows[-1].search_cost_iterations, speed=round(mean_speed, 3))
        except AutoByteError as e:
            raise ScenarioError(scenario.name, str(e)) from e
        if out_path is not None:
            out_path = Path(out_path)
            await RecordRepository(out_path.parent).save_comparison(out_path.name, rows)
        return rows

    async def collect_dataset(self, spec: CollectSpec, out_path: Optional[Union[str, Path]] = None,
                              seed: int = 0, pool_workers: Optional[int] = None) -> List[TrainingSample]:
        """Sweep configs x profiles x architectures x compute levels; one sample per metrics group."""
        profiles = [self.workload_service.load_profile(spec.resolve(path)) for path in spec.profiles]
        calls = [
            (_collect_point, profile, architecture, spec.n_workers, spec.bandwidth_levels, spec.iters_per_level,
             compute, config, spec.skip_transitions)
            for profile in profiles
            for architecture in spec.architectures
            for compute in spec.compute_levels
            for config in spec.space.configs()
        ]
        logger.info("collect_started", points=len(calls), iters_per_point=spec.n_iters,
                    skip_transitions=spec.skip_transitions)
        started = time.perf_counter()
        outcomes = await _gather(calls, pool_workers)
        samples: List[TrainingSample] = []
        for point, point_samples in enumerate(outcomes):
            samples.extend(_with_noise(point_samples, spec.label_noise, seed, point))
        logger.info("collect_done", samples=len(samples), elapsed_s=round(time.perf_counter() - started, 2))
        if out_path is not None:
            await self.dataset_repo.save(out_path, samples)
        return samples

    async def motivation_sweep(self, profile: ModelProfile, cluster: ClusterSpec, gbps_levels: Sequence[float],
                               space: Optional[SearchSpace] = None, eval_iters: Optional[int] = None,
                               pool_workers: Optional[int] = None) -> List[Dict[str, float]]:
        """Grid-search optimum per static bandwidth level; one process-pool task per level."""
        space = space or SearchSpace()
        calls = [(_sweep_point, profile, cluster, gbps, space, eval_iters) for gbps in gbps_levels]
        rows = await _gather(calls, pool_workers)
        for row in rows:
            logger.info("sweep_point", model=profile.name, gbps=row["gbps"],
                        best=f"{row['best_partition_bytes']},{row['best_credit_multiplier']}",
                        speedup=round(row["speedup"], 4))
        return rows

    def simulate_fixed(self, profile: ModelProfile, cluster: ClusterSpec, trace: BandwidthTrace,
                       config: SchedulerConfig, n_iters: int, record_events: bool = False) -> SimResult:
        return SimulationService(profile, cluster).simulate(config, trace, n_iters, record_events=record_events)
