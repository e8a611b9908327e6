"""
Controller service.
The online loop: simulate a group of iterations, collect metrics, let the optimization trigger
decide, then adapt the meta-network and/or reconfigure with a checkpoint-restart penalty.
"""

from typing import Callable, Optional, Tuple

import numpy as np
import structlog

from app.models.control import Action, ControllerState, GroupRecord, ReconfigEntry, RunRecord
from app.models.metanet import MetaNetParams, TrainingSample
from app.models.scheduling import RuntimeMetrics, SchedulerConfig, SimResult
from app.models.tuning import SearchSpace
from app.models.workload import BandwidthTrace, ClusterSpec, ModelProfile
from app.services.metanet_service import MetaNetService
from app.services.simulation_service import SimulationService
from app.services.tuner_service import TunerService
from app.utils.errors import ConfigurationError, ReconfigurationError
from app.utils.helpers import ActionKindEnum
from config.settings import settings

logger = structlog.get_logger(__name__)


def measure_drift(predicted_current: float, observed: float) -> float:
    """Relative gap between the predicted and observed mean speed of the running config."""
    return abs(predicted_current - observed) / observed


def _group_row(group: int, result: SimResult, config: SchedulerConfig, penalty_s: float, action: str,
               adapted: bool = False, decision: Optional[Action] = None,
               new_config: Optional[SchedulerConfig] = None) -> GroupRecord:
    elapsed = result.elapsed + penalty_s
    samples = result.n_workers * result.batch_size * len(result.timelines)
    return GroupRecord(
        group=group,
        iter_start=result.timelines[0].iteration,
        n_iters=len(result.timelines),
        partition_bytes=config.partition_bytes,
        credit_multiplier=config.credit_multiplier,
        scheduling_enabled=config.scheduling_enabled,
        observed_speed=samples / elapsed,
        predicted_speed=None if decision is None else decision.predicted_current * result.n_workers,
        action=action,
        adapted=adapted,
        drift=None if decision is None else decision.drift,
        predicted_gain=None if decision is None else decision.predicted_gain,
        new_partition_bytes=None if new_config is None else new_config.partition_bytes,
        new_credit_multiplier=None if new_config is None else new_config.credit_multiplier,
        elapsed_s=elapsed,
        penalty_s=penalty_s,
    )


class ControllerService:
    def __init__(self):
        self.tuner_service = TunerService()
        self.metanet_service = MetaNetService()

    def trigger_decide(self, state: ControllerState, metrics: RuntimeMetrics,
                       space: Optional[SearchSpace] = None, gain_threshold: Optional[float] = None,
                       drift_threshold: Optional[float] = None, gain_reference: Optional[str] = None) -> Action:
        """
        Drift above the drift threshold asks for adaptation first; otherwise reconfigure when the best
        predicted candidate beats the current configuration by more than the gain threshold.
        """
        space = space or SearchSpace()
        gain_threshold = settings.GAIN_THRESHOLD if gain_threshold is None else gain_threshold
        drift_threshold = settings.DRIFT_THRESHOLD if drift_threshold is None else drift_threshold
        gain_reference = gain_reference or settings.GAIN_REFERENCE

        selection = self.tuner_service.meta_select(state.params, metrics, space, current=state.current_config)
        observed = metrics.mean_speed
        drift = measure_drift(selection.current_speed, observed)
        reference = selection.current_speed if gain_reference == "predicted" else observed
        gain = (selection.best_speed - reference) / reference if reference > 0 else float("inf")
        numbers = dict(drift=drift, predicted_gain=gain, predicted_current=selection.current_speed,
                       predicted_best=selection.best_speed)

        if drift > drift_threshold:
            return Action(kind=ActionKindEnum.ADAPT_THEN_DECIDE, **numbers)
        if gain > gain_threshold and selection.best_config != state.current_config:
            return Action(kind=ActionKindEnum.RECONFIGURE, new_config=selection.best_config, **numbers)
        return Action(kind=ActionKindEnum.KEEP, **numbers)

    def execute_reconfigure(self, state: ControllerState, new_config: SchedulerConfig, iteration: int,
                            predicted_gain: float = 0.0, penalty_s: float = 0.0) -> Tuple[ControllerState, float]:
        """Switch configuration (checkpoint-restart); returns the new state and the penalty charged."""
        if new_config == state.current_config:
            raise ReconfigurationError(f"new config {new_config.label()} equals the current one")
        if not new_config.scheduling_enabled:
            raise ReconfigurationError("cannot reconfigure to a configuration with scheduling disabled")
        if state.reconfig_log and iteration <= state.reconfig_log[-1].iteration:
            raise ReconfigurationError(f"reconfiguration at iteration {iteration} is not after the previous one")
        if penalty_s < 0:
            raise ReconfigurationError("restart penalty must be >= 0")
        entry = ReconfigEntry(iteration=iteration, old_config=state.current_config, new_config=new_config,
                              predicted_gain=predicted_gain, penalty_s=penalty_s)
        updated = state.model_copy(update={
            "current_config": new_config,
            "reconfig_log": state.reconfig_log + (entry,),
            "last_prediction": None,
        })
        logger.info("reconfigured", iteration=iteration, old=state.current_config.label(), new=new_config.label(),
                    predicted_gain=round(predicted_gain, 4), penalty_s=round(penalty_s, 6))
        return updated, penalty_s

    def run_fixed_config(self, profile: ModelProfile, cluster: ClusterSpec, trace: BandwidthTrace,
                         config: SchedulerConfig, n_iters: int, overhead_s: Optional[float] = None,
                         group_iters: Optional[int] = None,
                         simulator: Optional[SimulationService] = None) -> RunRecord:
        """A run that never changes its configuration, recorded in the same group format."""
        group_iters = group_iters or settings.METRICS_GROUP_ITERS
        simulator = simulator or SimulationService(profile, cluster, overhead_s=overhead_s)
        record = RunRecord(model_name=profile.name, n_workers=cluster.n_workers, batch_size=profile.batch_size,
                           final_config=config)
        for group, start in enumerate(range(0, n_iters, group_iters)):
            result = simulator.simulate(config, trace, min(group_iters, n_iters - start), start_iter=start)
            record.iteration_costs.extend(result.iteration_times)
            record.groups.append(_group_row(group, result, config, 0.0, ActionKindEnum.KEEP.value))
        return record

    def run_autobyte(self, profile: ModelProfile, cluster: ClusterSpec, trace: BandwidthTrace,
                     initial_config: SchedulerConfig, params: MetaNetParams, n_iters: int,
                     space: Optional[SearchSpace] = None,
                     overhead_s: Optional[float] = None, gain_threshold: Optional[float] = None,
                     drift_threshold: Optional[float] = None, gain_reference: Optional[str] = None,
                     penalty_iters: Optional[float] = None, adapt_steps: Optional[int] = None,
                     adapt_lr: Optional[float] = None, adapt_scope: Optional[str] = None,
                     buffer_capacity: Optional[int] = None, group_iters: Optional[int] = None,
                     on_group: Optional[Callable[[GroupRecord], None]] = None) -> RunRecord:
        """
        Online loop over n_iters iterations. The first decision follows the first full group; a
        trailing partial group is simulated but not decided on.
        """
        if not initial_config.scheduling_enabled:
            raise ConfigurationError("the controller needs a scheduling-enabled initial config")
        if cluster.n_workers > params.scaler.n_max:
            raise ConfigurationError(
                f"{cluster.n_workers} workers exceed the meta-network's n_max of {params.scaler.n_max}")
        space = space or SearchSpace()
        group_iters = group_iters or settings.METRICS_GROUP_ITERS
        penalty_iters = settings.RESTART_PENALTY_ITERS if penalty_iters is None else penalty_iters
        simulator = SimulationService(profile, cluster, overhead_s=overhead_s)
        state = ControllerState(current_config=initial_config, params=params,
                                buffer_capacity=buffer_capacity or settings.SAMPLE_BUFFER)
        record = RunRecord(model_name=profile.name, n_workers=cluster.n_workers, batch_size=profile.batch_size)
        decide = dict(space=space, gain_threshold=gain_threshold, drift_threshold=drift_threshold,
                      gain_reference=gain_reference)
        logger.info("autobyte_started", model=profile.name, workers=cluster.n_workers,
                    architecture=cluster.architecture.value, initial=initial_config.label(), iters=n_iters)

        for group, start in enumerate(range(0, n_iters, group_iters)):
            size = min(group_iters, n_iters - start)
            config = state.current_config
            result = simulator.simulate(config, trace, size, start_iter=start)
            record.iteration_costs.extend(result.iteration_times)
            if size < group_iters:
                record.groups.append(_group_row(group, result, config, 0.0, ActionKindEnum.KEEP.value))
                break

            metrics = simulator.collect_metrics(result, 0, group_iters)
            state = state.with_sample(TrainingSample.from_metrics(metrics))
            action = self.trigger_decide(state, metrics, **decide)
            record.inference_count += 1
            adapted = False
            if action.kind == ActionKindEnum.ADAPT_THEN_DECIDE:
                params = self.metanet_service.adapt_online(state.params, list(state.sample_buffer),
                                                           steps=adapt_steps, lr=adapt_lr, scope=adapt_scope)
                state = state.model_copy(update={"params": params})
                record.adapt_count += 1
                adapted = True
                logger.info("drift_detected", group=group, drift=round(action.drift, 4))
                action = self.trigger_decide(state, metrics, **{**decide, "drift_threshold": float("inf")})
                record.inference_count += 1
            state = state.model_copy(update={"last_prediction": (action.predicted_current,) * cluster.n_workers})

            penalty = 0.0
            new_config = None
            if action.kind == ActionKindEnum.RECONFIGURE:
                mean_iteration = float(np.mean(result.iteration_times))
                state, penalty = self.execute_reconfigure(state, action.new_config, start + size,
                                                          action.predicted_gain, penalty_iters * mean_iteration)
                record.iteration_costs[-1] += penalty
                new_config = action.new_config

            label = ActionKindEnum.ADAPT_THEN_DECIDE.value if adapted else action.kind.value
            row = _group_row(group, result, config, penalty, label, adapted, action, new_config)
            record.groups.append(row)
            if on_group is not None:
                on_group(row)
            logger.debug("group_done", group=group, config=config.label(), action=label,
                         speed=round(row.observed_speed, 3), drift=round(action.drift, 4),
                         gain=round(action.predicted_gain, 4))

        record.reconfig_log = list(state.reconfig_log)
        record.final_config = state.current_config
        logger.info("autobyte_finished", model=profile.name, reconfigurations=len(record.reconfig_log),
                    adaptations=record.adapt_count, final=state.current_config.label())
        return record
