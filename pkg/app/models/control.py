"""
Controller domain types: controller state, trigger actions and the per-group run record.
"""

from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.metanet import MetaNetParams, TrainingSample
from app.models.scheduling import SchedulerConfig
from app.utils.helpers import ActionKindEnum


class Action(BaseModel):
    """A trigger decision together with the numbers it was based on."""
    model_config = ConfigDict(frozen=True)

    kind: ActionKindEnum
    new_config: Optional[SchedulerConfig] = None
    drift: float = 0.0
    predicted_gain: float = 0.0
    predicted_current: float = 0.0
    predicted_best: float = 0.0

    @model_validator(mode="after")
    def _config_only_for_reconfigure(self) -> "Action":
        if (self.kind == ActionKindEnum.RECONFIGURE) != (self.new_config is not None):
            raise ValueError("exactly the reconfigure action carries a new config")
        return self


class ReconfigEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    iteration: int
    old_config: SchedulerConfig
    new_config: SchedulerConfig
    predicted_gain: float
    penalty_s: float = 0.0


class ControllerState(BaseModel):
    """Everything the online loop carries between groups."""
    current_config: SchedulerConfig
    params: MetaNetParams
    last_prediction: Optional[Tuple[float, ...]] = None
    sample_buffer: Tuple[TrainingSample, ...] = ()
    buffer_capacity: int = Field(default=64, ge=1)
    reconfig_log: Tuple[ReconfigEntry, ...] = ()

    @model_validator(mode="after")
    def _check(self) -> "ControllerState":
        if len(self.sample_buffer) > self.buffer_capacity:
            raise ValueError("sample buffer exceeds its capacity")
        iterations = [entry.iteration for entry in self.reconfig_log]
        if any(later <= earlier for earlier, later in zip(iterations, iterations[1:])):
            raise ValueError("reconfiguration log iterations must be strictly increasing")
        return self

    def with_sample(self, sample: TrainingSample) -> "ControllerState":
        """Append a sample, evicting the oldest when the buffer is full."""
        buffer = (self.sample_buffer + (sample,))[-self.buffer_capacity:]
        return self.model_copy(update={"sample_buffer": buffer})


class GroupRecord(BaseModel):
    """One row of the run record: a 10-iteration group and the decision taken after it."""
    group: int
    iter_start: int
    n_iters: int
    partition_bytes: int
    credit_multiplier: int
    scheduling_enabled: bool = True
    observed_speed: float
    predicted_speed: Optional[float] = None
    action: str
    adapted: bool = False
    drift: Optional[float] = None
    predicted_gain: Optional[float] = None
    new_partition_bytes: Optional[int] = None
    new_credit_multiplier: Optional[int] = None
    elapsed_s: float
    penalty_s: float = 0.0


class RunRecord(BaseModel):
    """Full outcome of one run: group rows, per-iteration costs and reconfigurations."""
    model_config = ConfigDict(protected_namespaces=())

    model_name: str
    n_workers: int
    batch_size: int
    groups: List[GroupRecord] = Field(default_factory=list)
    iteration_costs: List[float] = Field(default_factory=list)
    reconfig_log: List[ReconfigEntry] = Field(default_factory=list)
    inference_count: int = 0
    adapt_count: int = 0
    final_config: Optional[SchedulerConfig] = None

    def mean_speed(self, first_iter: int, last_iter: int) -> float:
        """Mean of the group speeds whose first iteration lies in [first_iter, last_iter)."""
        speeds = [g.observed_speed for g in self.groups if first_iter <= g.iter_start < last_iter]
        if not speeds:
            raise ValueError(f"no groups start in [{first_iter}, {last_iter})")
        return sum(speeds) / len(speeds)

    def speeds_every(self, block: int) -> List[Tuple[int, float]]:
        """(first iteration, job speed) for consecutive blocks of iterations; partial tail dropped."""
        samples_per_iter = self.n_workers * self.batch_size
        rows = []
        for start in range(0, len(self.iteration_costs) - block + 1, block):
            rows.append((start, samples_per_iter * block / sum(self.iteration_costs[start:start + block])))
        return rows

    @property
    def configs_used(self) -> List[SchedulerConfig]:
        seen: List[SchedulerConfig] = []
        for g in self.groups:
            config = SchedulerConfig(partition_bytes=g.partition_bytes, credit_multiplier=g.credit_multiplier,
                                     scheduling_enabled=g.scheduling_enabled)
            if config not in seen:
                seen.append(config)
        return seen
