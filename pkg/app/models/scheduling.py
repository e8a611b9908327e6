"""
Scheduler configuration, simulation outputs and the runtime-metrics bundle.
"""

from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from app.models.workload import ClusterSpec, ModelProfile
from app.utils.helpers import ArchitectureEnum, EventKindEnum, format_bytes

MIN_PARTITION_BYTES = 4096
VANILLA_PARTITION_BYTES = 1024 * 1024 * 1024


class SchedulerConfig(BaseModel):
    """The tunable pair: partition size in bytes and credit window in chunks."""
    model_config = ConfigDict(frozen=True)

    partition_bytes: int = Field(ge=MIN_PARTITION_BYTES)
    credit_multiplier: int = Field(ge=1)
    scheduling_enabled: bool = True

    @classmethod
    def vanilla(cls) -> "SchedulerConfig":
        """Scheduling disabled: whole tensors, sequential BP, communication and FP."""
        return cls(partition_bytes=VANILLA_PARTITION_BYTES, credit_multiplier=1, scheduling_enabled=False)

    @property
    def sort_key(self) -> Tuple[int, int]:
        return self.partition_bytes, self.credit_multiplier

    def label(self) -> str:
        if not self.scheduling_enabled:
            return "vanilla"
        return f"<{format_bytes(self.partition_bytes)},{self.credit_multiplier}X>"


class Chunk(BaseModel):
    """A slice of one layer's gradient tensor; the layer index is its priority."""
    model_config = ConfigDict(frozen=True)

    layer: int = Field(ge=0)
    bytes: int = Field(gt=0)
    seq: int = Field(ge=0)


class SimEvent(BaseModel):
    """One entry of the event log; times are absolute seconds from the start of the run."""
    model_config = ConfigDict(frozen=True)

    t_s: float
    kind: EventKindEnum
    layer: int
    seq: int = -1
    worker: int = 0


class ChunkTiming(BaseModel):
    layer: int
    seq: int
    bytes: int
    admit_time: float
    transfer_start: float
    finish_time: float


class LayerTiming(BaseModel):
    layer: int
    bp_start: float
    bp_end: float
    comm_done: float
    fp_start: float
    fp_end: float


class IterationTimeline(BaseModel):
    """Timing of one training iteration; detail lists are filled only when requested."""
    iteration: int
    iteration_time: float = Field(gt=0.0)
    cycle_start: float
    overlap_fraction: float = Field(ge=0.0, le=1.0)
    link_busy_time: float = Field(ge=0.0)
    up_gbps: Tuple[float, ...]
    down_gbps: Tuple[float, ...]
    compute: Tuple[float, ...]
    chunks: List[ChunkTiming] = Field(default_factory=list)
    layers: List[LayerTiming] = Field(default_factory=list)
    events: List[SimEvent] = Field(default_factory=list)


class RuntimeMetrics(BaseModel):
    """Runtime feature bundle of one 10-iteration group."""
    model_config = ConfigDict(frozen=True, protected_namespaces=())

    group: int = Field(ge=0)
    iter_start: int = Field(ge=0)
    partition_bytes: int
    credit_multiplier: int
    scheduling_enabled: bool = True
    n_workers: int = Field(ge=1)
    n_layers: int = Field(ge=1)
    model_name: str
    architecture: ArchitectureEnum
    model_embedding: Tuple[float, ...]
    arch_embedding: Tuple[float, ...]
    layer_bytes: Tuple[int, ...]
    b_down: Tuple[float, ...]
    b_up: Tuple[float, ...]
    t_matrix: Tuple[Tuple[float, ...], ...]
    speed: Tuple[float, ...]

    @property
    def config(self) -> SchedulerConfig:
        return SchedulerConfig(partition_bytes=self.partition_bytes, credit_multiplier=self.credit_multiplier,
                               scheduling_enabled=self.scheduling_enabled)

    @property
    def mean_speed(self) -> float:
        return sum(self.speed) / len(self.speed)


class SimResult(BaseModel):
    """Output of a simulation run over consecutive iterations."""
    model_config = ConfigDict(protected_namespaces=())

    start_iter: int
    n_workers: int
    batch_size: int
    config: SchedulerConfig
    profile: ModelProfile
    cluster: ClusterSpec
    timelines: List[IterationTimeline]
    groups: List[RuntimeMetrics] = Field(default_factory=list)

    @property
    def iteration_times(self) -> List[float]:
        return [timeline.iteration_time for timeline in self.timelines]

    @property
    def elapsed(self) -> float:
        return sum(self.iteration_times)

    def window_speed(self, first: Optional[int] = None, last: Optional[int] = None) -> float:
        """Job speed in samples/s over iterations [first, last): n_workers x batch / mean iteration time."""
        times = [t.iteration_time for t in self.timelines
                 if (first is None or t.iteration >= first) and (last is None or t.iteration < last)]
        if not times:
            raise ValueError("empty window")
        return self.n_workers * self.batch_size * len(times) / sum(times)

    @property
    def mean_speed(self) -> float:
        return self.window_speed()
