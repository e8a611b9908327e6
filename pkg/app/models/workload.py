"""
Workload domain types: model profiles, cluster specifications and bandwidth traces.
All types are immutable once built and safe to share across processes.
"""

from typing import Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.utils.helpers import (
    MODEL_VOCAB, ArchitectureEnum, arch_vocab_index, model_vocab_index, one_hot
)


class LayerSpec(BaseModel):
    """
    One layer: gradient tensor size and per-worker compute times.
    Times are held in milliseconds as written in profile files; fp_time/bp_time give seconds.
    """
    model_config = ConfigDict(frozen=True)

    index: int = Field(ge=0)
    param_bytes: int = Field(ge=0)
    fp_time_ms: float = Field(ge=0.0)
    bp_time_ms: float = Field(ge=0.0)

    @property
    def fp_time(self) -> float:
        return self.fp_time_ms / 1000.0

    @property
    def bp_time(self) -> float:
        return self.bp_time_ms / 1000.0


class ModelProfile(BaseModel):
    """Per-layer description of a DNN; layer 0 is the front layer."""
    model_config = ConfigDict(frozen=True)

    name: str
    layers: Tuple[LayerSpec, ...]
    batch_size: int = Field(default=32, gt=0)

    @model_validator(mode="after")
    def _check_layers(self) -> "ModelProfile":
        if not self.layers:
            raise ValueError("profile must have at least one layer")
        for position, layer in enumerate(self.layers):
            if layer.index != position:
                raise ValueError(f"layer indices must be contiguous from 0, got {layer.index} at position {position}")
        if self.total_bytes <= 0:
            raise ValueError("total parameter bytes must be positive")
        return self

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def total_bytes(self) -> int:
        return sum(layer.param_bytes for layer in self.layers)

    @property
    def model_embedding(self) -> Tuple[float, ...]:
        """One-hot model identity over the shared vocabulary (same length for every profile)."""
        return one_hot(model_vocab_index(self.name), len(MODEL_VOCAB))

    @property
    def bp_times(self) -> Tuple[float, ...]:
        return tuple(layer.bp_time for layer in self.layers)

    @property
    def fp_times(self) -> Tuple[float, ...]:
        return tuple(layer.fp_time for layer in self.layers)

    @property
    def layer_bytes(self) -> Tuple[int, ...]:
        return tuple(layer.param_bytes for layer in self.layers)


class ClusterSpec(BaseModel):
    """Worker count, synchronization architecture and per-worker compute multipliers."""
    model_config = ConfigDict(frozen=True)

    n_workers: int = Field(ge=1)
    architecture: ArchitectureEnum
    compute_scale: Tuple[float, ...] = ()

    @model_validator(mode="before")
    @classmethod
    def _fill_compute_scale(cls, data):
        if isinstance(data, dict) and not data.get("compute_scale"):
            data = dict(data)
            data["compute_scale"] = tuple(1.0 for _ in range(int(data.get("n_workers", 1))))
        return data

    @model_validator(mode="after")
    def _check_compute_scale(self) -> "ClusterSpec":
        if len(self.compute_scale) != self.n_workers:
            raise ValueError(f"compute_scale has {len(self.compute_scale)} entries, expected {self.n_workers}")
        if any(scale <= 0 for scale in self.compute_scale):
            raise ValueError("compute_scale entries must be > 0")
        return self

    @property
    def arch_embedding(self) -> Tuple[float, ...]:
        return one_hot(arch_vocab_index(self.architecture), len(ArchitectureEnum))


class BandwidthSegment(BaseModel):
    """Per-worker link rates (Gbit/s) from start_iteration until the next segment."""
    model_config = ConfigDict(frozen=True)

    start_iteration: int = Field(ge=0)
    up_gbps: Tuple[float, ...]
    down_gbps: Tuple[float, ...]

    @field_validator("up_gbps", "down_gbps")
    @classmethod
    def _positive(cls, values: Tuple[float, ...]) -> Tuple[float, ...]:
        if not values:
            raise ValueError("bandwidth vector is empty")
        if any(not value > 0 for value in values):
            raise ValueError("bandwidth values must be > 0")
        return values

    @model_validator(mode="after")
    def _same_length(self) -> "BandwidthSegment":
        if len(self.up_gbps) != len(self.down_gbps):
            raise ValueError("up_gbps and down_gbps must have the same length")
        return self


class CompetingJob(BaseModel):
    """Another job sharing the links; it competes once its initialization is over."""
    model_config = ConfigDict(frozen=True)

    arrive_iter: int = Field(ge=0)
    init_iters: int = Field(default=0, ge=0)
    compute_share: float = Field(default=0.0, ge=0.0)

    @property
    def active_from(self) -> int:
        return self.arrive_iter + self.init_iters

    def is_active(self, iteration: int) -> bool:
        return iteration >= self.active_from


class BandwidthTrace(BaseModel):
    """Piecewise-constant bandwidth over iterations plus optional competing jobs."""
    model_config = ConfigDict(frozen=True)

    segments: Tuple[BandwidthSegment, ...]
    jobs: Tuple[CompetingJob, ...] = ()

    @model_validator(mode="after")
    def _check_segments(self) -> "BandwidthTrace":
        if not self.segments:
            raise ValueError("trace must have at least one segment")
        if self.segments[0].start_iteration != 0:
            raise ValueError("first segment must start at iteration 0")
        starts = [segment.start_iteration for segment in self.segments]
        if any(later <= earlier for earlier, later in zip(starts, starts[1:])):
            raise ValueError("segment start iterations must be strictly increasing")
        widths = {len(segment.up_gbps) for segment in self.segments}
        if len(widths) != 1:
            raise ValueError("all segments must cover the same number of workers")
        return self

    @property
    def n_workers(self) -> int:
        return len(self.segments[0].up_gbps)

    def change_points(self) -> Tuple[int, ...]:
        """Iterations at which the available resources change."""
        points = {segment.start_iteration for segment in self.segments}
        points.update(job.active_from for job in self.jobs)
        return tuple(sorted(points))


class Environment(BaseModel):
    """Resources seen by every worker during one iteration; hashable cache key for the simulator."""
    model_config = ConfigDict(frozen=True)

    up_gbps: Tuple[float, ...]
    down_gbps: Tuple[float, ...]
    compute: Tuple[float, ...]

    @property
    def n_workers(self) -> int:
        return len(self.up_gbps)

    def worker(self, index: int) -> Tuple[float, float, float]:
        return self.up_gbps[index], self.down_gbps[index], self.compute[index]
