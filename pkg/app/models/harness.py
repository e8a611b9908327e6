"""
Harness domain types: scenarios, dataset-collection specs and comparison rows.
"""

from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.models.scheduling import SchedulerConfig
from app.models.tuning import SearchSpace
from app.utils.helpers import ArchitectureEnum, TunerEnum, parse_config_pair

DEFAULT_CONFIG = SchedulerConfig(partition_bytes=160 * 1024, credit_multiplier=1)


def config_from_text(text: str) -> SchedulerConfig:
    """'SP,SC' (e.g. '4MB,2') to a scheduling-enabled config."""
    partition, credit = parse_config_pair(text)
    return SchedulerConfig(partition_bytes=partition, credit_multiplier=credit)


class Scenario(BaseModel):
    """One experiment: workload files, the configuration strategy and run length."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    profile: str
    cluster: str
    trace: str
    tuner: TunerEnum = TunerEnum.META
    n_iters: int = Field(default=60, ge=20)
    seed: int = 0
    params: Optional[str] = None
    initial_config: str = "160KB,1"
    eval_iters: Optional[int] = Field(default=None, ge=1)
    bo_budget: Optional[int] = Field(default=None, ge=3)
    space: SearchSpace = Field(default_factory=SearchSpace)
    base_dir: str = "."

    @field_validator("initial_config")
    @classmethod
    def _parse_initial(cls, value: str) -> str:
        config_from_text(value)
        return value

    def resolve(self, reference: str) -> Path:
        """Path of a referenced file; relative references are taken from the scenario's directory."""
        path = Path(reference)
        return path if path.is_absolute() else Path(self.base_dir) / path

    @property
    def initial(self) -> SchedulerConfig:
        return config_from_text(self.initial_config)


class CollectSpec(BaseModel):
    """Dataset sweep: every config x profile x architecture x compute level on a stepped bandwidth trace."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    profiles: Tuple[str, ...]
    architectures: Tuple[ArchitectureEnum, ...] = (ArchitectureEnum.PARAMETER_SERVER, ArchitectureEnum.RING_ALL_REDUCE)
    n_workers: int = Field(default=8, ge=1)
    bandwidth_levels: Tuple[float, ...] = (0.5, 1.0, 5.0, 10.0, 25.0)
    iters_per_level: int = Field(default=20, ge=1)
    compute_levels: Tuple[float, ...] = (1.0,)
    space: SearchSpace = Field(default_factory=SearchSpace)
    label_noise: float = Field(default=0.0, ge=0.0)
    # drop the group that starts on a bandwidth step; its first iteration still carries the old level
    skip_transitions: bool = False
    base_dir: str = "."

    @field_validator("profiles", "bandwidth_levels", "compute_levels", "architectures")
    @classmethod
    def _non_empty(cls, values: tuple) -> tuple:
        if not values:
            raise ValueError("must not be empty")
        return values

    @field_validator("bandwidth_levels", "compute_levels")
    @classmethod
    def _positive(cls, values: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(not value > 0 for value in values):
            raise ValueError("levels must be > 0")
        return values

    @property
    def n_iters(self) -> int:
        return len(self.bandwidth_levels) * self.iters_per_level

    def resolve(self, reference: str) -> Path:
        path = Path(reference)
        return path if path.is_absolute() else Path(self.base_dir) / path


class CompareRow(BaseModel):
    tuner: TunerEnum
    best_config: Optional[str]
    best_speed_found: float
    mean_speed: float
    speedup: float
    search_cost_iterations: int
    evaluations: int
    inferences: int
    wall_clock_s: Optional[float] = None


class OracleInstance(BaseModel):
    """A single-worker scheduling problem small enough to enumerate every admission order."""
    model_config = ConfigDict(frozen=True)

    bp: Tuple[float, ...]
    fp: Tuple[float, ...]
    layer_bytes: Tuple[int, ...]
    config: SchedulerConfig
    rate_gbps: float = Field(gt=0)
    factor: float = Field(default=2.0, ge=0)
    overhead_s: float = Field(default=0.0, ge=0)


class OracleCheck(BaseModel):
    """Simulator period against the brute-force optimum over admissible admission orders."""
    simulated_period: float
    oracle_period: float
    fifo_period: float
    admissible_orders: int
    total_orders: int
    best_order: List[Tuple[int, int]]
    matches: bool


class ScenarioOutcome(BaseModel):
    """Summary of a run_scenario call; mirrors summary.json."""
    scenario: str
    tuner: TunerEnum
    model: str
    architecture: ArchitectureEnum
    n_workers: int
    mean_speed: float
    baseline_mean_speed: float
    speedup: float
    measure_window: Tuple[int, int]
    configs_used: List[str]
    tuner_best_speed: Optional[float] = None
    tuner_cost_iterations: int = 0
    tuner_evaluations: int = 0
    inference_count: int = 0
    reconfigurations: int = 0
    adaptations: int = 0
    # groups between each resource change and the next reconfiguration; None when none followed
    reaction_groups: List[Optional[int]] = Field(default_factory=list)
    files: List[str] = Field(default_factory=list)
