"""
Tuner domain types: the configuration search space and search reports.
"""

from typing import Iterator, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.models.scheduling import MIN_PARTITION_BYTES, SchedulerConfig
from app.utils.helpers import powers_of_two


def _default_partitions() -> Tuple[int, ...]:
    return tuple(powers_of_two(4 * 1024, 1024 * 1024 * 1024))


class SearchSpace(BaseModel):
    """Grid of partition sizes (bytes) and credit multipliers."""
    model_config = ConfigDict(frozen=True)

    partition_grid: Tuple[int, ...] = Field(default_factory=_default_partitions)
    credit_grid: Tuple[int, ...] = tuple(range(1, 17))

    @field_validator("partition_grid", "credit_grid")
    @classmethod
    def _sorted_unique(cls, values: Tuple[int, ...]) -> Tuple[int, ...]:
        if not values:
            raise ValueError("grid must not be empty")
        if any(later <= earlier for earlier, later in zip(values, values[1:])):
            raise ValueError("grid must be sorted ascending without duplicates")
        return values

    @model_validator(mode="after")
    def _valid_configs(self) -> "SearchSpace":
        if self.partition_grid[0] < MIN_PARTITION_BYTES:
            raise ValueError(f"partition sizes must be >= {MIN_PARTITION_BYTES}")
        if self.credit_grid[0] < 1:
            raise ValueError("credit multipliers must be >= 1")
        return self

    def __len__(self) -> int:
        return len(self.partition_grid) * len(self.credit_grid)

    def configs(self) -> Iterator[SchedulerConfig]:
        """Every grid point, ordered by (S_p, S_c) ascending."""
        for partition in self.partition_grid:
            for credit in self.credit_grid:
                yield SchedulerConfig(partition_bytes=partition, credit_multiplier=credit)


class Evaluation(BaseModel):
    model_config = ConfigDict(frozen=True)

    config: SchedulerConfig
    speed: float
    cost_iterations: int = Field(ge=0)
    predicted: bool = False


class TunerReport(BaseModel):
    """Outcome of a configuration search; cost is counted in simulated training iterations."""
    tuner: str
    best_config: Optional[SchedulerConfig] = None
    best_speed: float = 0.0
    evaluations: List[Evaluation] = Field(default_factory=list)
    total_cost_iterations: int = 0
    wall_clock_s: float = 0.0

    @model_validator(mode="after")
    def _consistent(self) -> "TunerReport":
        if self.total_cost_iterations != sum(e.cost_iterations for e in self.evaluations):
            raise ValueError("total cost must equal the sum of per-evaluation costs")
        if self.best_config is not None and all(e.config != self.best_config for e in self.evaluations):
            raise ValueError("best config must appear among the evaluations")
        return self

    @classmethod
    def from_evaluations(cls, tuner: str, evaluations: List[Evaluation], wall_clock_s: float = 0.0) -> "TunerReport":
        """Pick the best evaluation, ties going to the smaller (S_p, S_c)."""
        best: Optional[Evaluation] = None
        for evaluation in evaluations:
            if best is None or evaluation.speed > best.speed or (
                    evaluation.speed == best.speed and evaluation.config.sort_key < best.config.sort_key):
                best = evaluation
        return cls(
            tuner=tuner,
            best_config=best.config if best else None,
            best_speed=best.speed if best else 0.0,
            evaluations=list(evaluations),
            total_cost_iterations=sum(e.cost_iterations for e in evaluations),
            wall_clock_s=wall_clock_s,
        )


class MetaSelection(BaseModel):
    """Result of ranking every candidate with one batched inference."""
    best_config: SchedulerConfig
    best_speed: float
    current_speed: Optional[float] = None
    scores: List[Tuple[SchedulerConfig, float]]
