"""
Meta-network domain types: feature vectors, training samples, normalization statistics and parameters.
"""

import math
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.scheduling import RuntimeMetrics, SchedulerConfig
from app.utils.helpers import MODEL_VOCAB, ArchitectureEnum

# Names of the weight tensors; the head is what online adaptation fine-tunes by default.
ENCODER_WEIGHTS = ("embed_W", "embed_b", "lstm1_W", "lstm1_b", "lstm2_W", "lstm2_b", "model_table", "arch_table")
HEAD_WEIGHTS = ("dense1_W", "dense1_b", "dense2_W", "dense2_b")
ALL_WEIGHTS = ENCODER_WEIGHTS + HEAD_WEIGHTS

# mean T, max T (ms), log2 layer bytes, log2(1 + chunks of the layer), log2 layer transfer ms at the slowest link
ROW_FEATURES = 5
# log2 B_d, log2 B_u, column sum of T (ms), log2 transfer ms of all layers at this worker's link
WORKER_FEATURES = 4
STATIC_FEATURES = 2     # n / n_max, l / LAYER_SCALE
# log2 S_p, S_c, log2(1 + total chunks), log2 of the chunks the window can hold in flight
CANDIDATE_FEATURES = 4
LAYER_SCALE = 64.0
TRANSFER_FLOOR_MS = 1e-3


class FeatureVector(BaseModel):
    """Input of one prediction: runtime metrics with a candidate configuration."""
    model_config = ConfigDict(frozen=True, protected_namespaces=())

    t_seq: Tuple[Tuple[float, ...], ...]
    layer_bytes: Tuple[int, ...]
    b_down: Tuple[float, ...]
    b_up: Tuple[float, ...]
    n_workers: int = Field(ge=1)
    n_layers: int = Field(ge=1)
    model_embedding: Tuple[float, ...]
    arch_embedding: Tuple[float, ...]
    partition_bytes: int = Field(gt=0)
    credit_multiplier: int = Field(ge=1)

    @model_validator(mode="after")
    def _check_shapes(self) -> "FeatureVector":
        if len(self.t_seq) != self.n_layers or any(len(row) != self.n_workers for row in self.t_seq):
            raise ValueError(f"t_seq must be {self.n_layers} x {self.n_workers}")
        if len(self.layer_bytes) != self.n_layers:
            raise ValueError("layer_bytes must have one entry per layer")
        if len(self.b_down) != self.n_workers or len(self.b_up) != self.n_workers:
            raise ValueError("bandwidth vectors must have one entry per worker")
        if any(value < 0 for row in self.t_seq for value in row):
            raise ValueError("layer times must be >= 0")
        if any(not value > 0 for value in self.b_down + self.b_up):
            raise ValueError("bandwidths must be > 0")
        return self

    @classmethod
    def from_metrics(cls, metrics: RuntimeMetrics, candidate: Optional[SchedulerConfig] = None) -> "FeatureVector":
        """Features of a metrics bundle, with its own config or a candidate in its place."""
        config = candidate or metrics.config
        return cls(
            t_seq=metrics.t_matrix,
            layer_bytes=metrics.layer_bytes,
            b_down=metrics.b_down,
            b_up=metrics.b_up,
            n_workers=metrics.n_workers,
            n_layers=metrics.n_layers,
            model_embedding=metrics.model_embedding,
            arch_embedding=metrics.arch_embedding,
            partition_bytes=config.partition_bytes,
            credit_multiplier=config.credit_multiplier,
        )

    def with_candidate(self, config: SchedulerConfig) -> "FeatureVector":
        return self.model_copy(update={"partition_bytes": config.partition_bytes,
                                       "credit_multiplier": config.credit_multiplier})

    @property
    def shape_key(self) -> Tuple[int, int]:
        return self.n_layers, self.n_workers


class TrainingSample(BaseModel):
    """Features plus the observed per-worker mean speed of one 10-iteration group."""
    model_config = ConfigDict(frozen=True)

    features: FeatureVector
    label: Tuple[float, ...]

    @model_validator(mode="after")
    def _check_label(self) -> "TrainingSample":
        if len(self.label) != self.features.n_workers:
            raise ValueError("label must have one entry per worker")
        if any(not value > 0 for value in self.label):
            raise ValueError("label entries must be > 0")
        return self

    @classmethod
    def from_metrics(cls, metrics: RuntimeMetrics) -> "TrainingSample":
        return cls(features=FeatureVector.from_metrics(metrics), label=metrics.speed)


class FeatureScaler(BaseModel):
    """Standardization statistics stored with the model; the network regresses standardized log speed."""
    model_config = ConfigDict(frozen=True)

    row_mean: Tuple[float, ...] = (0.0,) * ROW_FEATURES
    row_std: Tuple[float, ...] = (1.0,) * ROW_FEATURES
    worker_mean: Tuple[float, ...] = (0.0,) * WORKER_FEATURES
    worker_std: Tuple[float, ...] = (1.0,) * WORKER_FEATURES
    candidate_mean: Tuple[float, ...] = (0.0,) * CANDIDATE_FEATURES
    candidate_std: Tuple[float, ...] = (1.0,) * CANDIDATE_FEATURES
    log_speed_mean: float = 0.0
    log_speed_std: float = Field(default=1.0, gt=0.0)
    n_max: int = Field(default=16, ge=1)

    @classmethod
    def identity(cls, n_max: int = 16) -> "FeatureScaler":
        return cls(n_max=n_max)

    @classmethod
    def fit(cls, rows: np.ndarray, workers: np.ndarray, candidates: np.ndarray, speeds: np.ndarray,
            n_max: int = 16) -> "FeatureScaler":
        """Statistics from raw stacked feature arrays (last axis = feature)."""
        def stats(values: np.ndarray) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
            flat = values.reshape(-1, values.shape[-1])
            std = flat.std(axis=0)
            std = np.where(std > 1e-12, std, 1.0)
            return tuple(float(v) for v in flat.mean(axis=0)), tuple(float(v) for v in std)

        row_mean, row_std = stats(rows)
        worker_mean, worker_std = stats(workers)
        candidate_mean, candidate_std = stats(candidates)
        log_speeds = np.log(speeds)
        log_speed_std = float(log_speeds.std())
        return cls(
            row_mean=row_mean, row_std=row_std,
            worker_mean=worker_mean, worker_std=worker_std,
            candidate_mean=candidate_mean, candidate_std=candidate_std,
            log_speed_mean=float(log_speeds.mean()),
            log_speed_std=log_speed_std if log_speed_std > 1e-12 else 1.0,
            n_max=n_max,
        )


class MetaNetDims(BaseModel):
    model_config = ConfigDict(frozen=True)

    embed_dim: int = Field(default=16, ge=1)
    hidden_dim: int = Field(default=32, ge=1)
    dense_dim: int = Field(default=64, ge=1)
    type_embed_dim: int = Field(default=8, ge=1)
    n_models: int = Field(default=len(MODEL_VOCAB), ge=1)
    n_archs: int = Field(default=len(ArchitectureEnum), ge=1)

    @property
    def head_input_dim(self) -> int:
        return (self.hidden_dim + STATIC_FEATURES + 2 * self.type_embed_dim
                + CANDIDATE_FEATURES + WORKER_FEATURES)

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        h, e = self.hidden_dim, self.embed_dim
        return {
            "embed_W": (e, ROW_FEATURES),
            "embed_b": (e,),
            "lstm1_W": (4 * h, e + h),
            "lstm1_b": (4 * h,),
            "lstm2_W": (4 * h, 2 * h),
            "lstm2_b": (4 * h,),
            "model_table": (self.type_embed_dim, self.n_models),
            "arch_table": (self.type_embed_dim, self.n_archs),
            "dense1_W": (self.dense_dim, self.head_input_dim),
            "dense1_b": (self.dense_dim,),
            "dense2_W": (1, self.dense_dim),
            "dense2_b": (1,),
        }


class MetaNetParams(BaseModel):
    """All learnable weights plus the statistics needed to use them."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    dims: MetaNetDims
    scaler: FeatureScaler
    weights: Dict[str, np.ndarray]
    loss_history: Tuple[float, ...] = ()

    @model_validator(mode="after")
    def _check_weights(self) -> "MetaNetParams":
        expected = self.dims.shapes()
        if set(self.weights) != set(expected):
            raise ValueError(f"weights must be exactly {sorted(expected)}")
        for name, shape in expected.items():
            array = self.weights[name]
            if not isinstance(array, np.ndarray) or array.shape != shape:
                raise ValueError(f"{name} has shape {getattr(array, 'shape', None)}, expected {shape}")
            if not np.all(np.isfinite(array)):
                raise ValueError(f"{name} has non-finite entries")
        return self

    def copy(self, weights: Optional[Dict[str, np.ndarray]] = None, **update) -> "MetaNetParams":
        source = self.weights if weights is None else weights
        return MetaNetParams(
            dims=update.get("dims", self.dims),
            scaler=update.get("scaler", self.scaler),
            weights={name: np.array(array, dtype=np.float64, copy=True) for name, array in source.items()},
            loss_history=update.get("loss_history", self.loss_history),
        )

    def norm(self, names: Iterable[str] = ALL_WEIGHTS) -> float:
        return math.sqrt(sum(float(np.sum(self.weights[name] ** 2)) for name in names))
