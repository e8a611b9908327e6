"""Small builders shared by the test modules."""

from typing import Sequence

import numpy as np

from app.models.metanet import FeatureScaler, FeatureVector, MetaNetDims, MetaNetParams, TrainingSample
from app.models.scheduling import RuntimeMetrics, SchedulerConfig
from app.models.workload import ClusterSpec, LayerSpec, ModelProfile
from app.services import network
from app.services.simulation_service import SimulationService
from app.services.workload_service import WorkloadService
from app.utils.helpers import ArchitectureEnum, one_hot


def make_profile(param_bytes: Sequence[int], fp_ms: Sequence[float], bp_ms: Sequence[float],
                 name: str = "other", batch_size: int = 32) -> ModelProfile:
    layers = tuple(
        LayerSpec(index=i, param_bytes=b, fp_time_ms=f, bp_time_ms=p)
        for i, (b, f, p) in enumerate(zip(param_bytes, fp_ms, bp_ms))
    )
    return ModelProfile(name=name, layers=layers, batch_size=batch_size)


def make_cluster(n_workers: int = 1, architecture: str = "ps", compute_scale=None) -> ClusterSpec:
    if compute_scale is None:
        return ClusterSpec(n_workers=n_workers, architecture=ArchitectureEnum(architecture))
    return ClusterSpec(n_workers=n_workers, architecture=ArchitectureEnum(architecture),
                       compute_scale=tuple(compute_scale))


def simulated_metrics(config: SchedulerConfig = SchedulerConfig(partition_bytes=65536, credit_multiplier=2),
                      gbps: float = 5.0) -> RuntimeMetrics:
    """Metrics of the first ten iterations of a three-layer model on two workers."""
    profile = make_profile([200_000, 300_000, 100_000], [0.4, 0.4, 0.4], [0.8, 0.8, 0.8])
    simulator = SimulationService(profile, make_cluster(2))
    result = simulator.simulate(config, WorkloadService().static_trace(gbps), 10)
    return simulator.collect_metrics(result, 0, 10)


def random_features(rng: np.random.Generator, n_layers: int = 3, n_workers: int = 2) -> FeatureVector:
    return FeatureVector(
        t_seq=tuple(tuple(float(v) for v in rng.uniform(1e-4, 5e-3, n_workers)) for _ in range(n_layers)),
        layer_bytes=tuple(int(v) for v in rng.integers(1_000, 50_000_000, n_layers)),
        b_down=tuple(float(v) for v in rng.uniform(1.0, 25.0, n_workers)),
        b_up=tuple(float(v) for v in rng.uniform(1.0, 25.0, n_workers)),
        n_workers=n_workers,
        n_layers=n_layers,
        model_embedding=one_hot(int(rng.integers(0, 4)), 4),
        arch_embedding=one_hot(int(rng.integers(0, 2)), 2),
        partition_bytes=int(2 ** rng.integers(12, 31)),
        credit_multiplier=int(rng.integers(1, 17)),
    )


def random_samples(rng: np.random.Generator, count: int, n_layers: int = 3, n_workers: int = 2,
                   low: float = 300.0, high: float = 700.0) -> list:
    samples = []
    for _ in range(count):
        speed = float(rng.uniform(low, high))
        samples.append(TrainingSample(features=random_features(rng, n_layers, n_workers),
                                      label=(speed,) * n_workers))
    return samples


TINY_DIMS = MetaNetDims(embed_dim=4, hidden_dim=4, dense_dim=5, type_embed_dim=2)
SMALL_DIMS = MetaNetDims(embed_dim=4, hidden_dim=8, dense_dim=16, type_embed_dim=2)


def credit_index(dims: MetaNetDims) -> int:
    """Column of S_c in the head input."""
    return dims.hidden_dim + 2 + 2 * dims.type_embed_dim + 1


def credit_monotone_params(dims: MetaNetDims = TINY_DIMS, log_speed_mean: float = 0.0,
                           log_speed_std: float = 1.0) -> MetaNetParams:
    """Zero network whose output grows with the credit multiplier and ignores everything else."""
    weights = network.zero_weights(dims)
    weights["dense1_W"][0, credit_index(dims)] = 0.1
    weights["dense2_W"][0, 0] = 1.0
    return MetaNetParams(dims=dims, scaler=FeatureScaler(log_speed_mean=log_speed_mean, log_speed_std=log_speed_std),
                         weights=weights)
