"""
Workload service.
Loads profiles, clusters and traces, and resolves the resources available at a given iteration.
"""

import bisect
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple, Union

import structlog

from app.models.workload import (
    BandwidthSegment, BandwidthTrace, ClusterSpec, CompetingJob, Environment, ModelProfile
)
from app.storage.repositories.profile_repo import ProfileRepository
from app.storage.repositories.trace_repo import TraceRepository
from app.utils.errors import WorkloadError

logger = structlog.get_logger(__name__)


class WorkloadService:
    def __init__(self):
        self.profile_repo = ProfileRepository()
        self.trace_repo = TraceRepository()

    def load_profile(self, path: Union[str, Path]) -> ModelProfile:
        """Load and validate a model profile file."""
        return self.profile_repo.load_profile(path)

    def load_cluster(self, path: Union[str, Path]) -> ClusterSpec:
        return self.profile_repo.load_cluster(path)

    def load_trace(self, path: Union[str, Path]) -> BandwidthTrace:
        return self.trace_repo.load_trace(path)

    def active_jobs(self, trace: BandwidthTrace, iteration: int) -> Tuple[CompetingJob, ...]:
        return tuple(job for job in trace.jobs if job.is_active(iteration))

    def segment_at(self, trace: BandwidthTrace, iteration: int) -> BandwidthSegment:
        """Latest segment starting at or before iteration; the last segment extends forever."""
        if iteration < 0:
            raise ValueError(f"iteration must be >= 0, got {iteration}")
        starts = [segment.start_iteration for segment in trace.segments]
        return trace.segments[bisect.bisect_right(starts, iteration) - 1]

    def bandwidth_at(self, trace: BandwidthTrace, iteration: int, worker: int) -> Tuple[float, float]:
        """
        (up_gbps, down_gbps) of a worker at an iteration.
        The segment capacity is split equally between this job and every active competing job.
        """
        segment = self.segment_at(trace, iteration)
        if not 0 <= worker < len(segment.up_gbps):
            raise ValueError(f"worker {worker} out of range for a {len(segment.up_gbps)}-worker trace")
        share = 1 + len(self.active_jobs(trace, iteration))
        return segment.up_gbps[worker] / share, segment.down_gbps[worker] / share

    def compute_multiplier(self, trace: BandwidthTrace, iteration: int) -> float:
        """Compute-time slowdown caused by active competing jobs (1.0 when none share compute)."""
        return 1.0 + sum(job.compute_share for job in self.active_jobs(trace, iteration))

    def environment_at(self, trace: BandwidthTrace, cluster: ClusterSpec, iteration: int) -> Environment:
        """Per-worker resources for one iteration; a single-worker trace is broadcast to every worker."""
        if trace.n_workers not in (1, cluster.n_workers):
            raise WorkloadError(f"trace covers {trace.n_workers} workers but the cluster has {cluster.n_workers}")
        ups, downs = [], []
        for worker in range(cluster.n_workers):
            up, down = self.bandwidth_at(trace, iteration, worker if trace.n_workers > 1 else 0)
            ups.append(up)
            downs.append(down)
        slowdown = self.compute_multiplier(trace, iteration)
        return Environment(
            up_gbps=tuple(ups),
            down_gbps=tuple(downs),
            compute=tuple(scale * slowdown for scale in cluster.compute_scale),
        )

    def static_trace(self, gbps: float, n_workers: int = 1, down_gbps: Optional[float] = None) -> BandwidthTrace:
        """Constant bandwidth for every worker."""
        down = gbps if down_gbps is None else down_gbps
        return BandwidthTrace(segments=(
            BandwidthSegment(start_iteration=0, up_gbps=(gbps,) * n_workers, down_gbps=(down,) * n_workers),
        ))

    def alternating_trace(self, first_gbps: float, second_gbps: float, period: int, n_iters: int,
                          n_workers: int = 1) -> BandwidthTrace:
        """Bandwidth switching between two values every `period` iterations, starting at first_gbps."""
        if period < 1:
            raise ValueError("period must be >= 1")
        segments = []
        for position, start in enumerate(range(0, max(n_iters, 1), period)):
            gbps = first_gbps if position % 2 == 0 else second_gbps
            segments.append(BandwidthSegment(start_iteration=start, up_gbps=(gbps,) * n_workers,
                                             down_gbps=(gbps,) * n_workers))
        return BandwidthTrace(segments=tuple(segments))

    def stepped_trace(self, levels: Sequence[float], every: int, n_workers: int = 1,
                      jobs: Iterable[CompetingJob] = ()) -> BandwidthTrace:
        """Visit each bandwidth level for `every` iterations, in order."""
        segments = tuple(
            BandwidthSegment(start_iteration=position * every, up_gbps=(gbps,) * n_workers,
                             down_gbps=(gbps,) * n_workers)
            for position, gbps in enumerate(levels)
        )
        return BandwidthTrace(segments=segments, jobs=tuple(jobs))
