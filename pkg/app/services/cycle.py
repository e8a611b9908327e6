"""
Single-cycle scheduling kernel.

One cycle spans BP of iteration k and FP of iteration k+1 for a single worker: BP emits prioritized
gradient chunks, a credit window admits them onto a processor-sharing link, and FP starts layer by
layer as parameters arrive. Pure functions of compute times, tensor sizes and link rate.
"""

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from app.models.scheduling import Chunk, SchedulerConfig
from app.models.workload import ModelProfile
from app.utils.helpers import ArchitectureEnum, EventKindEnum, gbps_to_bytes_per_second, harmonic_rate

_INF = math.inf


def partition_tensors(profile: ModelProfile, config: SchedulerConfig) -> List[List[Chunk]]:
    """Split every layer's tensor into chunks of at most partition_bytes (one chunk when scheduling is off)."""
    result = []
    for layer in profile.layers:
        sizes = chunk_sizes(layer.param_bytes, config)
        result.append([Chunk(layer=layer.index, bytes=size, seq=seq) for seq, size in enumerate(sizes)])
    return result


def chunk_sizes(param_bytes: int, config: SchedulerConfig) -> List[int]:
    if param_bytes <= 0:
        return []
    if not config.scheduling_enabled:
        return [param_bytes]
    full, rest = divmod(param_bytes, config.partition_bytes)
    return [config.partition_bytes] * full + ([rest] if rest else [])


def comm_factor(architecture: ArchitectureEnum, n_workers: int) -> float:
    """Bytes on the wire per gradient byte: 2 for push+pull, 2(n-1)/n for ring all-reduce."""
    if ArchitectureEnum(architecture) == ArchitectureEnum.PARAMETER_SERVER:
        return 2.0
    return 2.0 * (n_workers - 1) / n_workers


def link_rate_gbps(architecture: ArchitectureEnum, up_gbps: float, down_gbps: float) -> float:
    """Effective rate seen by the factor-scaled traffic of one worker."""
    if up_gbps == down_gbps:
        return up_gbps
    if ArchitectureEnum(architecture) == ArchitectureEnum.PARAMETER_SERVER:
        return harmonic_rate(up_gbps, down_gbps)
    return min(up_gbps, down_gbps)


def comm_time(num_bytes: float, gbps: float, architecture: ArchitectureEnum, n_workers: int,
              overhead_s: float = 0.0) -> float:
    """Seconds to synchronize num_bytes of gradient over a link of gbps, plus fixed per-chunk overhead."""
    return transfer_work(num_bytes, gbps, comm_factor(architecture, n_workers)) + overhead_s


def transfer_work(num_bytes: float, gbps: float, factor: float) -> float:
    if factor == 0.0 or math.isinf(gbps):
        return 0.0
    return num_bytes * factor / gbps_to_bytes_per_second(gbps)


@dataclass(frozen=True)
class CycleOutcome:
    """Relative timing of one cycle (time 0 = BP start)."""
    period: float
    fp0_offset: float
    link_busy: float
    overlap_fraction: float
    chunks: Tuple[Tuple[int, int, int, float, float, float], ...] = ()
    layers: Tuple[Tuple[int, float, float, float, float, float], ...] = ()
    events: Tuple[Tuple[float, int, int, int], ...] = field(default=())


def _overlap(busy: Sequence[Tuple[float, float]], compute: Sequence[Tuple[float, float]]) -> float:
    """Total length of the intersection of two sorted lists of disjoint intervals."""
    total, i, j = 0.0, 0, 0
    while i < len(busy) and j < len(compute):
        lo = max(busy[i][0], compute[j][0])
        hi = min(busy[i][1], compute[j][1])
        if hi > lo:
            total += hi - lo
        if busy[i][1] < compute[j][1]:
            i += 1
        else:
            j += 1
    return total


def _finish_cycle(bp: Sequence[float], fp: Sequence[float], bp_end: List[float], layer_done: List[float],
                  busy: List[Tuple[float, float]], record: bool, chunk_log, event_log) -> CycleOutcome:
    n_layers = len(bp)
    fp_start, fp_end = [0.0] * n_layers, [0.0] * n_layers
    previous_end = 0.0
    for i in range(n_layers):
        fp_start[i] = max(layer_done[i], previous_end)
        fp_end[i] = fp_start[i] + fp[i]
        previous_end = fp_end[i]

    bp_total = bp_end[0]
    compute_intervals = [(0.0, bp_total)] if bp_total > 0 else []
    for i in range(n_layers):
        if fp_end[i] > fp_start[i]:
            if compute_intervals and compute_intervals[-1][1] >= fp_start[i]:
                compute_intervals[-1] = (compute_intervals[-1][0], fp_end[i])
            else:
                compute_intervals.append((fp_start[i], fp_end[i]))
    busy_time = sum(end - start for start, end in busy)
    overlap = _overlap(busy, compute_intervals) / busy_time if busy_time > 0 else 0.0

    layers: Tuple = ()
    events: Tuple = ()
    if record:
        layers = tuple(
            (i, bp_end[i] - bp[i], bp_end[i], layer_done[i], fp_start[i], fp_end[i]) for i in range(n_layers)
        )
        for i in range(n_layers):
            event_log.append((bp_end[i], EventKindEnum.BP_FINISH.rank, i, -1))
            event_log.append((fp_start[i], EventKindEnum.FP_START.rank, i, -1))
            event_log.append((fp_end[i], EventKindEnum.FP_END.rank, i, -1))
        events = tuple(sorted(event_log))
    return CycleOutcome(
        period=fp_end[-1],
        fp0_offset=fp_start[0],
        link_busy=busy_time,
        overlap_fraction=min(1.0, max(0.0, overlap)),
        chunks=tuple(chunk_log) if record else (),
        layers=layers,
        events=events,
    )


def simulate_cycle(bp: Sequence[float], fp: Sequence[float], layer_bytes: Sequence[int],
                   config: SchedulerConfig, rate_gbps: float, factor: float, overhead_s: float,
                   record: bool = False) -> CycleOutcome:
    """
    Simulate one cycle for a single worker.

    bp/fp are per-layer compute seconds (already scaled), layer_bytes per-layer gradient sizes.
    """
    n_layers = len(bp)
    bp_end = [0.0] * n_layers
    clock = 0.0
    for i in reversed(range(n_layers)):
        clock += bp[i]
        bp_end[i] = clock

    sizes = [chunk_sizes(b, config) for b in layer_bytes]
    chunk_log: List[Tuple[int, int, int, float, float, float]] = []
    event_log: List[Tuple[float, int, int, int]] = []

    if not config.scheduling_enabled:
        return _vanilla_cycle(bp, fp, bp_end, sizes, rate_gbps, factor, record, chunk_log, event_log)

    works = [[transfer_work(size, rate_gbps, factor) for size in layer_sizes] for layer_sizes in sizes]
    remaining = [len(layer_sizes) for layer_sizes in sizes]
    layer_done = [bp_end[i] if remaining[i] == 0 else _INF for i in range(n_layers)]
    admit_at: Dict[Tuple[int, int], float] = {}
    start_at: Dict[Tuple[int, int], float] = {}

    credit = config.credit_multiplier
    waiting: List[List[int]] = []            # heap of [layer, next_seq]
    overhead_queue: deque = deque()          # (end_time, layer, seq), admission order
    transferring: List[Tuple[float, int, int]] = []   # heap of (virtual finish, layer, seq)
    virtual, last = 0.0, 0.0
    in_flight = 0
    busy: List[Tuple[float, float]] = []
    busy_since = -1.0
    next_release = n_layers - 1

    def finish(now: float, layer: int, seq: int) -> None:
        nonlocal in_flight
        in_flight -= 1
        remaining[layer] -= 1
        if remaining[layer] == 0:
            layer_done[layer] = now
        if record:
            chunk_log.append((layer, seq, sizes[layer][seq], admit_at[(layer, seq)], start_at[(layer, seq)], now))
            event_log.append((now, EventKindEnum.CHUNK_FINISH.rank, layer, seq))

    def start_transfer(now: float, layer: int, seq: int) -> None:
        nonlocal busy_since
        if record:
            start_at[(layer, seq)] = now
            event_log.append((now, EventKindEnum.TRANSFER_START.rank, layer, seq))
        work = works[layer][seq]
        if work <= 0.0:
            finish(now, layer, seq)
            return
        if not transferring:
            busy_since = now
        heapq.heappush(transferring, (virtual + work, layer, seq))

    while True:
        t_release = bp_end[next_release] if next_release >= 0 else _INF
        t_overhead = overhead_queue[0][0] if overhead_queue else _INF
        active = len(transferring)
        t_finish = last + (transferring[0][0] - virtual) * active if active else _INF
        now = min(t_release, t_overhead, t_finish)
        if now == _INF:
            break

        if active:
            if now == t_finish:
                virtual = transferring[0][0]
            else:
                virtual += (now - last) / active
        last = now

        while transferring and transferring[0][0] <= virtual:
            _, layer, seq = heapq.heappop(transferring)
            finish(now, layer, seq)
            if not transferring:
                busy.append((busy_since, now))

        while overhead_queue and overhead_queue[0][0] <= now:
            _, layer, seq = overhead_queue.popleft()
            start_transfer(now, layer, seq)

        while next_release >= 0 and bp_end[next_release] <= now:
            if remaining[next_release]:
                heapq.heappush(waiting, [next_release, 0])
            next_release -= 1

        while in_flight < credit and waiting:
            entry = waiting[0]
            layer, seq = entry
            if seq + 1 < len(sizes[layer]):
                entry[1] = seq + 1
            else:
                heapq.heappop(waiting)
            in_flight += 1
            if record:
                admit_at[(layer, seq)] = now
                event_log.append((now, EventKindEnum.CHUNK_ADMIT.rank, layer, seq))
            if overhead_s > 0.0:
                overhead_queue.append((now + overhead_s, layer, seq))
            else:
                start_transfer(now, layer, seq)

    return _finish_cycle(bp, fp, bp_end, layer_done, busy, record, chunk_log, event_log)


def _vanilla_cycle(bp, fp, bp_end, sizes, rate_gbps, factor, record, chunk_log, event_log) -> CycleOutcome:
    """BP, whole-model communication and FP strictly in sequence."""
    n_layers = len(bp)
    clock = bp_end[0]
    comm_start = clock
    for i in reversed(range(n_layers)):
        for seq, size in enumerate(sizes[i]):
            begin = clock
            clock += transfer_work(size, rate_gbps, factor)
            if record:
                chunk_log.append((i, seq, size, begin, begin, clock))
                event_log.append((begin, EventKindEnum.CHUNK_ADMIT.rank, i, seq))
                event_log.append((begin, EventKindEnum.TRANSFER_START.rank, i, seq))
                event_log.append((clock, EventKindEnum.CHUNK_FINISH.rank, i, seq))
    layer_done = [clock] * n_layers
    busy = [(comm_start, clock)] if clock > comm_start else []
    return _finish_cycle(bp, fp, bp_end, layer_done, busy, record, chunk_log, event_log)
