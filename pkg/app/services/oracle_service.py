"""
Oracle service.
Brute-force check of the scheduler on tiny instances: every admission order of the chunks is
replayed by an independent remaining-work simulation, and the best order allowed by the
admission rule is compared with the event simulator's period.
"""

import itertools
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from app.models.harness import OracleCheck, OracleInstance
from app.models.scheduling import SchedulerConfig
from app.models.workload import ModelProfile
from app.services.cycle import chunk_sizes, comm_factor, link_rate_gbps, simulate_cycle, transfer_work
from app.utils.errors import ConfigurationError
from app.utils.helpers import ArchitectureEnum

logger = structlog.get_logger(__name__)

MAX_ORACLE_CHUNKS = 8
FINISH_EPS = 1e-12

RULE_PRIORITY = "priority"
RULE_FIFO = "fifo"
RULE_ANY = "any"

ChunkKey = Tuple[int, int]


def _bp_ends(bp: Sequence[float]) -> List[float]:
    ends = [0.0] * len(bp)
    clock = 0.0
    for i in reversed(range(len(bp))):
        clock += bp[i]
        ends[i] = clock
    return ends


def _pick(ready: List[ChunkKey], rule: str, bp_end: List[float], chosen: ChunkKey) -> ChunkKey:
    if rule == RULE_PRIORITY:
        return min(ready)
    if rule == RULE_FIFO:
        return min(ready, key=lambda key: (bp_end[key[0]], -key[0], key[1]))
    return chosen


class OracleService:
    """
    Brute-force reference for the scheduler on tiny instances.

    Priority admission is what the simulator implements; FIFO and unconstrained orders are the
    baselines. Priority never loses to FIFO at unit credit, but an unconstrained order can beat it.
    """

    def chunk_keys(self, instance: OracleInstance) -> List[ChunkKey]:
        return [(layer, seq) for layer, size in enumerate(instance.layer_bytes)
                for seq, _ in enumerate(chunk_sizes(size, instance.config))]

    def replay(self, instance: OracleInstance, order: Sequence[ChunkKey], rule: str = RULE_ANY) -> Optional[float]:
        """
        Period of the cycle when chunks are admitted in exactly `order`, or None when the order is
        not admissible: an admission happens whenever a credit is free and a chunk is ready, and the
        admitted chunk must be the one the rule picks among ready chunks.
        """
        n_layers = len(instance.bp)
        bp_end = _bp_ends(instance.bp)
        sizes = [chunk_sizes(size, instance.config) for size in instance.layer_bytes]
        work = {(layer, seq): transfer_work(size, instance.rate_gbps, instance.factor)
                for layer, layer_sizes in enumerate(sizes) for seq, size in enumerate(layer_sizes)}
        left = [len(layer_sizes) for layer_sizes in sizes]
        done = [bp_end[i] if left[i] == 0 else math.inf for i in range(n_layers)]
        credit = instance.config.credit_multiplier

        released = [False] * n_layers
        ready: List[ChunkKey] = []
        in_overhead: Dict[ChunkKey, float] = {}
        active: Dict[ChunkKey, float] = {}
        position, in_flight, now = 0, 0, 0.0

        def complete(key: ChunkKey, at: float) -> None:
            nonlocal in_flight
            in_flight -= 1
            left[key[0]] -= 1
            if left[key[0]] == 0:
                done[key[0]] = at

        def begin(key: ChunkKey, at: float) -> None:
            if work[key] <= 0.0:
                complete(key, at)
            else:
                active[key] = work[key]

        while True:
            t_release = min((bp_end[i] for i in range(n_layers) if not released[i]), default=math.inf)
            t_overhead = min(in_overhead.values(), default=math.inf)
            t_finish = now + min(active.values()) * len(active) if active else math.inf
            step_to = min(t_release, t_overhead, t_finish)
            if step_to == math.inf:
                break
            if active:
                share = (step_to - now) / len(active)
                for key in active:
                    active[key] -= share
            now = step_to

            for key in sorted(k for k, rest in active.items() if rest <= FINISH_EPS):
                del active[key]
                complete(key, now)
            for key in sorted((k for k, end in in_overhead.items() if end <= now), key=lambda k: in_overhead[k]):
                del in_overhead[key]
                begin(key, now)
            for layer in reversed(range(n_layers)):
                if not released[layer] and bp_end[layer] <= now:
                    released[layer] = True
                    ready.extend((layer, seq) for seq in range(len(sizes[layer])))

            while in_flight < credit and ready:
                if position >= len(order):
                    return None
                chosen = order[position]
                if chosen not in ready or chosen != _pick(ready, rule, bp_end, chosen):
                    return None
                ready.remove(chosen)
                position += 1
                in_flight += 1
                if instance.overhead_s > 0.0:
                    in_overhead[chosen] = now + instance.overhead_s
                else:
                    begin(chosen, now)

        if position != len(order) or any(count for count in left):
            return None
        previous_end = 0.0
        for i in range(n_layers):
            previous_end = max(done[i], previous_end) + instance.fp[i]
        return previous_end

    def brute_force(self, instance: OracleInstance,
                    rule: str = RULE_PRIORITY) -> Tuple[float, List[ChunkKey], int, int]:
        """(best period, best order, admissible orders, total orders) over every permutation of the chunks."""
        keys = self.chunk_keys(instance)
        if len(keys) > MAX_ORACLE_CHUNKS:
            raise ConfigurationError(f"{len(keys)} chunks is too many to enumerate (max {MAX_ORACLE_CHUNKS})")
        best, best_order, admissible, total = math.inf, [], 0, 0
        for order in itertools.permutations(keys):
            total += 1
            period = self.replay(instance, order, rule)
            if period is None:
                continue
            admissible += 1
            if period < best:
                best, best_order = period, list(order)
        if not admissible:
            raise ConfigurationError("no admissible admission order")
        return best, best_order, admissible, total

    def simulated_period(self, instance: OracleInstance) -> float:
        return simulate_cycle(instance.bp, instance.fp, instance.layer_bytes, instance.config,
                              instance.rate_gbps, instance.factor, instance.overhead_s).period

    def check_instance(self, instance: OracleInstance, rel_tol: float = 1e-9) -> OracleCheck:
        if not instance.config.scheduling_enabled:
            raise ConfigurationError("the oracle checks scheduling-enabled configurations only")
        simulated = self.simulated_period(instance)
        oracle, order, admissible, total = self.brute_force(instance, RULE_PRIORITY)
        fifo, _, _, _ = self.brute_force(instance, RULE_FIFO)
        return OracleCheck(
            simulated_period=simulated,
            oracle_period=oracle,
            fifo_period=fifo,
            admissible_orders=admissible,
            total_orders=total,
            best_order=order,
            matches=math.isclose(simulated, oracle, rel_tol=rel_tol, abs_tol=1e-12),
        )

    def instance_from_profile(self, profile: ModelProfile, config: SchedulerConfig, gbps: float = 10.0,
                              architecture: ArchitectureEnum = ArchitectureEnum.PARAMETER_SERVER,
                              n_workers: int = 1, overhead_s: float = 0.0) -> OracleInstance:
        return OracleInstance(
            bp=profile.bp_times,
            fp=profile.fp_times,
            layer_bytes=profile.layer_bytes,
            config=config,
            rate_gbps=link_rate_gbps(architecture, gbps, gbps),
            factor=comm_factor(architecture, n_workers),
            overhead_s=overhead_s,
        )

    def random_instance(self, rng: np.random.Generator) -> OracleInstance:
        """At most 3 layers and 6 chunks, with random compute, rates, credit and overhead."""
        n_layers = int(rng.integers(1, 4))
        partition = 4096 * int(rng.integers(1, 5))
        most = 3 if n_layers <= 2 else 2
        layer_bytes = []
        for _ in range(n_layers):
            count = int(rng.integers(1, most + 1))
            layer_bytes.append(partition * (count - 1) + int(rng.integers(1, partition + 1)))
        return OracleInstance(
            bp=tuple(float(v) for v in rng.uniform(0.05e-3, 1e-3, n_layers)),
            fp=tuple(float(v) for v in rng.uniform(0.05e-3, 1e-3, n_layers)),
            layer_bytes=tuple(layer_bytes),
            config=SchedulerConfig(partition_bytes=partition, credit_multiplier=int(rng.integers(1, 4))),
            rate_gbps=float(rng.uniform(0.5, 10.0)),
            factor=2.0,
            overhead_s=float(rng.choice([0.0, 50e-6, 200e-6])),
        )

    def run_random_checks(self, count: int = 200, seed: int = 0) -> List[OracleCheck]:
        rng = np.random.default_rng(seed)
        checks = [self.check_instance(self.random_instance(rng)) for _ in range(count)]
        mismatches = sum(not check.matches for check in checks)
        logger.info("oracle_checks_done", instances=count, mismatches=mismatches)
        return checks
