import asyncio
import math
import sys

import numpy as np
import structlog

from app.models.scheduling import SchedulerConfig
from app.models.tuning import SearchSpace
from app.services.cycle import simulate_cycle
from app.services.harness_service import HarnessService
from app.services.oracle_service import OracleService
from app.services.workload_service import WorkloadService
from app.utils.log import configure_logging
from config.settings import settings

configure_logging()
logger = structlog.get_logger("verify_scheduler")

PROFILES = ("alexnet", "vgg16", "resnet50")

harness_service = HarnessService()
oracle_service = OracleService()
workload_service = WorkloadService()


def check_oracle() -> bool:
    checks = oracle_service.run_random_checks(200, seed=0)
    mismatches = [i for i, check in enumerate(checks) if not check.matches]
    if mismatches:
        logger.error("oracle_mismatch", instances=mismatches[:10], total=len(mismatches))
        return False
    logger.info("oracle_ok", instances=len(checks))
    return True


def check_credit_ordering() -> bool:
    profile = workload_service.load_profile(settings.DATA_PATH / "profiles" / "three_layer.json")
    bp, fp = profile.bp_times, profile.fp_times

    def period(config: SchedulerConfig) -> float:
        overhead = 1e-3 if config.scheduling_enabled else 0.0
        return simulate_cycle(bp, fp, profile.layer_bytes, config, 8.0, 2.0, overhead).period

    baseline = period(SchedulerConfig.vanilla())
    speedups = {credit: baseline / period(SchedulerConfig(partition_bytes=500_000, credit_multiplier=credit))
                for credit in (1, 2, 5)}
    logger.info("credit_ordering", **{f"credit_{k}": round(v, 4) for k, v in speedups.items()})
    if not speedups[2] > speedups[1] > speedups[5]:
        logger.error("credit_ordering_wrong", expected="2X > 1X > 5X")
        return False
    return True


def check_bandwidth_monotonicity(instances: int = 2000) -> bool:
    """More bandwidth never slows vanilla or a window that admits every chunk at once."""
    rng = np.random.default_rng(0)
    violations = 0
    for _ in range(instances):
        n_layers = int(rng.integers(2, 6))
        bp = [float(v) for v in rng.uniform(0.1e-3, 2e-3, n_layers)]
        fp = [float(v) for v in rng.uniform(0.1e-3, 2e-3, n_layers)]
        sizes = [int(v) for v in rng.integers(1_000, 300_000, n_layers)]
        partition = int(2 ** rng.integers(12, 17))
        whole = SchedulerConfig(partition_bytes=partition,
                                credit_multiplier=sum(math.ceil(size / partition) for size in sizes))
        gbps = float(rng.uniform(0.5, 20.0))
        overhead = float(rng.choice([0.0, 50e-6, 200e-6]))
        for config, cost in ((SchedulerConfig.vanilla(), 0.0), (whole, overhead)):
            slow = simulate_cycle(bp, fp, sizes, config, gbps, 2.0, cost).period
            fast = simulate_cycle(bp, fp, sizes, config, gbps * 1.5, 2.0, cost).period
            violations += int(fast > slow * (1 + 1e-12))
    logger.info("bandwidth_monotonicity", instances=instances, violations=violations)
    return violations == 0


async def check_sweeps() -> bool:
    cluster = workload_service.load_cluster(settings.DATA_PATH / "clusters" / "ps8.json")
    space = SearchSpace()
    low, high = space.partition_grid[0], space.partition_grid[-1]
    ok = True
    for name in PROFILES:
        profile = workload_service.load_profile(settings.DATA_PATH / "profiles" / f"{name}.json")
        rows = {row["gbps"]: row for row in await harness_service.motivation_sweep(profile, cluster, [3.0, 10.0, 20.0],
                                                                                    space=space)}
        optimum = rows[10.0]["best_partition_bytes"]
        if not low < optimum < high:
            logger.error("no_interior_optimum", model=name, best_partition_bytes=optimum)
            ok = False
        if rows[3.0]["best_partition_bytes"] < rows[20.0]["best_partition_bytes"]:
            logger.error("partition_shift_wrong", model=name, at_3g=rows[3.0]["best_partition_bytes"],
                         at_20g=rows[20.0]["best_partition_bytes"])
            ok = False
        logger.info("sweep_checked", model=name,
                    optima={g: f"{r['best_partition_bytes']},{r['best_credit_multiplier']}" for g, r in rows.items()})
    return ok


async def main():
    script_failed = False
    try:
        for passed in (check_oracle(), check_credit_ordering(), check_bandwidth_monotonicity(), await check_sweeps()):
            script_failed = script_failed or not passed
    except Exception as e:
        logger.error("verification_crashed", error=str(e), exc_info=True)
        script_failed = True

    if script_failed:
        logger.error("scheduler verification FAILED")
        sys.exit(1)
    logger.info("scheduler verification passed")


if __name__ == "__main__":
    asyncio.run(main())
