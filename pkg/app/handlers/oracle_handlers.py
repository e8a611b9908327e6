"""
Oracle handler: brute-force the admission order of a tiny instance and compare with the simulator.
"""

from pathlib import Path
from typing import Optional

import click
import structlog

from app.handlers.common_handlers import CONFIG, EXISTING_FILE, echo_json, handle_errors
from app.models.scheduling import SchedulerConfig
from app.services.oracle_service import OracleService
from app.services.workload_service import WorkloadService
from app.utils.helpers import ArchitectureEnum

logger = structlog.get_logger(__name__)
router = click.Group()


@router.command()
@click.option("--profile", "profile_path", type=EXISTING_FILE, default=None, help="Tiny model profile JSON")
@click.option("--config", "config", type=CONFIG, default=None, help="SP,SC, e.g. 4MB,2")
@click.option("--gbps", type=float, default=10.0, show_default=True)
@click.option("--architecture", type=click.Choice(ArchitectureEnum.values()), default="ps", show_default=True)
@click.option("--n-workers", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--overhead-us", type=click.FloatRange(min=0.0), default=0.0, show_default=True)
@click.option("--random", "random_count", type=click.IntRange(min=1), default=None,
              help="Check this many random tiny instances instead of a profile")
@click.option("--seed", type=int, default=0, show_default=True)
@handle_errors
def oracle(profile_path: Optional[Path], config: Optional[SchedulerConfig], gbps: float, architecture: str,
           n_workers: int, overhead_us: float, random_count: Optional[int], seed: int):
    """Check the simulator's period against the best admissible admission order."""
    oracle_service = OracleService()
    if random_count is not None:
        checks = oracle_service.run_random_checks(random_count, seed)
        mismatches = [i for i, check in enumerate(checks) if not check.matches]
        echo_json({"instances": len(checks), "mismatches": mismatches})
        if mismatches:
            raise click.ClickException(f"{len(mismatches)} of {len(checks)} instances disagree with the oracle")
        return
    if profile_path is None or config is None:
        raise click.UsageError("give --profile and --config, or --random N")
    profile = WorkloadService().load_profile(profile_path)
    instance = oracle_service.instance_from_profile(profile, config, gbps, ArchitectureEnum(architecture),
                                                    n_workers, overhead_us * 1e-6)
    check = oracle_service.check_instance(instance)
    echo_json(check.model_dump(mode="json"))
    if not check.matches:
        raise click.ClickException(
            f"simulator period {check.simulated_period:.9f}s differs from oracle {check.oracle_period:.9f}s")
