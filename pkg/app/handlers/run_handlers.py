"""
Experiment handlers: run a scenario, compare tuners on it, sweep grid-search optima over bandwidths.
"""

from pathlib import Path
from typing import List, Optional

import click
import structlog

from app.handlers.common_handlers import EXISTING_FILE, FLOAT_LIST, echo_json, handle_errors, run_async
from app.services.harness_service import HarnessService
from app.services.workload_service import WorkloadService
from app.storage.repositories.record_repo import RecordRepository
from app.storage.repositories.scenario_repo import ScenarioRepository
from app.utils.helpers import TunerEnum, format_bytes

logger = structlog.get_logger(__name__)
router = click.Group()

SWEEP_HEADER = ("gbps", "best_partition_bytes", "best_credit_multiplier", "best_speed", "vanilla_speed", "speedup")


class TunerListType(click.ParamType):
    name = "tuners"

    def convert(self, value, param, ctx) -> List[TunerEnum]:
        if isinstance(value, list):
            return value
        try:
            return TunerEnum.parse_list(value)
        except ValueError as e:
            self.fail(str(e), param, ctx)


@router.command()
@click.option("--scenario", "scenario_path", type=EXISTING_FILE, required=True, help="Scenario JSON")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True,
              help="Output directory")
@click.option("--tuner", type=click.Choice([t.value for t in TunerEnum]), default=None,
              help="Override the scenario's tuner")
@click.option("--workers", "pool_workers", type=int, default=None, help="Process pool size (0 = inline)")
@handle_errors
def run(scenario_path: Path, out_dir: Path, tuner: Optional[str], pool_workers: Optional[int]):
    """Run one scenario and write its run record and summary."""
    scenario = ScenarioRepository().load_scenario(scenario_path)
    if tuner is not None:
        scenario = scenario.model_copy(update={"tuner": TunerEnum(tuner)})
    outcome = run_async(HarnessService().run_scenario(scenario, out_dir, pool_workers))
    echo_json(outcome.model_dump(mode="json"))


@router.command()
@click.option("--scenario", "scenario_path", type=EXISTING_FILE, required=True, help="Scenario JSON")
@click.option("--tuners", type=TunerListType(), default="grid,bo,meta", show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), required=True,
              help="Comparison table CSV")
@click.option("--wall-clock/--no-wall-clock", default=False, show_default=True,
              help="Add a wall-clock column (makes the table run-dependent)")
@click.option("--workers", "pool_workers", type=int, default=None, help="Process pool size (0 = inline)")
@handle_errors
def compare(scenario_path: Path, tuners: List[TunerEnum], out_path: Path, wall_clock: bool,
            pool_workers: Optional[int]):
    """Compare search cost and achieved speed of several tuners on one scenario."""
    scenario = ScenarioRepository().load_scenario(scenario_path)
    rows = run_async(HarnessService().compare_tuners(scenario, tuners, out_path, pool_workers, wall_clock))
    for row in rows:
        click.echo(f"{row.tuner.value:>8}  best={row.best_config}  speed={row.mean_speed:.2f}  "
                   f"speedup={row.speedup:.3f}  cost={row.search_cost_iterations} iters  "
                   f"evals={row.evaluations}  inferences={row.inferences}")


@router.command()
@click.option("--profile", "profile_path", type=EXISTING_FILE, required=True, help="Model profile JSON")
@click.option("--cluster", "cluster_path", type=EXISTING_FILE, required=True, help="Cluster JSON")
@click.option("--gbps", type=FLOAT_LIST, default="3,20", show_default=True, help="Bandwidth levels")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Optional CSV of per-bandwidth optima")
@click.option("--eval-iters", type=click.IntRange(min=1), default=None)
@click.option("--workers", "pool_workers", type=int, default=None, help="Process pool size (0 = inline)")
@handle_errors
def sweep(profile_path: Path, cluster_path: Path, gbps: List[float], out_path: Optional[Path],
          eval_iters: Optional[int], pool_workers: Optional[int]):
    """Grid-search the best configuration at each static bandwidth."""
    workload_service = WorkloadService()
    profile = workload_service.load_profile(profile_path)
    cluster = workload_service.load_cluster(cluster_path)
    rows = run_async(HarnessService().motivation_sweep(profile, cluster, gbps, eval_iters=eval_iters,
                                                       pool_workers=pool_workers))
    for row in rows:
        click.echo(f"{row['gbps']:>6g} Gbps  best=<{format_bytes(row['best_partition_bytes'])},"
                   f"{row['best_credit_multiplier']}X>  speedup={row['speedup']:.3f}")
    if out_path is not None:
        table = [[row[column] for column in SWEEP_HEADER] for row in rows]
        run_async(RecordRepository(out_path.parent).save_table(out_path.name, SWEEP_HEADER, table))
