"""
Shared handler plumbing (error mapping, async bridge, parameter types) and the plain `simulate` command.
"""

import asyncio
import functools
from pathlib import Path
from typing import Any, Callable, Optional

import click
import structlog
from pydantic import ValidationError

from app.models.harness import config_from_text
from app.models.scheduling import SchedulerConfig
from app.services.harness_service import HarnessService
from app.services.workload_service import WorkloadService
from app.storage.files import dumps
from app.storage.repositories.record_repo import RecordRepository
from app.utils.errors import AutoByteError
from app.utils.helpers import parse_float_list

logger = structlog.get_logger(__name__)
router = click.Group()


def handle_errors(func: Callable) -> Callable:
    """Turn errors into a one-line diagnostic and a non-zero exit code."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except click.ClickException:
            raise
        except AutoByteError as e:
            logger.error("command_failed", command=func.__name__, error=str(e))
            raise click.ClickException(str(e))
        except ValidationError as e:
            first = e.errors()[0]
            location = ".".join(str(part) for part in first["loc"]) or "input"
            message = f"invalid {location}: {first['msg']}"
            logger.error("command_failed", command=func.__name__, error=message, problems=e.error_count())
            raise click.ClickException(message)
        except OSError as e:
            logger.error("command_failed", command=func.__name__, error=str(e))
            raise click.ClickException(str(e))
        except Exception as e:
            logger.error("command_crashed", command=func.__name__, error=repr(e), exc_info=True)
            raise click.ClickException(f"unexpected error: {e!r}")
    return wrapper


def run_async(coro) -> Any:
    return asyncio.run(coro)


def echo_json(document: Any) -> None:
    click.echo(dumps(document, pretty=True).decode("utf-8"))


class ConfigPairType(click.ParamType):
    """'SP,SC' such as '4MB,2', or 'vanilla' for scheduling disabled."""
    name = "config"

    def convert(self, value, param, ctx) -> SchedulerConfig:
        if isinstance(value, SchedulerConfig):
            return value
        if str(value).strip().lower() == "vanilla":
            return SchedulerConfig.vanilla()
        try:
            return config_from_text(value)
        except ValueError as e:
            self.fail(f"{value!r}: {e}", param, ctx)


class FloatListType(click.ParamType):
    name = "floats"

    def convert(self, value, param, ctx):
        if isinstance(value, (list, tuple)):
            return list(value)
        try:
            return parse_float_list(value)
        except ValueError as e:
            self.fail(str(e), param, ctx)


CONFIG = ConfigPairType()
FLOAT_LIST = FloatListType()
EXISTING_FILE = click.Path(exists=True, dir_okay=False, path_type=Path)


@router.command()
@click.option("--profile", "profile_path", type=EXISTING_FILE, required=True, help="Model profile JSON")
@click.option("--cluster", "cluster_path", type=EXISTING_FILE, required=True, help="Cluster JSON")
@click.option("--trace", "trace_path", type=EXISTING_FILE, default=None, help="Bandwidth trace JSON")
@click.option("--gbps", type=float, default=10.0, show_default=True, help="Static bandwidth when no trace is given")
@click.option("--config", "config", type=CONFIG, default="160KB,1", show_default=True, help="SP,SC or 'vanilla'")
@click.option("--iters", type=click.IntRange(min=1), default=20, show_default=True)
@click.option("--events", "events_path", type=click.Path(path_type=Path), default=None, help="Event log JSONL")
@click.option("--metrics", "metrics_path", type=click.Path(path_type=Path), default=None,
              help="Per-group runtime metrics CSV")
@handle_errors
def simulate(profile_path: Path, cluster_path: Path, trace_path: Optional[Path], gbps: float,
             config: SchedulerConfig, iters: int, events_path: Optional[Path], metrics_path: Optional[Path]):
    """Simulate a fixed configuration and print iteration statistics."""
    workload_service = WorkloadService()
    profile = workload_service.load_profile(profile_path)
    cluster = workload_service.load_cluster(cluster_path)
    trace = workload_service.load_trace(trace_path) if trace_path else workload_service.static_trace(gbps)
    result = HarnessService().simulate_fixed(profile, cluster, trace, config, iters,
                                             record_events=events_path is not None)
    if events_path is not None:
        run_async(RecordRepository(events_path.parent).save_events(events_path.name, result))
    if metrics_path is not None:
        run_async(RecordRepository(metrics_path.parent).save_metrics(metrics_path.name, result.groups))
    times = result.iteration_times
    echo_json({
        "model": profile.name,
        "config": config.label(),
        "iterations": iters,
        "mean_speed": result.mean_speed,
        "mean_iteration_time_s": sum(times) / len(times),
        "overlap_fraction": [round(t.overlap_fraction, 6) for t in result.timelines],
    })
