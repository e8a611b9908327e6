"""
Command-line entry point.
Configures logging, then dispatches to the commands registered by the handler routers.
"""

import click
import structlog

from app.handlers import common_handlers, dataset_handlers, oracle_handlers, run_handlers
from app.utils.log import configure_logging
from config.settings import settings

logger = structlog.get_logger(__name__)


@click.group()
@click.option("--log-level", default=None, help=f"Logging level (default {settings.LOG_LEVEL})")
@click.option("--log-format", type=click.Choice(["console", "json"]), default=None)
@click.option("--log-file", type=click.Path(dir_okay=False), default=None)
def cli(log_level, log_format, log_file):
    """Simulate communication scheduling and tune its partition size and credit online."""
    configure_logging(log_level, log_format, log_file)


def include_router(group: click.Group, router: click.Group) -> None:
    for name, command in router.commands.items():
        group.add_command(command, name)


for _router in (common_handlers.router, run_handlers.router, dataset_handlers.router, oracle_handlers.router):
    include_router(cli, _router)


if __name__ == "__main__":
    cli()
