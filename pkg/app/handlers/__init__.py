"""Command handlers; each module exposes a click `router` whose commands are merged into the `sim` CLI."""

from . import common_handlers, dataset_handlers, oracle_handlers, run_handlers

__all__ = ["common_handlers", "dataset_handlers", "oracle_handlers", "run_handlers"]
