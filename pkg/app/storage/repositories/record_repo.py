"""
Record repository.
Run records, summaries, tuner reports, comparison tables, event logs and metrics bundles.
"""

from pathlib import Path
from typing import Iterable, List, Sequence, Union

import structlog

from app.models.control import GroupRecord, RunRecord
from app.models.harness import CompareRow, ScenarioOutcome
from app.models.scheduling import RuntimeMetrics, SimResult
from app.models.tuning import TunerReport
from app.storage.files import write_csv_async, write_json_async, write_jsonl_async

logger = structlog.get_logger(__name__)

RUN_RECORD_FILE = "run_record.csv"
SPEEDS_FILE = "speeds_5iter.csv"
RECONFIG_FILE = "reconfig_log.json"
SUMMARY_FILE = "summary.json"
TUNER_REPORT_FILE = "tuner_report.json"

RUN_RECORD_HEADER = tuple(GroupRecord.model_fields)
METRICS_HEADER = ("config", "group", "iter_start", "mean_speed", "mean_b_up_gbps", "mean_b_down_gbps")
COMPARE_HEADER = tuple(CompareRow.model_fields)


def _cell(value):
    if value is None:
        return ""
    if hasattr(value, "value"):
        return value.value
    return value


def group_rows(groups: Iterable[GroupRecord]) -> List[list]:
    return [[_cell(getattr(group, name)) for name in RUN_RECORD_HEADER] for group in groups]


def metrics_rows(metrics: Iterable[RuntimeMetrics]) -> List[list]:
    return [
        [m.config.label(), m.group, m.iter_start, m.mean_speed,
         sum(m.b_up) / len(m.b_up), sum(m.b_down) / len(m.b_down)]
        for m in metrics
    ]


def reconfig_document(record: RunRecord) -> List[dict]:
    return [
        {
            "iteration": entry.iteration,
            "old": entry.old_config.model_dump(),
            "new": entry.new_config.model_dump(),
            "predicted_gain": entry.predicted_gain,
            "penalty_s": entry.penalty_s,
        }
        for entry in record.reconfig_log
    ]


class RecordRepository:
    """Writes every harness artifact under one output directory."""

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)

    def path(self, name: str) -> Path:
        return self.out_dir / name

    async def save_run(self, record: RunRecord, block: int = 5) -> List[Path]:
        """Run record CSV, job speed every `block` iterations and the reconfiguration log."""
        written = [
            await write_csv_async(self.path(RUN_RECORD_FILE), RUN_RECORD_HEADER, group_rows(record.groups)),
            await write_csv_async(self.path(SPEEDS_FILE), ("iter_start", "speed"), record.speeds_every(block)),
            await write_json_async(self.path(RECONFIG_FILE), reconfig_document(record)),
        ]
        logger.info("run_saved", out_dir=str(self.out_dir), groups=len(record.groups),
                    reconfigurations=len(record.reconfig_log))
        return written

    async def save_summary(self, outcome: ScenarioOutcome) -> Path:
        return await write_json_async(self.path(SUMMARY_FILE), outcome.model_dump(mode="json"))

    async def save_tuner_report(self, report: TunerReport) -> Path:
        return await write_json_async(self.path(TUNER_REPORT_FILE),
                                      report.model_dump(mode="json", exclude={"wall_clock_s"}))

    async def save_comparison(self, name: str, rows: Sequence[CompareRow]) -> Path:
        header = COMPARE_HEADER if any(row.wall_clock_s is not None for row in rows) else COMPARE_HEADER[:-1]
        table = [[_cell(getattr(row, column)) for column in header] for row in rows]
        return await write_csv_async(self.path(name), header, table)

    async def save_events(self, name: str, result: SimResult) -> Path:
        events = (event.model_dump(mode="json") for timeline in result.timelines for event in timeline.events)
        return await write_jsonl_async(self.path(name), events)

    async def save_metrics(self, name: str, metrics: Sequence[RuntimeMetrics]) -> Path:
        """One CSV row per metrics group."""
        return await write_csv_async(self.path(name), METRICS_HEADER, metrics_rows(metrics))

    async def save_table(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
        return await write_csv_async(self.path(name), header, rows)
