"""
Bandwidth trace repository.
Schema: {segments:[{start_iteration, up_gbps:[...], down_gbps:[...]}], jobs:[{arrive_iter, init_iters, compute_share?}]}
"""

from pathlib import Path
from typing import Any, Dict, Union

import orjson
import structlog
from pydantic import ValidationError

from app.models.workload import BandwidthTrace
from app.storage.files import read_json, write_json
from app.utils.errors import WorkloadError

logger = structlog.get_logger(__name__)


def trace_from_document(document: Dict[str, Any]) -> BandwidthTrace:
    if not isinstance(document, dict):
        raise WorkloadError("trace document must be a JSON object")
    try:
        return BandwidthTrace(segments=document.get("segments", ()), jobs=document.get("jobs", ()))
    except ValidationError as e:
        raise WorkloadError(f"invalid trace: {e.errors()[0]['msg']}")


def trace_to_document(trace: BandwidthTrace) -> Dict[str, Any]:
    return {
        "segments": [
            {"start_iteration": s.start_iteration, "up_gbps": list(s.up_gbps), "down_gbps": list(s.down_gbps)}
            for s in trace.segments
        ],
        "jobs": [
            {"arrive_iter": j.arrive_iter, "init_iters": j.init_iters, "compute_share": j.compute_share}
            for j in trace.jobs
        ],
    }


class TraceRepository:
    """Repository for bandwidth trace documents."""

    def load_trace(self, path: Union[str, Path]) -> BandwidthTrace:
        try:
            document = read_json(path)
        except FileNotFoundError:
            raise WorkloadError(f"trace file not found: {path}")
        except orjson.JSONDecodeError as e:
            raise WorkloadError(f"trace file {path} is not valid JSON: {e}")
        trace = trace_from_document(document)
        logger.debug("trace_loaded", path=str(path), segments=len(trace.segments), jobs=len(trace.jobs))
        return trace

    def save_trace(self, path: Union[str, Path], trace: BandwidthTrace) -> Path:
        return write_json(path, trace_to_document(trace))
