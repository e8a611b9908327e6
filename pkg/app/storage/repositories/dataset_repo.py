"""
Dataset repository.
Training datasets are JSON-lines files with one TrainingSample per line.
"""

from pathlib import Path
from typing import List, Sequence, Union

import orjson
import structlog
from pydantic import ValidationError

from app.models.metanet import TrainingSample
from app.storage.files import iter_jsonl, write_jsonl_async
from app.utils.errors import WorkloadError

logger = structlog.get_logger(__name__)


def sample_to_record(sample: TrainingSample) -> dict:
    return sample.model_dump(mode="json")


class DatasetRepository:
    """Repository for JSON-lines training datasets."""

    async def save(self, path: Union[str, Path], samples: Sequence[TrainingSample]) -> Path:
        target = await write_jsonl_async(path, (sample_to_record(sample) for sample in samples))
        logger.info("dataset_saved", path=str(target), samples=len(samples))
        return target

    def load(self, path: Union[str, Path]) -> List[TrainingSample]:
        samples = []
        try:
            for line_number, record in enumerate(iter_jsonl(path), start=1):
                try:
                    samples.append(TrainingSample.model_validate(record))
                except ValidationError as e:
                    raise WorkloadError(f"{path}:{line_number}: invalid sample: {e.errors()[0]['msg']}")
        except FileNotFoundError:
            raise WorkloadError(f"dataset file not found: {path}")
        except orjson.JSONDecodeError as e:
            raise WorkloadError(f"dataset {path} is not valid JSON lines: {e}")
        logger.info("dataset_loaded", path=str(path), samples=len(samples))
        return samples
