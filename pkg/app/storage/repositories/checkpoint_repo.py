"""
Checkpoint repository.
Meta-network checkpoints are versioned JSON containers; float64 weights round-trip exactly.
"""

from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import orjson
import structlog
from pydantic import ValidationError

from app.models.metanet import FeatureScaler, MetaNetDims, MetaNetParams
from app.storage.files import read_json, write_json
from app.utils.errors import ShapeMismatchError, WorkloadError
from app.utils.helpers import MODEL_VOCAB, ArchitectureEnum

logger = structlog.get_logger(__name__)

CHECKPOINT_FORMAT = "metanet-checkpoint"
CHECKPOINT_VERSION = 2


def params_to_document(params: MetaNetParams) -> Dict[str, Any]:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": params.dims.model_dump(),
        "vocabularies": {"model": list(MODEL_VOCAB), "architecture": ArchitectureEnum.values()},
        "scaler": params.scaler.model_dump(),
        "weights": {name: np.ascontiguousarray(array) for name, array in sorted(params.weights.items())},
        "loss_history": list(params.loss_history),
    }


def params_from_document(document: Dict[str, Any]) -> MetaNetParams:
    if not isinstance(document, dict) or document.get("format") != CHECKPOINT_FORMAT:
        raise WorkloadError("not a meta-network checkpoint")
    if document.get("version") != CHECKPOINT_VERSION:
        raise WorkloadError(f"unsupported checkpoint version {document.get('version')!r}")
    vocab = document.get("vocabularies", {})
    if list(vocab.get("model", MODEL_VOCAB)) != list(MODEL_VOCAB) or \
            list(vocab.get("architecture", ArchitectureEnum.values())) != ArchitectureEnum.values():
        raise ShapeMismatchError("checkpoint vocabularies differ from this build")
    try:
        return MetaNetParams(
            dims=MetaNetDims(**document["dims"]),
            scaler=FeatureScaler(**document["scaler"]),
            weights={name: np.asarray(values, dtype=np.float64) for name, values in document["weights"].items()},
            loss_history=tuple(document.get("loss_history", ())),
        )
    except KeyError as e:
        raise WorkloadError(f"checkpoint is missing {e}")
    except ValidationError as e:
        raise ShapeMismatchError(f"checkpoint does not match its dimensions: {e.errors()[0]['msg']}")


class CheckpointRepository:
    """Repository for meta-network checkpoint files."""

    def save(self, path: Union[str, Path], params: MetaNetParams) -> Path:
        target = write_json(path, params_to_document(params), pretty=False)
        logger.info("checkpoint_saved", path=str(target))
        return target

    def load(self, path: Union[str, Path]) -> MetaNetParams:
        try:
            document = read_json(path)
        except FileNotFoundError:
            raise WorkloadError(f"checkpoint file not found: {path}")
        except orjson.JSONDecodeError as e:
            raise WorkloadError(f"checkpoint {path} is not valid JSON: {e}")
        params = params_from_document(document)
        logger.debug("checkpoint_loaded", path=str(path))
        return params
