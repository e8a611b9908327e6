"""
Profile repository.
Loads and saves model profiles and cluster specifications (JSON documents).
"""

from pathlib import Path
from typing import Any, Dict, Union

import orjson
import structlog
from pydantic import ValidationError

from app.models.workload import ClusterSpec, LayerSpec, ModelProfile
from app.storage.files import read_json, write_json
from app.utils.errors import WorkloadError

logger = structlog.get_logger(__name__)


def profile_from_document(document: Dict[str, Any]) -> ModelProfile:
    """Build a profile from its file schema {name, batch_size, layers:[{param_bytes, fp_time_ms, bp_time_ms}]}."""
    if not isinstance(document, dict):
        raise WorkloadError("profile document must be a JSON object")
    raw_layers = document.get("layers")
    if not isinstance(raw_layers, list):
        raise WorkloadError("profile document needs a 'layers' list")
    try:
        layers = tuple(
            LayerSpec(index=position, param_bytes=entry["param_bytes"],
                      fp_time_ms=entry["fp_time_ms"], bp_time_ms=entry["bp_time_ms"])
            for position, entry in enumerate(raw_layers)
        )
        return ModelProfile(name=document.get("name", "other"), batch_size=document.get("batch_size", 32),
                            layers=layers)
    except (KeyError, TypeError) as e:
        raise WorkloadError(f"malformed profile layer entry: {e}")
    except ValidationError as e:
        raise WorkloadError(f"invalid profile: {e.errors()[0]['msg']}")


def profile_to_document(profile: ModelProfile) -> Dict[str, Any]:
    return {
        "name": profile.name,
        "batch_size": profile.batch_size,
        "layers": [
            {"param_bytes": layer.param_bytes, "fp_time_ms": layer.fp_time_ms, "bp_time_ms": layer.bp_time_ms}
            for layer in profile.layers
        ],
    }


def cluster_from_document(document: Dict[str, Any]) -> ClusterSpec:
    """Build a cluster from {n_workers, architecture, compute_scale?}."""
    if not isinstance(document, dict):
        raise WorkloadError("cluster document must be a JSON object")
    try:
        return ClusterSpec(**document)
    except ValidationError as e:
        raise WorkloadError(f"invalid cluster: {e.errors()[0]['msg']}")
    except TypeError as e:
        raise WorkloadError(f"malformed cluster document: {e}")


def cluster_to_document(cluster: ClusterSpec) -> Dict[str, Any]:
    return {
        "n_workers": cluster.n_workers,
        "architecture": cluster.architecture.value,
        "compute_scale": list(cluster.compute_scale),
    }


def _read_document(path: Union[str, Path], what: str) -> Any:
    try:
        return read_json(path)
    except FileNotFoundError:
        raise WorkloadError(f"{what} file not found: {path}")
    except orjson.JSONDecodeError as e:
        raise WorkloadError(f"{what} file {path} is not valid JSON: {e}")


class ProfileRepository:
    """Repository for profile and cluster documents."""

    def load_profile(self, path: Union[str, Path]) -> ModelProfile:
        profile = profile_from_document(_read_document(path, "profile"))
        logger.debug("profile_loaded", path=str(path), name=profile.name, layers=profile.n_layers)
        return profile

    def save_profile(self, path: Union[str, Path], profile: ModelProfile) -> Path:
        return write_json(path, profile_to_document(profile))

    def load_cluster(self, path: Union[str, Path]) -> ClusterSpec:
        cluster = cluster_from_document(_read_document(path, "cluster"))
        logger.debug("cluster_loaded", path=str(path), workers=cluster.n_workers,
                     architecture=cluster.architecture.value)
        return cluster

    def save_cluster(self, path: Union[str, Path], cluster: ClusterSpec) -> Path:
        return write_json(path, cluster_to_document(cluster))
