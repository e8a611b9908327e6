"""
Scenario repository.
Scenario and collection-spec documents; file references inside them are resolved
relative to the document's own directory.
"""

from pathlib import Path
from typing import Any, Type, TypeVar, Union

import orjson
import structlog
from pydantic import BaseModel, ValidationError

from app.models.harness import CollectSpec, Scenario
from app.storage.files import read_json
from app.utils.errors import ConfigurationError

logger = structlog.get_logger(__name__)

DocumentT = TypeVar("DocumentT", bound=BaseModel)


def _load(path: Union[str, Path], model: Type[DocumentT], what: str) -> DocumentT:
    path = Path(path)
    try:
        document: Any = read_json(path)
    except FileNotFoundError:
        raise ConfigurationError(f"{what} file not found: {path}")
    except orjson.JSONDecodeError as e:
        raise ConfigurationError(f"{what} file {path} is not valid JSON: {e}")
    if not isinstance(document, dict):
        raise ConfigurationError(f"{what} file {path} must hold a JSON object")
    document.setdefault("base_dir", str(path.parent))
    try:
        return model.model_validate(document)
    except ValidationError as e:
        error = e.errors()[0]
        location = ".".join(str(part) for part in error["loc"])
        raise ConfigurationError(f"{what} {path}: {location}: {error['msg']}")


class ScenarioRepository:
    """Loads scenarios and collection specs and checks their file references."""

    def load_scenario(self, path: Union[str, Path]) -> Scenario:
        scenario = _load(path, Scenario, "scenario")
        for reference in (scenario.profile, scenario.cluster, scenario.trace):
            if not scenario.resolve(reference).is_file():
                raise ConfigurationError(f"scenario {scenario.name!r} references a missing file: {reference}")
        logger.debug("scenario_loaded", path=str(path), name=scenario.name, tuner=scenario.tuner.value)
        return scenario

    def load_collect_spec(self, path: Union[str, Path]) -> CollectSpec:
        spec = _load(path, CollectSpec, "collect spec")
        for reference in spec.profiles:
            if not spec.resolve(reference).is_file():
                raise ConfigurationError(f"collect spec references a missing profile: {reference}")
        return spec
