"""
Exception hierarchy for the simulator, meta-network, tuners, controller and harness.
"""

from typing import Any, Optional


class AutoByteError(Exception):
    """Base class for every error raised deliberately by this package."""


class WorkloadError(AutoByteError):
    """A profile, cluster or trace document failed to parse or validate."""


class ConfigurationError(AutoByteError):
    """A scheduler configuration, scenario or collection spec is invalid."""


class ShapeMismatchError(AutoByteError):
    """Meta-network parameters and features disagree on dimensions."""


class TrainingDivergedError(AutoByteError):
    """The training loss became non-finite."""

    def __init__(self, message: str, epoch: int = -1, step: int = -1):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class ReconfigurationError(AutoByteError):
    """A reconfiguration request violated its preconditions; controller state is unchanged."""


class EvaluatorError(AutoByteError):
    """A tuner's evaluator failed; the partial report gathered so far is attached."""

    def __init__(self, message: str, partial_report: Optional[Any] = None):
        super().__init__(message)
        self.partial_report = partial_report


class ScenarioError(AutoByteError):
    """A harness pipeline failed; the message names the scenario."""

    def __init__(self, scenario: str, message: str):
        super().__init__(f"scenario {scenario!r}: {message}")
        self.scenario = scenario
