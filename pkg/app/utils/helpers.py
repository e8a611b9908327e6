"""
Helper functions and utilities used throughout the application.
Includes enums, formatters, parsers and validators for sizes, bandwidths and scheduler configurations.
"""

import math
import re
from enum import Enum
from typing import List, Tuple

import structlog

logger = structlog.get_logger(__name__)


KIB = 1024
MIB = 1024 * 1024
GIB = 1024 * 1024 * 1024

# Model types known to the meta-network's lookup table; anything else maps to "other".
MODEL_VOCAB: Tuple[str, ...] = ("alexnet", "resnet50", "vgg16", "other")


class ArchitectureEnum(str, Enum):
    """Gradient synchronization architecture."""
    PARAMETER_SERVER = "ps"
    RING_ALL_REDUCE = "ring"

    @classmethod
    def values(cls) -> List[str]:
        """Get list of all architecture values."""
        return [arch.value for arch in cls]


class EventKindEnum(str, Enum):
    """Simulator event kinds, declared in same-instant processing order."""
    CHUNK_FINISH = "chunk_finish"
    FP_END = "fp_end"
    BP_FINISH = "bp_finish"
    CHUNK_ADMIT = "chunk_admit"
    TRANSFER_START = "transfer_start"
    FP_START = "fp_start"

    @property
    def rank(self) -> int:
        return _EVENT_RANK[self]


_EVENT_RANK = {kind: position for position, kind in enumerate(EventKindEnum)}


class ActionKindEnum(str, Enum):
    """Optimization trigger decisions."""
    KEEP = "keep"
    RECONFIGURE = "reconfigure"
    ADAPT_THEN_DECIDE = "adapt_then_decide"


class TunerEnum(str, Enum):
    """Configuration strategies selectable by a scenario."""
    NONE = "none"          # vanilla framework, scheduling disabled
    DEFAULT = "default"    # fixed default <160KB, 1X>
    GRID = "grid"
    BO = "bo"
    META = "meta"

    @classmethod
    def parse_list(cls, text: str) -> List["TunerEnum"]:
        """Parse a comma separated tuner list such as 'grid,bo,meta'."""
        names = [part.strip().lower() for part in text.split(",") if part.strip()]
        if not names:
            raise ValueError("tuner list is empty")
        try:
            return [cls(name) for name in names]
        except ValueError:
            raise ValueError(f"unknown tuner in {text!r}; expected any of {[t.value for t in cls]}")


def one_hot(index: int, size: int) -> Tuple[float, ...]:
    """One-hot vector of the given size as a tuple of floats."""
    return tuple(1.0 if position == index else 0.0 for position in range(size))


def model_vocab_index(name: str) -> int:
    """Position of a model name in the lookup vocabulary (unknown names share the last slot)."""
    key = name.strip().lower()
    if key in MODEL_VOCAB:
        return MODEL_VOCAB.index(key)
    return len(MODEL_VOCAB) - 1


def arch_vocab_index(architecture: ArchitectureEnum) -> int:
    """Position of an architecture in the lookup vocabulary."""
    return list(ArchitectureEnum).index(ArchitectureEnum(architecture))


_SIZE_PATTERN = re.compile(r"^\s*([0-9]*\.?[0-9]+)\s*([kmgt]?i?b?)?\s*$", re.IGNORECASE)
_SIZE_UNITS = {"": 1, "b": 1, "k": KIB, "kb": KIB, "kib": KIB, "m": MIB, "mb": MIB, "mib": MIB,
               "g": GIB, "gb": GIB, "gib": GIB}


def parse_size(text: str) -> int:
    """
    Parse a byte size such as '4MB', '512KB' or '65536'.
    Units are binary (1 KB = 1024 bytes), matching the 4KB..1024MB partition grid.
    """
    match = _SIZE_PATTERN.match(str(text))
    if not match:
        raise ValueError(f"invalid size: {text!r}")
    number, unit = match.group(1), (match.group(2) or "").lower()
    if unit not in _SIZE_UNITS:
        raise ValueError(f"invalid size unit in {text!r}")
    return int(round(float(number) * _SIZE_UNITS[unit]))


def format_bytes(num_bytes: float) -> str:
    """Format a byte count with the largest binary unit that keeps it readable."""
    if num_bytes >= GIB and num_bytes % GIB == 0:
        return f"{int(num_bytes // GIB)}GB"
    if num_bytes >= MIB:
        value = num_bytes / MIB
        return f"{value:g}MB"
    if num_bytes >= KIB:
        value = num_bytes / KIB
        return f"{value:g}KB"
    return f"{int(num_bytes)}B"


def parse_config_pair(text: str) -> Tuple[int, int]:
    """Parse 'SP,SC' (e.g. '4MB,2' or '4194304,2X') into (partition_bytes, credit_multiplier)."""
    parts = [part.strip() for part in str(text).split(",")]
    if len(parts) != 2:
        raise ValueError(f"config must be written as SP,SC, got {text!r}")
    credit_text = parts[1].upper().rstrip("X")
    try:
        credit = int(credit_text)
    except ValueError:
        raise ValueError(f"invalid credit multiplier in {text!r}")
    return parse_size(parts[0]), credit


def parse_float_list(text: str) -> List[float]:
    """Parse a comma separated list of floats such as '3,10,20'."""
    values = [float(part) for part in str(text).split(",") if part.strip()]
    if not values:
        raise ValueError("empty list")
    return values


def gbps_to_bytes_per_second(gbps: float) -> float:
    """Convert link rate in Gbit/s to bytes per second."""
    return gbps / 8.0 * 1e9


def harmonic_rate(up_gbps: float, down_gbps: float) -> float:
    """Rate r such that 2 bytes / r equals bytes / up + bytes / down."""
    if math.isinf(up_gbps) and math.isinf(down_gbps):
        return math.inf
    return 2.0 / (1.0 / up_gbps + 1.0 / down_gbps)


def powers_of_two(low: int, high: int) -> List[int]:
    """All powers of two in [low, high]."""
    values = []
    exponent = max(0, math.ceil(math.log2(low)))
    while 2 ** exponent <= high:
        values.append(2 ** exponent)
        exponent += 1
    return values
