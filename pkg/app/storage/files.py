"""
File storage helpers.
JSON documents are encoded with orjson (sorted keys, so equal data gives equal bytes);
bulk outputs are written asynchronously with aiofiles.
"""

import csv
import io
from pathlib import Path
from typing import Any, Iterable, Iterator, List, Sequence, Union

import aiofiles
import orjson
import structlog

logger = structlog.get_logger(__name__)

PathLike = Union[str, Path]

_JSON_OPTIONS = orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY
_PRETTY_OPTIONS = _JSON_OPTIONS | orjson.OPT_INDENT_2


def dumps(obj: Any, pretty: bool = False) -> bytes:
    """Encode obj as JSON bytes with sorted keys."""
    return orjson.dumps(obj, option=_PRETTY_OPTIONS if pretty else _JSON_OPTIONS)


def loads(data: Union[bytes, str]) -> Any:
    return orjson.loads(data)


def ensure_parent(path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def read_json(path: PathLike) -> Any:
    """Read one JSON document."""
    with open(path, "rb") as handle:
        return orjson.loads(handle.read())


def write_json(path: PathLike, obj: Any, pretty: bool = True) -> Path:
    """Write one JSON document, creating parent directories."""
    target = ensure_parent(path)
    with open(target, "wb") as handle:
        handle.write(dumps(obj, pretty=pretty))
        if pretty:
            handle.write(b"\n")
    logger.debug("json_written", path=str(target))
    return target


def iter_jsonl(path: PathLike) -> Iterator[Any]:
    """Yield the records of a JSON-lines file, skipping blank lines."""
    with open(path, "rb") as handle:
        for line in handle:
            line = line.strip()
            if line:
                yield orjson.loads(line)


def encode_jsonl(records: Iterable[Any]) -> bytes:
    return b"".join(dumps(record) + b"\n" for record in records)


def encode_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return buffer.getvalue()


def read_csv(path: PathLike) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    target = ensure_parent(path)
    with open(target, "w", encoding="utf-8", newline="") as handle:
        handle.write(encode_csv(header, rows))
    logger.debug("csv_written", path=str(target))
    return target


async def write_bytes_async(path: PathLike, data: bytes) -> Path:
    target = ensure_parent(path)
    async with aiofiles.open(target, "wb") as handle:
        await handle.write(data)
    logger.debug("file_written", path=str(target), size=len(data))
    return target


async def write_json_async(path: PathLike, obj: Any, pretty: bool = True) -> Path:
    data = dumps(obj, pretty=pretty) + (b"\n" if pretty else b"")
    return await write_bytes_async(path, data)


async def write_jsonl_async(path: PathLike, records: Iterable[Any]) -> Path:
    return await write_bytes_async(path, encode_jsonl(records))


async def write_csv_async(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    return await write_bytes_async(path, encode_csv(header, rows).encode("utf-8"))
