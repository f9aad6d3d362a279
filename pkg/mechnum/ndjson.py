from __future__ import annotations

import json
from typing import IO, Any, Iterable, Iterator, Mapping


def write_ndjson(records: Iterable[Mapping[str, Any]], fh: IO[str]) -> int:
    count = 0
    for record in records:
        fh.write(json.dumps(record, sort_keys=True))
        fh.write("\n")
        count += 1
    return count


def iter_ndjson_objects(chunks: Iterable[bytes | str]) -> Iterator[dict]:
    """Yield JSON objects from line-delimited text, skipping lines that never parse.

    An object split across chunks is buffered until it parses; blank lines
    and non-object lines are ignored.
    """
    buffer = ""
    for chunk in chunks:
        text = chunk.decode("utf-8", errors="ignore") if isinstance(chunk, (bytes, bytearray)) else str(chunk)
        for line in text.split("\n"):
            if not buffer and not line.lstrip().startswith("{"):
                continue
            buffer += line
            try:
                obj = json.loads(buffer)
            except json.JSONDecodeError:
                continue
            buffer = ""
            if isinstance(obj, dict):
                yield obj


def read_ndjson(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return list(iter_ndjson_objects(fh))
