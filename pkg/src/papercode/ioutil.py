"""Shared I/O plumbing: line-delimited records, stable JSON, content digests."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Iterator


class ValidationError(Exception):
    """Input failed schema or precondition checks."""


class DependencyError(Exception):
    """A pipeline stage was run before the artifacts it depends on exist."""


def dumps_record(record: dict[str, Any]) -> str:
    """One record, one line: compact, key-sorted, UTF-8-friendly JSON."""
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_records(path: Path, records: Iterable[dict[str, Any]]) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(dumps_record(record))
            fh.write("\n")
            n += 1
    return n


def read_records(path: Path) -> Iterator[dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed record: {exc}") from exc
            if not isinstance(record, dict):
                raise ValidationError(f"{path}:{lineno}: record is not an object")
            yield record


def load_records(path: Path) -> list[dict[str, Any]]:
    return list(read_records(path))


def dump_json_stable(obj: Any) -> str:
    """Indented, key-sorted JSON with a trailing newline; byte-stable round trips."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + "\n"


def write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json_stable(obj), encoding="utf-8")


def read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON: {exc}") from exc


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def digest_of(obj: Any) -> str:
    """Content digest of any JSON-serializable object (16 hex chars)."""
    canonical = json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return sha256_hex(canonical)[:16]


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def stable_id(*parts: str, prefix: str = "", length: int = 16) -> str:
    """Deterministic short identifier from the given parts."""
    return prefix + sha256_hex("|".join(parts))[:length]
