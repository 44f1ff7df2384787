"""Replayable run log: deterministic JSON lines with an end checksum."""

from __future__ import annotations

import base64
import hashlib
import json
from .errors import CorruptLog
from .values import Value


def value_to_jsonable(v: Value):
    if isinstance(v, bytes):
        return {"__bytes__": base64.b64encode(v).decode("ascii")}
    return v


def value_from_jsonable(v):
    if isinstance(v, dict) and "__bytes__" in v:
        return base64.b64decode(v["__bytes__"])
    return v


class RunLog:
    """Accumulates records in memory; dump() writes the checksummed file."""

    def __init__(self):
        self.records: list[dict] = []

    def record(self, kind: str, **fields) -> None:
        entry = {"kind": kind}
        entry.update(fields)
        self.records.append(entry)

    def lines(self) -> list[str]:
        out = [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self.records]
        h = hashlib.sha256()
        for line in out:
            h.update(line.encode("utf-8"))
            h.update(b"\n")
        out.append(
            json.dumps(
                {"kind": "end", "lines": len(out), "sha256": h.hexdigest()},
                sort_keys=True,
                separators=(",", ":"),
            )
        )
        return out

    def dump(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.lines():
                fh.write(line)
                fh.write("\n")


def load_log(path: str) -> list[dict]:
    """Read and verify a run log; raises CorruptLog on any defect."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw_lines = [line.rstrip("\n") for line in fh if line.strip()]
    except OSError as exc:
        raise CorruptLog(f"unreadable log: {exc}")
    if not raw_lines:
        raise CorruptLog("empty log")
    try:
        records = [json.loads(line) for line in raw_lines]
    except json.JSONDecodeError as exc:
        raise CorruptLog(f"bad json: {exc}")
    end = records[-1]
    if end.get("kind") != "end":
        raise CorruptLog("missing end record (truncated log)")
    body = raw_lines[:-1]
    if end.get("lines") != len(body):
        raise CorruptLog("line count mismatch")
    h = hashlib.sha256()
    for line in body:
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    if end.get("sha256") != h.hexdigest():
        raise CorruptLog("checksum mismatch")
    return records[:-1]
