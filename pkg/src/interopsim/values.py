"""Scalar value model and its canonical byte encoding.

Every value a contract can store or pass is one of five scalars:
None, bool, int (signed 64-bit), str, bytes.  The encoding is a tag
byte (0=Null, 1=Bool, 2=Int64 big-endian two's complement, 3=Str,
4=Bytes); Str/Bytes carry a 4-byte big-endian length plus payload.
Digests are SHA-256, always 32 bytes.
"""

from __future__ import annotations

import hashlib
from typing import Union

Value = Union[None, bool, int, str, bytes]

TAG_NULL = 0
TAG_BOOL = 1
TAG_INT = 2
TAG_STR = 3
TAG_BYTES = 4

INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1

from .errors import EncodingError


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def encode_value(v: Value) -> bytes:
    # bool first: bool is a subclass of int
    if v is None:
        return bytes([TAG_NULL])
    if isinstance(v, bool):
        return bytes([TAG_BOOL, 1 if v else 0])
    if isinstance(v, int):
        if not INT64_MIN <= v <= INT64_MAX:
            raise EncodingError(f"integer out of 64-bit range: {v}")
        return bytes([TAG_INT]) + (v & ((1 << 64) - 1)).to_bytes(8, "big")
    if isinstance(v, str):
        raw = v.encode("utf-8")
        return bytes([TAG_STR]) + len(raw).to_bytes(4, "big") + raw
    if isinstance(v, bytes):
        return bytes([TAG_BYTES]) + len(v).to_bytes(4, "big") + v
    raise EncodingError(f"unsupported value type: {type(v).__name__}")


def decode_value(data: bytes, offset: int = 0) -> tuple[Value, int]:
    """Decode one value; returns (value, next_offset)."""
    if offset >= len(data):
        raise EncodingError("truncated value")
    tag = data[offset]
    offset += 1
    if tag == TAG_NULL:
        return None, offset
    if tag == TAG_BOOL:
        if offset >= len(data):
            raise EncodingError("truncated bool")
        return data[offset] != 0, offset + 1
    if tag == TAG_INT:
        if offset + 8 > len(data):
            raise EncodingError("truncated int64")
        raw = int.from_bytes(data[offset : offset + 8], "big")
        if raw >= 1 << 63:
            raw -= 1 << 64
        return raw, offset + 8
    if tag in (TAG_STR, TAG_BYTES):
        if offset + 4 > len(data):
            raise EncodingError("truncated length")
        n = int.from_bytes(data[offset : offset + 4], "big")
        offset += 4
        if offset + n > len(data):
            raise EncodingError("truncated payload")
        payload = data[offset : offset + n]
        offset += n
        if tag == TAG_STR:
            try:
                return payload.decode("utf-8"), offset
            except UnicodeDecodeError as exc:
                raise EncodingError("invalid utf-8") from exc
        return payload, offset
    raise EncodingError(f"unknown value tag {tag}")


def decode_one(data: bytes) -> Value:
    v, end = decode_value(data, 0)
    if end != len(data):
        raise EncodingError("trailing bytes after value")
    return v


def encode_values(vs: list[Value]) -> bytes:
    out = [len(vs).to_bytes(4, "big")]
    out.extend(encode_value(v) for v in vs)
    return b"".join(out)


def decode_values(data: bytes, offset: int = 0) -> tuple[list[Value], int]:
    if offset + 4 > len(data):
        raise EncodingError("truncated value list")
    n = int.from_bytes(data[offset : offset + 4], "big")
    offset += 4
    out = []
    for _ in range(n):
        v, offset = decode_value(data, offset)
        out.append(v)
    return out, offset


def lp(raw: bytes) -> bytes:
    """4-byte big-endian length prefix."""
    return len(raw).to_bytes(4, "big") + raw


def lps(s: str) -> bytes:
    return lp(s.encode("utf-8"))


def read_lp(data: bytes, offset: int) -> tuple[bytes, int]:
    if offset + 4 > len(data):
        raise EncodingError("truncated length prefix")
    n = int.from_bytes(data[offset : offset + 4], "big")
    offset += 4
    if offset + n > len(data):
        raise EncodingError("truncated field")
    return data[offset : offset + n], offset + n


def read_lps(data: bytes, offset: int) -> tuple[str, int]:
    raw, offset = read_lp(data, offset)
    try:
        return raw.decode("utf-8"), offset
    except UnicodeDecodeError as exc:
        raise EncodingError("invalid utf-8") from exc
