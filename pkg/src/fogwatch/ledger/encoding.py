"""Canonical length-prefixed big-endian encoding shared by all nodes.

Every field is a u32 length prefix followed by the raw bytes; integers are
8-byte big-endian before prefixing. The same bytes hash to the same digest on
every platform, which is what makes the chain's golden vectors stable.
"""

from __future__ import annotations

import struct


class DecodeError(ValueError):
    pass


def field(b: bytes) -> bytes:
    return struct.pack(">I", len(b)) + b


def u64(n: int) -> bytes:
    return struct.pack(">Q", n)


class Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError("truncated input")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def field(self) -> bytes:
        (n,) = struct.unpack(">I", self.take(4))
        return self.take(n)

    def u64_field(self) -> int:
        b = self.field()
        if len(b) != 8:
            raise DecodeError(f"expected u64 field, got {len(b)} bytes")
        return struct.unpack(">Q", b)[0]

    def str_field(self) -> str:
        try:
            return self.field().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("field is not utf-8") from exc

    def done(self) -> bool:
        return self.pos == len(self.data)

    def expect_done(self) -> None:
        if not self.done():
            raise DecodeError(f"{len(self.data) - self.pos} trailing bytes")
