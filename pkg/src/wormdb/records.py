"""The UserVisits record type and its wire format.

Serialization is fixed-order and length-prefixed with little-endian
integers so that identical logical content is bit-identical across runs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from datetime import date

from .errors import ValueTooLong

_U16 = struct.Struct("<H")
_DATE = struct.Struct("<I")
_F64 = struct.Struct("<d")
_I32 = struct.Struct("<i")

FIELD_LIMITS = {
    "source_ip": 16,
    "dest_url": 100,
    "user_agent": 64,
    "country_code": 3,
    "language_code": 6,
    "search_word": 32,
}


@dataclass
class UserVisitsRecord:
    source_ip: str
    dest_url: str
    visit_date: date
    ad_revenue: float
    user_agent: str
    country_code: str
    language_code: str
    search_word: str
    duration: int

    def validate(self) -> None:
        for name, limit in FIELD_LIMITS.items():
            value = getattr(self, name)
            if len(value.encode("utf-8")) > limit:
                raise ValueTooLong(
                    f"{name} longer than {limit} bytes: {value!r}")


def _pack_str(value: str) -> bytes:
    raw = value.encode("utf-8")
    return _U16.pack(len(raw)) + raw


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, size: int) -> bytes:
        chunk = self.raw[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def string(self) -> str:
        (length,) = _U16.unpack(self.take(2))
        return self.take(length).decode("utf-8")


def pack_record(record: UserVisitsRecord) -> bytes:
    record.validate()
    return b"".join([
        _pack_str(record.source_ip),
        _pack_str(record.dest_url),
        _DATE.pack(record.visit_date.toordinal()),
        _F64.pack(record.ad_revenue),
        _pack_str(record.user_agent),
        _pack_str(record.country_code),
        _pack_str(record.language_code),
        _pack_str(record.search_word),
        _I32.pack(record.duration),
    ])


def unpack_record(raw: bytes) -> UserVisitsRecord:
    r = _Reader(raw)
    source_ip = r.string()
    dest_url = r.string()
    visit_date = date.fromordinal(_DATE.unpack(r.take(4))[0])
    ad_revenue = _F64.unpack(r.take(8))[0]
    user_agent = r.string()
    country_code = r.string()
    language_code = r.string()
    search_word = r.string()
    duration = _I32.unpack(r.take(4))[0]
    return UserVisitsRecord(source_ip, dest_url, visit_date, ad_revenue,
                            user_agent, country_code, language_code,
                            search_word, duration)
