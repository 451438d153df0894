"""Slotted heap pages.

A slotted page lives in the application area of a page (after the 16-byte
recovery header): a 4-byte page header (slot count, data start), a slot
directory growing upward, and record payloads packed downward from the
page end. An all-zero page reads as an empty page.
"""

from __future__ import annotations

import struct

from .errors import RecordTooLarge
from .pagefmt import PAGE_HEADER_SIZE

_PAGE_HDR = struct.Struct("<HH")  # slot count, data region start
_SLOT = struct.Struct("<HH")      # record offset, record length
_HDR_AT = PAGE_HEADER_SIZE
_SLOTS_AT = PAGE_HEADER_SIZE + _PAGE_HDR.size


class SlottedPage:
    """View over one page buffer; mutations write through to the buffer."""

    def __init__(self, buf: bytearray):
        self.buf = buf
        count, data_start = _PAGE_HDR.unpack_from(buf, _HDR_AT)
        if count == 0 and data_start == 0:
            data_start = len(buf)  # fresh (all-zero) page
        self.count = count
        self.data_start = data_start

    def _store_header(self) -> None:
        _PAGE_HDR.pack_into(self.buf, _HDR_AT, self.count, self.data_start)

    def free_space(self) -> int:
        return self.data_start - (_SLOTS_AT + _SLOT.size * self.count)

    def try_insert(self, record: bytes) -> int | None:
        """Add a record; returns its slot, or None if it does not fit."""
        need = len(record) + _SLOT.size
        if need > self.free_space():
            return None
        offset = self.data_start - len(record)
        self.buf[offset:offset + len(record)] = record
        _SLOT.pack_into(self.buf, _SLOTS_AT + _SLOT.size * self.count,
                        offset, len(record))
        slot = self.count
        self.count += 1
        self.data_start = offset
        self._store_header()
        return slot

    def record(self, slot: int) -> bytes:
        if not 0 <= slot < self.count:
            raise IndexError(f"slot {slot} of {self.count}")
        offset, length = _SLOT.unpack_from(self.buf,
                                           _SLOTS_AT + _SLOT.size * slot)
        return bytes(self.buf[offset:offset + length])

    def records(self) -> list[bytes]:
        return [self.record(slot) for slot in range(self.count)]

    def replace(self, slot: int, record: bytes) -> None:
        """Rewrite one record, compacting the page. Raises RecordTooLarge
        if the new version does not fit even after compaction."""
        contents = self.records()
        contents[slot] = record
        total = sum(len(r) for r in contents)
        used = _SLOTS_AT + _SLOT.size * len(contents) + total
        if used > len(self.buf):
            raise RecordTooLarge(
                f"record of {len(record)} bytes does not fit in page")
        self.buf[_HDR_AT:] = bytes(len(self.buf) - _HDR_AT)
        self.count = 0
        self.data_start = len(self.buf)
        self._store_header()
        for item in contents:
            self.try_insert(item)
