"""Record store tying the layers together.

One table (UserVisits-shaped records) in a heap of slotted pages, plus a
secondary index on source_ip kept as sorted immutable page segments merged
at commit. Page 0 of the data meta file is the catalog (heap extent, index
segment list, free extents), so every piece of engine state is crash
consistent through the same recovery path.

Sessions acquire the database lock, rebuild their log table index from log
block footers, and then run tuple operations; all page mutations flow
through the session's transaction store.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field

from .dfs import DfsCluster, DfsConfig
from .errors import (
    DatabaseFull,
    LockError,
    NotFound,
    RecordTooLarge,
    RecoveryError,
    ValueTooLong,
)
from .faults import NULL_INJECTOR, FaultInjector
from .locks import LockService, READ, WRITE
from .metafile import MetaDfsManager, PageConfig
from .pagefmt import PAGE_HEADER_SIZE
from .pages import SlottedPage
from .records import FIELD_LIMITS, UserVisitsRecord, pack_record, unpack_record
from .spdu_dfs import (
    DfsTransactionStore,
    create_data_meta,
    create_log_meta,
)

HEAP_START = 1  # page 0 is the catalog
MAX_INDEX_SEGMENTS = 4
KEY_WIDTH = 16

_CATALOG = struct.Struct("<IHIIIQHH")
# magic, version, total_pages, heap_used, index_floor, record_count,
# segment count, free extent count
_CATALOG_MAGIC = 0x31424457
_SEGMENT = struct.Struct("<IIQ")   # start page, page count, entry count
_EXTENT = struct.Struct("<II")     # start page, page count
_ENTRY = struct.Struct("<16sIH2x")  # key, pageid, slot
ENTRY_SIZE = _ENTRY.size


@dataclass
class IndexSegment:
    start: int
    pages: int
    entries: int


@dataclass
class Catalog:
    total_pages: int
    heap_used: int = 0
    index_floor: int = 0
    record_count: int = 0
    segments: list[IndexSegment] = field(default_factory=list)
    free_extents: list[tuple[int, int]] = field(default_factory=list)


def pack_catalog(catalog: Catalog, page_size: int) -> bytes:
    page = bytearray(page_size)
    pos = PAGE_HEADER_SIZE
    _CATALOG.pack_into(page, pos, _CATALOG_MAGIC, 1, catalog.total_pages,
                       catalog.heap_used, catalog.index_floor,
                       catalog.record_count, len(catalog.segments),
                       len(catalog.free_extents))
    pos += _CATALOG.size
    for seg in catalog.segments:
        _SEGMENT.pack_into(page, pos, seg.start, seg.pages, seg.entries)
        pos += _SEGMENT.size
    for start, pages in catalog.free_extents:
        _EXTENT.pack_into(page, pos, start, pages)
        pos += _EXTENT.size
    return bytes(page)


def parse_catalog(page: bytes) -> Catalog:
    pos = PAGE_HEADER_SIZE
    (magic, version, total_pages, heap_used, index_floor, record_count,
     seg_count, free_count) = _CATALOG.unpack_from(page, pos)
    if magic != _CATALOG_MAGIC:
        raise RecoveryError("catalog page has bad magic")
    if version != 1:
        raise RecoveryError(f"catalog version {version} not supported")
    pos += _CATALOG.size
    catalog = Catalog(total_pages, heap_used, index_floor, record_count)
    for _ in range(seg_count):
        catalog.segments.append(IndexSegment(*_SEGMENT.unpack_from(page, pos)))
        pos += _SEGMENT.size
    for _ in range(free_count):
        catalog.free_extents.append(_EXTENT.unpack_from(page, pos))
        pos += _EXTENT.size
    return catalog


def _pad_key(key: str) -> bytes:
    raw = key.encode("utf-8")
    if len(raw) > KEY_WIDTH:
        raise ValueTooLong(f"key longer than {KEY_WIDTH} bytes: {key!r}")
    return raw.ljust(KEY_WIDTH, b"\0")


@dataclass
class EngineConfig:
    page_size: int = 4096
    block_size: int = 64 * 1024
    replication: int = 3
    num_nodes: int = 4
    placement_seed: int = 0
    post_commit_threshold: int = 64
    deferred: bool = True
    latency: float = 0.0

    def dfs_config(self) -> DfsConfig:
        return DfsConfig(self.block_size, self.replication,
                         self.placement_seed, self.latency)

    def page_config(self) -> PageConfig:
        return PageConfig(self.page_size, self.block_size)


class Database:
    """Shared per-database state; make one Session per thread of control."""

    def __init__(self, manager: MetaDfsManager, name: str, total_pages: int,
                 post_commit_threshold: int = 64, deferred: bool = True,
                 locks: LockService | None = None,
                 faults: FaultInjector = NULL_INJECTOR):
        self.manager = manager
        self.name = name
        self.data_name = f"{name}/data"
        self.log_name = f"{name}/log"
        self.total_pages = total_pages
        self.post_commit_threshold = post_commit_threshold
        self.deferred = deferred
        self.locks = locks if locks is not None else LockService()
        self.faults = faults
        self._session_seq = 0
        self.data = manager.open_meta(self.data_name)
        self.log = manager.open_meta(self.log_name)

    # ------------------------------------------------------------------

    @classmethod
    def create(cls, cluster: DfsCluster, name: str, total_pages: int,
               page_size: int, post_commit_threshold: int = 64,
               deferred: bool = True, locks: LockService | None = None,
               faults: FaultInjector = NULL_INJECTOR) -> "Database":
        manager = MetaDfsManager(
            cluster, PageConfig(page_size, cluster.config.block_size_bytes))
        catalog = Catalog(total_pages=total_pages, heap_used=0,
                          index_floor=total_pages, record_count=0)
        create_data_meta(manager, f"{name}/data", total_pages,
                         {0: pack_catalog(catalog, page_size)})
        create_log_meta(manager, f"{name}/log")
        return cls(manager, name, total_pages, post_commit_threshold,
                   deferred, locks, faults)

    @classmethod
    def open(cls, cluster: DfsCluster, name: str, page_size: int,
             post_commit_threshold: int = 64, deferred: bool = True,
             locks: LockService | None = None,
             faults: FaultInjector = NULL_INJECTOR,
             recover: bool = True) -> "Database":
        manager = MetaDfsManager(
            cluster, PageConfig(page_size, cluster.config.block_size_bytes))
        if not manager.exists(f"{name}/data"):
            raise NotFound(f"no database: {name}")
        data = manager.open_meta(f"{name}/data")
        catalog = parse_catalog(manager.read_page(data, 0))
        db = cls(manager, name, catalog.total_pages, post_commit_threshold,
                 deferred, locks, faults)
        if recover:
            db.recover()
        return db

    def _bootstrap_store(self) -> DfsTransactionStore:
        return DfsTransactionStore(
            self.manager, self.data, self.log, self.total_pages,
            self.post_commit_threshold, self.deferred, self.faults)

    def needs_recovery(self) -> str | None:
        """"redo" if a batch was interrupted, "rollback" if the log has an
        uncommitted tail, else None."""
        store = self._bootstrap_store()
        if store._read_master():
            return "redo"
        blocks = self.log.block_count
        if blocks > 1:
            _, complete = store._read_footer(blocks - 1)
            if not complete:
                return "rollback"
        return None

    def recover(self) -> str:
        """Run restart processing; returns "redo", "rollback" or "clean"."""
        path = self.needs_recovery()
        self._bootstrap_store().restart_system()
        return path or "clean"

    def session(self, owner: str | None = None) -> "Session":
        self._session_seq += 1
        return Session(self, owner or f"session-{self._session_seq}")

    def run_maintenance(self) -> int:
        """Deferred post-commit outside any commit (the periodic trigger).

        Takes the write lock first, so the log tail is fully committed by
        the time the batch runs. Returns the number of data-block remakes.
        """
        session = self.session("maintenance")
        session.begin(WRITE)
        try:
            return session.store.batch_post_commit()
        finally:
            session.abort()


class Session:
    """One transaction stream: private buffer, index, and page cache."""

    def __init__(self, db: Database, owner: str):
        self.db = db
        self.owner = owner
        self.store = db._bootstrap_store()
        self.page_size = db.manager.page_config.page_size
        self._entries_per_page = \
            (self.page_size - PAGE_HEADER_SIZE) // ENTRY_SIZE
        self.mode: str | None = None
        self.lockid: int | None = None
        self.catalog: Catalog | None = None
        self._cache: dict[int, bytearray] = {}
        self._dirty: set[int] = set()
        self._pending_index: list[tuple[bytes, int, int]] = []
        self.page_reads = 0
        self.page_writes = 0

    # ------------------------------------------------------------------
    # Locking / transaction boundaries
    # ------------------------------------------------------------------

    def begin(self, mode: str) -> None:
        if self.mode is not None:
            raise LockError(f"session {self.owner} already holds a lock")
        if mode not in (READ, WRITE):
            raise ValueError(f"bad mode: {mode}")
        self.lockid = self.db.locks.request_lock(
            self.db.data_name, mode, self.owner)
        self.mode = mode
        self.store.reconstruct_log_table_index()
        self._cache.clear()
        self._dirty.clear()
        self._pending_index.clear()
        self.catalog = parse_catalog(bytes(self._get_page(0)))

    def commit(self) -> None:
        if self.mode is None:
            raise LockError("no transaction in progress")
        if self.mode == READ:
            self._end()
            return
        try:
            if self._pending_index:
                self._flush_index_entries()
            self._put_page(0, pack_catalog(self.catalog, self.page_size))
            for pageid in sorted(self._dirty):
                self.store.write_page(pageid, bytes(self._cache[pageid]))
                self.page_writes += 1
            self.store.commit_transaction()
        finally:
            self._end()

    def abort(self) -> None:
        if self.mode is None:
            raise LockError("no transaction in progress")
        if self.mode == WRITE:
            self.store.abort_transaction()
        self._end()

    def _end(self) -> None:
        self.db.locks.release_lock(self.db.data_name, self.lockid)
        self.mode = None
        self.lockid = None
        self.catalog = None
        self._cache.clear()
        self._dirty.clear()
        self._pending_index.clear()

    def _require_lock(self, write: bool = False) -> None:
        if self.mode is None:
            raise LockError("operation requires a lock")
        if write and self.mode != WRITE:
            raise LockError("operation requires the write lock")

    def index_snapshot(self) -> dict[int, tuple[int, int]]:
        """The session's reconstructed log table index (observability)."""
        return dict(self.store.index)

    # ------------------------------------------------------------------
    # Page cache
    # ------------------------------------------------------------------

    def _get_page(self, pageid: int) -> bytearray:
        page = self._cache.get(pageid)
        if page is None:
            page = bytearray(self.store.read_page(pageid))
            self._cache[pageid] = page
            self.page_reads += 1
        return page

    def _fresh_page(self, pageid: int) -> bytearray:
        page = bytearray(self.page_size)
        self._cache[pageid] = page
        self._dirty.add(pageid)
        return page

    def _put_page(self, pageid: int, content: bytes) -> None:
        self._cache[pageid] = bytearray(content)
        self._dirty.add(pageid)

    # ------------------------------------------------------------------
    # Record operations
    # ------------------------------------------------------------------

    def insert_record(self, record: UserVisitsRecord) -> tuple[int, int]:
        self._require_lock(write=True)
        raw = pack_record(record)
        cat = self.catalog
        if cat.heap_used:
            tail = HEAP_START + cat.heap_used - 1
            page = SlottedPage(self._get_page(tail))
            slot = page.try_insert(raw)
            if slot is not None:
                self._dirty.add(tail)
                return self._register_insert(record, tail, slot)
        pageid = HEAP_START + cat.heap_used
        if pageid >= cat.index_floor or pageid >= cat.total_pages:
            raise DatabaseFull(
                f"heap page {pageid} collides with index space")
        page = SlottedPage(self._fresh_page(pageid))
        slot = page.try_insert(raw)
        if slot is None:
            raise RecordTooLarge(
                f"{len(raw)}-byte record exceeds empty page capacity")
        cat.heap_used += 1
        return self._register_insert(record, pageid, slot)

    def _register_insert(self, record: UserVisitsRecord, pageid: int,
                         slot: int) -> tuple[int, int]:
        self._pending_index.append((_pad_key(record.source_ip), pageid, slot))
        self.catalog.record_count += 1
        return (pageid, slot)

    def scan(self, limit: int) -> list[UserVisitsRecord]:
        return [record for _, record in self._scan_entries(limit)]

    def _scan_entries(self, limit: int | None = None
                      ) -> list[tuple[tuple[int, int], UserVisitsRecord]]:
        self._require_lock()
        out = []
        for i in range(self.catalog.heap_used):
            if limit is not None and len(out) >= limit:
                break
            pageid = HEAP_START + i
            page = SlottedPage(self._get_page(pageid))
            for slot in range(page.count):
                if limit is not None and len(out) >= limit:
                    break
                out.append(((pageid, slot), unpack_record(page.record(slot))))
        return out

    def select_by_key(self, source_ip: str, use_index: bool
                      ) -> list[UserVisitsRecord]:
        self._require_lock()
        if not use_index:
            return [record for _, record in self._scan_entries()
                    if record.source_ip == source_ip]
        return [self._fetch(rid) for rid in self._index_lookup(source_ip)]

    def update_by_key(self, source_ip: str, new_country_code: str,
                      use_index: bool) -> int:
        self._require_lock(write=True)
        if len(new_country_code.encode("utf-8")) > FIELD_LIMITS["country_code"]:
            raise ValueTooLong(f"country code too long: {new_country_code!r}")
        if use_index:
            rids = self._index_lookup(source_ip)
        else:
            rids = [rid for rid, record in self._scan_entries()
                    if record.source_ip == source_ip]
        for pageid, slot in rids:
            page = SlottedPage(self._get_page(pageid))
            record = unpack_record(page.record(slot))
            record.country_code = new_country_code
            page.replace(slot, pack_record(record))
            self._dirty.add(pageid)
        return len(rids)

    def _fetch(self, rid: tuple[int, int]) -> UserVisitsRecord:
        pageid, slot = rid
        return unpack_record(SlottedPage(self._get_page(pageid)).record(slot))

    # ------------------------------------------------------------------
    # Secondary index
    # ------------------------------------------------------------------

    def _entry_at(self, seg: IndexSegment, i: int) -> tuple[bytes, int, int]:
        page = self._get_page(seg.start + i // self._entries_per_page)
        offset = PAGE_HEADER_SIZE + (i % self._entries_per_page) * ENTRY_SIZE
        key, pageid, slot = _ENTRY.unpack_from(page, offset)
        return key, pageid, slot

    def _index_lookup(self, source_ip: str) -> list[tuple[int, int]]:
        key = _pad_key(source_ip)
        rids = []
        for seg in self.catalog.segments:
            lo, hi = 0, seg.entries
            while lo < hi:
                mid = (lo + hi) // 2
                if self._entry_at(seg, mid)[0] < key:
                    lo = mid + 1
                else:
                    hi = mid
            i = lo
            while i < seg.entries:
                entry_key, pageid, slot = self._entry_at(seg, i)
                if entry_key != key:
                    break
                rids.append((pageid, slot))
                i += 1
        for entry_key, pageid, slot in self._pending_index:
            if entry_key == key:
                rids.append((pageid, slot))
        return sorted(set(rids))

    def _flush_index_entries(self) -> None:
        new_entries = sorted(self._pending_index)
        cat = self.catalog
        if len(cat.segments) + 1 > MAX_INDEX_SEGMENTS:
            streams = [self._segment_entries(seg) for seg in cat.segments]
            streams.append(iter(new_entries))
            total = sum(seg.entries for seg in cat.segments) + len(new_entries)
            merged = self._write_segment(heapq.merge(*streams), total)
            for seg in cat.segments:
                cat.free_extents.append((seg.start, seg.pages))
            cat.segments = [merged]
            self._coalesce_free_extents()
        else:
            cat.segments.append(
                self._write_segment(iter(new_entries), len(new_entries)))
        self._pending_index = []

    def _coalesce_free_extents(self) -> None:
        # keeps the catalog page bounded: adjacent extents merge, and past
        # a cap the smallest are leaked rather than tracked
        cat = self.catalog
        merged: list[tuple[int, int]] = []
        for start, pages in sorted(cat.free_extents):
            if merged and merged[-1][0] + merged[-1][1] == start:
                merged[-1] = (merged[-1][0], merged[-1][1] + pages)
            else:
                merged.append((start, pages))
        if len(merged) > 32:
            merged = sorted(merged, key=lambda e: e[1], reverse=True)[:32]
            merged.sort()
        cat.free_extents = merged

    def _segment_entries(self, seg: IndexSegment):
        for i in range(seg.entries):
            yield self._entry_at(seg, i)

    def _write_segment(self, entries, count: int) -> IndexSegment:
        pages = max(1, -(-count // self._entries_per_page))
        start = self._alloc_extent(pages)
        written = 0
        page = bytearray(self.page_size)
        pageid = start
        for key, rid_page, rid_slot in entries:
            offset = PAGE_HEADER_SIZE + \
                (written % self._entries_per_page) * ENTRY_SIZE
            _ENTRY.pack_into(page, offset, key, rid_page, rid_slot)
            written += 1
            if written % self._entries_per_page == 0:
                self._put_page(pageid, bytes(page))
                page = bytearray(self.page_size)
                pageid += 1
        if written % self._entries_per_page or written == 0:
            self._put_page(pageid, bytes(page))
        assert written == count
        return IndexSegment(start, pages, count)

    def _alloc_extent(self, pages: int) -> int:
        cat = self.catalog
        for i, (start, free_pages) in enumerate(cat.free_extents):
            if free_pages >= pages:
                if free_pages == pages:
                    del cat.free_extents[i]
                else:
                    cat.free_extents[i] = (start + pages, free_pages - pages)
                return start
        floor = cat.index_floor - pages
        if floor < HEAP_START + cat.heap_used:
            raise DatabaseFull(
                f"index extent of {pages} pages collides with heap")
        cat.index_floor = floor
        return floor
