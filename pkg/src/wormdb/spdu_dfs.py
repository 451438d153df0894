"""Shadow-page deferred-update recovery adapted to meta DFS files.

Differences from the flat-file baseline, all driven by the DFS block being
much larger than a page and files being write-once:

* Updated pages accumulate in a block update buffer sized like one DFS
  block; the buffer is appended to the log meta file when full or at
  commit. Old log copies of a page are superseded (never overwritten in
  place) and last-wins resolution happens at post-commit time.
* Each appended log block carries a footer page: the ordered list of
  pageids in the block plus a commit_complete flag. A block with
  commit_complete TRUE marks that it and every earlier block hold only
  committed data (write transactions are serial).
* Post-commit processing is batched: pages from committed log blocks are
  sorted and grouped by target data block, each dirtied data block is
  remade exactly once, and the whole batch is made atomic/restartable by a
  commit_flag in the log's master block (block 0).
* The log table index maps pageid -> (block_id, b_offset) and is rebuilt
  per session from footer pages only, at every lock acquisition.

One instance per session: the index and buffer are session-private; the
underlying meta files are shared.
"""

from __future__ import annotations

import struct
import zlib

from .errors import OutOfRange, RecoveryError
from .faults import NULL_INJECTOR, FaultInjector
from .metafile import MetaDfsFile, MetaDfsManager
from .pagefmt import stamp_page

_MASTER = struct.Struct("<IB")  # magic, commit_flag
_MASTER_MAGIC = 0x4C4F4730
_FOOTER_FIXED = struct.Struct("<IBQ")  # page_count, commit_complete, checksum
FOOTER_FIXED_SIZE = _FOOTER_FIXED.size  # 13 bytes
DEFAULT_POST_COMMIT_THRESHOLD = 64


def pack_footer(pageids: list[int], commit_complete: bool,
                page_size: int) -> bytes:
    body = struct.pack(f"<{len(pageids)}Q", *pageids)
    crc = zlib.crc32(
        struct.pack("<IB", len(pageids), int(commit_complete)) + body)
    footer = _FOOTER_FIXED.pack(len(pageids), int(commit_complete), crc) + body
    if len(footer) > page_size:
        raise ValueError("footer does not fit in one page")
    return footer.ljust(page_size, b"\0")


def unpack_footer(page: bytes) -> tuple[list[int], bool]:
    count, complete, crc = _FOOTER_FIXED.unpack_from(page, 0)
    end = FOOTER_FIXED_SIZE + 8 * count
    if count < 0 or end > len(page):
        raise RecoveryError("log block footer has impossible page count")
    body = page[FOOTER_FIXED_SIZE:end]
    actual = zlib.crc32(struct.pack("<IB", count, complete) + body)
    if actual != crc:
        raise RecoveryError(
            f"log block footer checksum mismatch: "
            f"stored {crc:#x}, computed {actual:#x}")
    return list(struct.unpack(f"<{count}Q", body)), bool(complete)


def _master_block(block_size: int, commit_flag: bool) -> bytes:
    block = bytearray(block_size)
    _MASTER.pack_into(block, 0, _MASTER_MAGIC, int(commit_flag))
    return bytes(block)


def create_log_meta(manager: MetaDfsManager, name: str) -> MetaDfsFile:
    """Create a log meta file holding only the master block."""
    file = manager.create_meta(name)
    manager.append_block(
        file, _master_block(manager.cluster.config.block_size_bytes, False))
    return file


def create_data_meta(manager: MetaDfsManager, name: str, total_pages: int,
                     initial_pages: dict[int, bytes] | None = None
                     ) -> MetaDfsFile:
    """Create a pre-allocated, zero-filled data meta file."""
    cfg = manager.page_config
    n = cfg.pages_per_block
    file = manager.create_meta(name)
    blocks = (total_pages + n - 1) // n
    for block_id in range(blocks):
        content = bytearray(cfg.block_size)
        if initial_pages:
            for pageid, page in initial_pages.items():
                if pageid // n == block_id:
                    off = (pageid % n) * cfg.page_size
                    content[off:off + cfg.page_size] = page
        manager.append_block(file, bytes(content))
    return file


class DfsTransactionStore:
    """Per-session page store with deferred post-commit over meta DFS files."""

    def __init__(self, manager: MetaDfsManager, data: MetaDfsFile,
                 log: MetaDfsFile, total_pages: int,
                 post_commit_threshold: int = DEFAULT_POST_COMMIT_THRESHOLD,
                 deferred: bool = True,
                 faults: FaultInjector = NULL_INJECTOR):
        cfg = manager.page_config
        if cfg is None:
            raise ValueError("meta manager needs a page config")
        if cfg.pages_per_block - 1 > (cfg.page_size - FOOTER_FIXED_SIZE) // 8:
            raise ValueError(
                f"footer cannot list {cfg.pages_per_block - 1} pageids "
                f"in a {cfg.page_size}-byte page")
        if cfg.pages_per_block < 2:
            raise ValueError("need at least two pages per block")
        self.manager = manager
        self.data = data
        self.log = log
        self.page_size = cfg.page_size
        self.pages_per_block = cfg.pages_per_block
        self.total_pages = total_pages
        self.post_commit_threshold = post_commit_threshold
        self.deferred = deferred
        self.faults = faults
        self.index: dict[int, tuple[int, int]] = {}
        self._capacity = self.pages_per_block - 1
        self._buffer = bytearray(cfg.block_size)
        self._filled: list[int] = []
        self._slots: dict[int, int] = {}
        self._ordinal = 0

    # ------------------------------------------------------------------
    # Page access
    # ------------------------------------------------------------------

    def _check_pageid(self, pageid: int) -> None:
        if not 0 <= pageid < self.total_pages:
            raise OutOfRange(
                f"pageid {pageid} outside [0, {self.total_pages})")

    def write_page(self, pageid: int, page_data: bytes) -> None:
        self._check_pageid(pageid)
        if len(page_data) != self.page_size:
            raise ValueError("page must be exactly page_size bytes")
        stamped = stamp_page(pageid, self._ordinal, page_data)
        self._ordinal += 1
        slot = self._slots.get(pageid)
        if slot is None:
            slot = len(self._filled)
            self._filled.append(pageid)
            self._slots[pageid] = slot
        start = slot * self.page_size
        self._buffer[start:start + self.page_size] = stamped
        if len(self._filled) == self._capacity:
            self.faults.hit("dfs.write.before_auto_flush")
            self.flush_buffer(mark_commit=False)

    def read_page(self, pageid: int) -> bytes:
        self._check_pageid(pageid)
        slot = self._slots.get(pageid)
        if slot is not None:
            start = slot * self.page_size
            return bytes(self._buffer[start:start + self.page_size])
        pos = self.index.get(pageid)
        if pos is not None:
            block_id, b_offset = pos
            return self.manager.read_page(
                self.log, block_id * self.pages_per_block + b_offset)
        return self.manager.read_page(self.data, pageid)

    # ------------------------------------------------------------------
    # Log maintenance
    # ------------------------------------------------------------------

    def flush_buffer(self, mark_commit: bool) -> int | None:
        """Append the buffer as one log block; returns its block_id."""
        if not self._filled and not mark_commit:
            return None
        footer = pack_footer(self._filled, mark_commit, self.page_size)
        start = self._capacity * self.page_size
        self._buffer[start:start + self.page_size] = footer
        self.faults.hit("dfs.flush.before_block_append")
        block_id = self.manager.append_block(self.log, bytes(self._buffer))
        self.faults.hit("dfs.flush.after_block_append")
        for slot, pageid in enumerate(self._filled):
            self.index[pageid] = (block_id, slot)
        self._buffer = bytearray(len(self._buffer))
        self._filled = []
        self._slots = {}
        return block_id

    def log_data_blocks(self) -> int:
        return self.log.block_count - 1

    # ------------------------------------------------------------------
    # Transaction boundaries
    # ------------------------------------------------------------------

    def commit_transaction(self) -> None:
        """Durable at the append of the commit-marked block; post-commit is
        deferred until the log outgrows the threshold."""
        self.faults.hit("dfs.commit.before_marker")
        self.flush_buffer(mark_commit=True)
        self.faults.hit("dfs.commit.after_marker")
        self._ordinal = 0
        if not self.deferred or self.log_data_blocks() > self.post_commit_threshold:
            self.faults.hit("dfs.commit.before_threshold_batch")
            self.batch_post_commit()
            self.faults.hit("dfs.commit.after_batch")

    def batch_post_commit(self) -> int:
        """Copy committed log pages home, one remake per dirtied data block.

        Returns the number of data blocks remade. Restartable: the master
        commit_flag brackets the whole batch and every step is idempotent.
        """
        self.faults.hit("dfs.batch.begin")
        self.faults.hit("dfs.batch.before_flag_set")
        self._write_master(True)
        self.faults.hit("dfs.batch.after_flag_set")

        footers = self._scan_footers()
        last_complete = 0
        for block_id, (pageids, complete) in footers.items():
            if complete:
                last_complete = block_id
        newest: dict[int, tuple[int, int]] = {}
        for block_id in range(1, last_complete + 1):
            for slot, pageid in enumerate(footers[block_id][0]):
                newest[pageid] = (block_id, slot)

        by_data_block: dict[int, list[int]] = {}
        for pageid in newest:
            by_data_block.setdefault(
                pageid // self.pages_per_block, []).append(pageid)

        block_cache: dict[int, bytes] = {}
        for data_block in sorted(by_data_block):
            content = bytearray(self.manager.read_block(self.data, data_block))
            for pageid in sorted(by_data_block[data_block]):
                log_block, slot = newest[pageid]
                cached = block_cache.get(log_block)
                if cached is None:
                    cached = self.manager.read_block(self.log, log_block)
                    block_cache[log_block] = cached
                src = slot * self.page_size
                dst = (pageid % self.pages_per_block) * self.page_size
                content[dst:dst + self.page_size] = \
                    cached[src:src + self.page_size]
            self.faults.hit("dfs.batch.before_block_remake")
            self.manager.overwrite_block(self.data, data_block, bytes(content))
            self.faults.hit("dfs.batch.after_block_remake")

        self.faults.hit("dfs.batch.before_flag_clear")
        self._write_master(False)
        self.faults.hit("dfs.batch.after_flag_clear")

        self.faults.hit("dfs.batch.before_log_truncate")
        for block_id in range(self.log.block_count - 1, 0, -1):
            self.faults.hit("dfs.batch.truncate_step")
            self.manager.truncate_from(self.log, block_id)
        self.faults.hit("dfs.batch.after_log_truncate")
        self.index.clear()
        return len(by_data_block)

    def abort_transaction(self) -> None:
        """Drop the buffer and every uncommitted log block, newest first."""
        self._buffer = bytearray(len(self._buffer))
        self._filled = []
        self._slots = {}
        self._ordinal = 0
        self.faults.hit("dfs.abort.before_truncate")
        self._truncate_uncommitted()
        self.faults.hit("dfs.abort.after_truncate")
        self.reconstruct_log_table_index()

    def restart_system(self) -> str:
        """Recover after a crash; returns "redo" or "rollback"."""
        self.faults.hit("dfs.restart.begin")
        self._buffer = bytearray(len(self._buffer))
        self._filled = []
        self._slots = {}
        self._ordinal = 0
        if self.log.block_count == 0:
            raise RecoveryError("log meta file has no master block")
        if self._read_master():
            self.batch_post_commit()
            self.faults.hit("dfs.restart.after_redo")
            self.faults.hit("dfs.restart.done")
            return "redo"
        self._truncate_uncommitted()
        self.reconstruct_log_table_index()
        self.faults.hit("dfs.restart.done")
        return "rollback"

    def reconstruct_log_table_index(self) -> dict[int, tuple[int, int]]:
        """Rebuild the index by reading only the footer page of each block."""
        index: dict[int, tuple[int, int]] = {}
        for block_id in range(1, self.log.block_count):
            pageids, _ = self._read_footer(block_id)
            for slot, pageid in enumerate(pageids):
                index[pageid] = (block_id, slot)
        self.index = index
        return dict(index)

    # ------------------------------------------------------------------
    # Internals
    # ------------------------------------------------------------------

    def _write_master(self, commit_flag: bool) -> None:
        self.manager.overwrite_block(
            self.log, 0,
            _master_block(self.manager.page_config.block_size, commit_flag))

    def _read_master(self) -> bool:
        page = self.manager.read_page(self.log, 0)
        magic, flag = _MASTER.unpack_from(page, 0)
        if magic != _MASTER_MAGIC:
            raise RecoveryError("log master block has bad magic")
        return bool(flag)

    def _read_footer(self, block_id: int) -> tuple[list[int], bool]:
        page = self.manager.read_page(
            self.log,
            block_id * self.pages_per_block + (self.pages_per_block - 1))
        return unpack_footer(page)

    def _scan_footers(self) -> dict[int, tuple[list[int], bool]]:
        return {block_id: self._read_footer(block_id)
                for block_id in range(1, self.log.block_count)}

    def _truncate_uncommitted(self) -> None:
        footers = self._scan_footers()
        last_complete = 0
        for block_id, (_, complete) in footers.items():
            if complete:
                last_complete = block_id
        for block_id in range(self.log.block_count - 1, last_complete, -1):
            self.faults.hit("dfs.abort.truncate_step")
            self.manager.truncate_from(self.log, block_id)
