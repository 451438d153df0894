"""In-process write-once-read-many distributed file system.

One NameNode (the metadata table plus the meta-file registry) and a set of
DataNodes holding replicated fixed-size blocks. Files are immutable once
created; overwrite is only possible as delete + create of the same name
("file remake"), which the meta-file layer builds on.

All public operations are serialized by one lock, making each call atomic
with respect to the metadata table. In persistent mode every DataNode keeps
its blocks in a directory and the NameNode table is rewritten atomically on
every mutation, so a process crash between operations leaves a consistent
store.
"""

from __future__ import annotations

import os
import threading
import time
import zlib
from dataclasses import dataclass
from random import Random
from urllib.parse import quote, unquote

from .errors import (
    AllReplicasDead,
    AlreadyExists,
    InsufficientReplicaNodes,
    NotFound,
    OutOfRange,
    UnknownNode,
)

NAMENODE_TABLE = "namenode.tbl"
METAFILE_TABLE = "metafiles.tbl"


@dataclass
class DfsConfig:
    block_size_bytes: int = 64 * 1024
    replication_factor: int = 3
    placement_seed: int = 0
    network_latency: float = 0.0  # seconds per remote block read

    def __post_init__(self):
        if self.block_size_bytes <= 0:
            raise ValueError("block_size_bytes must be positive")
        if self.replication_factor < 1:
            raise ValueError("replication_factor must be >= 1")
        if self.network_latency < 0:
            raise ValueError("network_latency must be >= 0")


@dataclass
class DfsFileEntry:
    name: str
    size_bytes: int
    num_blocks: int
    # One tuple of DataNode ids per block, len == replication factor.
    block_locations: list[tuple[int, ...]]


@dataclass
class DfsCounters:
    read_calls: int = 0
    bytes_read: int = 0
    bytes_written: int = 0
    files_created: int = 0
    files_deleted: int = 0

    def snapshot(self) -> "DfsCounters":
        return DfsCounters(self.read_calls, self.bytes_read,
                           self.bytes_written, self.files_created,
                           self.files_deleted)


class DataNode:
    """Block storage for one simulated node, in memory or in a directory."""

    def __init__(self, node_id: int, root: str | None = None):
        self.node_id = node_id
        self.alive = True
        self._root = root
        self._mem: dict[tuple[str, int], bytes] | None = None
        if root is None:
            self._mem = {}
        else:
            os.makedirs(root, exist_ok=True)

    def _path(self, name: str, ordinal: int) -> str:
        return os.path.join(self._root, f"{quote(name, safe='')}.blk{ordinal}")

    def put(self, name: str, ordinal: int, data: bytes) -> None:
        if self._mem is not None:
            self._mem[(name, ordinal)] = bytes(data)
            return
        tmp = self._path(name, ordinal) + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, self._path(name, ordinal))

    def get(self, name: str, ordinal: int) -> bytes:
        if self._mem is not None:
            return self._mem[(name, ordinal)]
        with open(self._path(name, ordinal), "rb") as fh:
            return fh.read()

    def drop(self, name: str, ordinal: int) -> None:
        if self._mem is not None:
            self._mem.pop((name, ordinal), None)
            return
        try:
            os.remove(self._path(name, ordinal))
        except FileNotFoundError:
            pass

    def move(self, old: str, new: str, ordinal: int) -> None:
        if self._mem is not None:
            if (old, ordinal) in self._mem:
                self._mem[(new, ordinal)] = self._mem.pop((old, ordinal))
            return
        try:
            os.replace(self._path(old, ordinal), self._path(new, ordinal))
        except FileNotFoundError:
            pass


class DfsCluster:
    """NameNode plus DataNodes in one process.

    `root=None` keeps everything in memory; otherwise state is persisted
    under `root` (one subdirectory per node, plus the NameNode tables) and
    reloaded by constructing a cluster over the same root.
    """

    def __init__(self, config: DfsConfig, num_nodes: int,
                 root: str | None = None):
        if num_nodes < 1:
            raise ValueError("need at least one DataNode")
        self.config = config
        self.root = root
        self._lock = threading.RLock()
        self._files: dict[str, DfsFileEntry] = {}
        # Meta DFS file registry (name -> block count); lives at the
        # NameNode and is journaled together with the file table.
        self._meta_table: dict[str, int] = {}
        self.counters = DfsCounters()
        node_root = None
        self._nodes: dict[int, DataNode] = {}
        for node_id in range(num_nodes):
            if root is not None:
                node_root = os.path.join(root, f"node_{node_id}")
            self._nodes[node_id] = DataNode(node_id, node_root)
        if root is not None:
            os.makedirs(root, exist_ok=True)
            self._load_tables()

    # ------------------------------------------------------------------
    # Persistence of NameNode state
    # ------------------------------------------------------------------

    def _load_tables(self):
        table = os.path.join(self.root, NAMENODE_TABLE)
        if os.path.exists(table):
            with open(table, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.rstrip("\n")
                    if not line:
                        continue
                    name, size, nblocks, _repl, locs = line.split("\t")
                    locations = []
                    if locs:
                        for loc in locs.split(";"):
                            locations.append(
                                tuple(int(n) for n in loc.split(",")))
                    entry = DfsFileEntry(unquote(name), int(size),
                                         int(nblocks), locations)
                    self._files[entry.name] = entry
        meta = os.path.join(self.root, METAFILE_TABLE)
        if os.path.exists(meta):
            with open(meta, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.rstrip("\n")
                    if not line:
                        continue
                    name, count = line.split("\t")
                    self._meta_table[unquote(name)] = int(count)

    def _save_tables(self):
        if self.root is None:
            return
        table = os.path.join(self.root, NAMENODE_TABLE)
        tmp = table + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            for entry in self._files.values():
                locs = ";".join(",".join(str(n) for n in loc)
                                for loc in entry.block_locations)
                fh.write(f"{quote(entry.name, safe='')}\t{entry.size_bytes}\t"
                         f"{entry.num_blocks}\t"
                         f"{self.config.replication_factor}\t{locs}\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, table)
        meta = os.path.join(self.root, METAFILE_TABLE)
        tmp = meta + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            for name, count in self._meta_table.items():
                fh.write(f"{quote(name, safe='')}\t{count}\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, meta)

    # ------------------------------------------------------------------
    # Placement
    # ------------------------------------------------------------------

    def _alive_nodes(self) -> list[int]:
        return sorted(n.node_id for n in self._nodes.values() if n.alive)

    def _place_block(self, name: str, ordinal: int) -> tuple[int, ...]:
        alive = self._alive_nodes()
        r = self.config.replication_factor
        if len(alive) < r:
            raise InsufficientReplicaNodes(
                f"{len(alive)} alive nodes < replication factor {r}")
        # Stable per-(seed, file, block) derivation; str hashing is salted
        # per process so a crc is used instead.
        key = f"{self.config.placement_seed}:{name}:{ordinal}".encode()
        rng = Random(zlib.crc32(key))
        return tuple(rng.sample(alive, r))

    # ------------------------------------------------------------------
    # The four DFS client operations plus fault-injection control
    # ------------------------------------------------------------------

    def create_file(self, name: str, content: bytes) -> DfsFileEntry:
        with self._lock:
            if name in self._files:
                raise AlreadyExists(f"DFS file exists: {name}")
            block = self.config.block_size_bytes
            size = len(content)
            num_blocks = (size + block - 1) // block
            locations = []
            for ordinal in range(num_blocks):
                holders = self._place_block(name, ordinal)
                chunk = content[ordinal * block:(ordinal + 1) * block]
                for node_id in holders:
                    self._nodes[node_id].put(name, ordinal, chunk)
                    self.counters.bytes_written += len(chunk)
                locations.append(holders)
            entry = DfsFileEntry(name, size, num_blocks, locations)
            self._files[name] = entry
            self.counters.files_created += 1
            self._save_tables()
            return entry

    def read_range(self, name: str, offset: int, length: int) -> bytes:
        latency = 0.0
        with self._lock:
            entry = self._files.get(name)
            if entry is None:
                raise NotFound(f"no DFS file: {name}")
            if offset < 0 or length < 0 or offset + length > entry.size_bytes:
                raise OutOfRange(
                    f"read [{offset}, {offset + length}) beyond "
                    f"size {entry.size_bytes} of {name}")
            self.counters.read_calls += 1
            if length == 0:
                return b""
            block = self.config.block_size_bytes
            first = offset // block
            last = (offset + length - 1) // block
            parts = []
            for ordinal in range(first, last + 1):
                node = self._pick_alive_holder(entry, ordinal)
                data = node.get(name, ordinal)
                lo = max(offset - ordinal * block, 0)
                hi = min(offset + length - ordinal * block, len(data))
                parts.append(data[lo:hi])
                self.counters.bytes_read += hi - lo
                latency += self.config.network_latency
            result = b"".join(parts)
        if latency:
            time.sleep(latency)
        return result

    def _pick_alive_holder(self, entry: DfsFileEntry, ordinal: int) -> DataNode:
        for node_id in entry.block_locations[ordinal]:
            node = self._nodes[node_id]
            if node.alive:
                return node
        raise AllReplicasDead(
            f"block {ordinal} of {entry.name}: all replicas dead")

    def delete_file(self, name: str) -> None:
        with self._lock:
            entry = self._files.pop(name, None)
            if entry is None:
                raise NotFound(f"no DFS file: {name}")
            for ordinal, holders in enumerate(entry.block_locations):
                for node_id in holders:
                    node = self._nodes[node_id]
                    if node.alive:
                        node.drop(name, ordinal)
            self.counters.files_deleted += 1
            self._save_tables()

    def rename_file(self, old: str, new: str) -> None:
        with self._lock:
            if old not in self._files:
                raise NotFound(f"no DFS file: {old}")
            if new in self._files:
                raise AlreadyExists(f"DFS file exists: {new}")
            entry = self._files.pop(old)
            # Metadata-only from the client's view; nodes re-key their
            # stored blocks (dead nodes included: a revived node resyncs
            # names from the NameNode).
            for ordinal in range(entry.num_blocks):
                for node_id in entry.block_locations[ordinal]:
                    self._nodes[node_id].move(old, new, ordinal)
            entry.name = new
            self._files[new] = entry
            self._save_tables()

    def set_node_alive(self, node_id: int, alive: bool) -> None:
        with self._lock:
            node = self._nodes.get(node_id)
            if node is None:
                raise UnknownNode(f"no DataNode {node_id}")
            node.alive = alive

    # ------------------------------------------------------------------
    # Lookup / observability
    # ------------------------------------------------------------------

    def exists(self, name: str) -> bool:
        with self._lock:
            return name in self._files

    def file_entry(self, name: str) -> DfsFileEntry:
        with self._lock:
            entry = self._files.get(name)
            if entry is None:
                raise NotFound(f"no DFS file: {name}")
            return DfsFileEntry(entry.name, entry.size_bytes,
                                entry.num_blocks,
                                list(entry.block_locations))

    def list_files(self, prefix: str = "") -> list[str]:
        with self._lock:
            return sorted(n for n in self._files if n.startswith(prefix))

    def num_nodes(self) -> int:
        return len(self._nodes)

    def alive_nodes(self) -> list[int]:
        with self._lock:
            return self._alive_nodes()

    def replicas(self, name: str, ordinal: int) -> list[bytes]:
        """All stored replica contents of one block (for consistency checks)."""
        with self._lock:
            entry = self._files.get(name)
            if entry is None:
                raise NotFound(f"no DFS file: {name}")
            if ordinal >= entry.num_blocks:
                raise OutOfRange(f"block {ordinal} of {name}")
            return [self._nodes[node_id].get(name, ordinal)
                    for node_id in entry.block_locations[ordinal]]

    # ------------------------------------------------------------------
    # Meta DFS file registry (maintained at the NameNode)
    # ------------------------------------------------------------------

    def meta_register(self, name: str, block_count: int) -> None:
        with self._lock:
            if name in self._meta_table:
                raise AlreadyExists(f"meta DFS file exists: {name}")
            self._meta_table[name] = block_count
            self._save_tables()

    def meta_set_block_count(self, name: str, block_count: int) -> None:
        with self._lock:
            if name not in self._meta_table:
                raise NotFound(f"no meta DFS file: {name}")
            self._meta_table[name] = block_count
            self._save_tables()

    def meta_block_count(self, name: str) -> int:
        with self._lock:
            count = self._meta_table.get(name)
            if count is None:
                raise NotFound(f"no meta DFS file: {name}")
            return count

    def meta_exists(self, name: str) -> bool:
        with self._lock:
            return name in self._meta_table

    def meta_unregister(self, name: str) -> None:
        with self._lock:
            if name not in self._meta_table:
                raise NotFound(f"no meta DFS file: {name}")
            del self._meta_table[name]
            self._save_tables()

    def meta_names(self) -> list[str]:
        with self._lock:
            return sorted(self._meta_table)
