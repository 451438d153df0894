"""Database-granularity read/write lock queue with lockid ordering.

Lock requests get monotonically increasing lockids per database and are
granted in lockid order: a read waits behind every earlier write (granted
or waiting, which prevents writer starvation); a write waits behind every
earlier lock except a read the same owner already holds (the upgrade
case). A blocked request watches the last earlier blocking node and
re-evaluates on each wakeup, re-watching the new last blocker if still
blocked.

Two owners upgrading against each other deadlock under these rules; the
service detects the cycle and fails the youngest write request in it with
UpgradeConflict.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from .errors import NotGranted, ServiceShutdown, UnknownLock, UpgradeConflict

READ = "read"
WRITE = "write"

WAITING = "waiting"
GRANTED = "granted"


@dataclass
class LockNode:
    db_name: str
    lockid: int
    lock_type: str
    owner: str
    state: str = WAITING
    watched: int | None = None
    failed: bool = False
    event: threading.Event = field(default_factory=threading.Event, repr=False)
    watchers: list["LockNode"] = field(default_factory=list, repr=False)

    def public_copy(self) -> "LockNode":
        return LockNode(self.db_name, self.lockid, self.lock_type,
                        self.owner, self.state, self.watched)


class LockService:
    """Thread-safe in-process lock manager, one queue per database name."""

    def __init__(self, record_history: bool = False):
        self._mu = threading.Lock()
        self._queues: dict[str, list[LockNode]] = {}
        self._next_id: dict[str, int] = {}
        self._shutdown = False
        self.history: list[tuple[str, str, int, str, str]] | None = \
            [] if record_history else None

    # ------------------------------------------------------------------

    def _record(self, event: str, node: LockNode) -> None:
        if self.history is not None:
            self.history.append((event, node.db_name, node.lockid,
                                 node.lock_type, node.owner))

    def _blockers(self, node: LockNode) -> list[LockNode]:
        queue = self._queues[node.db_name]
        blockers = []
        for other in queue:
            if other.lockid >= node.lockid:
                break
            if node.lock_type == READ:
                if other.lock_type == WRITE:
                    blockers.append(other)
            else:
                if other.lock_type == READ and other.owner == node.owner \
                        and other.state == GRANTED:
                    continue  # the upgrade exemption
                blockers.append(other)
        return blockers

    def _try_grant(self, node: LockNode) -> bool:
        if self._blockers(node):
            return False
        node.state = GRANTED
        node.watched = None
        self._record("grant", node)
        return True

    def _watch(self, node: LockNode, blockers: list[LockNode]) -> None:
        target = blockers[-1]  # the blocker requested last
        node.watched = target.lockid
        target.watchers.append(node)

    def _remove(self, node: LockNode) -> None:
        self._queues[node.db_name].remove(node)
        for watcher in node.watchers:
            watcher.event.set()
        node.watchers.clear()

    # ------------------------------------------------------------------
    # Upgrade deadlock detection
    # ------------------------------------------------------------------

    def _detect_upgrade_deadlock(self, db_name: str) -> None:
        """Fail the youngest write in any owner wait-for cycle.

        Waits-for edges go from the owner of a blocked waiter to the owners
        of its blockers; cycles only arise from read->write upgrades.
        """
        queue = self._queues[db_name]
        while True:
            edges: dict[str, set[str]] = {}
            waiting_writes: dict[str, LockNode] = {}
            for node in queue:
                if node.state != WAITING or node.failed:
                    continue
                for blocker in self._blockers(node):
                    if blocker.owner != node.owner:
                        edges.setdefault(node.owner, set()).add(blocker.owner)
                if node.lock_type == WRITE:
                    prev = waiting_writes.get(node.owner)
                    if prev is None or node.lockid > prev.lockid:
                        waiting_writes[node.owner] = node
            cycle = self._find_cycle(edges)
            if not cycle:
                return
            victims = [waiting_writes[o] for o in cycle if o in waiting_writes]
            if not victims:
                return  # not an upgrade pattern; nothing safe to kill
            victim = max(victims, key=lambda n: n.lockid)
            victim.failed = True
            self._record("conflict", victim)
            self._remove(victim)
            victim.event.set()

    @staticmethod
    def _find_cycle(edges: dict[str, set[str]]) -> list[str]:
        visited: set[str] = set()
        for start in edges:
            if start in visited:
                continue
            stack: list[str] = []
            on_stack: set[str] = set()

            def visit(owner: str) -> list[str]:
                visited.add(owner)
                stack.append(owner)
                on_stack.add(owner)
                for nxt in edges.get(owner, ()):
                    if nxt in on_stack:
                        return stack[stack.index(nxt):]
                    if nxt not in visited:
                        found = visit(nxt)
                        if found:
                            return found
                stack.pop()
                on_stack.discard(owner)
                return []

            cycle = visit(start)
            if cycle:
                return cycle
        return []

    # ------------------------------------------------------------------
    # Public API
    # ------------------------------------------------------------------

    def request_lock(self, db_name: str, lock_type: str, owner: str) -> int:
        """Enqueue a request and block until granted.

        Raises UpgradeConflict if granting it can never happen without
        breaking an upgrade cycle, ServiceShutdown on shutdown().
        """
        if lock_type not in (READ, WRITE):
            raise ValueError(f"bad lock type: {lock_type}")
        with self._mu:
            if self._shutdown:
                raise ServiceShutdown("lock service is shut down")
            lockid = self._next_id.get(db_name, 1)
            self._next_id[db_name] = lockid + 1
            node = LockNode(db_name, lockid, lock_type, owner)
            self._queues.setdefault(db_name, []).append(node)
            self._record("request", node)
            if self._try_grant(node):
                return lockid
            self._watch(node, self._blockers(node))
            self._detect_upgrade_deadlock(db_name)
            if node.failed:
                raise UpgradeConflict(
                    f"write {lockid} on {db_name} would deadlock "
                    f"with another upgrader")
        while True:
            node.event.wait()
            with self._mu:
                node.event.clear()
                if node.failed:
                    raise UpgradeConflict(
                        f"write {lockid} on {db_name} would deadlock "
                        f"with another upgrader")
                if self._shutdown:
                    if node in self._queues.get(db_name, []):
                        self._remove(node)
                    raise ServiceShutdown("lock service is shut down")
                if node.state == GRANTED:
                    return lockid
                blockers = self._blockers(node)
                if not blockers:
                    node.state = GRANTED
                    node.watched = None
                    self._record("grant", node)
                    return lockid
                self._watch(node, blockers)

    def release_lock(self, db_name: str, lockid: int) -> None:
        with self._mu:
            queue = self._queues.get(db_name, [])
            node = next((n for n in queue if n.lockid == lockid), None)
            if node is None:
                raise UnknownLock(f"no lock {lockid} on {db_name}")
            if node.state != GRANTED:
                raise NotGranted(f"lock {lockid} on {db_name} is not granted")
            self._record("release", node)
            self._remove(node)

    def snapshot(self, db_name: str) -> list[LockNode]:
        with self._mu:
            return [n.public_copy()
                    for n in self._queues.get(db_name, [])]

    def shutdown(self) -> None:
        with self._mu:
            self._shutdown = True
            for queue in self._queues.values():
                for node in queue:
                    if node.state == WAITING:
                        node.event.set()
