"""Named fault points for crash injection.

Every durability-relevant step in the recovery layers calls
``injector.hit(name)``. A test (or the CLI) arms a point with an action;
unarmed points are free. ``CrashPoint`` is raised for in-process crash
simulation; the CLI arms points with ``action="exit"`` which kills the
process with exit code 42.
"""

from __future__ import annotations

import os
from collections import Counter

CRASH_EXIT_CODE = 42

# Points on the write -> commit -> batch_post_commit -> restart paths of the
# DFS-backed store. The crash-consistency sweep enumerates this list.
SPDU_DFS_FAULT_POINTS = (
    "dfs.write.before_auto_flush",
    "dfs.flush.before_block_append",
    "dfs.flush.after_block_append",
    "dfs.commit.before_marker",
    "dfs.commit.after_marker",
    "dfs.commit.before_threshold_batch",
    "dfs.commit.after_batch",
    "dfs.batch.begin",
    "dfs.batch.before_flag_set",
    "dfs.batch.after_flag_set",
    "dfs.batch.before_block_remake",
    "dfs.batch.after_block_remake",
    "dfs.batch.before_flag_clear",
    "dfs.batch.after_flag_clear",
    "dfs.batch.before_log_truncate",
    "dfs.batch.truncate_step",
    "dfs.batch.after_log_truncate",
    "dfs.abort.before_truncate",
    "dfs.abort.truncate_step",
    "dfs.abort.after_truncate",
    "dfs.restart.begin",
    "dfs.restart.after_redo",
    "dfs.restart.done",
)

# Points inside the baseline (flat-file) recovery method.
SPDU_CORE_FAULT_POINTS = (
    "core.commit.after_log_sync",
    "core.commit.before_flag_set",
    "core.commit.after_flag_set",
    "core.post_commit.page_copied",
    "core.commit.before_flag_clear",
    "core.commit.after_flag_clear",
    "core.commit.before_log_init",
    "core.restart.begin",
    "core.restart.after_redo",
)

ALL_FAULT_POINTS = SPDU_DFS_FAULT_POINTS + SPDU_CORE_FAULT_POINTS


class CrashPoint(RuntimeError):
    """Raised when an armed fault point fires (simulated crash)."""

    def __init__(self, name: str):
        super().__init__(f"crash injected at fault point '{name}'")
        self.name = name


class FaultInjector:
    """Registry of armed fault points plus a traversal counter.

    ``hits`` records every traversal whether or not the point is armed, so
    sweeps can verify a point was actually reachable in a given workload.
    """

    def __init__(self):
        self._armed: dict[str, tuple[int, str]] = {}
        self.hits: Counter[str] = Counter()

    def arm(self, name: str, *, skip: int = 0, action: str = "raise") -> None:
        """Trigger `action` on the (skip+1)-th traversal of `name`."""
        if name not in ALL_FAULT_POINTS:
            raise ValueError(f"unregistered fault point: {name}")
        if action not in ("raise", "exit"):
            raise ValueError(f"unknown fault action: {action}")
        self._armed[name] = (skip, action)

    def disarm(self, name: str) -> None:
        self._armed.pop(name, None)

    def reset(self) -> None:
        self._armed.clear()
        self.hits.clear()

    def hit(self, name: str) -> None:
        self.hits[name] += 1
        armed = self._armed.get(name)
        if armed is None:
            return
        skip, action = armed
        if skip > 0:
            self._armed[name] = (skip - 1, action)
            return
        del self._armed[name]
        if action == "exit":
            os._exit(CRASH_EXIT_CODE)
        raise CrashPoint(name)


# Shared no-op injector for components constructed without one.
NULL_INJECTOR = FaultInjector()
