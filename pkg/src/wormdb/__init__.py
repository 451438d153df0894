"""wormdb: a transactional page store on a write-once-read-many DFS.

Layers, bottom up: an in-process DFS simulation (`dfs`), meta DFS files
that make write-once storage overwritable in block units (`metafile`), a
shadow-page deferred-update recovery method in a flat-file baseline
(`spdu`) and a DFS-adapted form with block buffering and deferred batch
post-commit (`spdu_dfs`), a lockid-ordered database-granularity lock
queue (`locks`), and a record engine plus benchmark harness on top
(`engine`, `bench`, `cli`).
"""

from .dfs import DfsCluster, DfsConfig
from .engine import Database, EngineConfig, Session
from .errors import StorageError
from .locks import LockService
from .metafile import MetaDfsManager, PageConfig
from .records import UserVisitsRecord

__version__ = "0.1.0"

__all__ = [
    "Database",
    "DfsCluster",
    "DfsConfig",
    "EngineConfig",
    "LockService",
    "MetaDfsManager",
    "PageConfig",
    "Session",
    "StorageError",
    "UserVisitsRecord",
    "__version__",
]
