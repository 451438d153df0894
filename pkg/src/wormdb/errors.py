"""Exception types shared across the storage stack."""


class StorageError(Exception):
    """Base class for all wormdb errors."""


class AlreadyExists(StorageError):
    pass


class NotFound(StorageError):
    pass


class OutOfRange(StorageError):
    pass


class InsufficientReplicaNodes(StorageError):
    pass


class AllReplicasDead(StorageError):
    pass


class UnknownNode(StorageError):
    pass


class WrongBlockSize(StorageError):
    pass


class RecoveryError(StorageError):
    """Durable state failed a consistency check (bad checksum, bad magic).

    Never repaired silently; surfaced to the caller.
    """


class RecordTooLarge(StorageError):
    pass


class ValueTooLong(StorageError):
    pass


class DatabaseFull(StorageError):
    pass


class LockError(StorageError):
    pass


class UnknownLock(LockError):
    pass


class NotGranted(LockError):
    pass


class UpgradeConflict(LockError):
    """Two lock owners tried to upgrade read -> write against each other."""


class ServiceShutdown(LockError):
    pass
