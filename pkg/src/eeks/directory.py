"""Local and root EEKS key servers.

The root node is the single authority: every publish/revoke executes there.
Local nodes are read-through caches that pull records with a higher version
than they hold whenever they check in with the root.
"""

from __future__ import annotations

import os
import tempfile
import threading
from dataclasses import dataclass, replace
from pathlib import Path

from eeks.errors import (AlreadyRevoked, NotFound, RevokedIdentityRequiresNewKey,
                         RootUnreachable)
from eeks.schnorr import SchnorrParams

ACTIVE = "active"
REVOKED = "revoked"

DEFAULT_SYNC_INTERVAL = 60


@dataclass(frozen=True)
class KeyRecord:
    identity: str
    public_key: int
    status: str
    version: int
    updated_at: int
    params: SchnorrParams | None = None

    @property
    def active(self) -> bool:
        return self.status == ACTIVE

    def to_line(self) -> str:
        return f"{self.identity} {self.public_key:x} {self.status} {self.version} {self.updated_at}"

    @classmethod
    def from_line(cls, line: str, params: SchnorrParams | None = None) -> KeyRecord:
        fields = line.split()
        if len(fields) != 5:
            raise ValueError(f"expected 5 fields, got {len(fields)}: {line!r}")
        identity, key_hex, status, version, updated_at = fields
        if status not in (ACTIVE, REVOKED):
            raise ValueError(f"unknown status {status!r}")
        return cls(identity, int(key_hex, 16), status, int(version), int(updated_at), params)


class DirectoryNode:
    """One EEKS key server.

    Lookups and mutations share a lock; mutations are serialized and readers
    always see a complete record.
    """

    def __init__(self, role: str, name: str = "", upstream: DirectoryNode | None = None,
                 params: SchnorrParams | None = None,
                 sync_interval: int | None = DEFAULT_SYNC_INTERVAL):
        if role not in ("local", "root"):
            raise ValueError(f"role must be 'local' or 'root', not {role!r}")
        if role == "local" and upstream is None:
            raise ValueError("a local node needs an upstream root")
        if role == "root" and upstream is not None:
            raise ValueError("a root node has no upstream")
        self.role = role
        self.name = name or role
        self.upstream = upstream
        self.params = params if params is not None else getattr(upstream, "params", None)
        self.sync_interval = sync_interval
        self.store: dict[str, KeyRecord] = {}
        self.last_sync: int | None = None
        self.degraded = False
        self.online = True
        # identity -> public keys that were revoked at some point
        self._revoked_keys: dict[str, set[int]] = {}
        self._lock = threading.RLock()

    def __repr__(self):
        return f"DirectoryNode({self.role!r}, {self.name!r}, records={len(self.store)})"

    @property
    def root(self) -> DirectoryNode:
        return self if self.role == "root" else self.upstream

    def records(self) -> list[KeyRecord]:
        with self._lock:
            return sorted(self.store.values(), key=lambda rec: rec.identity)

    def sync_due(self, now: int) -> bool:
        if self.role != "local" or self.sync_interval is None:
            return False
        return self.last_sync is None or now - self.last_sync >= self.sync_interval

    def save(self, path) -> None:
        """Atomically write the store as one record per line."""
        path = Path(path)
        text = "".join(rec.to_line() + "\n" for rec in self.records())
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="ascii") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def load(self, path) -> None:
        store = {}
        revoked: dict[str, set[int]] = {}
        with open(path, encoding="ascii") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = KeyRecord.from_line(line, self.params)
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from None
                store[rec.identity] = rec
                if rec.status == REVOKED:
                    revoked.setdefault(rec.identity, set()).add(rec.public_key)
        with self._lock:
            self.store = store
            self._revoked_keys = revoked


def publish(node: DirectoryNode, identity: str, public_key: int, now: int = 0) -> KeyRecord:
    """Create or re-key ``identity`` at the root.

    Called on a local node, the write is forwarded upstream and the local
    store stays untouched until its next sync.
    """
    root = node.root
    with root._lock:
        if public_key in root._revoked_keys.get(identity, ()):
            raise RevokedIdentityRequiresNewKey(
                f"{identity}: key {public_key:x} was revoked; publish a new key")
        prev = root.store.get(identity)
        version = prev.version + 1 if prev else 1
        rec = KeyRecord(identity, public_key, ACTIVE, version, now, root.params)
        root.store[identity] = rec
        return rec


def lookup(node: DirectoryNode, identity: str) -> KeyRecord:
    with node._lock:
        try:
            return node.store[identity]
        except KeyError:
            raise NotFound(f"{identity} not known to {node.name}") from None


def revoke(node: DirectoryNode, identity: str, now: int = 0) -> KeyRecord:
    root = node.root
    with root._lock:
        prev = lookup(root, identity)
        if not prev.active:
            raise AlreadyRevoked(f"{identity} is already revoked")
        rec = replace(prev, status=REVOKED, version=prev.version + 1, updated_at=now)
        root.store[identity] = rec
        root._revoked_keys.setdefault(identity, set()).add(prev.public_key)
        return rec


def pending_updates(local: DirectoryNode, root: DirectoryNode) -> list[KeyRecord]:
    """Root records whose version is newer than the local copy."""
    return [rec for rec in root.records()
            if rec.version > getattr(local.store.get(rec.identity), "version", 0)]


def sync(local: DirectoryNode, root: DirectoryNode, now: int) -> int:
    """Pull every root record newer than the local copy; returns how many changed."""
    if local.role != "local":
        raise ValueError("sync pulls into a local node")
    if not root.online:
        local.degraded = True
        raise RootUnreachable(f"{local.name} cannot reach {root.name}")
    fresh = pending_updates(local, root)
    with local._lock:
        for rec in fresh:
            local.store[rec.identity] = rec
            if rec.status == REVOKED:
                local._revoked_keys.setdefault(rec.identity, set()).add(rec.public_key)
        local.last_sync = now
        local.degraded = False
    return len(fresh)
