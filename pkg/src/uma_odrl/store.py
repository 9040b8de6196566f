"""Policy storage: in-memory or a directory of ``<sha256(uid)>.odrl.json`` files."""

from __future__ import annotations

import hashlib
import logging
import threading
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

from .fsutil import atomic_write
from .odrl import Policy, PolicyError, ValidationError, parse_policy, serialize_policy

logger = logging.getLogger(__name__)

POLICY_SUFFIX = ".odrl.json"


class NotFound(KeyError):
    """No policy with the given uid."""


def policy_filename(uid: str) -> str:
    return hashlib.sha256(uid.encode("utf-8")).hexdigest() + POLICY_SUFFIX


def _check_rule_uids(policies: Iterable[Policy]) -> None:
    owner: Dict[str, str] = {}
    for policy in policies:
        for rule in policy.rules:
            other = owner.setdefault(rule.uid, policy.uid)
            if other != policy.uid:
                raise ValidationError(
                    f"rule uid {rule.uid!r} already used by policy {other!r}", "uid")


class PolicyStore:
    """Copy-on-write map of policy uid to Policy.

    Writers are serialized by a lock and publish a fresh dict, so a reader that
    grabbed ``snapshot()`` keeps a consistent view.  With a directory backing,
    every mutation is mirrored to disk before it is published, and changes
    made to the directory by other processes are picked up on the next
    snapshot.
    """

    def __init__(self, policies: Iterable[Policy] = (), path: Union[str, Path, None] = None):
        self._lock = threading.Lock()
        self._path = Path(path) if path is not None else None
        self._dir_mtime: Optional[int] = None
        initial = {}
        for p in policies:
            initial[p.uid] = p
        _check_rule_uids(initial.values())
        self._policies: Dict[str, Policy] = initial

    @property
    def backing(self) -> str:
        return "memory" if self._path is None else "file"

    @property
    def path(self) -> Optional[Path]:
        return self._path

    def __len__(self) -> int:
        return len(self._policies)

    def __contains__(self, uid: str) -> bool:
        return uid in self._policies

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PolicyStore):
            return NotImplemented
        return self._policies == other._policies

    def get(self, uid: str) -> Policy:
        try:
            return self._policies[uid]
        except KeyError:
            raise NotFound(uid) from None

    def list(self) -> List[Policy]:
        policies = self._policies
        return [policies[uid] for uid in sorted(policies)]

    def snapshot(self) -> Tuple[Policy, ...]:
        if self._path is not None:
            self.refresh()
        return tuple(self.list())

    def put(self, policy: Policy) -> None:
        with self._lock:
            updated = dict(self._policies)
            updated[policy.uid] = policy
            _check_rule_uids(updated.values())
            if self._path is not None:
                self._path.mkdir(parents=True, exist_ok=True)
                atomic_write(self._path / policy_filename(policy.uid), serialize_policy(policy))
                self._dir_mtime = self._path.stat().st_mtime_ns
            self._policies = updated

    def delete(self, uid: str) -> None:
        with self._lock:
            if uid not in self._policies:
                raise NotFound(uid)
            updated = dict(self._policies)
            del updated[uid]
            if self._path is not None:
                try:
                    (self._path / policy_filename(uid)).unlink()
                except FileNotFoundError:
                    pass
                self._dir_mtime = self._path.stat().st_mtime_ns
            self._policies = updated

    def refresh(self) -> bool:
        """Reload from the backing directory if it changed; returns True on reload."""
        if self._path is None or not self._path.is_dir():
            return False
        mtime = self._path.stat().st_mtime_ns
        if mtime == self._dir_mtime:
            return False
        with self._lock:
            try:
                policies = _read_directory(self._path)
            except (OSError, PolicyError):
                logger.exception("policy directory %s could not be reloaded; keeping previous state", self._path)
                return False
            self._policies = {p.uid: p for p in policies}
            self._dir_mtime = mtime
        return True


def _read_directory(path: Path) -> List[Policy]:
    policies = []
    for entry in sorted(path.glob("*" + POLICY_SUFFIX)):
        try:
            policy = parse_policy(entry.read_bytes())
        except PolicyError as exc:
            raise type(exc)(f"{entry.name}: {exc.message}", exc.field, exc.line, exc.column) from None
        if entry.name != policy_filename(policy.uid):
            raise ValidationError(f"{entry.name}: file name does not match sha256 of uid {policy.uid!r}")
        policies.append(policy)
    _check_rule_uids(policies)
    return policies


def store_load(path: Union[str, Path]) -> PolicyStore:
    """Open a directory-backed store; a missing directory yields an empty store."""
    path = Path(path)
    policies = _read_directory(path) if path.is_dir() else []
    store = PolicyStore(policies, path=path)
    if path.is_dir():
        store._dir_mtime = path.stat().st_mtime_ns
    return store


def store_save(store: PolicyStore, path: Union[str, Path]) -> None:
    """Write every policy of ``store`` to ``path`` and drop files for absent uids."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    wanted = {}
    for policy in store.list():
        wanted[policy_filename(policy.uid)] = policy
    for name, policy in wanted.items():
        atomic_write(path / name, serialize_policy(policy))
    for entry in path.glob("*" + POLICY_SUFFIX):
        if entry.name not in wanted:
            entry.unlink()
