"""Resource Manager: a file-backed hierarchy of containers and documents.

Layout under the storage root: containers are directories, documents are
files, and each resource has a sidecar holding its metadata
(``.<name>.meta.json`` next to a document, ``.container.json`` inside a
container).  Resource names never start with a dot, so sidecars and temp
files stay out of listings.  Every write goes through a temp file and a
rename; membership of a container is its directory listing, so it changes
in the same rename that creates or removes a child.
"""

from __future__ import annotations

import json
import os
import threading
from contextlib import ExitStack, contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

from ..fsutil import TEMP_PREFIX, atomic_write
from .mapping import is_container, normalize_path, parent_of

CONTAINER_META = ".container.json"
CONTAINER_TYPE = "application/json"
DEFAULT_TYPE = "application/octet-stream"


class StorageError(Exception):
    status = 500


class ResourceNotFound(StorageError):
    status = 404


class Conflict(StorageError):
    status = 409


@dataclass(frozen=True)
class StoredResource:
    path: str
    kind: str  # "Document" | "Container"
    content_type: str
    body: bytes = b""
    members: Tuple[str, ...] = field(default_factory=tuple)


class _LockTable:
    def __init__(self):
        self._guard = threading.Lock()
        self._locks: Dict[str, threading.RLock] = {}

    def get(self, path: str) -> threading.RLock:
        with self._guard:
            return self._locks.setdefault(path, threading.RLock())

    @contextmanager
    def hold(self, *paths: str) -> Iterator[None]:
        # parents before children: shorter paths first
        ordered = sorted(set(paths), key=lambda p: (p.count("/") - p.endswith("/"), p))
        with ExitStack() as stack:
            for p in ordered:
                stack.enter_context(self.get(p))
            yield


class ResourceManager:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        meta = self.root / CONTAINER_META
        if not meta.exists():
            atomic_write(meta, json.dumps({"kind": "Container"}).encode())
        self._locks = _LockTable()

    # -- layout ------------------------------------------------------------

    def _fs(self, path: str) -> Path:
        rel = path.strip("/")
        return self.root / rel if rel else self.root

    def _sidecar(self, path: str) -> Path:
        if is_container(path):
            return self._fs(path) / CONTAINER_META
        fs = self._fs(path)
        return fs.parent / f".{fs.name}.meta.json"

    def exists(self, path: str) -> bool:
        path = normalize_path(path)
        fs = self._fs(path)
        return fs.is_dir() if is_container(path) else fs.is_file()

    # -- CRUD --------------------------------------------------------------

    def read(self, path: str) -> StoredResource:
        path = normalize_path(path)
        if is_container(path):
            return StoredResource(path, "Container", CONTAINER_TYPE, members=tuple(self.list(path)))
        fs = self._fs(path)
        try:
            body = fs.read_bytes()
        except (FileNotFoundError, IsADirectoryError, NotADirectoryError):
            raise ResourceNotFound(path) from None
        except OSError as exc:
            raise StorageError(str(exc)) from exc
        return StoredResource(path, "Document", self._content_type(path), body=body)

    def _content_type(self, path: str) -> str:
        try:
            meta = json.loads(self._sidecar(path).read_text(encoding="utf-8"))
            return meta.get("contentType") or DEFAULT_TYPE
        except (OSError, ValueError):
            return DEFAULT_TYPE

    def list(self, container: str) -> List[str]:
        container = normalize_path(container)
        if not is_container(container):
            raise Conflict(f"{container} is not a container")
        fs = self._fs(container)
        try:
            entries = list(os.scandir(fs))
        except (FileNotFoundError, NotADirectoryError):
            raise ResourceNotFound(container) from None
        except OSError as exc:
            raise StorageError(str(exc)) from exc
        members = []
        for entry in entries:
            if entry.name.startswith("."):
                continue
            members.append(container + entry.name + ("/" if entry.is_dir() else ""))
        return sorted(members)

    def write(self, path: str, body: bytes = b"", content_type: Optional[str] = None,
              *, create_only: bool = False, replace_only: bool = False) -> bool:
        """Create or replace a resource; returns True when it was created.

        For container paths only creation is possible (the body is ignored).
        """
        path = normalize_path(path)
        if path == "/":
            raise Conflict("the root container already exists")
        parent = parent_of(path)
        with self._locks.hold(parent, path):
            parent_fs = self._fs(parent)
            if not parent_fs.is_dir():
                raise Conflict(f"parent container {parent} does not exist")
            fs = self._fs(path)
            try:
                if is_container(path):
                    if fs.exists():
                        raise Conflict(f"{path} already exists")
                    if replace_only:
                        raise ResourceNotFound(path)
                    fs.mkdir()
                    atomic_write(fs / CONTAINER_META, json.dumps({"kind": "Container"}).encode())
                    return True
                if fs.is_dir():
                    raise Conflict(f"a container named {path}/ exists")
                created = not fs.exists()
                if created and replace_only:
                    raise ResourceNotFound(path)
                if not created and create_only:
                    raise Conflict(f"{path} already exists")
                meta = {"kind": "Document", "contentType": content_type or DEFAULT_TYPE}
                atomic_write(fs, body)
                atomic_write(self._sidecar(path), json.dumps(meta, sort_keys=True).encode())
                return created
            except StorageError:
                raise
            except OSError as exc:
                raise StorageError(str(exc)) from exc

    def remove(self, path: str) -> None:
        path = normalize_path(path)
        if path == "/":
            raise Conflict("the root container cannot be removed")
        parent = parent_of(path)
        with self._locks.hold(parent, path):
            fs = self._fs(path)
            try:
                if is_container(path):
                    if not fs.is_dir():
                        raise ResourceNotFound(path)
                    if self.list(path):
                        raise Conflict(f"container {path} is not empty")
                    for entry in os.scandir(fs):
                        if entry.name == CONTAINER_META or entry.name.startswith(TEMP_PREFIX):
                            os.unlink(entry.path)
                    fs.rmdir()
                    return
                if not fs.is_file():
                    raise ResourceNotFound(path)
                fs.unlink()
                try:
                    self._sidecar(path).unlink()
                except FileNotFoundError:
                    pass
            except StorageError:
                raise
            except OSError as exc:
                raise StorageError(str(exc)) from exc

    def check_consistency(self) -> List[str]:
        """Problems found by walking the tree; empty when hierarchy and listings agree."""
        problems = []
        pending = ["/"]
        seen = set()
        while pending:
            container = pending.pop()
            seen.add(container)
            for member in self.list(container):
                if parent_of(member) != container:
                    problems.append(f"{member} listed under {container}")
                if not self.exists(member):
                    problems.append(f"{member} listed but missing")
                if is_container(member):
                    pending.append(member)
        for dirpath, dirnames, filenames in os.walk(self.root):
            rel = Path(dirpath).relative_to(self.root).as_posix()
            container = "/" if rel == "." else f"/{rel}/"
            if container not in seen and not any(part.startswith(".") for part in Path(rel).parts):
                problems.append(f"{container} unreachable from the root")
        return problems
