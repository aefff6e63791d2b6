"""
Artifact sinks for CSV / JSON results.

These are "dumb I/O": callers format the text, the sink stores it and keeps
a SHA-256 per file for the run manifest. DirectoryOutput writes atomically
(temp file + rename); MemoryOutput keeps everything in a dict for tests.
"""

import hashlib
import os
from abc import ABC, abstractmethod


class ArtifactOutput(ABC):
    """Abstract interface: results → storage."""

    def __init__(self):
        self.digests: dict[str, str] = {}

    @abstractmethod
    def _store(self, relpath: str, data: bytes):
        ...

    def write_text(self, relpath: str, text: str) -> str:
        """Store UTF-8 text under relpath ("study/f1/run0.csv") and return relpath."""
        relpath = relpath.replace(os.sep, "/")
        data = text.encode("utf-8")
        self._store(relpath, data)
        self.digests[relpath] = hashlib.sha256(data).hexdigest()
        return relpath

    @property
    def files(self) -> list[str]:
        return sorted(self.digests)


class DirectoryOutput(ArtifactOutput):
    """Files under a root directory; every write is temp file + os.replace."""

    def __init__(self, root: str):
        super().__init__()
        self.root = root

    def path(self, relpath: str) -> str:
        return os.path.join(self.root, *relpath.split("/"))

    def _store(self, relpath: str, data: bytes):
        target = self.path(relpath)
        os.makedirs(os.path.dirname(target) or ".", exist_ok=True)
        tmp = target + ".tmp"
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, target)


class MemoryOutput(ArtifactOutput):
    """In-memory stub: relpath → text."""

    def __init__(self):
        super().__init__()
        self.texts: dict[str, str] = {}

    def _store(self, relpath: str, data: bytes):
        self.texts[relpath] = data.decode("utf-8")
