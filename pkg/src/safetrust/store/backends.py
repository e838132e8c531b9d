"""Storage backends: a dict, and a single-file append log."""
from __future__ import annotations

import base64
import json
import os
import threading
from pathlib import Path
from typing import Dict, Iterator, Optional, Protocol

from ..certset import PrincipalID, Token

__all__ = ["Backend", "MemoryBackend", "AppendLogBackend"]


class Backend(Protocol):
    def get(self, token: Token): ...
    def put(self, record) -> None: ...
    def delete(self, token: Token) -> None: ...
    def tokens(self) -> Iterator[Token]: ...
    def __len__(self) -> int: ...


class MemoryBackend:
    def __init__(self):
        self._data: Dict[Token, object] = {}
        self._lock = threading.Lock()

    def get(self, token):
        return self._data.get(token)

    def put(self, record):
        with self._lock:
            self._data[record.token] = record

    def delete(self, token):
        with self._lock:
            self._data.pop(token, None)

    def tokens(self):
        return iter(list(self._data))

    def __len__(self):
        return len(self._data)


class AppendLogBackend(MemoryBackend):
    """Memory map backed by an append-only JSON-lines log, replayed on open."""

    def __init__(self, path, fsync: bool = False):
        super().__init__()
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fsync = fsync
        if self.path.exists():
            self._replay()
        self._fh = open(self.path, "a", encoding="utf-8")

    def _replay(self):
        from .core import StoreRecord

        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if not line.endswith("\n"):
                    break  # torn final write
                entry = json.loads(line)
                tok = Token.from_text(entry["token"])
                if entry["op"] == "put":
                    self._data[tok] = StoreRecord(
                        tok, base64.b64decode(entry["cert"]),
                        PrincipalID.from_text(entry["issuer"]),
                        entry["issued"], entry["expiry"])
                else:
                    self._data.pop(tok, None)

    def _append(self, entry: dict):
        self._fh.write(json.dumps(entry, sort_keys=True) + "\n")
        self._fh.flush()
        if self.fsync:
            os.fsync(self._fh.fileno())

    def put(self, record):
        with self._lock:
            self._append({"op": "put", "token": record.token.text,
                          "cert": base64.b64encode(record.cert_bytes).decode(),
                          "issuer": record.issuer.text, "issued": record.issued,
                          "expiry": record.expiry})
            self._data[record.token] = record

    def delete(self, token):
        with self._lock:
            if token in self._data:
                self._append({"op": "del", "token": token.text})
                del self._data[token]

    def compact(self):
        """Rewrite the log with only live records."""
        with self._lock:
            tmp = self.path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as out:
                for rec in self._data.values():
                    out.write(json.dumps({
                        "op": "put", "token": rec.token.text,
                        "cert": base64.b64encode(rec.cert_bytes).decode(),
                        "issuer": rec.issuer.text, "issued": rec.issued,
                        "expiry": rec.expiry}, sort_keys=True) + "\n")
            self._fh.close()
            os.replace(tmp, self.path)
            self._fh = open(self.path, "a", encoding="utf-8")

    def close(self):
        self._fh.close()
