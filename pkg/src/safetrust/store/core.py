"""The write-checked certificate store."""
from __future__ import annotations

import base64
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional, Union

from ..certset import (Certificate, CertificateError, KeyPair, PrincipalID,
                       PublicKey, Token, check_authenticity, check_speakers,
                       decode, encode, principal_id)
from .backends import Backend, MemoryBackend

__all__ = ["StoreError", "NotFoundError", "PostRejected", "DeleteRejected",
           "StoreRecord", "DeleteRequest", "SafeStore", "DEFAULT_MAX_PAYLOAD",
           "sign_delete"]

DEFAULT_MAX_PAYLOAD = 1 << 20
DELETE_SKEW = 300.0


class StoreError(Exception):
    code = "store-error"

    def __init__(self, message: str = "", code: Optional[str] = None):
        super().__init__(message or self.code)
        if code is not None:
            self.code = code


class NotFoundError(StoreError, KeyError):
    code = "not-found"

    def __str__(self):
        return Exception.__str__(self)


class PostRejected(StoreError):
    """Codes: too-large, decode-failure, bad-signature, key-mismatch,
    token-mismatch, speaker-mismatch, expired, not-yet-valid,
    foreign-overwrite, stale-reissue."""

    code = "rejected"


class DeleteRejected(StoreError):
    """Codes: unauthorized, stale-request."""

    code = "unauthorized"


@dataclass(frozen=True)
class StoreRecord:
    token: Token
    cert_bytes: bytes
    issuer: PrincipalID
    issued: float
    expiry: float


@dataclass(frozen=True)
class DeleteRequest:
    token: Token
    timestamp: float
    public_key: PublicKey
    signature: bytes

    def message(self) -> bytes:
        return delete_message(self.token, self.timestamp)


def delete_message(token: Token, timestamp: float) -> bytes:
    return f"SAFE-DELETE\n{token.text}\n{int(round(timestamp * 1000))}\n".encode()


def sign_delete(keypair: KeyPair, token: Token, timestamp: Optional[float] = None) -> DeleteRequest:
    ts = time.time() if timestamp is None else timestamp
    ts = int(round(ts * 1000)) / 1000
    return DeleteRequest(token, ts, keypair.public_key,
                         keypair.sign(delete_message(token, ts)))


class SafeStore:
    """Content-addressed store; a post is accepted only from the issuer
    whose key hash and label produce the storage token."""

    def __init__(self, backend: Optional[Backend] = None,
                 max_payload: int = DEFAULT_MAX_PAYLOAD,
                 clock: Callable[[], float] = time.time):
        self.backend = backend if backend is not None else MemoryBackend()
        self.max_payload = max_payload
        self.clock = clock
        self._lock = threading.Lock()
        self.stats = {"posts": 0, "fetches": 0, "rejected": 0, "deletes": 0,
                      "swept": 0}

    def _count(self, key: str, n: int = 1):
        with self._lock:
            self.stats[key] += n

    def post(self, cert: Union[Certificate, bytes], token: Optional[Token] = None) -> Token:
        """Store a certificate; ``token`` is the address the caller claims."""
        try:
            return self._post(cert, token)
        except PostRejected:
            self._count("rejected")
            raise

    def _post(self, cert, token):
        raw = encode(cert) if isinstance(cert, Certificate) else bytes(cert)
        if len(raw) > self.max_payload:
            raise PostRejected(f"payload of {len(raw)} bytes exceeds {self.max_payload}",
                               "too-large")
        try:
            c = decode(raw)
            check_authenticity(c)
        except CertificateError as exc:
            raise PostRejected(str(exc), exc.code) from None
        ls = c.logic_set
        computed = ls.token
        if token is not None and token != computed:
            raise PostRejected("token does not match issuer key hash and label",
                               "token-mismatch")
        try:
            check_speakers(ls.statements, ls.issuer.text)
        except CertificateError as exc:
            raise PostRejected(str(exc), exc.code) from None
        now = self.clock()
        if now >= ls.expiry:
            raise PostRejected("certificate already expired", "expired")
        if now < ls.issued - DELETE_SKEW:
            raise PostRejected("certificate issued in the future", "not-yet-valid")
        rec = StoreRecord(computed, raw, ls.issuer, ls.issued, ls.expiry)
        with self._lock:
            prev = self.backend.get(computed)
            if prev is not None:
                if prev.issuer != ls.issuer:
                    raise PostRejected("token held by another issuer", "foreign-overwrite")
                if ls.issued < prev.issued:
                    raise PostRejected("older than the stored certificate", "stale-reissue")
            self.backend.put(rec)
            self.stats["posts"] += 1
        return computed

    def fetch(self, token: Token) -> bytes:
        """Stored bytes verbatim.  Expired records may still be returned."""
        self._count("fetches")
        rec = self.backend.get(token)
        if rec is None:
            raise NotFoundError(f"no set stored under {token.text}")
        return rec.cert_bytes

    def fetch_certificate(self, token: Token) -> Certificate:
        raw = self.fetch(token)
        try:
            return decode(raw)
        except CertificateError as exc:
            raise StoreError(f"corrupt record {token.text}: {exc}", "decode-failure") from None

    def record(self, token: Token) -> Optional[StoreRecord]:
        return self.backend.get(token)

    def delete(self, token: Token, request: DeleteRequest) -> None:
        with self._lock:
            rec = self.backend.get(token)
            if rec is None:
                raise NotFoundError(f"no set stored under {token.text}")
            if request.token != token:
                raise DeleteRejected("request is for another token", "unauthorized")
            try:
                signer = principal_id(request.public_key)
            except ValueError:
                raise DeleteRejected("malformed key", "unauthorized") from None
            if signer != rec.issuer or not request.public_key.verify(
                    request.signature, request.message()):
                raise DeleteRejected("delete not signed by the issuer", "unauthorized")
            now = self.clock()
            if abs(now - request.timestamp) > DELETE_SKEW or request.timestamp < rec.issued:
                raise DeleteRejected("request timestamp outside the accepted window",
                                     "stale-request")
            self.backend.delete(token)
            self.stats["deletes"] += 1

    def sweep(self, now: Optional[float] = None) -> int:
        """Reclaim expired records; returns how many were removed."""
        now = self.clock() if now is None else now
        n = 0
        with self._lock:
            for tok in list(self.backend.tokens()):
                rec = self.backend.get(tok)
                if rec is not None and rec.expiry <= now:
                    self.backend.delete(tok)
                    n += 1
            self.stats["swept"] += n
        return n

    def start_sweeper(self, interval: float = 60.0) -> threading.Event:
        """Background sweep every ``interval`` seconds; set the event to stop."""
        stop = threading.Event()

        def loop():
            while not stop.wait(interval):
                self.sweep()

        threading.Thread(target=loop, daemon=True, name="safestore-sweep").start()
        return stop

    def __len__(self):
        return len(self.backend)


def encode_key_header(pub: PublicKey) -> str:
    return f"{pub.scheme}:{base64.urlsafe_b64encode(pub.raw).decode().rstrip('=')}"


def decode_key_header(text: str) -> PublicKey:
    scheme, _, key = text.partition(":")
    raw = base64.urlsafe_b64decode(key + "=" * (-len(key) % 4))
    return PublicKey(scheme, raw)
