"""Principals, tokens, scids and signed logic-set certificates.

Certificate wire format (version 1) is line-oriented UTF-8 text::

    SAFE-CERT 1
    scheme <signature scheme id>
    key <base64url raw public key>
    issuer <base64url principal ID>
    label <JSON string>
    issued <integer milliseconds>
    expiry <integer milliseconds>
    link <base64url token>            (zero or more, in order)
    stmt <canonical statement text>   (zero or more, in order)
    end
    sig <base64url signature>

Everything up to and including ``end\\n`` is the signed payload.  Decoding
re-encodes the parsed payload and rejects input that is not byte-identical,
so every certificate has exactly one accepted encoding.
"""
from __future__ import annotations

import base64
import hashlib
import json
import math
import re
import textwrap
import time
import uuid
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ed25519, padding, rsa

from .logic.parser import LogicSyntaxError, parse_program, parse_statement
from .logic.terms import SELF, Statement, Var, format_statement, resolve_self

__all__ = [
    "Token", "PrincipalID", "Scid", "PublicKey", "KeyPair", "LogicSet",
    "Certificate", "ValidatedSet", "CertificateError", "DecodeError",
    "BadSignatureError", "KeyMismatchError", "SpeakerMismatchError",
    "ExpiredError", "NotYetValidError", "principal_id", "make_token",
    "new_scid", "root_id", "parse_scid", "scid_token", "build_and_sign",
    "sign_logic_set", "verify_certificate", "check_authenticity", "encode", "decode", "armor",
    "dearmor", "check_speakers", "MAX_LABEL_BYTES",
]

MAX_LABEL_BYTES = 4096
FORMAT_VERSION = 1


def b64u(raw: bytes) -> str:
    return base64.urlsafe_b64encode(raw).rstrip(b"=").decode("ascii")


def unb64u(text: str) -> bytes:
    if not re.fullmatch(r"[A-Za-z0-9_-]*", text):
        raise ValueError(f"not base64url: {text!r}")
    pad = "=" * (-len(text) % 4)
    raw = base64.urlsafe_b64decode(text + pad)
    if b64u(raw) != text:
        raise ValueError(f"non-canonical base64url: {text!r}")
    return raw


# --- identifiers ----------------------------------------------------------

class Token:
    """A 32-byte self-certifying reference, printed as base64url."""

    __slots__ = ("raw",)

    def __init__(self, raw: bytes):
        if not isinstance(raw, (bytes, bytearray)) or len(raw) != 32:
            raise ValueError("a token is exactly 32 bytes")
        object.__setattr__(self, "raw", bytes(raw))

    def __setattr__(self, name, value):
        raise AttributeError("tokens are immutable")

    @classmethod
    def from_text(cls, text: str) -> "Token":
        try:
            return cls(unb64u(text))
        except ValueError as exc:
            raise ValueError(f"malformed token {text!r}: {exc}") from None

    @property
    def text(self) -> str:
        return b64u(self.raw)

    def __str__(self):
        return self.text

    def __repr__(self):
        return f"{type(self).__name__}({self.text[:10]}...)"

    def __eq__(self, other):
        return isinstance(other, Token) and other.raw == self.raw

    def __hash__(self):
        return hash(self.raw)

    def __lt__(self, other):
        return self.raw < other.raw


class PrincipalID(Token):
    """SHA-256 of a principal's canonical public-key encoding."""

    __slots__ = ()


@dataclass(frozen=True)
class Scid:
    authority: PrincipalID
    guid: str

    @property
    def text(self) -> str:
        return f"{self.authority.text}:{self.guid}"

    def __str__(self):
        return self.text


_GUID = re.compile(r"^[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}$")


def parse_scid(text: str) -> Scid:
    auth, sep, guid = text.partition(":")
    if not sep or not _GUID.match(guid):
        raise ValueError(f"malformed scid {text!r}")
    try:
        return Scid(PrincipalID(unb64u(auth)), guid)
    except ValueError:
        raise ValueError(f"malformed scid {text!r}") from None


def new_scid(authority: PrincipalID,
             guid_source: Optional[Callable[[], uuid.UUID]] = None) -> Scid:
    g = (guid_source or uuid.uuid4)()
    return Scid(PrincipalID(authority.raw), str(g))


def root_id(scid: Union[Scid, str]) -> PrincipalID:
    if isinstance(scid, str):
        scid = parse_scid(scid)
    return scid.authority


# --- keys -----------------------------------------------------------------

@dataclass(frozen=True)
class PublicKey:
    scheme: str
    raw: bytes

    def canonical(self) -> bytes:
        """Bytes hashed into the principal ID: scheme id, NUL, raw key."""
        return self.scheme.encode("ascii") + b"\x00" + self.raw

    @property
    def principal_id(self) -> PrincipalID:
        return principal_id(self)

    def verify(self, signature: bytes, data: bytes) -> bool:
        return _scheme(self.scheme).verify(self.raw, signature, data)


class _Ed25519:
    name = "ed25519"

    @staticmethod
    def generate():
        return ed25519.Ed25519PrivateKey.generate()

    @staticmethod
    def public_raw(priv) -> bytes:
        return priv.public_key().public_bytes(serialization.Encoding.Raw,
                                              serialization.PublicFormat.Raw)

    @staticmethod
    def sign(priv, data: bytes) -> bytes:
        return priv.sign(data)

    @staticmethod
    def verify(raw: bytes, sig: bytes, data: bytes) -> bool:
        try:
            ed25519.Ed25519PublicKey.from_public_bytes(raw).verify(sig, data)
            return True
        except (InvalidSignature, ValueError):
            return False

    @staticmethod
    def check_public(raw: bytes):
        ed25519.Ed25519PublicKey.from_public_bytes(raw)


class _RsaPkcs1:
    name = "rsa-pkcs1-sha256"

    @staticmethod
    def generate():
        return rsa.generate_private_key(public_exponent=65537, key_size=2048)

    @staticmethod
    def public_raw(priv) -> bytes:
        return priv.public_key().public_bytes(
            serialization.Encoding.DER,
            serialization.PublicFormat.SubjectPublicKeyInfo)

    @staticmethod
    def sign(priv, data: bytes) -> bytes:
        return priv.sign(data, padding.PKCS1v15(), hashes.SHA256())

    @staticmethod
    def verify(raw: bytes, sig: bytes, data: bytes) -> bool:
        try:
            pub = serialization.load_der_public_key(raw)
            if not isinstance(pub, rsa.RSAPublicKey):
                return False
            pub.verify(sig, data, padding.PKCS1v15(), hashes.SHA256())
            return True
        except (InvalidSignature, ValueError):
            return False

    @staticmethod
    def check_public(raw: bytes):
        if not isinstance(serialization.load_der_public_key(raw), rsa.RSAPublicKey):
            raise ValueError("not an RSA public key")


SCHEMES = {s.name: s for s in (_Ed25519, _RsaPkcs1)}
DEFAULT_SCHEME = "ed25519"


def _scheme(name: str):
    try:
        return SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown signature scheme {name!r}") from None


class KeyPair:
    """A signing key.  ``principal_id`` is the hash of its public half."""

    def __init__(self, private_key, scheme: str = DEFAULT_SCHEME):
        self.scheme = scheme
        self._priv = private_key
        s = _scheme(scheme)
        self.public_key = PublicKey(scheme, s.public_raw(private_key))
        self.principal_id = principal_id(self.public_key)

    @classmethod
    def generate(cls, scheme: str = DEFAULT_SCHEME) -> "KeyPair":
        return cls(_scheme(scheme).generate(), scheme)

    @classmethod
    def from_seed(cls, seed: bytes) -> "KeyPair":
        """Deterministic Ed25519 key from a 32-byte seed (tests, fixtures)."""
        return cls(ed25519.Ed25519PrivateKey.from_private_bytes(
            hashlib.sha256(seed).digest()), "ed25519")

    def sign(self, data: bytes) -> bytes:
        return _scheme(self.scheme).sign(self._priv, data)

    def to_pem(self) -> bytes:
        return self._priv.private_bytes(serialization.Encoding.PEM,
                                        serialization.PrivateFormat.PKCS8,
                                        serialization.NoEncryption())

    @classmethod
    def from_pem(cls, data: bytes) -> "KeyPair":
        priv = serialization.load_pem_private_key(data, password=None)
        if isinstance(priv, ed25519.Ed25519PrivateKey):
            return cls(priv, "ed25519")
        if isinstance(priv, rsa.RSAPrivateKey):
            return cls(priv, "rsa-pkcs1-sha256")
        raise ValueError("unsupported private key type")

    def __repr__(self):
        return f"KeyPair({self.scheme}, {self.principal_id.text[:10]}...)"


def principal_id(pubkey: PublicKey) -> PrincipalID:
    """SHA-256 over ``scheme-id || 0x00 || raw public key``."""
    try:
        _scheme(pubkey.scheme).check_public(pubkey.raw)
    except (ValueError, TypeError) as exc:
        raise ValueError(f"malformed public key: {exc}") from None
    return PrincipalID(hashlib.sha256(pubkey.canonical()).digest())


def make_token(issuer: Token, label: str) -> Token:
    """Empty label -> the issuer ID itself; otherwise
    SHA-256(issuer || 0x00 || UTF-8 label)."""
    data = label.encode("utf-8")
    if len(data) > MAX_LABEL_BYTES:
        raise ValueError(f"label exceeds {MAX_LABEL_BYTES} bytes")
    if not data:
        return Token(issuer.raw)
    return Token(hashlib.sha256(issuer.raw + b"\x00" + data).digest())


def scid_token(scid: Union[Scid, str]) -> Token:
    """Token of an object's ID set: the authority's set labelled by the scid."""
    if isinstance(scid, str):
        scid = parse_scid(scid)
    return make_token(scid.authority, scid.text)


# --- logic sets and certificates --------------------------------------------

class CertificateError(ValueError):
    code = "invalid"


class DecodeError(CertificateError):
    code = "decode-failure"


class BadSignatureError(CertificateError):
    code = "bad-signature"


class KeyMismatchError(CertificateError):
    code = "key-mismatch"


class SpeakerMismatchError(CertificateError):
    code = "speaker-mismatch"


class ExpiredError(CertificateError):
    code = "expired"


class NotYetValidError(CertificateError):
    code = "not-yet-valid"


def _ms(t: float) -> int:
    return int(round(t * 1000))


@dataclass(frozen=True)
class LogicSet:
    label: str
    issuer: PrincipalID
    statements: tuple = ()
    links: tuple = ()
    issued: float = 0.0
    expiry: float = 0.0

    @property
    def token(self) -> Token:
        return make_token(self.issuer, self.label)


@dataclass(frozen=True)
class Certificate:
    payload: bytes
    signature: bytes
    scheme: str
    public_key: PublicKey = field(compare=False)
    logic_set: LogicSet = field(compare=False)

    @property
    def token(self) -> Token:
        return self.logic_set.token

    @property
    def issuer(self) -> PrincipalID:
        return self.logic_set.issuer


@dataclass(frozen=True)
class ValidatedSet:
    """A verified logic set; statements carry the set token as origin."""

    logic_set: LogicSet
    token: Token
    certificate: Optional[Certificate]
    statements: tuple

    @property
    def links(self) -> tuple:
        return self.logic_set.links

    @property
    def expiry(self) -> float:
        return self.logic_set.expiry

    @property
    def issued(self) -> float:
        return self.logic_set.issued


def check_speakers(statements: Iterable[Statement], issuer_text: str) -> None:
    """Asserted facts and rule heads must speak as the issuer."""
    for st in statements:
        sp = st.head.speaker
        if sp != issuer_text or type(sp) is not str:
            raise SpeakerMismatchError(
                f"statement speaks as {sp!r}, not the issuer: {format_statement(st)}")
        for b in st.body:
            if any(a is SELF for a in b.args):
                raise SpeakerMismatchError(f"unresolved $Self in {format_statement(st)}")


def _payload(ls: LogicSet, pub: PublicKey) -> bytes:
    lines = [f"SAFE-CERT {FORMAT_VERSION}",
             f"scheme {pub.scheme}",
             f"key {b64u(pub.raw)}",
             f"issuer {ls.issuer.text}",
             f"label {json.dumps(ls.label, ensure_ascii=False)}",
             f"issued {_ms(ls.issued)}",
             f"expiry {_ms(ls.expiry)}"]
    lines += [f"link {t.text}" for t in ls.links]
    lines += [f"stmt {format_statement(st)}" for st in ls.statements]
    lines.append("end")
    return ("\n".join(lines) + "\n").encode("utf-8")


def sign_logic_set(ls: LogicSet, keypair: KeyPair) -> Certificate:
    """Sign without checking speakers (lower-level than build_and_sign)."""
    payload = _payload(ls, keypair.public_key)
    return Certificate(payload, keypair.sign(payload), keypair.scheme,
                       keypair.public_key, ls)


def build_and_sign(label: str, statements: Union[str, Sequence[Statement]],
                   links: Sequence[Token], validity: float, keypair: KeyPair,
                   now: Optional[float] = None) -> Certificate:
    """Resolve ``$Self`` to the signer, check speakers, and sign."""
    if validity <= 0:
        raise ValueError("validity window must be positive")
    if len(label.encode("utf-8")) > MAX_LABEL_BYTES:
        raise ValueError(f"label exceeds {MAX_LABEL_BYTES} bytes")
    if isinstance(statements, str):
        statements = parse_program(statements)
    me = keypair.principal_id.text
    stmts = tuple(st.with_origin(None) for st in resolve_self(statements, me))
    check_speakers(stmts, me)
    now = time.time() if now is None else now
    # round the issue time down so a set is valid at the instant it is made
    issued_ms = math.floor(now * 1000)
    if issued_ms / 1000 > now:
        issued_ms -= 1
    issued = issued_ms / 1000
    expiry = _ms(now + validity) / 1000
    if expiry <= issued:
        raise ValueError("validity window must be positive")
    for t in links:
        if not isinstance(t, Token):
            raise TypeError(f"links must be tokens, got {t!r}")
    ls = LogicSet(label, keypair.principal_id, stmts,
                  tuple(Token(t.raw) for t in links), issued, expiry)
    return sign_logic_set(ls, keypair)


def check_authenticity(cert: Certificate) -> None:
    """Signature over the payload, then embedded key hash vs issuer."""
    pub = cert.public_key
    if pub.scheme != cert.scheme:
        raise DecodeError("scheme mismatch between header and key")
    try:
        ok = pub.verify(cert.signature, cert.payload)
    except ValueError:
        ok = False
    if not ok:
        raise BadSignatureError("signature does not verify over the payload")
    try:
        pid = principal_id(pub)
    except ValueError as exc:
        raise KeyMismatchError(str(exc)) from None
    if pid != cert.logic_set.issuer:
        raise KeyMismatchError("embedded key does not hash to the issuer")


def verify_certificate(cert: Certificate, now: float) -> ValidatedSet:
    """Signature, key hash, speakers, and validity window, in that order."""
    check_authenticity(cert)
    ls = cert.logic_set
    check_speakers(ls.statements, ls.issuer.text)
    if now < ls.issued:
        raise NotYetValidError(f"issued at {ls.issued}, now {now}")
    if now >= ls.expiry:
        raise ExpiredError(f"expired at {ls.expiry}, now {now}")
    token = ls.token
    return ValidatedSet(ls, token, cert,
                        tuple(st.with_origin(token) for st in ls.statements))


# --- encoding -------------------------------------------------------------

_HEADER = "SAFE-CERT "


def encode(cert: Certificate) -> bytes:
    return cert.payload + f"sig {b64u(cert.signature)}\n".encode("ascii")


def decode(data: bytes) -> Certificate:
    """Parse wire bytes; rejects truncation, unknown versions and
    non-canonical encodings."""
    try:
        text = bytes(data).decode("utf-8")
    except UnicodeDecodeError:
        raise DecodeError("certificate is not UTF-8") from None
    if not text.startswith(_HEADER):
        raise DecodeError("missing SAFE-CERT header")
    first, nl, _ = text.partition("\n")
    if not nl:
        raise DecodeError("truncated certificate: no end marker")
    if first != f"{_HEADER}{FORMAT_VERSION}":
        raise DecodeError(f"unknown certificate version: {first[len(_HEADER):]!r}")
    cut = text.rfind("\nend\n")
    if cut < 0:
        raise DecodeError("truncated certificate: no end marker")
    payload_text = text[:cut + 5]
    tail = text[cut + 5:]
    if not tail.startswith("sig ") or not tail.endswith("\n") or tail.count("\n") != 1:
        raise DecodeError("missing or malformed signature line")
    try:
        signature = unb64u(tail[4:-1])
    except ValueError as exc:
        raise DecodeError(str(exc)) from None
    lines = payload_text.split("\n")[:-1]
    try:
        ls, pub = _parse_payload(lines)
    except (ValueError, KeyError, LogicSyntaxError) as exc:
        raise DecodeError(f"malformed payload: {exc}") from None
    payload = payload_text.encode("utf-8")
    if _payload(ls, pub) != payload:
        raise DecodeError("non-canonical certificate encoding")
    return Certificate(payload, signature, pub.scheme, pub, ls)


def _field(lines, i, name):
    if i >= len(lines) or not lines[i].startswith(name + " "):
        raise ValueError(f"expected field {name!r} at line {i + 1}")
    return lines[i][len(name) + 1:]


def _parse_payload(lines):
    i = 1
    scheme = _field(lines, i, "scheme"); i += 1
    _scheme(scheme)
    key = unb64u(_field(lines, i, "key")); i += 1
    issuer = PrincipalID(unb64u(_field(lines, i, "issuer"))); i += 1
    label = json.loads(_field(lines, i, "label")); i += 1
    if not isinstance(label, str):
        raise ValueError("label must be a string")
    issued = int(_field(lines, i, "issued")) / 1000; i += 1
    expiry = int(_field(lines, i, "expiry")) / 1000; i += 1
    links = []
    while i < len(lines) and lines[i].startswith("link "):
        links.append(Token(unb64u(lines[i][5:])))
        i += 1
    stmts = []
    while i < len(lines) and lines[i].startswith("stmt "):
        st = parse_statement(lines[i][5:])
        if any(isinstance(a, Var) for a in st.head.args) and not st.body:
            raise ValueError("non-ground fact")
        stmts.append(st)
        i += 1
    if i != len(lines) - 1 or lines[i] != "end":
        raise ValueError(f"unexpected line {i + 1}")
    pub = PublicKey(scheme, key)
    return LogicSet(label, issuer, tuple(stmts), tuple(links), issued, expiry), pub


_ARMOR_BEGIN = "-----BEGIN SAFE CERTIFICATE-----"
_ARMOR_END = "-----END SAFE CERTIFICATE-----"


def armor(cert: Certificate) -> str:
    body = base64.b64encode(encode(cert)).decode("ascii")
    return "\n".join([_ARMOR_BEGIN, *textwrap.wrap(body, 64), _ARMOR_END]) + "\n"


def dearmor(text: str) -> Certificate:
    text = text.strip()
    if not (text.startswith(_ARMOR_BEGIN) and text.endswith(_ARMOR_END)):
        raise DecodeError("missing armor delimiters")
    body = "".join(text[len(_ARMOR_BEGIN):-len(_ARMOR_END)].split())
    try:
        raw = base64.b64decode(body, validate=True)
    except ValueError:
        raise DecodeError("bad armor base64") from None
    return decode(raw)
