import base64
import hashlib
import random
import uuid
from pathlib import Path

import pytest

from safetrust.certset import (BadSignatureError, CertificateError, DecodeError,
                               ExpiredError, KeyMismatchError, KeyPair, LogicSet,
                               NotYetValidError, PrincipalID, PublicKey,
                               SpeakerMismatchError, Token, armor, build_and_sign,
                               dearmor, decode, encode, make_token, new_scid,
                               parse_scid, principal_id, root_id, scid_token,
                               sign_logic_set, verify_certificate)
from safetrust.logic import parse_program, resolve_self

GOLDEN = Path(__file__).parent / "fixtures" / "golden.cert"
GOLDEN_SHA256 = "3ee2e9a2823bc32a20b87545aed5c09a158931cc44f5ca7a682924e4ad5c6fdc"
GOLDEN_KEY_HEX = "25f5c8c61eb9a9810b9ff69ce828f4a4db85edf004a9bf43a76e0349c18e9bf7"
GOLDEN_PID = "Dijd2yUJNw7Y0LsEsJk_3i2_jnSGbPlUuCLLk3BoGz8"


def b64(raw):
    return base64.urlsafe_b64encode(raw).decode().rstrip("=")


@pytest.fixture(scope="module")
def alice():
    return KeyPair.from_seed(b"alice")


def test_principal_id_oracle():
    k = KeyPair.from_seed(b"golden-issuer")
    assert k.public_key.raw.hex() == GOLDEN_KEY_HEX
    expected = hashlib.sha256(b"ed25519\x00" + bytes.fromhex(GOLDEN_KEY_HEX)).digest()
    assert k.principal_id.raw == expected
    assert k.principal_id.text == b64(expected) == GOLDEN_PID


def test_principal_id_determinism_and_distinctness(alice):
    assert principal_id(alice.public_key) == principal_id(alice.public_key)
    assert KeyPair.generate().principal_id != KeyPair.generate().principal_id
    with pytest.raises(ValueError):
        principal_id(PublicKey("ed25519", b"short"))


def test_make_token(alice):
    p = alice.principal_id
    assert make_token(p, "") == p
    assert make_token(p, "subject") == make_token(p, "subject")
    expected = hashlib.sha256(p.raw + b"\x00" + "capset/slice1".encode()).digest()
    assert make_token(p, "capset/slice1").raw == expected
    with pytest.raises(ValueError):
        make_token(p, "x" * 4097)


def test_scid_roundtrip_and_uniqueness(alice):
    a = alice.principal_id
    s = new_scid(a)
    assert root_id(s) == a and root_id(s.text) == a
    assert parse_scid(s.text) == s
    assert len({new_scid(a).text for _ in range(10_000)}) == 10_000
    with pytest.raises(ValueError):
        parse_scid("nocolon")
    with pytest.raises(ValueError):
        parse_scid(a.text + ":not-a-guid")


def test_deterministic_scid(alice):
    g = uuid.UUID(int=5)
    assert new_scid(alice.principal_id, lambda: g).guid == str(g)


def test_build_verify_roundtrip(alice):
    c = build_and_sign("subject", "id(alice). role(admin).", [], 60, alice, now=100)
    v = verify_certificate(c, 100)
    assert v.token == make_token(alice.principal_id, "subject")
    assert len(v.statements) == 2 and all(s.origin == v.token for s in v.statements)
    d = decode(encode(c))
    assert d == c and d.logic_set == c.logic_set


def test_links_preserved_in_order(alice):
    links = [make_token(alice.principal_id, f"l{i}") for i in (3, 1, 2)]
    c = decode(encode(build_and_sign("cap/x", "", links, 60, alice, now=0)))
    assert list(c.logic_set.links) == links


def test_foreign_speaker_rejected(alice):
    with pytest.raises(SpeakerMismatchError):
        build_and_sign("x", "q: f(a).", [], 60, alice)
    with pytest.raises(SpeakerMismatchError):
        build_and_sign("x", "q: f(?X) :- g(?X).", [], 60, alice)
    # foreign speakers are fine in bodies
    build_and_sign("x", "f(?X) :- q: g(?X).", [], 60, alice)


def test_validity_window(alice):
    c = build_and_sign("x", "", [], 10, alice, now=1000)
    with pytest.raises(ExpiredError) as ei:
        verify_certificate(c, 1010)
    assert ei.value.code == "expired"
    with pytest.raises(NotYetValidError):
        verify_certificate(c, 999)
    with pytest.raises(ValueError):
        build_and_sign("x", "", [], 0, alice)


def test_key_mismatch(alice):
    mallory = KeyPair.from_seed(b"mallory")
    ls = LogicSet("x", alice.principal_id, (), (), 0.0, 100.0)
    with pytest.raises(KeyMismatchError):
        verify_certificate(sign_logic_set(ls, mallory), 1)


def test_speaker_mismatch_detected_on_verify(alice):
    sts = tuple(resolve_self(parse_program("f(a)."), "someoneelse"))
    ls = LogicSet("x", alice.principal_id, sts, (), 0.0, 100.0)
    with pytest.raises(SpeakerMismatchError):
        verify_certificate(sign_logic_set(ls, alice), 1)


def test_mutation_fuzz(alice):
    c = build_and_sign("fuzz", "member(bob, g1). cap(?S) :- other: ok(?S).",
                       [make_token(alice.principal_id, "subject")], 600, alice, now=0)
    raw = encode(c)
    rng = random.Random(1)
    for _ in range(1000):
        i = rng.randrange(len(raw))
        b = bytearray(raw)
        b[i] = (b[i] + rng.randrange(1, 256)) % 256
        with pytest.raises(CertificateError):
            verify_certificate(decode(bytes(b)), 1)


def test_decode_rejects_bad_input(alice):
    raw = encode(build_and_sign("x", "f(a).", [], 60, alice, now=0))
    for bad in (raw[:20], raw[:-5], raw.replace(b"SAFE-CERT 1", b"SAFE-CERT 2"),
                raw.replace(b"f(a)", b"f( a )"), raw + b"extra\n", b"\xff\xfe"):
        with pytest.raises(DecodeError) as ei:
            decode(bad)
        assert ei.value.code == "decode-failure"


def test_encode_deterministic_and_unicode(alice):
    c = build_and_sign("ラベル/ü", 'f("ü").', [], 60, alice, now=5)
    assert encode(c) == encode(c)
    assert decode(encode(c)).logic_set.label == "ラベル/ü"
    assert dearmor(armor(c)) == c


def test_golden_fixture():
    raw = GOLDEN.read_bytes()
    assert hashlib.sha256(raw).hexdigest() == GOLDEN_SHA256
    c = decode(raw)
    assert encode(c) == raw
    k = KeyPair.from_seed(b"golden-issuer")
    again = build_and_sign("capset/slice1", 'member(bob, "grüppe"). cap(?S) :- other: ok(?S).',
                           [make_token(k.principal_id, "subject")], 3600, k,
                           now=1_700_000_000)
    assert encode(again) == raw
    assert verify_certificate(c, 1_700_000_001).token == make_token(k.principal_id, "capset/slice1")


def test_id_set_fetchable_by_pid(alice):
    c = build_and_sign("", "", [], 60, alice, now=0)
    assert verify_certificate(c, 1).token == alice.principal_id
    assert isinstance(alice.principal_id, PrincipalID) and isinstance(c.token, Token)


def test_rsa_scheme_coexists():
    k = KeyPair.generate("rsa-pkcs1-sha256")
    c = decode(encode(build_and_sign("s", "f(a).", [], 60, k, now=0)))
    assert verify_certificate(c, 1).logic_set.issuer == k.principal_id
    assert KeyPair.from_pem(k.to_pem()).principal_id == k.principal_id


def test_pem_roundtrip(alice):
    assert KeyPair.from_pem(alice.to_pem()).principal_id == alice.principal_id


def test_error_codes_distinct():
    codes = {e.code for e in (DecodeError, BadSignatureError, KeyMismatchError,
                              SpeakerMismatchError, ExpiredError, NotYetValidError)}
    assert len(codes) == 6
