import itertools
import json
from datetime import datetime, timedelta, timezone

import pytest

from uma_odrl import claims, tokens
from uma_odrl.claims import (
    IDTOKEN_FORMAT,
    BadSignature,
    ClaimToken,
    Expired,
    IssuerRegistry,
    MissingWebid,
    UnknownIssuer,
    UnsupportedFormat,
    mint_test_token,
    verify,
)

IDP = "https://idp.test"
ALICE = "https://alice.test/card#me"
KEY = tokens.private_key_from_seed_hex("33" * 32)
ROGUE = tokens.private_key_from_seed_hex("44" * 32)
NOW = datetime(2026, 1, 1, tzinfo=timezone.utc)
LATER = int((NOW + timedelta(hours=1)).timestamp())


def registry():
    return IssuerRegistry({IDP: KEY.public_key()})


def test_valid_token_yields_webid_and_context():
    token = mint_test_token(ALICE, IDP, KEY, {"purpose": "https://w3id.org/dpv#Marketing"}, LATER)
    v = verify(token, registry(), NOW)
    assert (v.webid, v.issuer) == (ALICE, IDP)
    assert v.context == {"purpose": "https://w3id.org/dpv#Marketing"}
    assert v.verified_at == NOW


def test_expiry_boundary_is_strict():
    at_now = mint_test_token(ALICE, IDP, KEY, exp=int(NOW.timestamp()))
    just_before = mint_test_token(ALICE, IDP, KEY, exp=int(NOW.timestamp()) - 1)
    just_after = mint_test_token(ALICE, IDP, KEY, exp=int(NOW.timestamp()) + 1)
    for token in (at_now, just_before):
        with pytest.raises(Expired):
            verify(token, registry(), NOW)
    assert verify(just_after, registry(), NOW).webid == ALICE


@pytest.mark.parametrize("registered, signed_ok, unexpired, has_webid",
                         list(itertools.product([True, False], repeat=4)))
def test_accepts_iff_all_conjuncts_hold(registered, signed_ok, unexpired, has_webid):
    reg = registry() if registered else IssuerRegistry()
    key = KEY if signed_ok else ROGUE
    exp = LATER if unexpired else int(NOW.timestamp()) - 1
    token = mint_test_token(ALICE if has_webid else "", IDP, key, exp=exp)
    if registered and signed_ok and unexpired and has_webid:
        assert verify(token, reg, NOW).webid == ALICE
    else:
        with pytest.raises(claims.ClaimError):
            verify(token, reg, NOW)


def test_error_classes():
    good = mint_test_token(ALICE, IDP, KEY, exp=LATER)
    with pytest.raises(UnknownIssuer):
        verify(good, IssuerRegistry(), NOW)
    with pytest.raises(BadSignature):
        verify(mint_test_token(ALICE, IDP, ROGUE, exp=LATER), registry(), NOW)
    with pytest.raises(MissingWebid):
        verify(mint_test_token("", IDP, KEY, exp=LATER), registry(), NOW)
    with pytest.raises(MissingWebid):
        verify(mint_test_token("not an iri", IDP, KEY, exp=LATER), registry(), NOW)
    with pytest.raises(UnsupportedFormat):
        verify(ClaimToken(good.raw, "urn:other"), registry(), NOW)
    with pytest.raises(BadSignature):
        verify(ClaimToken("garbage", IDTOKEN_FORMAT), registry(), NOW)


def test_flipped_signature_bit():
    raw = mint_test_token(ALICE, IDP, KEY, exp=LATER).raw
    head, body, sig = raw.split(".")
    sig_bytes = bytearray(tokens.b64url_decode(sig))
    sig_bytes[0] ^= 1
    forged = ".".join([head, body, tokens.b64url_encode(bytes(sig_bytes))])
    with pytest.raises(BadSignature):
        verify(ClaimToken(forged), registry(), NOW)


def test_payload_tamper_detected():
    raw = mint_test_token(ALICE, IDP, KEY, exp=LATER).raw
    head, body, sig = raw.split(".")
    payload = json.loads(tokens.b64url_decode(body))
    payload["webid"] = "https://mallory.test/card#me"
    forged = ".".join([head, tokens.b64url_encode(tokens.canonical_json(payload)), sig])
    with pytest.raises(BadSignature):
        verify(ClaimToken(forged), registry(), NOW)


def test_registry_refuses_key_replacement(tmp_path):
    reg = registry()
    reg.register(IDP, KEY)  # same key again is fine
    with pytest.raises(ValueError):
        reg.register(IDP, ROGUE.public_key())
    path = tmp_path / "issuers.json"
    path.write_text(json.dumps({"issuers": reg.to_json()}))
    assert IDP in IssuerRegistry.load(path)
    path.write_text(json.dumps(reg.to_json()))
    assert tokens.public_key_hex(IssuerRegistry.load(path).get(IDP)) == tokens.public_key_hex(KEY)


def test_claim_token_needs_format():
    with pytest.raises(ValueError):
        ClaimToken("x.y.z", "")
