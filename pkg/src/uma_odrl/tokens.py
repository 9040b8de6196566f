"""Compact Ed25519-signed tokens and key handling.

Wire format: ``b64url(header) "." b64url(payload) "." b64url(signature)``,
base64url without padding, header exactly ``{"alg":"EdDSA"}``, payload compact
JSON with sorted keys, signature Ed25519 over the ASCII ``header.payload``.
Used both for claim tokens and for RPTs.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import re
from pathlib import Path
from typing import Any, Dict, Tuple, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

HEADER = {"alg": "EdDSA"}
HEADER_BYTES = b'{"alg":"EdDSA"}'

HEADER_SEGMENT = base64.urlsafe_b64encode(HEADER_BYTES).rstrip(b"=").decode("ascii")

_B64URL = re.compile(r"^[A-Za-z0-9_-]*$")


class TokenError(Exception):
    """Base class for token failures."""


class MalformedToken(TokenError):
    pass


class BadSignature(TokenError):
    pass


def b64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64url_decode(text: str) -> bytes:
    if not _B64URL.match(text) or len(text) % 4 == 1:
        raise MalformedToken("invalid base64url segment")
    try:
        data = base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))
    except (binascii.Error, ValueError):
        raise MalformedToken("invalid base64url segment") from None
    # non-canonical trailing bits would give one signature several encodings
    if b64url_encode(data) != text:
        raise MalformedToken("non-canonical base64url segment")
    return data


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True, ensure_ascii=False).encode("utf-8")


def encode_token(payload: Dict[str, Any], key: Ed25519PrivateKey) -> str:
    signing_input = HEADER_SEGMENT + "." + b64url_encode(canonical_json(payload))
    signature = key.sign(signing_input.encode("ascii"))
    return signing_input + "." + b64url_encode(signature)


def decode_unverified(token: str) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """Split and JSON-decode header and payload without checking the signature."""
    if not isinstance(token, str):
        raise MalformedToken("token must be a string")
    parts = token.split(".")
    if len(parts) != 3:
        raise MalformedToken("token must have three segments")
    try:
        header = json.loads(b64url_decode(parts[0]).decode("utf-8"))
        payload = json.loads(b64url_decode(parts[1]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise MalformedToken("token segments are not JSON") from None
    if not isinstance(header, dict) or not isinstance(payload, dict):
        raise MalformedToken("token header and payload must be JSON objects")
    return header, payload


def verify_token(token: str, public_key: Ed25519PublicKey) -> Dict[str, Any]:
    """Return the payload if the header is EdDSA and the signature verifies."""
    _, payload = decode_unverified(token)
    if token.split(".", 1)[0] != HEADER_SEGMENT:
        raise BadSignature("unsupported token header")
    signing_input, _, sig = token.rpartition(".")
    try:
        public_key.verify(b64url_decode(sig), signing_input.encode("ascii"))
    except (InvalidSignature, MalformedToken, UnicodeEncodeError):
        raise BadSignature("signature does not verify") from None
    return payload


# ---------------------------------------------------------------------------
# Keys
# ---------------------------------------------------------------------------


def generate_key() -> Ed25519PrivateKey:
    return Ed25519PrivateKey.generate()


def private_key_from_seed_hex(text: str) -> Ed25519PrivateKey:
    seed = bytes.fromhex(text.strip())
    if len(seed) != 32:
        raise ValueError("Ed25519 seed must be 32 bytes")
    return Ed25519PrivateKey.from_private_bytes(seed)


def seed_hex(key: Ed25519PrivateKey) -> str:
    return key.private_bytes(
        serialization.Encoding.Raw, serialization.PrivateFormat.Raw, serialization.NoEncryption()).hex()


def load_private_key(path: Union[str, Path]) -> Ed25519PrivateKey:
    """Read a key file holding a hex-encoded 32-byte seed."""
    return private_key_from_seed_hex(Path(path).read_text(encoding="ascii"))


def save_private_key(key: Ed25519PrivateKey, path: Union[str, Path]) -> None:
    path = Path(path)
    path.write_text(seed_hex(key) + "\n", encoding="ascii")
    path.chmod(0o600)


def public_key_bytes(key: Union[Ed25519PrivateKey, Ed25519PublicKey]) -> bytes:
    if isinstance(key, Ed25519PrivateKey):
        key = key.public_key()
    return key.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


def public_key_hex(key: Union[Ed25519PrivateKey, Ed25519PublicKey]) -> str:
    return public_key_bytes(key).hex()


def public_key_from_hex(text: str) -> Ed25519PublicKey:
    raw = bytes.fromhex(text.strip())
    if len(raw) != 32:
        raise ValueError("Ed25519 public key must be 32 bytes")
    return Ed25519PublicKey.from_public_bytes(raw)


def key_id(key: Union[Ed25519PrivateKey, Ed25519PublicKey]) -> str:
    return b64url_encode(hashlib.sha256(public_key_bytes(key)).digest()[:16])


def to_jwk(key: Union[Ed25519PrivateKey, Ed25519PublicKey]) -> Dict[str, str]:
    return {
        "kty": "OKP",
        "crv": "Ed25519",
        "alg": "EdDSA",
        "use": "sig",
        "kid": key_id(key),
        "x": b64url_encode(public_key_bytes(key)),
    }


def from_jwk(jwk: Dict[str, Any]) -> Ed25519PublicKey:
    if jwk.get("kty") != "OKP" or jwk.get("crv") != "Ed25519" or not isinstance(jwk.get("x"), str):
        raise ValueError("not an Ed25519 JWK")
    raw = b64url_decode(jwk["x"])
    if len(raw) != 32:
        raise ValueError("Ed25519 public key must be 32 bytes")
    return Ed25519PublicKey.from_public_bytes(raw)
