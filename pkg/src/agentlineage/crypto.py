"""Ed25519 key handling and the string formats keys/signatures travel in.

Keys and signatures are carried as "ed25519:" + lowercase hex.  The parser
additionally accepts base64 payloads, which appear in older card fixtures.
"""

from __future__ import annotations

import base64
import binascii
import json
import os
from dataclasses import dataclass
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

PREFIX = "ed25519:"


@dataclass(frozen=True)
class KeyPair:
    """An Ed25519 signing key plus its public half."""

    private_key: Ed25519PrivateKey

    @property
    def public_key(self) -> Ed25519PublicKey:
        return self.private_key.public_key()

    @property
    def public_bytes(self) -> bytes:
        return self.public_key.public_bytes(Encoding.Raw, PublicFormat.Raw)

    @property
    def public_str(self) -> str:
        return encode_public_key(self.public_key)

    def sign(self, message: bytes) -> bytes:
        return self.private_key.sign(message)

    def seed(self) -> bytes:
        return self.private_key.private_bytes(
            Encoding.Raw, PrivateFormat.Raw, NoEncryption()
        )


def generate_keypair() -> KeyPair:
    return KeyPair(Ed25519PrivateKey.generate())


def keypair_from_seed(seed: bytes) -> KeyPair:
    """Deterministic keypair from a 32-byte seed (scripted scenarios)."""
    if len(seed) != 32:
        raise ValueError("seed must be exactly 32 bytes")
    return KeyPair(Ed25519PrivateKey.from_private_bytes(seed))


def _decode_payload(payload: str, expected_len: int) -> bytes:
    try:
        raw = bytes.fromhex(payload)
        if len(raw) == expected_len:
            return raw
    except ValueError:
        pass
    try:
        raw = base64.b64decode(payload, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ValueError(f"neither hex nor base64: {payload!r}") from exc
    if len(raw) != expected_len:
        raise ValueError(f"decoded to {len(raw)} bytes, expected {expected_len}")
    return raw


def _strip_prefix(value: str) -> str:
    if not value.startswith(PREFIX):
        raise ValueError(f"missing {PREFIX!r} prefix: {value!r}")
    return value[len(PREFIX):]


def encode_public_key(key: Ed25519PublicKey) -> str:
    return PREFIX + key.public_bytes(Encoding.Raw, PublicFormat.Raw).hex()


def decode_public_key(value: str) -> Ed25519PublicKey:
    raw = _decode_payload(_strip_prefix(value), 32)
    return Ed25519PublicKey.from_public_bytes(raw)


def encode_signature(sig: bytes) -> str:
    return PREFIX + sig.hex()


def decode_signature(value: str) -> bytes:
    return _decode_payload(_strip_prefix(value), 64)


def verify_signature(key: Ed25519PublicKey, signature: bytes, message: bytes) -> bool:
    """Boolean signature check; malformed input is a plain False."""
    if len(signature) != 64:
        return False
    try:
        key.verify(signature, message)
        return True
    except InvalidSignature:
        return False


# Key files hold the raw seed; treat them like any other secret material.

def save_keypair(keypair: KeyPair, path: str | Path) -> None:
    path = Path(path)
    doc = {
        "private_key": PREFIX + keypair.seed().hex(),
        "public_key": keypair.public_str,
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")
    os.chmod(path, 0o600)


def load_keypair(path: str | Path) -> KeyPair:
    doc = json.loads(Path(path).read_text())
    seed = _decode_payload(_strip_prefix(doc["private_key"]), 32)
    return keypair_from_seed(seed)
