"""Sealing transcripts for a designated verifier.

A prover encrypts the serialized transcript to the verifier's X25519 key
(ephemeral ECDH -> HKDF-SHA256 -> AES-256-GCM) and signs the resulting
envelope with its Ed25519 key. Signature verification always happens before
any decryption attempt, so a forged envelope is rejected without touching
the ciphertext.

Envelope bytes: "PLE1" | ephemeral pub 32B | nonce 12B | u64 ct length | ct.
Sealed file (.envelope): "PLS1" | u16 version | prover sign pub 32B |
f64 created_at | u64 sig length | sig | u64 envelope length | envelope.
"""
from __future__ import annotations

import json
import os
import struct
import time
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

_ENVELOPE_MAGIC = b"PLE1"
_SEALED_MAGIC = b"PLS1"
_SEALED_VERSION = 1
_HKDF_INFO = b"trainproof-envelope-v1"


class SealError(Exception):
    """Envelope-layer failure (malformed bytes, wrong key, bad tag)."""


class SignatureError(SealError):
    """The prover signature over the envelope does not verify."""


class DecryptionError(SealError):
    """Signature was fine but the ciphertext would not open with this key."""


def _priv_bytes(key):
    return key.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())


def _pub_bytes(key):
    return key.public_bytes(Encoding.Raw, PublicFormat.Raw)


@dataclass
class Identity:
    """One party's key material: Ed25519 for signing, X25519 for receiving."""

    sign_key: Ed25519PrivateKey
    enc_key: X25519PrivateKey

    @property
    def sign_pub(self):
        return _pub_bytes(self.sign_key.public_key())

    @property
    def enc_pub(self):
        return _pub_bytes(self.enc_key.public_key())

    @property
    def party_id(self):
        return self.sign_pub.hex()

    def public_dict(self):
        return {
            "kind": "trainproof-public",
            "sign_pub_hex": self.sign_pub.hex(),
            "enc_pub_hex": self.enc_pub.hex(),
        }


def generate_identity():
    return Identity(Ed25519PrivateKey.generate(), X25519PrivateKey.generate())


def save_identity(identity, path):
    doc = {
        "kind": "trainproof-identity",
        "sign_private_hex": _priv_bytes(identity.sign_key).hex(),
        "enc_private_hex": _priv_bytes(identity.enc_key).hex(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_identity(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("kind") != "trainproof-identity":
        raise SealError(f"{path}: not an identity file")
    return Identity(
        Ed25519PrivateKey.from_private_bytes(bytes.fromhex(doc["sign_private_hex"])),
        X25519PrivateKey.from_private_bytes(bytes.fromhex(doc["enc_private_hex"])),
    )


def save_public(identity, path):
    with open(path, "w") as fh:
        json.dump(identity.public_dict(), fh, indent=2)
        fh.write("\n")


def load_public(path):
    """Returns (sign_pub bytes, enc_pub bytes)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("kind") != "trainproof-public":
        raise SealError(f"{path}: not a public key file")
    return bytes.fromhex(doc["sign_pub_hex"]), bytes.fromhex(doc["enc_pub_hex"])


@dataclass
class SealedProof:
    envelope: bytes
    signature: bytes
    prover_id: str  # hex of the prover's Ed25519 public key
    created_at: float


def _derive_key(shared, eph_pub, recipient_pub):
    kdf = HKDF(algorithm=hashes.SHA256(), length=32, salt=None, info=_HKDF_INFO + eph_pub + recipient_pub)
    return kdf.derive(shared)


def seal(plaintext, recipient_enc_pub, prover):
    """Encrypt `plaintext` to the recipient and sign the envelope."""
    if isinstance(recipient_enc_pub, bytes):
        recipient_enc_pub = X25519PublicKey.from_public_bytes(recipient_enc_pub)
    eph = X25519PrivateKey.generate()
    eph_pub = _pub_bytes(eph.public_key())
    rec_pub = _pub_bytes(recipient_enc_pub)
    key = _derive_key(eph.exchange(recipient_enc_pub), eph_pub, rec_pub)
    nonce = os.urandom(12)
    ct = AESGCM(key).encrypt(nonce, plaintext, _ENVELOPE_MAGIC + eph_pub)
    envelope = _ENVELOPE_MAGIC + eph_pub + nonce + struct.pack("<Q", len(ct)) + ct
    signature = prover.sign_key.sign(envelope)
    return SealedProof(
        envelope=envelope,
        signature=signature,
        prover_id=prover.party_id,
        created_at=time.time(),
    )


def unseal(sealed, recipient, prover_sign_pub):
    """Check the prover signature, then decrypt. Returns the plaintext.

    Raises SignatureError (before any decryption work) or DecryptionError.
    """
    if isinstance(prover_sign_pub, bytes):
        prover_sign_pub = Ed25519PublicKey.from_public_bytes(prover_sign_pub)
    try:
        prover_sign_pub.verify(sealed.signature, sealed.envelope)
    except InvalidSignature:
        raise SignatureError("prover signature over the envelope does not verify") from None
    env = sealed.envelope
    if len(env) < 4 + 32 + 12 + 8 or env[:4] != _ENVELOPE_MAGIC:
        raise SealError("malformed envelope")
    eph_pub = env[4:36]
    nonce = env[36:48]
    (ct_len,) = struct.unpack("<Q", env[48:56])
    ct = env[56 : 56 + ct_len]
    if len(ct) != ct_len or 56 + ct_len != len(env):
        raise SealError("malformed envelope (bad length)")
    shared = recipient.enc_key.exchange(X25519PublicKey.from_public_bytes(eph_pub))
    key = _derive_key(shared, eph_pub, recipient.enc_pub)
    try:
        return AESGCM(key).decrypt(nonce, ct, _ENVELOPE_MAGIC + eph_pub)
    except InvalidTag:
        raise DecryptionError("envelope would not decrypt (wrong key or damaged ciphertext)") from None


def sign_detached(data, identity):
    """Ed25519 signature over raw bytes (e.g. a .pol file a prover publishes)."""
    return identity.sign_key.sign(data)


def verify_detached(data, signature, sign_pub):
    if isinstance(sign_pub, bytes):
        sign_pub = Ed25519PublicKey.from_public_bytes(sign_pub)
    try:
        sign_pub.verify(signature, data)
        return True
    except InvalidSignature:
        return False


def write_sealed(sealed, path):
    with open(path, "wb") as fh:
        fh.write(_SEALED_MAGIC)
        fh.write(struct.pack("<H", _SEALED_VERSION))
        fh.write(bytes.fromhex(sealed.prover_id))
        fh.write(struct.pack("<d", sealed.created_at))
        fh.write(struct.pack("<Q", len(sealed.signature)))
        fh.write(sealed.signature)
        fh.write(struct.pack("<Q", len(sealed.envelope)))
        fh.write(sealed.envelope)


def read_sealed(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 + 2 + 32 + 8 + 8 or data[:4] != _SEALED_MAGIC:
        raise SealError(f"{path}: not a sealed transcript file")
    (version,) = struct.unpack("<H", data[4:6])
    if version != _SEALED_VERSION:
        raise SealError(f"{path}: unsupported sealed version {version}")
    prover_id = data[6:38].hex()
    (created_at,) = struct.unpack("<d", data[38:46])
    (sig_len,) = struct.unpack("<Q", data[46:54])
    sig = data[54 : 54 + sig_len]
    off = 54 + sig_len
    if len(sig) != sig_len or len(data) < off + 8:
        raise SealError(f"{path}: truncated sealed file")
    (env_len,) = struct.unpack("<Q", data[off : off + 8])
    env = data[off + 8 : off + 8 + env_len]
    if len(env) != env_len or off + 8 + env_len != len(data):
        raise SealError(f"{path}: truncated sealed file")
    return SealedProof(envelope=env, signature=sig, prover_id=prover_id, created_at=created_at)
