"""Digital-signature schemes used by chain nodes.

Two interchangeable implementations: an HMAC-based deterministic scheme
(fast, used by default in property sweeps) and Ed25519 from the
cryptography package (the real asymmetric scheme, exercised by the
acceptance suite).
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass


@dataclass(frozen=True)
class Keypair:
    signing_key: bytes
    verify_key: bytes


class SignatureScheme:
    name = "abstract"

    def keygen(self, seed: bytes) -> Keypair:
        raise NotImplementedError

    def sign(self, signing_key: bytes, message: bytes) -> bytes:
        raise NotImplementedError

    def verify(self, verify_key: bytes, message: bytes, signature: bytes) -> bool:
        raise NotImplementedError


class HmacScheme(SignatureScheme):
    """Deterministic test scheme: signature = HMAC-SHA256(node secret, msg).

    The verify key equals the signing key; the simulation's verifier registry
    holds it, and modeled adversaries never learn other nodes' secrets.
    """

    name = "hmac"

    def keygen(self, seed: bytes) -> Keypair:
        sk = hashlib.sha256(b"hmac-key|" + seed).digest()
        return Keypair(signing_key=sk, verify_key=sk)

    def sign(self, signing_key: bytes, message: bytes) -> bytes:
        return hmac.new(signing_key, message, hashlib.sha256).digest()

    def verify(self, verify_key: bytes, message: bytes, signature: bytes) -> bool:
        expect = hmac.new(verify_key, message, hashlib.sha256).digest()
        return hmac.compare_digest(expect, signature)


class Ed25519Scheme(SignatureScheme):
    """Real asymmetric signatures; keys derived deterministically from seed."""

    name = "ed25519"

    def __init__(self):
        from cryptography.hazmat.primitives.asymmetric import ed25519

        self._ed25519 = ed25519

    def keygen(self, seed: bytes) -> Keypair:
        raw = hashlib.sha256(b"ed25519-seed|" + seed).digest()
        private = self._ed25519.Ed25519PrivateKey.from_private_bytes(raw)
        public = private.public_key()
        from cryptography.hazmat.primitives import serialization

        pub_raw = public.public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return Keypair(signing_key=raw, verify_key=pub_raw)

    def sign(self, signing_key: bytes, message: bytes) -> bytes:
        private = self._ed25519.Ed25519PrivateKey.from_private_bytes(signing_key)
        return private.sign(message)

    def verify(self, verify_key: bytes, message: bytes, signature: bytes) -> bool:
        try:
            public = self._ed25519.Ed25519PublicKey.from_public_bytes(verify_key)
            public.verify(signature, message)
            return True
        except Exception:
            return False


def get_scheme(name: str) -> SignatureScheme:
    if name == "hmac":
        return HmacScheme()
    if name == "ed25519":
        return Ed25519Scheme()
    raise ValueError(f"unknown signature scheme: {name}")
