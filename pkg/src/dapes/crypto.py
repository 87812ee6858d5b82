"""Signing and digest primitives.

Two signature schemes live behind one keystore interface: a keyed-hash
scheme (HMAC-SHA256, deterministic and cheap, the simulator default)
and Ed25519 for a real asymmetric option. Digest algorithms are chosen
by output length; the 24-byte option stands in for fast truncated-hash
designs and only its length matters here.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
from dataclasses import dataclass, field
from typing import Callable, Dict

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .wire import SigScheme


class UnknownKey(KeyError):
    pass


class DigestAlgo(enum.IntEnum):
    SHA1 = 1       # 20 bytes
    SHA256 = 2     # 32 bytes
    TRUNC24 = 3    # 24 bytes (SHA-256 truncated)

    @property
    def digest_size(self) -> int:
        return {DigestAlgo.SHA1: 20, DigestAlgo.SHA256: 32, DigestAlgo.TRUNC24: 24}[self]


def digest(algo: DigestAlgo, data: bytes) -> bytes:
    if algo is DigestAlgo.SHA1:
        return hashlib.sha1(data).digest()
    if algo is DigestAlgo.SHA256:
        return hashlib.sha256(data).digest()
    return hashlib.sha256(data).digest()[:24]


@dataclass
class _HmacKey:
    secret: bytes

    def sign(self, msg: bytes) -> bytes:
        return hmac.new(self.secret, msg, hashlib.sha256).digest()

    def verify(self, msg: bytes, sig: bytes) -> bool:
        return hmac.compare_digest(self.sign(msg), sig)


@dataclass
class _Ed25519Key:
    private: Ed25519PrivateKey
    public: Ed25519PublicKey

    def sign(self, msg: bytes) -> bytes:
        return self.private.sign(msg)

    def verify(self, msg: bytes, sig: bytes) -> bool:
        try:
            self.public.verify(sig, msg)
            return True
        except InvalidSignature:
            return False


@dataclass
class Keystore:
    """Maps key ids to signing keys; one instance per principal or world."""

    _keys: Dict[bytes, object] = field(default_factory=dict)
    _schemes: Dict[bytes, SigScheme] = field(default_factory=dict)

    def add_hmac_key(self, key_id: bytes, secret: bytes) -> None:
        self._keys[key_id] = _HmacKey(secret)
        self._schemes[key_id] = SigScheme.HMAC_SHA256

    def add_ed25519_key(self, key_id: bytes, seed: bytes) -> None:
        """Derives a keypair from a 32-byte seed (deterministic setup)."""
        priv = Ed25519PrivateKey.from_private_bytes(hashlib.sha256(seed).digest())
        self._keys[key_id] = _Ed25519Key(priv, priv.public_key())
        self._schemes[key_id] = SigScheme.ED25519

    def scheme(self, key_id: bytes) -> SigScheme:
        try:
            return self._schemes[key_id]
        except KeyError:
            raise UnknownKey(key_id)

    def sign(self, msg: bytes, key_id: bytes) -> bytes:
        try:
            return self._keys[key_id].sign(msg)
        except KeyError:
            raise UnknownKey(key_id)

    def verify(self, msg: bytes, sig: bytes, key_id: bytes) -> bool:
        try:
            return self._keys[key_id].verify(msg, sig)
        except KeyError:
            raise UnknownKey(key_id)


@dataclass
class Signer:
    """A principal's signing handle: a keystore plus its own key id."""

    keystore: Keystore
    key_id: bytes

    def sign(self, msg: bytes) -> bytes:
        return self.keystore.sign(msg, self.key_id)

    @property
    def scheme(self) -> SigScheme:
        return self.keystore.scheme(self.key_id)
