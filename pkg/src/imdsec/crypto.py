"""Cryptographic primitives behind the access-control protocols.

Default algorithms: PBKDF2-SHA1 key derivation (1000 iterations,
fixed context salt), HMAC-SHA1 message authentication, AES-128-GCM
symmetric encryption, RSA-2048 with OAEP for the nonce challenge and
PKCS#1 v1.5 signatures.  Every verify operation is total: it returns
accept/reject and never raises.

A CryptoSuite instance carries its own operation counters and an
optional deterministic RNG, so each simulated party can account for its
own crypto workload and whole runs replay bit-for-bit from seeds.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import random
import secrets
from dataclasses import dataclass
from typing import Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding as asym_padding
from cryptography.hazmat.primitives.asymmetric import rsa
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

__all__ = [
    "CryptoError",
    "DecryptionError",
    "SymmetricKey",
    "MacTag",
    "CipherBlob",
    "SignatureBlob",
    "Certificate",
    "KeyPairWithCert",
    "CryptoSuite",
    "split_length_prefixed",
    "generate_keypair",
    "generate_authority",
    "issue_doctor_credentials",
    "length_prefixed",
]

KEY_BYTES = 16
KDF_ITERATIONS = 1000
_KDF_SALT = b"imdsec/kdf/v1"
_GCM_NONCE_BYTES = 12
_RSA_BITS = 2048
_OAEP_HASH_BYTES = 32  # SHA-256


class CryptoError(Exception):
    pass


class DecryptionError(CryptoError):
    """Authenticated decryption failed (wrong key or tampered blob)."""


def length_prefixed(*parts: bytes) -> bytes:
    """Canonical concatenation: each part prefixed with a 4-byte length."""
    out = bytearray()
    for part in parts:
        out += len(part).to_bytes(4, "big")
        out += part
    return bytes(out)


@dataclass(frozen=True, eq=False)
class SymmetricKey:
    """A 16-byte secret, comparable only in constant time."""

    data: bytes

    def __post_init__(self):
        if len(self.data) != KEY_BYTES:
            raise CryptoError(f"symmetric keys are {KEY_BYTES} bytes")

    def __eq__(self, other):
        if not isinstance(other, SymmetricKey):
            return NotImplemented
        return hmac_mod.compare_digest(self.data, other.data)

    def __hash__(self):
        raise TypeError("symmetric keys are not hashable")

    def __repr__(self):
        return "SymmetricKey(<redacted>)"


@dataclass(frozen=True)
class MacTag:
    algorithm: str
    data: bytes


@dataclass(frozen=True)
class CipherBlob:
    algorithm: str
    data: bytes


@dataclass(frozen=True)
class SignatureBlob:
    algorithm: str
    data: bytes


@dataclass(frozen=True)
class Certificate:
    """Authority-signed binding of a subject id to a public key."""

    subject_id: bytes
    public_key_der: bytes
    signature: SignatureBlob

    def to_bytes(self) -> bytes:
        return length_prefixed(
            self.subject_id,
            self.public_key_der,
            self.signature.algorithm.encode(),
            self.signature.data,
        )

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Certificate":
        parts = split_length_prefixed(buf, 4)
        return cls(
            subject_id=parts[0],
            public_key_der=parts[1],
            signature=SignatureBlob(parts[2].decode(), parts[3]),
        )

    def public_key(self):
        return serialization.load_der_public_key(self.public_key_der)


def split_length_prefixed(buf: bytes, count: int) -> list[bytes]:
    parts = []
    pos = 0
    for _ in range(count):
        if pos + 4 > len(buf):
            raise CryptoError("truncated length-prefixed buffer")
        ln = int.from_bytes(buf[pos : pos + 4], "big")
        pos += 4
        if pos + ln > len(buf):
            raise CryptoError("truncated length-prefixed buffer")
        parts.append(buf[pos : pos + ln])
        pos += ln
    if pos != len(buf):
        raise CryptoError("trailing bytes in length-prefixed buffer")
    return parts


@dataclass
class KeyPairWithCert:
    private_key: rsa.RSAPrivateKey
    certificate: Certificate

    @property
    def public_key(self):
        return self.private_key.public_key()


def _mgf1(seed: bytes, length: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < length:
        out += hashlib.sha256(seed + counter.to_bytes(4, "big")).digest()
        counter += 1
    return bytes(out[:length])


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


def _oaep_encrypt(public_key: rsa.RSAPublicKey, message: bytes, seed: bytes) -> bytes:
    """RFC 8017 OAEP(SHA-256) with a caller-supplied seed, so ciphertexts
    are reproducible under a seeded RNG.  Interoperates with the library
    decryptor."""
    numbers = public_key.public_numbers()
    k = (numbers.n.bit_length() + 7) // 8
    h = _OAEP_HASH_BYTES
    if len(message) > k - 2 * h - 2:
        raise CryptoError("message too long for OAEP")
    if len(seed) != h:
        raise CryptoError("OAEP seed must match the hash length")
    l_hash = hashlib.sha256(b"").digest()
    ps = b"\x00" * (k - len(message) - 2 * h - 2)
    db = l_hash + ps + b"\x01" + message
    masked_db = _xor(db, _mgf1(seed, k - h - 1))
    masked_seed = _xor(seed, _mgf1(masked_db, h))
    em = b"\x00" + masked_seed + masked_db
    c = pow(int.from_bytes(em, "big"), numbers.e, numbers.n)
    return c.to_bytes(k, "big")


class CryptoSuite:
    """Primitive operations with per-instance counters.

    rng, when given, supplies all per-operation randomness (GCM nonces,
    OAEP seeds); otherwise the OS RNG is used.  Counter keys: kdf, mac,
    sym_enc, sym_dec, pk_enc, pk_dec, sign, verify, cs_enc (the last is
    bumped by callers that run the telemetry codec).
    """

    def __init__(self, rng: Optional[random.Random] = None):
        self._rng = rng
        self.counters: dict[str, int] = {}

    def _count(self, name: str, amount: int = 1):
        self.counters[name] = self.counters.get(name, 0) + amount

    def count_external(self, name: str, amount: int = 1):
        self._count(name, amount)

    def snapshot(self) -> dict[str, int]:
        return dict(self.counters)

    def reset_counters(self):
        self.counters.clear()

    def random_bytes(self, n: int) -> bytes:
        if self._rng is not None:
            return self._rng.randbytes(n)
        return secrets.token_bytes(n)

    # -- key derivation --------------------------------------------------

    def kdf(self, material: bytes) -> SymmetricKey:
        """Derive a 16-byte key from arbitrary material (PBKDF2-SHA1)."""
        if not material:
            raise CryptoError("empty key-derivation material")
        self._count("kdf")
        data = hashlib.pbkdf2_hmac(
            "sha1", material, _KDF_SALT, KDF_ITERATIONS, dklen=KEY_BYTES
        )
        return SymmetricKey(data)

    # -- message authentication ------------------------------------------

    def mac(self, key: SymmetricKey, message: bytes) -> MacTag:
        self._count("mac")
        return MacTag(
            "hmac-sha1", hmac_mod.new(key.data, message, hashlib.sha1).digest()
        )

    def mac_verify(self, key: SymmetricKey, message: bytes, tag: MacTag) -> bool:
        self._count("mac")
        if tag.algorithm != "hmac-sha1":
            return False
        expected = hmac_mod.new(key.data, message, hashlib.sha1).digest()
        return hmac_mod.compare_digest(expected, tag.data)

    # -- symmetric encryption ---------------------------------------------

    def sym_enc(self, key: SymmetricKey, plaintext: bytes) -> CipherBlob:
        self._count("sym_enc")
        nonce = self.random_bytes(_GCM_NONCE_BYTES)
        ct = AESGCM(key.data).encrypt(nonce, plaintext, None)
        return CipherBlob("aes-128-gcm", nonce + ct)

    def sym_dec(self, key: SymmetricKey, blob: CipherBlob) -> bytes:
        self._count("sym_dec")
        if blob.algorithm != "aes-128-gcm" or len(blob.data) < _GCM_NONCE_BYTES:
            raise DecryptionError("malformed symmetric blob")
        nonce, ct = blob.data[:_GCM_NONCE_BYTES], blob.data[_GCM_NONCE_BYTES:]
        try:
            return AESGCM(key.data).decrypt(nonce, ct, None)
        except InvalidTag as exc:
            raise DecryptionError("symmetric decryption failed") from exc

    # -- public-key encryption ---------------------------------------------

    def pk_enc(self, public_key: rsa.RSAPublicKey, message: bytes) -> CipherBlob:
        self._count("pk_enc")
        seed = self.random_bytes(_OAEP_HASH_BYTES)
        return CipherBlob("rsa-oaep-sha256", _oaep_encrypt(public_key, message, seed))

    def pk_dec(self, private_key: rsa.RSAPrivateKey, blob: CipherBlob) -> bytes:
        self._count("pk_dec")
        if blob.algorithm != "rsa-oaep-sha256":
            raise DecryptionError("malformed public-key blob")
        try:
            return private_key.decrypt(
                blob.data,
                asym_padding.OAEP(
                    mgf=asym_padding.MGF1(algorithm=hashes.SHA256()),
                    algorithm=hashes.SHA256(),
                    label=None,
                ),
            )
        except ValueError as exc:
            raise DecryptionError("public-key decryption failed") from exc

    # -- signatures ---------------------------------------------------------

    def sign(self, private_key: rsa.RSAPrivateKey, message: bytes) -> SignatureBlob:
        self._count("sign")
        sig = private_key.sign(
            message, asym_padding.PKCS1v15(), hashes.SHA256()
        )
        return SignatureBlob("rsa-pkcs1v15-sha256", sig)

    def verify(
        self, public_key: rsa.RSAPublicKey, message: bytes, sig: SignatureBlob
    ) -> bool:
        self._count("verify")
        if sig.algorithm != "rsa-pkcs1v15-sha256":
            return False
        try:
            public_key.verify(
                sig.data, message, asym_padding.PKCS1v15(), hashes.SHA256()
            )
            return True
        except Exception:
            return False

    # -- certificates ---------------------------------------------------------

    def cert_issue(
        self,
        authority_key: rsa.RSAPrivateKey,
        subject_public_key: rsa.RSAPublicKey,
        subject_id: bytes,
    ) -> Certificate:
        der = subject_public_key.public_bytes(
            serialization.Encoding.DER,
            serialization.PublicFormat.SubjectPublicKeyInfo,
        )
        sig = self.sign(authority_key, length_prefixed(subject_id, der))
        return Certificate(subject_id=subject_id, public_key_der=der, signature=sig)

    def cert_verify(
        self, authority_public_key: rsa.RSAPublicKey, cert: Certificate
    ) -> bool:
        try:
            payload = length_prefixed(cert.subject_id, cert.public_key_der)
        except Exception:
            return False
        return self.verify(authority_public_key, payload, cert.signature)


def generate_keypair(bits: int = _RSA_BITS) -> rsa.RSAPrivateKey:
    return rsa.generate_private_key(public_exponent=65537, key_size=bits)


def generate_authority() -> rsa.RSAPrivateKey:
    return generate_keypair()


def issue_doctor_credentials(
    authority_key: rsa.RSAPrivateKey,
    doctor_id: bytes,
    suite: Optional[CryptoSuite] = None,
) -> KeyPairWithCert:
    """Mint a doctor keypair plus its authority-signed certificate."""
    suite = suite or CryptoSuite()
    private_key = generate_keypair()
    cert = suite.cert_issue(authority_key, private_key.public_key(), doctor_id)
    return KeyPairWithCert(private_key=private_key, certificate=cert)
