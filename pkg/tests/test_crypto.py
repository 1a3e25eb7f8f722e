import random
from pathlib import Path

import pytest

from imdsec.crypto import (
    Certificate,
    CipherBlob,
    CryptoError,
    CryptoSuite,
    DecryptionError,
    MacTag,
    SignatureBlob,
    SymmetricKey,
    generate_authority,
    issue_doctor_credentials,
    length_prefixed,
)
from imdsec.keymat import authority_private_key, doctor_private_key

VECTOR_FILE = Path(__file__).parent / "data" / "crypto_vectors.txt"


@pytest.fixture(scope="module")
def suite():
    return CryptoSuite()


@pytest.fixture(scope="module")
def authority():
    return authority_private_key()


@pytest.fixture(scope="module")
def doctor_key():
    return doctor_private_key()


class TestKdf:
    def test_deterministic(self, suite):
        assert suite.kdf(b"material") == suite.kdf(b"material")

    def test_sixteen_bytes(self, suite):
        assert len(suite.kdf(b"m").data) == 16

    def test_single_byte_difference(self, suite):
        rng = random.Random(5)
        for _ in range(10_000):
            material = rng.randbytes(rng.randint(1, 24))
            flipped = bytearray(material)
            flipped[rng.randrange(len(material))] ^= 1 << rng.randrange(8)
            assert suite.kdf(material) != suite.kdf(bytes(flipped))

    def test_pairing_key_shape(self, suite):
        # K || ID_S || ID_I consumed as the pairing key material
        master = SymmetricKey(b"\x01" * 16)
        k_i = suite.kdf(length_prefixed(master.data, b"SM-01", b"IMD-7742"))
        assert isinstance(k_i, SymmetricKey)

    def test_empty_material_rejected(self, suite):
        with pytest.raises(CryptoError):
            suite.kdf(b"")

    def test_key_separation_over_corpus(self, suite):
        rng = random.Random(11)
        corpus = {rng.randbytes(rng.randint(1, 32)) for _ in range(2000)}
        keys = {suite.kdf(m).data for m in corpus}
        assert len(keys) == len(corpus)


class TestMac:
    def test_roundtrip(self, suite):
        key = suite.kdf(b"mac-key")
        tag = suite.mac(key, b"hello")
        assert suite.mac_verify(key, b"hello", tag)

    def test_flipped_bit_rejects(self, suite):
        key = suite.kdf(b"mac-key")
        tag = suite.mac(key, b"hello")
        assert not suite.mac_verify(key, b"hellp", tag)
        other = suite.kdf(b"mac-key2")
        assert not suite.mac_verify(other, b"hello", tag)
        bad = MacTag(tag.algorithm, bytes([tag.data[0] ^ 1]) + tag.data[1:])
        assert not suite.mac_verify(key, b"hello", bad)

    def test_truncated_tags_reject(self, suite):
        key = suite.kdf(b"mac-key")
        tag = suite.mac(key, b"payload")
        for ln in range(len(tag.data)):
            assert not suite.mac_verify(
                key, b"payload", MacTag(tag.algorithm, tag.data[:ln])
            )

    def test_verify_is_total(self, suite):
        key = suite.kdf(b"k")
        assert suite.mac_verify(key, b"m", MacTag("nonsense", b"")) is False


class TestSymmetric:
    def test_roundtrip(self, suite):
        key = suite.kdf(b"sym")
        blob = suite.sym_enc(key, b"secret payload")
        assert suite.sym_dec(key, blob) == b"secret payload"

    def test_randomized_encryption(self, suite):
        key = suite.kdf(b"sym")
        assert suite.sym_enc(key, b"x").data != suite.sym_enc(key, b"x").data

    def test_wrong_key_fails_explicitly(self, suite):
        rng = random.Random(7)
        key = suite.kdf(b"right")
        blob = suite.sym_enc(key, b"payload")
        for _ in range(1000):
            wrong = SymmetricKey(rng.randbytes(16))
            with pytest.raises(DecryptionError):
                suite.sym_dec(wrong, blob)

    def test_tampered_blob_fails(self, suite):
        key = suite.kdf(b"sym")
        blob = suite.sym_enc(key, b"payload")
        bad = CipherBlob(blob.algorithm, blob.data[:-1] + bytes([blob.data[-1] ^ 1]))
        with pytest.raises(DecryptionError):
            suite.sym_dec(key, bad)


class TestPublicKey:
    def test_roundtrip(self, suite, doctor_key):
        blob = suite.pk_enc(doctor_key.public_key(), b"nonce-nonce-nonce")
        assert suite.pk_dec(doctor_key, blob) == b"nonce-nonce-nonce"

    def test_wrong_private_key_fails(self, suite, doctor_key, authority):
        blob = suite.pk_enc(doctor_key.public_key(), b"sixteen-byte-msg")
        with pytest.raises(DecryptionError):
            suite.pk_dec(authority, blob)

    def test_nonce_fuzz(self, suite, doctor_key):
        rng = random.Random(3)
        pub = doctor_key.public_key()
        for _ in range(1000):
            nonce = rng.randbytes(16)
            assert suite.pk_dec(doctor_key, suite.pk_enc(pub, nonce)) == nonce

    def test_seeded_encryption_is_deterministic(self, doctor_key):
        a = CryptoSuite(rng=random.Random(9))
        b = CryptoSuite(rng=random.Random(9))
        pub = doctor_key.public_key()
        assert a.pk_enc(pub, b"n" * 16).data == b.pk_enc(pub, b"n" * 16).data


class TestSignatures:
    def test_roundtrip(self, suite, doctor_key):
        sig = suite.sign(doctor_key, b"message")
        assert suite.verify(doctor_key.public_key(), b"message", sig)

    def test_tampered_message_rejects(self, suite, doctor_key):
        sig = suite.sign(doctor_key, b"message")
        assert not suite.verify(doctor_key.public_key(), b"messagf", sig)

    def test_signature_transplant_rejects(self, suite, doctor_key):
        rng = random.Random(13)
        pub = doctor_key.public_key()
        pairs = [(rng.randbytes(24), None) for _ in range(100)]
        pairs = [(m, suite.sign(doctor_key, m)) for m, _ in pairs]
        for i, (msg, _) in enumerate(pairs):
            sig = pairs[(i + 1) % len(pairs)][1]
            assert not suite.verify(pub, msg, sig)

    def test_verify_is_total(self, suite, doctor_key):
        assert (
            suite.verify(
                doctor_key.public_key(), b"m", SignatureBlob("junk", b"\x00")
            )
            is False
        )


class TestCertificates:
    def test_issue_and_verify(self, suite, authority):
        creds = issue_doctor_credentials(authority, b"DR-ALICE", suite)
        assert suite.cert_verify(authority.public_key(), creds.certificate)

    def test_unknown_authority_rejects(self, suite, authority):
        creds = issue_doctor_credentials(authority, b"DR-ALICE", suite)
        rogue = generate_authority()
        assert not suite.cert_verify(rogue.public_key(), creds.certificate)

    def test_field_mutation_rejects(self, suite, authority):
        cert = issue_doctor_credentials(authority, b"DR-ALICE", suite).certificate
        pub = authority.public_key()
        variants = [
            Certificate(b"DR-MALLORY", cert.public_key_der, cert.signature),
            Certificate(
                cert.subject_id,
                cert.public_key_der[:-1] + bytes([cert.public_key_der[-1] ^ 1]),
                cert.signature,
            ),
            Certificate(
                cert.subject_id,
                cert.public_key_der,
                SignatureBlob(
                    cert.signature.algorithm,
                    cert.signature.data[:-1]
                    + bytes([cert.signature.data[-1] ^ 1]),
                ),
            ),
        ]
        for variant in variants:
            assert not suite.cert_verify(pub, variant)

    def test_cert_serialization_roundtrip(self, suite, authority):
        cert = issue_doctor_credentials(authority, b"DR-A", suite).certificate
        back = Certificate.from_bytes(cert.to_bytes())
        assert back == cert


class TestCounters:
    def test_counts_accumulate(self):
        suite = CryptoSuite()
        key = suite.kdf(b"kk")
        suite.mac(key, b"m")
        suite.mac_verify(key, b"m", suite.mac(key, b"m"))
        suite.sym_dec(key, suite.sym_enc(key, b"pt"))
        suite.count_external("cs_enc", 3)
        snap = suite.snapshot()
        assert snap["kdf"] == 1
        assert snap["mac"] == 3
        assert snap["sym_enc"] == 1
        assert snap["sym_dec"] == 1
        assert snap["cs_enc"] == 3
        suite.reset_counters()
        assert suite.snapshot() == {}


class TestPinnedVectors:
    def test_vector_file_agrees(self, suite, doctor_key):
        lines = [
            line.split()
            for line in VECTOR_FILE.read_text().splitlines()
            if line and not line.startswith("#")
        ]
        assert len(lines) >= 8
        seen = set()
        for primitive, key_hex, input_hex, output_hex in lines:
            seen.add(primitive)
            key = bytes.fromhex(key_hex) if key_hex != "-" else b""
            inp = bytes.fromhex(input_hex)
            out = bytes.fromhex(output_hex)
            if primitive == "kdf":
                assert suite.kdf(inp).data == out
            elif primitive == "mac":
                assert suite.mac(SymmetricKey(key), inp).data == out
            elif primitive == "sym_dec":
                blob = CipherBlob("aes-128-gcm", inp)
                assert suite.sym_dec(SymmetricKey(key), blob) == out
            elif primitive == "pk_dec":
                blob = CipherBlob("rsa-oaep-sha256", inp)
                assert suite.pk_dec(doctor_key, blob) == out
            elif primitive == "sign":
                sig = suite.sign(doctor_key, inp)
                assert sig.data == out
            else:
                raise AssertionError(f"unknown primitive {primitive}")
        assert seen == {"kdf", "mac", "sym_dec", "pk_dec", "sign"}
