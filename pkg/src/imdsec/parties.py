"""Per-party state machines for pairing, authentication, read and write.

Every party is single-threaded: it holds exactly one expected next
heading (or none, while idle) and silently drops anything else.  MAC or
signature failures abort the affected flow; a failed pairing check
leaves the implant silent so probing reveals nothing.

Links: "s-i" smartphone<->implant, "s-d" smartphone<->programmer,
"d-i" programmer<->implant, plus the out-of-band channel to the
doctor's phone, which carries only the random message RM.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import codec, recovery
from .crypto import (
    Certificate,
    CipherBlob,
    CryptoError,
    CryptoSuite,
    DecryptionError,
    KeyPairWithCert,
    MacTag,
    SignatureBlob,
    SymmetricKey,
    length_prefixed,
    split_length_prefixed,
)
from .evidence import EvidenceLedger, EvidenceRecord, signed_payload
from .wire import (
    DEFAULT_FRESHNESS_WINDOW,
    Heading,
    WireError,
    WireMessage,
    auth_bytes,
    decode_message,
    freshness_check,
    ts_bytes,
    ts_from_bytes,
    u64_bytes,
)

__all__ = [
    "ProtocolError",
    "SystemConfig",
    "Outbound",
    "OobSend",
    "Party",
    "pack_signals",
    "unpack_signals",
    "Smartphone",
    "Imd",
    "Programmer",
    "DoctorPhone",
]

LINK_SI = "s-i"
LINK_SD = "s-d"
LINK_DI = "d-i"

NONCE_BYTES = 16
RM_BYTES = 16


class ProtocolError(Exception):
    pass


@dataclass(frozen=True)
class SystemConfig:
    """Public parameters shared by all parties."""

    n: int = 512
    L1: int = 590
    L2: int = 1487
    cr: float = 50.0
    qs: int = 20  # 0 = transmit unquantized measurements
    basis_kind: str = "cosine"
    matrix_seed: bytes = b"public-sensing-matrix"
    freshness_window: int = DEFAULT_FRESHNESS_WINDOW

    @property
    def m(self) -> int:
        return recovery.cr_to_measurements(self.n, self.cr)

    def sensing_matrix(self) -> recovery.SensingMatrix:
        return _cached_matrix(self.matrix_seed, self.m, self.n)

    def basis(self) -> recovery.SparsityBasis:
        return _cached_basis(self.n, self.basis_kind)


_MATRIX_CACHE: dict = {}
_BASIS_CACHE: dict = {}


def _cached_matrix(seed: bytes, m: int, n: int) -> recovery.SensingMatrix:
    key = (bytes(seed), m, n)
    if key not in _MATRIX_CACHE:
        _MATRIX_CACHE[key] = recovery.gen_sensing_matrix(seed, m, n)
    return _MATRIX_CACHE[key]


def _cached_basis(n: int, kind: str) -> recovery.SparsityBasis:
    if (n, kind) not in _BASIS_CACHE:
        _BASIS_CACHE[(n, kind)] = recovery.build_basis(n, kind)
    return _BASIS_CACHE[(n, kind)]


@dataclass(frozen=True)
class Outbound:
    link: str
    message: WireMessage


@dataclass(frozen=True)
class OobSend:
    destination: str
    payload: bytes


def pack_signals(blobs: list[bytes]) -> bytes:
    return struct.pack(">I", len(blobs)) + length_prefixed(*blobs)


def unpack_signals(buf: bytes) -> list[bytes]:
    if len(buf) < 4:
        raise WireError("short telemetry payload")
    (count,) = struct.unpack(">I", buf[:4])
    parts = []
    pos = 4
    for _ in range(count):
        if pos + 4 > len(buf):
            raise WireError("truncated telemetry payload")
        ln = int.from_bytes(buf[pos : pos + 4], "big")
        pos += 4
        if pos + ln > len(buf):
            raise WireError("truncated telemetry payload")
        parts.append(buf[pos : pos + ln])
        pos += ln
    if pos != len(buf):
        raise WireError("trailing telemetry bytes")
    return parts


class Party:
    """Common machinery: expected-heading discipline and clocks."""

    def __init__(self, name: str, seed: int, config: SystemConfig):
        self.name = name
        self.config = config
        self.rng = random.Random(seed)
        self.crypto = CryptoSuite(rng=random.Random(seed ^ 0x5EED))
        self.clock: int = 0
        self.expected: Optional[Heading] = None
        self.expected_link: Optional[str] = None
        self.outcome: str = "idle"
        self.abort_reason: Optional[str] = None
        self.drops: int = 0

    def _expect(self, heading: Optional[Heading], link: Optional[str]):
        self.expected = heading
        self.expected_link = link

    def _abort(self, reason: str):
        self.outcome = "aborted"
        self.abort_reason = reason
        self._expect(None, None)

    def _fresh(self, ts: int) -> bool:
        return freshness_check(ts, self.clock, self.config.freshness_window)

    def receive(self, raw: bytes, link: str) -> list[Outbound]:
        """Decode and dispatch; anything unexpected is dropped silently."""
        try:
            msg = decode_message(raw)
        except WireError:
            self.drops += 1
            return []
        if (
            self.expected is None
            or msg.heading != self.expected
            or link != self.expected_link
        ):
            self.drops += 1
            return []
        return self._handle(msg, link)

    def _handle(self, msg: WireMessage, link: str) -> list[Outbound]:
        raise NotImplementedError


class DoctorPhone:
    """Holds the doctor's out-of-band address; stores the RM it receives."""

    def __init__(self, name: str = "doctor-phone"):
        self.name = name
        self.rm: Optional[bytes] = None

    def receive_oob(self, payload: bytes):
        self.rm = payload


class Smartphone(Party):
    def __init__(
        self,
        name: str,
        seed: int,
        config: SystemConfig,
        smartphone_id: bytes,
        implant_id: bytes,
        ca_public_key,
        doctor_oob_directory: dict[bytes, str],
        ledger: Optional[EvidenceLedger] = None,
    ):
        super().__init__(name, seed, config)
        self.smartphone_id = smartphone_id
        self.implant_id = implant_id
        self.ca_public_key = ca_public_key
        self.doctor_oob_directory = dict(doctor_oob_directory)
        self.ledger = ledger if ledger is not None else EvidenceLedger()
        self.incidents: list[str] = []

        self.pair_session: Optional[int] = None
        self.session: Optional[int] = None
        self.paired = False
        self.k_i: Optional[SymmetricKey] = None
        self.k_p: Optional[SymmetricKey] = None
        self.k_r: Optional[SymmetricKey] = None
        self.shift_key: Optional[codec.ShiftKey] = None
        self.doctor_id: Optional[bytes] = None
        self.doctor_public_key = None
        self.nonce: Optional[bytes] = None
        self.rm: Optional[bytes] = None
        self.pending_sig = None
        self.pending_ts6: Optional[int] = None

    # -- pairing -----------------------------------------------------------

    def start_pair(self, master_key: SymmetricKey) -> list[Outbound]:
        """The patient typed the master key; request pairing."""
        self.k_i = self.crypto.kdf(
            length_prefixed(master_key.data, self.smartphone_id, self.implant_id)
        )
        self.pair_session = self.rng.getrandbits(64)
        ts1 = ts_bytes(self.clock)
        tag = self.crypto.mac(
            self.k_i,
            auth_bytes(
                Heading.PAIR_REQ, self.pair_session, [self.smartphone_id, ts1]
            ),
        )
        self._expect(Heading.PAIR_SUCC, LINK_SI)
        msg = WireMessage(
            Heading.PAIR_REQ,
            self.pair_session,
            (self.smartphone_id, ts1, tag.data),
        )
        return [Outbound(LINK_SI, msg)]

    def _on_pair_succ(self, msg: WireMessage) -> list[Outbound]:
        if msg.session != self.pair_session or msg.fields:
            self.drops += 1
            return []
        self.paired = True
        self._expect(Heading.AUTH_REQ, LINK_SD)
        return []

    # -- authentication ------------------------------------------------------

    def _on_auth_req(self, msg: WireMessage) -> list[Outbound]:
        if len(msg.fields) != 4:
            self.drops += 1
            return []
        doctor_id, ts2_raw, pk_der, cert_raw = msg.fields
        try:
            ts2 = ts_from_bytes(ts2_raw)
            cert = Certificate.from_bytes(cert_raw)
        except Exception:
            self.drops += 1
            return []
        if not self._fresh(ts2):
            self.drops += 1
            return []
        if doctor_id not in self.doctor_oob_directory:
            self._abort("unknown doctor")
            return []
        if (
            cert.subject_id != doctor_id
            or cert.public_key_der != pk_der
            or not self.crypto.cert_verify(self.ca_public_key, cert)
        ):
            self._abort("certificate verification failed")
            return []

        self.session = msg.session
        self.doctor_id = doctor_id
        self.doctor_public_key = cert.public_key()
        self.nonce = self.crypto.random_bytes(NONCE_BYTES)
        self.rm = self.crypto.random_bytes(RM_BYTES)
        self.k_p = self.crypto.kdf(
            length_prefixed(self.rm, u64_bytes(self.session), self.nonce)
        )
        challenge = self.crypto.pk_enc(self.doctor_public_key, self.nonce)
        self._expect(Heading.READ_AUTH_REQ, LINK_SD)
        reply = WireMessage(
            Heading.AUTH_REQ, self.session, (self.smartphone_id, challenge.data)
        )
        oob = OobSend(self.doctor_oob_directory[doctor_id], self.rm)
        return [Outbound(LINK_SD, reply), oob]

    # -- read ------------------------------------------------------------------

    def _on_read_auth_req(self, msg: WireMessage) -> list[Outbound]:
        if msg.session != self.session or len(msg.fields) != 2:
            self.drops += 1
            return []
        ts4_raw, tag = msg.fields
        try:
            ts4 = ts_from_bytes(ts4_raw)
        except WireError:
            self.drops += 1
            return []
        if not self._fresh(ts4):
            self.drops += 1
            return []
        if not self.crypto.mac_verify(
            self.k_p,
            auth_bytes(Heading.READ_AUTH_REQ, msg.session, [ts4_raw]),
            MacTag("hmac-sha1", tag),
        ):
            self.incidents.append("read auth MAC failure")
            return []  # stay post-auth

        key_seed = self.crypto.random_bytes(16)
        self.shift_key = codec.cs_gen(
            key_seed, self.config.n, self.config.L1, self.config.L2
        )
        kd_bytes = codec.serialize_shift_key(self.shift_key)
        self.k_r = self.crypto.kdf(
            length_prefixed(kd_bytes, u64_bytes(self.session))
        )
        c1 = self.crypto.sym_enc(
            self.k_i, length_prefixed(kd_bytes, self.k_r.data)
        )
        ts5 = ts_bytes(self.clock)
        tag4 = self.crypto.mac(
            self.k_i,
            auth_bytes(
                Heading.READ_ALLOW,
                self.session,
                [self.doctor_id, c1.data, ts5],
            ),
        )
        self._expect(Heading.READ_READY, LINK_SI)
        msg_out = WireMessage(
            Heading.READ_ALLOW,
            self.session,
            (self.doctor_id, c1.data, ts5, tag4.data),
        )
        return [Outbound(LINK_SI, msg_out)]

    def _on_read_ready(self, msg: WireMessage) -> list[Outbound]:
        if msg.session != self.session or msg.fields:
            self.drops += 1
            return []
        kd_bytes = codec.serialize_shift_key(self.shift_key)
        enc_kd = self.crypto.sym_enc(self.k_p, kd_bytes)
        self._expect(Heading.WRITE_AUTH_REQ, LINK_SD)
        return [
            Outbound(
                LINK_SD,
                WireMessage(Heading.READ_READY, self.session, (enc_kd.data,)),
            )
        ]

    # -- write -------------------------------------------------------------------

    def _on_write_auth_req(self, msg: WireMessage) -> list[Outbound]:
        if msg.session != self.session or len(msg.fields) != 3:
            self.drops += 1
            return []
        sig_raw, ts6_raw, tag = msg.fields
        try:
            ts6 = ts_from_bytes(ts6_raw)
        except WireError:
            self.drops += 1
            return []
        if not self._fresh(ts6):
            self.drops += 1
            return []
        if not self.crypto.mac_verify(
            self.k_p,
            auth_bytes(Heading.WRITE_AUTH_REQ, msg.session, [sig_raw, ts6_raw]),
            MacTag("hmac-sha1", tag),
        ):
            self._abort("write auth MAC failure")
            return []
        self.pending_sig = SignatureBlob("rsa-pkcs1v15-sha256", sig_raw)
        self.pending_ts6 = ts6
        ts7 = ts_bytes(self.clock)
        tag7 = self.crypto.mac(
            self.k_i,
            auth_bytes(Heading.WRITE_ALLOW, self.session, [self.doctor_id, ts7]),
        )
        self._expect(Heading.WRITE_READY, LINK_SI)
        return [
            Outbound(
                LINK_SI,
                WireMessage(
                    Heading.WRITE_ALLOW,
                    self.session,
                    (self.doctor_id, ts7, tag7.data),
                ),
            )
        ]

    def _on_write_ready(self, msg: WireMessage) -> list[Outbound]:
        if msg.session != self.session or msg.fields:
            self.drops += 1
            return []
        self._expect(Heading.WRITE_REQ, LINK_SI)
        return [
            Outbound(LINK_SD, WireMessage(Heading.WRITE_READY, self.session, ()))
        ]

    def _on_command_report(self, msg: WireMessage) -> list[Outbound]:
        if msg.session != self.session or len(msg.fields) != 2:
            self.drops += 1
            return []
        c2_bytes, report_raw = msg.fields
        try:
            plain = self.crypto.sym_dec(
                self.k_i, CipherBlob("aes-128-gcm", report_raw)
            )
            cmd, implant_id, ts7_raw = split_length_prefixed(plain, 3)
            ts7 = ts_from_bytes(ts7_raw)
        except (DecryptionError, CryptoError, WireError, ValueError):
            self._abort("command report unreadable")
            return []
        if implant_id != self.implant_id or not self._fresh(ts7):
            self._abort("command report mismatch")
            return []
        kd_bytes = codec.serialize_shift_key(self.shift_key)
        payload = signed_payload(
            self.doctor_id,
            self.smartphone_id,
            self.implant_id,
            c2_bytes,
            kd_bytes,
            cmd,
            self.pending_ts6,
        )
        if not self.crypto.verify(self.doctor_public_key, payload, self.pending_sig):
            self.incidents.append("write signature verification failed")
            self._abort("write signature invalid")
            return []
        record = EvidenceRecord(
            doctor_id=self.doctor_id,
            smartphone_id=self.smartphone_id,
            implant_id=self.implant_id,
            shift_key=kd_bytes,
            ciphertext=c2_bytes,
            command=cmd,
            timestamp=self.pending_ts6,
            signature=self.pending_sig,
        )
        self.ledger.append(record)
        ts8 = ts_bytes(self.clock)
        tag9 = self.crypto.mac(
            self.k_i, auth_bytes(Heading.SET_ALLOW, self.session, [ts8])
        )
        self.outcome = "ok"
        self._expect(None, None)
        return [
            Outbound(
                LINK_SI,
                WireMessage(Heading.SET_ALLOW, self.session, (ts8, tag9.data)),
            )
        ]

    def _handle(self, msg: WireMessage, link: str) -> list[Outbound]:
        handlers = {
            Heading.PAIR_SUCC: self._on_pair_succ,
            Heading.AUTH_REQ: self._on_auth_req,
            Heading.READ_AUTH_REQ: self._on_read_auth_req,
            Heading.READ_READY: self._on_read_ready,
            Heading.WRITE_AUTH_REQ: self._on_write_auth_req,
            Heading.WRITE_READY: self._on_write_ready,
            Heading.WRITE_REQ: self._on_command_report,
        }
        return handlers[msg.heading](msg)


class Imd(Party):
    def __init__(
        self,
        name: str,
        seed: int,
        config: SystemConfig,
        implant_id: bytes,
        master_key: SymmetricKey,
        data_source: Callable[[], list[codec.BoundedSignal]],
    ):
        super().__init__(name, seed, config)
        self.implant_id = implant_id
        self._master_key = master_key
        self.data_source = data_source

        self.pair_session: Optional[int] = None
        self.session: Optional[int] = None
        self.paired_smartphone: Optional[bytes] = None
        self.session_doctor: Optional[bytes] = None
        self.k_i: Optional[SymmetricKey] = None
        self.shift_key: Optional[codec.ShiftKey] = None
        self.k_r: Optional[SymmetricKey] = None
        self.c2_bytes: Optional[bytes] = None
        self.pending_cmd: Optional[bytes] = None
        self.applied_commands: list[bytes] = []
        self._expect(Heading.PAIR_REQ, LINK_SI)

    def _on_pair_req(self, msg: WireMessage) -> list[Outbound]:
        # failures here are silent: an unauthenticated caller learns nothing
        if len(msg.fields) != 3:
            self.drops += 1
            return []
        smartphone_id, ts1_raw, tag = msg.fields
        try:
            ts1 = ts_from_bytes(ts1_raw)
        except WireError:
            self.drops += 1
            return []
        if not self._fresh(ts1):
            self.drops += 1
            return []
        k_i = self.crypto.kdf(
            length_prefixed(self._master_key.data, smartphone_id, self.implant_id)
        )
        if not self.crypto.mac_verify(
            k_i,
            auth_bytes(Heading.PAIR_REQ, msg.session, [smartphone_id, ts1_raw]),
            MacTag("hmac-sha1", tag),
        ):
            self.drops += 1
            return []
        self.k_i = k_i
        self.pair_session = msg.session
        self.paired_smartphone = smartphone_id
        self._expect(Heading.READ_ALLOW, LINK_SI)
        return [Outbound(LINK_SI, WireMessage(Heading.PAIR_SUCC, msg.session, ()))]

    def _on_read_allow(self, msg: WireMessage) -> list[Outbound]:
        if len(msg.fields) != 4:
            self.drops += 1
            return []
        doctor_id, c1_raw, ts5_raw, tag = msg.fields
        try:
            ts5 = ts_from_bytes(ts5_raw)
        except WireError:
            self.drops += 1
            return []
        if not self._fresh(ts5):
            self.drops += 1
            return []
        if not self.crypto.mac_verify(
            self.k_i,
            auth_bytes(
                Heading.READ_ALLOW, msg.session, [doctor_id, c1_raw, ts5_raw]
            ),
            MacTag("hmac-sha1", tag),
        ):
            self._expect(Heading.READ_ALLOW, LINK_SI)  # stay paired
            self.drops += 1
            return []
        try:
            plain = self.crypto.sym_dec(self.k_i, CipherBlob("aes-128-gcm", c1_raw))
            kd_bytes, kr_bytes = split_length_prefixed(plain, 2)
            self.shift_key = codec.deserialize_shift_key(kd_bytes)
            self.k_r = SymmetricKey(kr_bytes)
        except (DecryptionError, codec.CodecError, WireError, CryptoError):
            self.drops += 1
            return []
        self.session = msg.session
        self.session_doctor = doctor_id
        self._expect(Heading.READ_REQ, LINK_DI)
        return [Outbound(LINK_SI, WireMessage(Heading.READ_READY, msg.session, ()))]

    def _on_read_req(self, msg: WireMessage) -> list[Outbound]:
        if msg.session != self.session or msg.fields:
            self.drops += 1
            return []
        phi = self.config.sensing_matrix()
        blobs = []
        for signal in self.data_source():
            cipher = codec.cs_enc(self.shift_key, signal, phi)
            self.crypto.count_external("cs_enc")
            if self.config.qs:
                cipher = codec.quantize(cipher, self.config.qs)
            blobs.append(codec.serialize_ciphertext(cipher))
        self.c2_bytes = pack_signals(blobs)
        tag5 = self.crypto.mac(
            self.k_r, auth_bytes(None, msg.session, [self.c2_bytes])
        )
        self._expect(Heading.WRITE_ALLOW, LINK_SI)
        return [
            Outbound(
                LINK_DI,
                WireMessage(
                    Heading.READ_REQ, msg.session, (self.c2_bytes, tag5.data)
                ),
            )
        ]

    def _on_write_allow(self, msg: WireMessage) -> list[Outbound]:
        if msg.session != self.session or len(msg.fields) != 3:
            self.drops += 1
            return []
        doctor_id, ts7_raw, tag = msg.fields
        try:
            ts7 = ts_from_bytes(ts7_raw)
        except WireError:
            self.drops += 1
            return []
        if not self._fresh(ts7) or doctor_id != self.session_doctor:
            self.drops += 1
            return []
        if not self.crypto.mac_verify(
            self.k_i,
            auth_bytes(Heading.WRITE_ALLOW, msg.session, [doctor_id, ts7_raw]),
            MacTag("hmac-sha1", tag),
        ):
            self._abort("write enable MAC failure")
            return []
        self._expect(Heading.WRITE_REQ, LINK_DI)
        return [
            Outbound(LINK_SI, WireMessage(Heading.WRITE_READY, msg.session, ()))
        ]

    def _on_write_req(self, msg: WireMessage) -> list[Outbound]:
        if msg.session != self.session or len(msg.fields) != 2:
            self.drops += 1
            return []
        c3_raw, tag = msg.fields
        if not self.crypto.mac_verify(
            self.k_r,
            auth_bytes(Heading.WRITE_REQ, msg.session, [c3_raw]),
            MacTag("hmac-sha1", tag),
        ):
            self._abort("command MAC failure")
            return []
        try:
            cmd = self.crypto.sym_dec(self.k_r, CipherBlob("aes-128-gcm", c3_raw))
        except DecryptionError:
            self._abort("command decryption failure")
            return []
        self.pending_cmd = cmd
        report = self.crypto.sym_enc(
            self.k_i,
            length_prefixed(cmd, self.implant_id, ts_bytes(self.clock)),
        )
        self._expect(Heading.SET_ALLOW, LINK_SI)
        return [
            Outbound(
                LINK_SI,
                WireMessage(
                    Heading.WRITE_REQ, msg.session, (self.c2_bytes, report.data)
                ),
            )
        ]

    def _on_set_allow(self, msg: WireMessage) -> list[Outbound]:
        if msg.session != self.session or len(msg.fields) != 2:
            self.drops += 1
            return []
        ts8_raw, tag = msg.fields
        try:
            ts8 = ts_from_bytes(ts8_raw)
        except WireError:
            self.drops += 1
            return []
        if not self._fresh(ts8):
            self.drops += 1
            return []
        if not self.crypto.mac_verify(
            self.k_i,
            auth_bytes(Heading.SET_ALLOW, msg.session, [ts8_raw]),
            MacTag("hmac-sha1", tag),
        ):
            self._abort("apply authorization MAC failure")
            return []
        self.applied_commands.append(self.pending_cmd)
        self.pending_cmd = None
        self.outcome = "ok"
        self._expect(None, None)
        return [Outbound(LINK_DI, WireMessage(Heading.WRITE_SUCC, msg.session, ()))]

    def _handle(self, msg: WireMessage, link: str) -> list[Outbound]:
        handlers = {
            Heading.PAIR_REQ: self._on_pair_req,
            Heading.READ_ALLOW: self._on_read_allow,
            Heading.READ_REQ: self._on_read_req,
            Heading.WRITE_ALLOW: self._on_write_allow,
            Heading.WRITE_REQ: self._on_write_req,
            Heading.SET_ALLOW: self._on_set_allow,
        }
        return handlers[msg.heading](msg)


class Programmer(Party):
    def __init__(
        self,
        name: str,
        seed: int,
        config: SystemConfig,
        credentials: KeyPairWithCert,
        target_implant_id: bytes,
        reconstruct: bool = True,
    ):
        super().__init__(name, seed, config)
        self.credentials = credentials
        self.doctor_id = credentials.certificate.subject_id
        self.target_implant_id = target_implant_id
        self.reconstruct = reconstruct

        self.session: Optional[int] = None
        self.smartphone_id: Optional[bytes] = None
        self.nonce: Optional[bytes] = None
        self.rm: Optional[bytes] = None
        self.k_p: Optional[SymmetricKey] = None
        self.k_r: Optional[SymmetricKey] = None
        self.shift_key: Optional[codec.ShiftKey] = None
        self.c2_bytes: Optional[bytes] = None
        self.recovered_signals: list[np.ndarray] = []
        self.command: Optional[bytes] = None
        self.write_complete = False

    # -- authentication ----------------------------------------------------

    def start_auth(self) -> list[Outbound]:
        self.session = self.rng.getrandbits(64)
        pk_der = self.credentials.certificate.public_key_der
        cert_raw = self.credentials.certificate.to_bytes()
        self._expect(Heading.AUTH_REQ, LINK_SD)
        msg = WireMessage(
            Heading.AUTH_REQ,
            self.session,
            (self.doctor_id, ts_bytes(self.clock), pk_der, cert_raw),
        )
        return [Outbound(LINK_SD, msg)]

    def _on_auth_reply(self, msg: WireMessage) -> list[Outbound]:
        if msg.session != self.session or len(msg.fields) != 2:
            self.drops += 1
            return []
        smartphone_id, challenge_raw = msg.fields
        try:
            self.nonce = self.crypto.pk_dec(
                self.credentials.private_key,
                CipherBlob("rsa-oaep-sha256", challenge_raw),
            )
        except DecryptionError:
            self._abort("nonce challenge unreadable")
            return []
        self.smartphone_id = smartphone_id
        self._expect(None, None)  # wait for the doctor to type in RM
        return []

    def enter_rm(self, rm: bytes):
        """The doctor reads RM off her phone and types it in."""
        if self.nonce is None:
            raise ProtocolError("no authentication in progress")
        self.rm = rm
        self.k_p = self.crypto.kdf(
            length_prefixed(rm, u64_bytes(self.session), self.nonce)
        )

    @property
    def authenticated(self) -> bool:
        return self.k_p is not None

    # -- read -------------------------------------------------------------------

    def start_read(self) -> list[Outbound]:
        if not self.authenticated:
            raise ProtocolError("read requires completed authentication")
        ts4 = ts_bytes(self.clock)
        tag3 = self.crypto.mac(
            self.k_p, auth_bytes(Heading.READ_AUTH_REQ, self.session, [ts4])
        )
        self._expect(Heading.READ_READY, LINK_SD)
        return [
            Outbound(
                LINK_SD,
                WireMessage(Heading.READ_AUTH_REQ, self.session, (ts4, tag3.data)),
            )
        ]

    def _on_read_ready(self, msg: WireMessage) -> list[Outbound]:
        if msg.session != self.session or len(msg.fields) != 1:
            self.drops += 1
            return []
        try:
            kd_bytes = self.crypto.sym_dec(
                self.k_p, CipherBlob("aes-128-gcm", msg.fields[0])
            )
            self.shift_key = codec.deserialize_shift_key(kd_bytes)
        except (DecryptionError, codec.CodecError):
            self._abort("shift key unreadable")
            return []
        self.k_r = self.crypto.kdf(
            length_prefixed(kd_bytes, u64_bytes(self.session))
        )
        self._expect(Heading.READ_REQ, LINK_DI)
        return [Outbound(LINK_DI, WireMessage(Heading.READ_REQ, self.session, ()))]

    def _on_read_response(self, msg: WireMessage) -> list[Outbound]:
        if msg.session != self.session or len(msg.fields) != 2:
            self.drops += 1
            return []
        c2_bytes, tag = msg.fields
        if not self.crypto.mac_verify(
            self.k_r,
            auth_bytes(None, msg.session, [c2_bytes]),
            MacTag("hmac-sha1", tag),
        ):
            self._abort("telemetry MAC failure")
            return []
        try:
            blobs = unpack_signals(c2_bytes)
            ciphers = [codec.deserialize_ciphertext(b) for b in blobs]
        except (WireError, codec.CodecError):
            self._abort("telemetry payload malformed")
            return []
        self.c2_bytes = c2_bytes
        if self.reconstruct:
            phi = self.config.sensing_matrix()
            psi = self.config.basis()
            for cipher in ciphers:
                y = codec.cs_deshift(
                    self.shift_key, cipher, phi, self.config.L1, self.config.L2
                )
                _, x_hat = recovery.omp_reconstruct(y, phi, psi)
                self.recovered_signals.append(x_hat)
        self._expect(None, None)
        return []

    @property
    def read_complete(self) -> bool:
        return self.c2_bytes is not None

    # -- write --------------------------------------------------------------------

    def start_write(self, command: bytes) -> list[Outbound]:
        if not self.read_complete:
            raise ProtocolError("write requires a completed read in this session")
        if len(command) > 256:
            raise ProtocolError("command too long")
        self.command = command
        ts6 = self.clock
        kd_bytes = codec.serialize_shift_key(self.shift_key)
        sig = self.crypto.sign(
            self.credentials.private_key,
            signed_payload(
                self.doctor_id,
                self.smartphone_id,
                self.target_implant_id,
                self.c2_bytes,
                kd_bytes,
                command,
                ts6,
            ),
        )
        tag6 = self.crypto.mac(
            self.k_p,
            auth_bytes(
                Heading.WRITE_AUTH_REQ, self.session, [sig.data, ts_bytes(ts6)]
            ),
        )
        self._expect(Heading.WRITE_READY, LINK_SD)
        return [
            Outbound(
                LINK_SD,
                WireMessage(
                    Heading.WRITE_AUTH_REQ,
                    self.session,
                    (sig.data, ts_bytes(ts6), tag6.data),
                ),
            )
        ]

    def _on_write_ready(self, msg: WireMessage) -> list[Outbound]:
        if msg.session != self.session or msg.fields:
            self.drops += 1
            return []
        c3 = self.crypto.sym_enc(self.k_r, self.command)
        tag8 = self.crypto.mac(
            self.k_r, auth_bytes(Heading.WRITE_REQ, self.session, [c3.data])
        )
        self._expect(Heading.WRITE_SUCC, LINK_DI)
        return [
            Outbound(
                LINK_DI,
                WireMessage(Heading.WRITE_REQ, self.session, (c3.data, tag8.data)),
            )
        ]

    def _on_write_succ(self, msg: WireMessage) -> list[Outbound]:
        if msg.session != self.session or msg.fields:
            self.drops += 1
            return []
        self.write_complete = True
        self.outcome = "ok"
        self._expect(None, None)
        return []

    def _handle(self, msg: WireMessage, link: str) -> list[Outbound]:
        handlers = {
            Heading.AUTH_REQ: self._on_auth_reply,
            Heading.READ_READY: self._on_read_ready,
            Heading.READ_REQ: self._on_read_response,
            Heading.WRITE_READY: self._on_write_ready,
            Heading.WRITE_SUCC: self._on_write_succ,
        }
        return handlers[msg.heading](msg)
