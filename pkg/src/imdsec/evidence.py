"""Forensic evidence ledger for write commands.

Each applied command leaves one signed tuple on the patient's phone:
who wrote (doctor id), through what (smartphone id), to what device
(implant id), with which session key material, based on which telemetry
ciphertext, the command itself, when, and the doctor's signature over
all of it.  The ledger file is append-only.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Optional

from .crypto import (
    CryptoSuite,
    SignatureBlob,
    length_prefixed,
    split_length_prefixed,
)

__all__ = ["EvidenceRecord", "EvidenceLedger", "evidence_verify", "signed_payload"]


@dataclass(frozen=True)
class EvidenceRecord:
    doctor_id: bytes
    smartphone_id: bytes
    implant_id: bytes
    shift_key: bytes  # serialized form of the session shift key
    ciphertext: bytes  # the telemetry ciphertext the command was based on
    command: bytes
    timestamp: int
    signature: SignatureBlob

    def to_bytes(self) -> bytes:
        return length_prefixed(
            self.doctor_id,
            self.smartphone_id,
            self.implant_id,
            self.shift_key,
            self.ciphertext,
            self.command,
            struct.pack(">Q", self.timestamp),
            self.signature.algorithm.encode(),
            self.signature.data,
        )

    @classmethod
    def from_bytes(cls, buf: bytes) -> "EvidenceRecord":
        parts = split_length_prefixed(buf, 9)
        return cls(
            doctor_id=parts[0],
            smartphone_id=parts[1],
            implant_id=parts[2],
            shift_key=parts[3],
            ciphertext=parts[4],
            command=parts[5],
            timestamp=struct.unpack(">Q", parts[6])[0],
            signature=SignatureBlob(parts[7].decode(), parts[8]),
        )


def signed_payload(
    doctor_id: bytes,
    smartphone_id: bytes,
    implant_id: bytes,
    ciphertext: bytes,
    shift_key: bytes,
    command: bytes,
    timestamp: int,
) -> bytes:
    """The byte string the doctor signs; ciphertext precedes the shift
    key here even though the stored tuple orders them the other way."""
    return length_prefixed(
        doctor_id,
        smartphone_id,
        implant_id,
        ciphertext,
        shift_key,
        command,
        struct.pack(">Q", timestamp),
    )


def evidence_verify(record: EvidenceRecord, public_key, suite: Optional[CryptoSuite] = None) -> bool:
    """Recompute the signed byte string in canonical order and verify.

    Total: returns accept/reject, never raises.
    """
    suite = suite or CryptoSuite()
    try:
        payload = signed_payload(
            record.doctor_id,
            record.smartphone_id,
            record.implant_id,
            record.ciphertext,
            record.shift_key,
            record.command,
            record.timestamp,
        )
    except Exception:
        return False
    return suite.verify(public_key, payload, record.signature)


class EvidenceLedger:
    """Append-only store of evidence records.

    With a path, records are appended to a file of length-prefixed
    entries as they arrive; without one the ledger is memory-only.
    """

    def __init__(self, path: Optional[str] = None):
        self._path = path
        self._records: list[EvidenceRecord] = []
        if path and os.path.exists(path):
            self._records = list(self._read_file(path))

    @staticmethod
    def _read_file(path: str):
        with open(path, "rb") as fh:
            data = fh.read()
        pos = 0
        while pos < len(data):
            if pos + 4 > len(data):
                raise ValueError("truncated ledger file")
            ln = int.from_bytes(data[pos : pos + 4], "big")
            pos += 4
            if pos + ln > len(data):
                raise ValueError("truncated ledger file")
            yield EvidenceRecord.from_bytes(data[pos : pos + ln])
            pos += ln

    def append(self, record: EvidenceRecord):
        self._records.append(record)
        if self._path:
            blob = record.to_bytes()
            with open(self._path, "ab") as fh:
                fh.write(len(blob).to_bytes(4, "big"))
                fh.write(blob)

    @property
    def records(self) -> tuple[EvidenceRecord, ...]:
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)
