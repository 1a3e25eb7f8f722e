"""End-to-end session scenarios over the simulated channel.

A world holds the four parties wired to one scheduler, with the pinned
demo credentials and a synthetic telemetry source.  run_session drives
the requested flows (pair -> auth -> read -> write) phase by phase,
snapshotting the implant's crypto-operation counters per phase, and
returns the transcript plus per-party outcomes.  Everything is
deterministic in the session seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

from . import ecg
from .channel import Attacker, Scheduler, Transcript
from .codec import serialize_shift_key
from .crypto import CryptoSuite, KeyPairWithCert, SymmetricKey
from .evidence import EvidenceLedger
from .keymat import authority_private_key, doctor_private_key
from .parties import (
    LINK_DI,
    LINK_SD,
    LINK_SI,
    DoctorPhone,
    Imd,
    Programmer,
    Smartphone,
    SystemConfig,
)

__all__ = ["World", "SessionResult", "build_world", "run_session", "SCENARIOS"]

SCENARIOS = ("pair", "auth", "read", "write", "full")

SMARTPHONE_ID = b"SM-2041"
IMPLANT_ID = b"IMD-7742"
DOCTOR_ID = b"DR-ALICE"
DOCTOR_PHONE = "doctor-phone"
DEFAULT_COMMAND = b"therapy: pace-rate=72"


def _party_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class World:
    config: SystemConfig
    smartphone: Smartphone
    imd: Imd
    programmer: Programmer
    doctor_phone: DoctorPhone
    scheduler: Scheduler
    master_key: SymmetricKey
    seed: int

    def secret_values(self) -> dict[str, bytes]:
        """Material that must never appear on the wire in the clear."""
        secrets: dict[str, bytes] = {"master_key": self.master_key.data}
        if self.smartphone.k_i is not None:
            secrets["k_i"] = self.smartphone.k_i.data
        if self.smartphone.k_p is not None:
            secrets["k_p"] = self.smartphone.k_p.data
        if self.smartphone.k_r is not None:
            secrets["k_r"] = self.smartphone.k_r.data
        if self.smartphone.shift_key is not None:
            secrets["shift_key"] = serialize_shift_key(self.smartphone.shift_key)
        if self.smartphone.rm is not None:
            secrets["rm"] = self.smartphone.rm
        if self.smartphone.nonce is not None:
            secrets["nonce"] = self.smartphone.nonce
        if self.programmer.command is not None:
            secrets["command"] = self.programmer.command
        for i, record in enumerate(self._records()):
            secrets[f"raw_data_{i}"] = ecg.raw_signal_bytes(record)
        return secrets

    def _records(self) -> list[ecg.EcgRecord]:
        return list(getattr(self.imd.data_source, "records", []))


class _TelemetrySource:
    """Callable data source exposing its records for oracle checks."""

    def __init__(self, records: list[ecg.EcgRecord]):
        self.records = records

    def __call__(self):
        return [ecg.to_bounded_signal(r) for r in self.records]


def build_world(
    seed: int = 0,
    config: Optional[SystemConfig] = None,
    attacker: Optional[Attacker] = None,
    reconstruct: bool = True,
    n_signals: int = 1,
    ledger_path: Optional[str] = None,
    start_clock: int = 0,
    records: Optional[list[ecg.EcgRecord]] = None,
    master_key: Optional[SymmetricKey] = None,
) -> World:
    """Wire up the four parties; master_key may be pinned so separate
    worlds model fresh sessions of the same implant."""
    config = config or SystemConfig()
    if master_key is None:
        master_key = SymmetricKey(
            hashlib.sha256(f"master/{seed}".encode()).digest()[:16]
        )
    if records is None:
        records = [
            ecg.synth_ecg_like(
                f"world/{seed}/{i}".encode(),
                n=config.n,
                L1=config.L1,
                L2=config.L2,
            )
            for i in range(n_signals)
        ]

    authority = authority_private_key()
    doctor_key = doctor_private_key()
    suite = CryptoSuite()
    cert = suite.cert_issue(authority, doctor_key.public_key(), DOCTOR_ID)
    credentials = KeyPairWithCert(private_key=doctor_key, certificate=cert)

    smartphone = Smartphone(
        name="smartphone",
        seed=_party_seed(seed, "smartphone"),
        config=config,
        smartphone_id=SMARTPHONE_ID,
        implant_id=IMPLANT_ID,
        ca_public_key=authority.public_key(),
        doctor_oob_directory={DOCTOR_ID: DOCTOR_PHONE},
        ledger=EvidenceLedger(ledger_path),
    )
    imd = Imd(
        name="imd",
        seed=_party_seed(seed, "imd"),
        config=config,
        implant_id=IMPLANT_ID,
        master_key=master_key,
        data_source=_TelemetrySource(records),
    )
    programmer = Programmer(
        name="programmer",
        seed=_party_seed(seed, "programmer"),
        config=config,
        credentials=credentials,
        target_implant_id=IMPLANT_ID,
        reconstruct=reconstruct,
    )
    doctor_phone = DoctorPhone(DOCTOR_PHONE)

    scheduler = Scheduler(
        parties={
            "smartphone": smartphone,
            "imd": imd,
            "programmer": programmer,
        },
        links={
            LINK_SI: ("smartphone", "imd"),
            LINK_SD: ("smartphone", "programmer"),
            LINK_DI: ("programmer", "imd"),
        },
        oob_parties={DOCTOR_PHONE: doctor_phone},
        attacker=attacker,
        start_clock=start_clock,
    )
    return World(
        config=config,
        smartphone=smartphone,
        imd=imd,
        programmer=programmer,
        doctor_phone=doctor_phone,
        scheduler=scheduler,
        master_key=master_key,
        seed=seed,
    )


@dataclass
class SessionResult:
    scenario: str
    transcript: Transcript
    outcomes: dict[str, str]
    phases: dict[str, bool]
    imd_op_counts: dict[str, dict[str, int]]
    world: World
    attacker: Optional[Attacker] = None

    @property
    def ok(self) -> bool:
        return all(self.phases.values())

    def attacker_learned(self) -> dict[str, object]:
        """Whatever the attacker walked away with, by attribute name."""
        if self.attacker is None:
            return {}
        learned = {}
        for name in ("seen", "captured_c2", "rm", "duplicated", "flipped_frame"):
            value = getattr(self.attacker, name, None)
            if value:
                learned[name] = value
        return learned


def _counter_delta(before: dict[str, int], after: dict[str, int]) -> dict[str, int]:
    keys = set(before) | set(after)
    return {k: after.get(k, 0) - before.get(k, 0) for k in keys if after.get(k, 0) != before.get(k, 0)}


def run_session(
    scenario: str = "full",
    seed: int = 0,
    config: Optional[SystemConfig] = None,
    attacker: Optional[Attacker] = None,
    command: bytes = DEFAULT_COMMAND,
    reconstruct: bool = True,
    n_signals: int = 1,
    world: Optional[World] = None,
) -> SessionResult:
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}")
    if world is None:
        world = build_world(
            seed=seed, config=config, attacker=attacker,
            reconstruct=reconstruct, n_signals=n_signals,
        )
    sched = world.scheduler
    phases: dict[str, bool] = {}
    op_counts: dict[str, dict[str, int]] = {}
    want = {
        "pair": ("pair",),
        "auth": ("pair", "auth"),
        "read": ("pair", "auth", "read"),
        "write": ("pair", "auth", "read", "write"),
        "full": ("pair", "auth", "read", "write"),
    }[scenario]

    def phase(name, initiate, check) -> bool:
        before = world.imd.crypto.snapshot()
        initiate()
        sched.run_until_quiet()
        op_counts[name] = _counter_delta(before, world.imd.crypto.snapshot())
        ok = bool(check())
        phases[name] = ok
        return ok

    done = True
    if "pair" in want and done:
        done = phase(
            "pair",
            lambda: sched.initiate(
                "smartphone", lambda: world.smartphone.start_pair(world.master_key)
            ),
            lambda: world.smartphone.paired and world.imd.k_i is not None,
        )
    if "auth" in want and done:
        def auth_flow():
            sched.initiate("programmer", world.programmer.start_auth)
            sched.run_until_quiet()
            if world.doctor_phone.rm is not None and world.programmer.nonce is not None:
                world.programmer.enter_rm(world.doctor_phone.rm)

        done = phase(
            "auth",
            auth_flow,
            lambda: world.programmer.authenticated
            and world.smartphone.k_p is not None,
        )
    if "read" in want and done:
        done = phase(
            "read",
            lambda: sched.initiate("programmer", world.programmer.start_read),
            lambda: world.programmer.read_complete,
        )
    if "write" in want and done:
        done = phase(
            "write",
            lambda: sched.initiate(
                "programmer", lambda: world.programmer.start_write(command)
            ),
            lambda: world.programmer.write_complete
            and len(world.imd.applied_commands) > 0,
        )

    for name in want:
        phases.setdefault(name, False)

    outcomes = {
        name: party.outcome
        for name, party in sched.parties.items()
    }
    return SessionResult(
        scenario=scenario,
        transcript=sched.transcript,
        outcomes=outcomes,
        phases=phases,
        imd_op_counts=op_counts,
        world=world,
        attacker=sched.attacker,
    )
