import random

import pytest

from imdsec.attacks import (
    MAC_PROTECTED_FRAMES,
    BitFlipAttacker,
    DuplicateFrameAttacker,
    PassiveEavesdropper,
)
from imdsec.evidence import evidence_verify
from imdsec.parties import SystemConfig
from imdsec.scenarios import build_world, run_session
from imdsec.wire import Heading

FAST = SystemConfig(n=64, qs=0)


def _advance(world, upto):
    """Honestly advance a world to a quiescent checkpoint."""
    if upto == "fresh":
        return
    order = {"pair": ["pair"], "auth": ["pair", "auth"], "read": ["pair", "auth", "read"]}
    run_session(order[upto][-1], config=world.config, world=world)


def _snapshot(world):
    parties = {
        "smartphone": world.smartphone,
        "imd": world.imd,
        "programmer": world.programmer,
    }
    snap = {}
    for name, p in parties.items():
        snap[name] = (
            p.expected,
            p.expected_link,
            p.outcome,
            getattr(p, "session", None),
        )
    snap["applied"] = len(world.imd.applied_commands)
    snap["ledger"] = len(world.smartphone.ledger)
    snap["paired"] = world.smartphone.paired
    return snap


class TestDeterminism:
    def test_identical_seeds_give_identical_transcripts(self):
        a = run_session("full", seed=5, config=FAST, reconstruct=False)
        b = run_session("full", seed=5, config=FAST, reconstruct=False)
        assert a.ok and b.ok
        assert a.transcript.dump() == b.transcript.dump()

    def test_different_seeds_differ(self):
        a = run_session("pair", seed=1, config=FAST)
        b = run_session("pair", seed=2, config=FAST)
        assert a.transcript.dump() != b.transcript.dump()

    def test_lossless_in_order_without_attacker(self):
        result = run_session("full", seed=6, config=FAST, reconstruct=False)
        times = [e.time for e in result.transcript.entries]
        assert times == sorted(times)
        assert result.ok


class TestPassiveAttacker:
    def test_observer_never_alters_honest_outcomes(self):
        baseline = run_session("full", seed=7, config=FAST, reconstruct=False)
        tap = PassiveEavesdropper()
        world = build_world(seed=7, config=FAST, attacker=tap, reconstruct=False)
        observed = run_session("full", config=FAST, world=world)
        assert observed.ok
        assert observed.transcript.dump() == baseline.transcript.dump()
        # the tap saw exactly the wire frames
        assert len(tap.seen) == len(baseline.transcript.wire_entries())

    def test_eavesdropper_sees_ciphertext_but_no_secrets(self):
        tap = PassiveEavesdropper()
        world = build_world(seed=8, attacker=tap)
        result = run_session("read", world=world)
        assert result.ok
        blob = b"".join(e.payload for e in tap.seen)
        assert world.imd.c2_bytes is not None
        assert world.imd.c2_bytes in blob  # the ciphertext is public
        for name, secret in world.secret_values().items():
            assert secret not in blob, name

    def test_result_reports_what_the_attacker_learned(self):
        tap = PassiveEavesdropper()
        world = build_world(seed=8, config=FAST, attacker=tap, reconstruct=False)
        result = run_session("read", config=FAST, world=world)
        learned = result.attacker_learned()
        assert result.attacker is tap
        assert len(learned["seen"]) == len(result.transcript.wire_entries())
        assert run_session("pair", seed=8, config=FAST).attacker_learned() == {}


class TestReplayImmunity:
    @pytest.mark.parametrize("checkpoint", ["fresh", "pair", "auth", "read"])
    def test_recorded_messages_never_advance_fresh_sessions(self, checkpoint):
        original = run_session("full", seed=9, config=FAST, reconstruct=False)
        assert original.ok
        recorded = original.transcript.wire_entries()
        end_clock = original.world.scheduler.clock

        for entry in recorded:
            fresh = build_world(
                seed=10,
                config=FAST,
                reconstruct=False,
                master_key=original.world.master_key,
                start_clock=end_clock + FAST.freshness_window + 10,
            )
            _advance(fresh, checkpoint)
            before = _snapshot(fresh)
            fresh.scheduler.deliver_raw(
                entry.link, entry.sender, entry.receiver, entry.payload
            )
            fresh.scheduler.run_until_quiet()
            assert _snapshot(fresh) == before, (
                f"replayed frame at t={entry.time} advanced state "
                f"(checkpoint {checkpoint})"
            )


class TestActiveAttackers:
    def test_duplicate_command_frame_applies_once(self):
        attacker = DuplicateFrameAttacker("programmer", Heading.WRITE_REQ)
        world = build_world(seed=11, config=FAST, attacker=attacker, reconstruct=False)
        result = run_session("write", config=FAST, world=world)
        assert attacker.duplicated
        assert result.ok  # the duplicate is dropped, the flow still completes
        assert len(world.imd.applied_commands) == 1
        assert len(world.smartphone.ledger) == 1

    def test_bit_flip_sample_always_kills_session(self):
        rng = random.Random(123)
        for _ in range(40):
            occurrence = rng.randrange(8)
            bit = rng.randrange(4096)
            attacker = BitFlipAttacker(occurrence, bit)
            world = build_world(
                seed=12, config=FAST, attacker=attacker, reconstruct=False
            )
            result = run_session("full", config=FAST, world=world)
            assert attacker.flipped_frame is not None
            assert not result.ok, (
                f"session survived a flipped bit in {attacker.flipped_frame}"
            )
            # forensic soundness holds even mid-abort
            applied = world.imd.applied_commands
            records = world.smartphone.ledger.records
            assert len(applied) <= len(records)
            for record in records:
                assert evidence_verify(
                    record, world.programmer.credentials.public_key
                )

    def test_all_protected_frame_kinds_covered(self):
        seen = set()
        for occurrence in range(8):
            attacker = BitFlipAttacker(occurrence, 7)
            world = build_world(
                seed=13, config=FAST, attacker=attacker, reconstruct=False
            )
            run_session("full", config=FAST, world=world)
            if attacker.flipped_frame:
                seen.add(attacker.flipped_frame)
        assert seen == set(MAC_PROTECTED_FRAMES)
