"""Joint compression/encryption codec for bounded telemetry signals.

The sender masks each sample with a secret integer shift, wrapping
cyclically inside the signal's value window [L1, L2) and remembering a
one-bit wrap indicator per sample.  The masked vector is then compressed
by a wide random projection.  A receiver that knows the shift key can
subtract the projected shift (using the wrap bits) and recover the exact
compressed measurements of the original signal; everyone else sees a
projection of what is statistically close to uniform noise.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "CodecError",
    "BoundedSignal",
    "ShiftKey",
    "CarryVector",
    "CsCiphertext",
    "shifting_add",
    "vec_shifting_add",
    "entrywise_product",
    "cs_gen",
    "sign_vector",
    "cs_enc",
    "quantize",
    "cs_deshift",
    "serialize_ciphertext",
    "deserialize_ciphertext",
    "serialize_shift_key",
    "deserialize_shift_key",
]


class CodecError(ValueError):
    """Raised on invalid codec inputs (bounds, lengths, malformed bytes)."""


@dataclass(frozen=True)
class BoundedSignal:
    """A real-valued signal whose samples lie strictly inside (L1, L2).

    L1 and L2 are integers; the window width L2 - L1 is the wrap modulus
    used by the shifting arithmetic.
    """

    values: np.ndarray
    L1: int
    L2: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size == 0:
            raise CodecError("signal must be a non-empty 1-D vector")
        if not (isinstance(self.L1, int) and isinstance(self.L2, int)):
            raise CodecError("bounds must be integers")
        if self.L1 >= self.L2:
            raise CodecError(f"need L1 < L2, got ({self.L1}, {self.L2})")
        if not np.all((values > self.L1) & (values < self.L2)):
            raise CodecError("signal values must lie strictly inside (L1, L2)")

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def value_range(self) -> int:
        return self.L2 - self.L1


@dataclass(frozen=True)
class ShiftKey:
    """Per-sample integer shifts, reproducible from a seed.

    Entries are bounded by ceil(value_range / 2) in magnitude.  The seed
    is kept so the same key can be regenerated; keys parsed off the wire
    carry seed=None.
    """

    entries: np.ndarray
    value_range: int
    seed: Optional[bytes] = None

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.int64)
        object.__setattr__(self, "entries", entries)
        if entries.ndim != 1 or entries.size == 0:
            raise CodecError("shift key must be a non-empty 1-D integer vector")
        if self.value_range <= 0:
            raise CodecError("value_range must be positive")
        bound = _shift_bound(self.value_range)
        if np.any(np.abs(entries) > bound):
            raise CodecError(f"shift entries exceed bound {bound}")

    @property
    def k(self) -> int:
        return self.entries.size


@dataclass(frozen=True)
class CarryVector:
    """One wrap-indicator bit per sample (1 = the shift wrapped)."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        object.__setattr__(self, "bits", bits)
        if bits.ndim != 1:
            raise CodecError("carry vector must be 1-D")
        if not np.all((bits == 0) | (bits == 1)):
            raise CodecError("carry bits must be 0 or 1")

    def __len__(self) -> int:
        return self.bits.size

    def packed(self) -> bytes:
        """Pack bits into bytes, most significant bit first."""
        return np.packbits(self.bits).tobytes()

    @classmethod
    def unpack(cls, data: bytes, n: int) -> "CarryVector":
        bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=n)
        return cls(bits=bits)


@dataclass(frozen=True)
class CsCiphertext:
    """Compressed-and-masked measurements plus the carry bits.

    quant_step is None for raw float measurements; otherwise every
    measurement is an integer multiple of quant_step.
    """

    measurements: np.ndarray
    carries: CarryVector
    quant_step: Optional[int] = None

    def __post_init__(self):
        m = np.asarray(self.measurements, dtype=np.float64)
        object.__setattr__(self, "measurements", m)
        if m.ndim != 1 or m.size == 0:
            raise CodecError("measurements must be a non-empty 1-D vector")
        if m.size >= len(self.carries):
            raise CodecError("measurement count must be smaller than sample count")
        if self.quant_step is not None:
            if self.quant_step <= 0:
                raise CodecError("quantization step must be positive")
            mult = m / self.quant_step
            if not np.allclose(mult, np.round(mult)):
                raise CodecError("quantized measurements must be step multiples")

    @property
    def m(self) -> int:
        return self.measurements.size

    @property
    def n(self) -> int:
        return len(self.carries)

    @property
    def quantized(self) -> bool:
        return self.quant_step is not None


def _shift_bound(value_range: int) -> int:
    return math.ceil(value_range / 2)


def shifting_add(v: float, w: float, L1: int, L2: int) -> tuple[float, int]:
    """Add w to v, wrapping cyclically inside [L1, L2).

    Returns (u, carry) where u = ((v + w - L1) mod (L2 - L1)) + L1 and
    carry is 1 exactly when v + w fell outside [L1, L2).  v must lie
    strictly inside (L1, L2).
    """
    if L1 >= L2:
        raise CodecError(f"need L1 < L2, got ({L1}, {L2})")
    if not (L1 < v < L2):
        raise CodecError(f"value {v} outside open interval ({L1}, {L2})")
    return _shift_scalar(v, w, L1, L2)


def _shift_scalar(v: float, w: float, L1: int, L2: int) -> tuple[float, int]:
    rng = L2 - L1
    total = v + w
    u = (total - L1) % rng + L1
    if u >= L2:  # float round-off can land exactly on L2
        u -= rng
    carry = 0 if L1 <= total < L2 else 1
    return u, carry


def _shift_core(values: np.ndarray, shifts: np.ndarray, L1: int, L2: int):
    """Vectorized wrap-add without the input-bound check (decode side and
    the zero-vector reference distribution both need out-of-window inputs)."""
    rng = L2 - L1
    total = np.asarray(values, dtype=np.float64) + np.asarray(shifts, dtype=np.float64)
    u = (total - L1) % rng + L1
    u = np.where(u >= L2, u - rng, u)
    carries = ((total < L1) | (total >= L2)).astype(np.uint8)
    return u, carries


def vec_shifting_add(
    values: np.ndarray,
    shifts: np.ndarray,
    L1: int,
    L2: int,
    check_bounds: bool = True,
) -> tuple[np.ndarray, CarryVector]:
    """Entrywise shifting addition of two equal-length vectors."""
    values = np.asarray(values, dtype=np.float64)
    shifts = np.asarray(shifts, dtype=np.float64)
    if values.shape != shifts.shape or values.ndim != 1:
        raise CodecError(
            f"length mismatch: {values.shape} vs {shifts.shape}"
        )
    if L1 >= L2:
        raise CodecError(f"need L1 < L2, got ({L1}, {L2})")
    if check_bounds and not np.all((values > L1) & (values < L2)):
        raise CodecError("input values must lie strictly inside (L1, L2)")
    u, carries = _shift_core(values, shifts, L1, L2)
    return u, CarryVector(bits=carries)


def entrywise_product(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Entrywise product of two same-sized vectors."""
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if v.shape != w.shape or v.ndim != 1:
        raise CodecError(f"length mismatch: {v.shape} vs {w.shape}")
    return v * w


class _PrfStream:
    """Deterministic byte stream: SHA-256 over seed || counter."""

    def __init__(self, seed: bytes):
        self._seed = bytes(seed)
        self._counter = 0

    def blocks(self, count: int) -> bytes:
        out = []
        for _ in range(count):
            out.append(
                hashlib.sha256(
                    self._seed + self._counter.to_bytes(8, "big")
                ).digest()
            )
            self._counter += 1
        return b"".join(out)


def cs_gen(seed: bytes, k: int, L1: int, L2: int) -> ShiftKey:
    """Generate k shift entries uniform on [-ceil(range/2), ceil(range/2)].

    Draws come from a seeded PRF stream with rejection sampling, so the
    output is exactly uniform on the closed integer interval and fully
    determined by the seed.
    """
    if k <= 0:
        raise CodecError("key length must be positive")
    if L1 >= L2:
        raise CodecError(f"need L1 < L2, got ({L1}, {L2})")
    rng = L2 - L1
    bound = _shift_bound(rng)
    span = 2 * bound + 1
    limit = (2**64 // span) * span
    stream = _PrfStream(seed)
    entries = np.empty(k, dtype=np.int64)
    filled = 0
    while filled < k:
        need = k - filled
        # each 32-byte block yields four u64 candidates
        raw = stream.blocks(max(1, (need + 3) // 4))
        candidates = np.frombuffer(raw, dtype=">u8").astype(np.uint64)
        accepted = candidates[candidates < limit]
        take = accepted[:need]
        entries[filled : filled + take.size] = (
            take % np.uint64(span)
        ).astype(np.int64) - bound
        filled += take.size
    return ShiftKey(entries=entries, value_range=rng, seed=bytes(seed))


def sign_vector(key: ShiftKey) -> np.ndarray:
    """Shift directions: +1 / -1 per entry, 0 for zero entries."""
    return np.sign(key.entries).astype(np.int64)


def cs_enc(key: ShiftKey, x: BoundedSignal, phi) -> CsCiphertext:
    """Mask the signal with the shift key, then project with phi.

    phi is a SensingMatrix (see recovery module); its column count must
    equal both the signal length and the key length.
    """
    if key.k != x.n:
        raise CodecError(f"key length {key.k} != signal length {x.n}")
    if phi.n != x.n:
        raise CodecError(f"matrix columns {phi.n} != signal length {x.n}")
    masked, carries = vec_shifting_add(x.values, key.entries, x.L1, x.L2)
    measurements = phi.entries @ masked
    return CsCiphertext(measurements=measurements, carries=carries)


def quantize(c: CsCiphertext, qs: int) -> CsCiphertext:
    """Snap each measurement to the nearest multiple of qs.

    Ties round away from zero so results are bit-reproducible.
    """
    if c.quantized:
        raise CodecError("ciphertext is already quantized")
    if not isinstance(qs, int) or qs <= 0:
        raise CodecError("quantization step must be a positive integer")
    m = c.measurements
    mult = np.sign(m) * np.floor(np.abs(m) / qs + 0.5)
    return CsCiphertext(measurements=mult * qs, carries=c.carries, quant_step=qs)


def cs_deshift(key: ShiftKey, c: CsCiphertext, phi, L1: int, L2: int) -> np.ndarray:
    """Remove the projected shift: y' + phi @ (range * (carries .* sign) - key).

    For an unquantized ciphertext this reproduces phi @ x exactly up to
    float round-off.
    """
    if key.k != c.n:
        raise CodecError(f"key length {key.k} != sample count {c.n}")
    if phi.n != c.n or phi.m != c.m:
        raise CodecError(
            f"matrix shape ({phi.m}, {phi.n}) does not match ciphertext "
            f"({c.m}, {c.n})"
        )
    if L1 >= L2:
        raise CodecError(f"need L1 < L2, got ({L1}, {L2})")
    rng = L2 - L1
    correction = rng * entrywise_product(
        c.carries.bits, sign_vector(key)
    ) - key.entries
    return c.measurements + phi.entries @ correction


# --- wire form ---------------------------------------------------------
#
# header: N u32 | M u32 | qs u32 (0 = unquantized)
# unquantized: M float64 big-endian measurements
# quantized:   1 byte bit width b, then M signed b-bit step multiples,
#              two's complement, packed MSB-first and padded to a byte
# then ceil(N/8) bytes of carry bits, MSB-first.
#
# Quantized multiples are packed at the minimal width that holds them;
# a step-qs grid occupies few levels, so the packed payload stays well
# below the raw signal size.

_HEADER = struct.Struct(">III")


def _min_signed_width(values: np.ndarray) -> int:
    width = 1
    for value in values:
        iv = int(value)
        need = iv.bit_length() + 1 if iv >= 0 else (-iv - 1).bit_length() + 1
        width = max(width, need)
    return width


def serialize_ciphertext(c: CsCiphertext) -> bytes:
    out = [_HEADER.pack(c.n, c.m, c.quant_step or 0)]
    if c.quantized:
        mult = np.round(c.measurements / c.quant_step).astype(np.int64)
        width = _min_signed_width(mult)
        if width > 32:
            raise CodecError("quantized multiples exceed 32-bit range")
        out.append(struct.pack(">B", width))
        bits = np.zeros(c.m * width, dtype=np.uint8)
        for i, value in enumerate(mult):
            uv = int(value) & ((1 << width) - 1)
            for j in range(width):
                bits[i * width + j] = (uv >> (width - 1 - j)) & 1
        out.append(np.packbits(bits).tobytes())
    else:
        out.append(np.asarray(c.measurements, dtype=">f8").tobytes())
    out.append(c.carries.packed())
    return b"".join(out)


def deserialize_ciphertext(buf: bytes) -> CsCiphertext:
    if len(buf) < _HEADER.size:
        raise CodecError("ciphertext buffer too short")
    n, m, qs = _HEADER.unpack_from(buf, 0)
    pos = _HEADER.size
    if n == 0 or m == 0 or m >= n:
        raise CodecError(f"bad ciphertext dimensions N={n} M={m}")
    if qs == 0:
        end = pos + 8 * m
        if len(buf) < end:
            raise CodecError("truncated measurement block")
        measurements = np.frombuffer(buf[pos:end], dtype=">f8").astype(np.float64)
        pos = end
        quant_step = None
    else:
        if len(buf) < pos + 1:
            raise CodecError("missing bit-width byte")
        width = buf[pos]
        pos += 1
        if not 1 <= width <= 32:
            raise CodecError(f"bad multiple width {width}")
        nbytes = (m * width + 7) // 8
        end = pos + nbytes
        if len(buf) < end:
            raise CodecError("truncated measurement block")
        bits = np.unpackbits(
            np.frombuffer(buf[pos:end], dtype=np.uint8), count=m * width
        )
        mult = np.empty(m, dtype=np.int64)
        for i in range(m):
            uv = 0
            for j in range(width):
                uv = (uv << 1) | int(bits[i * width + j])
            if uv >= 1 << (width - 1):
                uv -= 1 << width
            mult[i] = uv
        measurements = mult.astype(np.float64) * qs
        pos = end
        quant_step = qs
    carry_bytes = (n + 7) // 8
    end = pos + carry_bytes
    if len(buf) != end:
        raise CodecError("ciphertext length mismatch")
    carries = CarryVector.unpack(buf[pos:end], n)
    return CsCiphertext(
        measurements=measurements, carries=carries, quant_step=quant_step
    )


_KEY_HEADER = struct.Struct(">II")


def serialize_shift_key(key: ShiftKey) -> bytes:
    return _KEY_HEADER.pack(key.k, key.value_range) + np.asarray(
        key.entries, dtype=">i4"
    ).tobytes()


def deserialize_shift_key(buf: bytes) -> ShiftKey:
    if len(buf) < _KEY_HEADER.size:
        raise CodecError("shift key buffer too short")
    k, rng = _KEY_HEADER.unpack_from(buf, 0)
    if k == 0 or rng == 0:
        raise CodecError("bad shift key header")
    end = _KEY_HEADER.size + 4 * k
    if len(buf) != end:
        raise CodecError("shift key length mismatch")
    entries = np.frombuffer(buf[_KEY_HEADER.size : end], dtype=">i4").astype(np.int64)
    return ShiftKey(entries=entries, value_range=rng, seed=None)
