"""Parameter sweeps, attack benchmarks, op-count tables and CSV emission.

The sweep reproduces the usability experiment: for every (record, CR,
qs) cell it runs the full generate -> mask -> project -> quantize ->
de-shift -> reconstruct pipeline and reports the median PRD over seeds.
The solver capacity is held fixed across the compression grid so the CR
axis isolates measurement loss (noise folding) instead of varying the
reconstruction budget.

Reports are CSV files with a '#'-prefixed metadata block recording every
seed and parameter needed to regenerate them byte-for-byte.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import codec, ecg, recovery
from .attacks import default_shift_grid, random_guess_attack, uniform_guess_attack
from .scenarios import run_session
from .parties import SystemConfig

__all__ = [
    "SweepRow",
    "SweepReport",
    "sweep_prd",
    "attack_report",
    "opcount_report",
    "emit_report",
    "parse_report",
    "check_qs_trend",
    "check_cr_trend",
    "check_communication_saving",
    "check_attack_separation",
    "evaluate_claims",
    "EXPECTED_IMD_OPCOUNTS",
    "DEFAULT_CR_GRID",
    "DEFAULT_QS_GRID",
    "ATTACK_CR_GRID",
    "BENCHMARK_CR",
    "BENCHMARK_QS",
    "sweep_solver_params",
]

DEFAULT_CR_GRID = (50, 60, 70, 80, 85, 90, 95)
DEFAULT_QS_GRID = (0, 10, 20, 30, 60, 100, 120)
ATTACK_CR_GRID = (50, 75, 90)
BENCHMARK_CR = 50
BENCHMARK_QS = 20
RAW_SAMPLE_BYTES = 2  # signed 16-bit baseline

# process -> implant-side crypto operation counts for one run (n=1 signal)
EXPECTED_IMD_OPCOUNTS = {
    "pair": {"sym_enc": 0, "sym_dec": 0, "mac": 1, "kdf": 1, "cs_enc": 0},
    "auth": {"sym_enc": 0, "sym_dec": 0, "mac": 0, "kdf": 0, "cs_enc": 0},
    "read": {"sym_enc": 0, "sym_dec": 1, "mac": 2, "kdf": 0, "cs_enc": 1},
    "write": {"sym_enc": 1, "sym_dec": 1, "mac": 3, "kdf": 0, "cs_enc": 0},
}


def sweep_solver_params(m: int) -> recovery.RecoveryParams:
    """Fixed 25-atom budget (halved when measurements run short)."""
    return recovery.RecoveryParams(max_atoms=min(25, m // 2))


@dataclass(frozen=True)
class SweepRow:
    record_id: str
    provenance: str
    cr: float
    qs: int
    prd_median: float
    quality: str
    payload_bytes: int
    raw_bytes: int
    extra: tuple[tuple[str, str], ...] = ()

    def as_csv(self) -> str:
        cells = [
            self.record_id,
            self.provenance,
            f"{self.cr:g}",
            str(self.qs),
            f"{self.prd_median:.6f}",
            self.quality,
            str(self.payload_bytes),
            str(self.raw_bytes),
        ]
        cells += [value for _, value in self.extra]
        return ",".join(cells)


_BASE_HEADER = (
    "record_id,provenance,cr,qs,prd_median,quality,payload_bytes,raw_bytes"
)


@dataclass
class SweepReport:
    kind: str
    header: str
    rows: list[SweepRow]
    metadata: dict[str, str]

    def cell_median(self, cr: float, qs: int) -> float:
        values = [r.prd_median for r in self.rows if r.cr == cr and r.qs == qs]
        if not values:
            raise KeyError(f"no cell ({cr}, {qs})")
        return float(np.median(values))


def _key_seed(master_seed: int, index: int) -> bytes:
    return f"sweep-key/{master_seed}/{index}".encode()


def sweep_prd(
    records: Sequence[ecg.EcgRecord],
    cr_grid: Sequence[float] = DEFAULT_CR_GRID,
    qs_grid: Sequence[int] = DEFAULT_QS_GRID,
    seeds: int = 20,
    master_seed: int = 0,
    n: Optional[int] = None,
    matrix_seed: bytes = b"public-sensing-matrix",
    basis_kind: str = "cosine",
) -> SweepReport:
    """Median recovery quality per (record, CR, qs) cell.

    The same shift keys are reused across cells (common random numbers)
    so grid trends reflect the parameters, not key luck.
    """
    if not records:
        raise ValueError("need at least one record")
    n = n or records[0].n
    psi = recovery.build_basis(n, basis_kind)
    rows = []
    for cr in cr_grid:
        m = recovery.cr_to_measurements(n, cr)
        phi = recovery.gen_sensing_matrix(matrix_seed, m, n)
        params = sweep_solver_params(m)
        for qs in qs_grid:
            for record in records:
                signal = ecg.to_bounded_signal(record)
                truth = record.samples.astype(np.float64)
                prds = []
                payload = 0
                for s in range(seeds):
                    key = codec.cs_gen(
                        _key_seed(master_seed, s), n, record.L1, record.L2
                    )
                    cipher = codec.cs_enc(key, signal, phi)
                    if qs:
                        cipher = codec.quantize(cipher, qs)
                    payload = max(
                        payload, len(codec.serialize_ciphertext(cipher))
                    )
                    y = codec.cs_deshift(key, cipher, phi, record.L1, record.L2)
                    _, x_hat = recovery.omp_reconstruct(y, phi, psi, params)
                    prds.append(recovery.prd(truth, x_hat))
                median = float(np.median(prds))
                rows.append(
                    SweepRow(
                        record_id=record.source_id,
                        provenance=record.provenance,
                        cr=float(cr),
                        qs=int(qs),
                        prd_median=median,
                        quality=recovery.classify_prd(median).value,
                        payload_bytes=payload,
                        raw_bytes=RAW_SAMPLE_BYTES * record.n,
                    )
                )
    metadata = {
        "kind": "sweep",
        "n": str(n),
        "seeds": str(seeds),
        "master_seed": str(master_seed),
        "cr_grid": " ".join(str(c) for c in cr_grid),
        "qs_grid": " ".join(str(q) for q in qs_grid),
        "records": " ".join(r.source_id for r in records),
        "matrix_seed": matrix_seed.hex(),
        "basis": basis_kind,
        "solver": "omp max_atoms=min(25,M//2)",
    }
    return SweepReport(
        kind="sweep", header=_BASE_HEADER, rows=rows, metadata=metadata
    )


def attack_report(
    records: Sequence[ecg.EcgRecord],
    cr_grid: Sequence[float] = ATTACK_CR_GRID,
    qs: int = BENCHMARK_QS,
    seeds: int = 3,
    trials: int = 100,
    master_seed: int = 0,
    matrix_seed: bytes = b"public-sensing-matrix",
    basis_kind: str = "cosine",
) -> SweepReport:
    """Guessing-attack quality next to the legitimate baseline per CR.

    The uniform-guess curve is averaged over records and keys before
    locating its best shift; the random guess runs `trials` fresh keys
    against the first record.
    """
    if not records:
        raise ValueError("need at least one record")
    n = records[0].n
    psi = recovery.build_basis(n, basis_kind)
    grid = default_shift_grid(bound=records[0].shift_bound)
    rows = []
    for cr in cr_grid:
        m = recovery.cr_to_measurements(n, cr)
        phi = recovery.gen_sensing_matrix(matrix_seed, m, n)
        params = sweep_solver_params(m)
        legit_prds = []
        curves = []
        random_min = None
        for ri, record in enumerate(records):
            signal = ecg.to_bounded_signal(record)
            truth = record.samples.astype(np.float64)
            for s in range(seeds):
                key = codec.cs_gen(
                    _key_seed(master_seed, 1000 + ri * seeds + s),
                    n,
                    record.L1,
                    record.L2,
                )
                cipher = codec.cs_enc(key, signal, phi)
                if qs:
                    cipher = codec.quantize(cipher, qs)
                y = codec.cs_deshift(key, cipher, phi, record.L1, record.L2)
                _, x_hat = recovery.omp_reconstruct(y, phi, psi, params)
                legit_prds.append(recovery.prd(truth, x_hat))
                result = uniform_guess_attack(
                    cipher, phi, psi, truth, grid=grid, params=params
                )
                curves.append([p for _, p in result.curve])
                if ri == 0 and s == 0:
                    random_min = random_guess_attack(
                        cipher,
                        phi,
                        psi,
                        truth,
                        record.L1,
                        record.L2,
                        trials=trials,
                        seed=f"attack/{master_seed}".encode(),
                        params=params,
                    ).min_prd
        mean_curve = np.asarray(curves).mean(axis=0)
        best_idx = int(np.argmin(mean_curve))
        legit_median = float(np.median(legit_prds))
        rows.append(
            SweepRow(
                record_id="aggregate",
                provenance=records[0].provenance,
                cr=float(cr),
                qs=int(qs),
                prd_median=legit_median,
                quality=recovery.classify_prd(legit_median).value,
                payload_bytes=0,
                raw_bytes=RAW_SAMPLE_BYTES * n,
                extra=(
                    ("uniform_best_prd", f"{float(mean_curve[best_idx]):.6f}"),
                    ("uniform_best_shift", str(grid[best_idx])),
                    ("random_min_prd", f"{float(random_min):.6f}"),
                ),
            )
        )
    metadata = {
        "kind": "attack",
        "n": str(n),
        "qs": str(qs),
        "seeds": str(seeds),
        "trials": str(trials),
        "master_seed": str(master_seed),
        "cr_grid": " ".join(str(c) for c in cr_grid),
        "records": " ".join(r.source_id for r in records),
        "matrix_seed": matrix_seed.hex(),
        "shift_grid": " ".join(str(s) for s in grid),
        "basis": basis_kind,
    }
    header = (
        _BASE_HEADER + ",uniform_best_prd,uniform_best_shift,random_min_prd"
    )
    return SweepReport(kind="attack", header=header, rows=rows, metadata=metadata)


def opcount_report(seeds: Sequence[int] = (0,), config: Optional[SystemConfig] = None):
    """Implant-side crypto-operation counts per protocol phase."""
    config = config or SystemConfig(n=64, qs=0)
    runs = {}
    for seed in seeds:
        result = run_session("full", seed=seed, config=config, reconstruct=False)
        if not result.ok:
            raise RuntimeError(f"scenario run failed for seed {seed}")
        runs[seed] = {
            phase: {
                op: counts.get(op, 0)
                for op in ("sym_enc", "sym_dec", "mac", "kdf", "cs_enc")
            }
            for phase, counts in result.imd_op_counts.items()
        }
    return runs


def check_opcounts(runs) -> list[str]:
    problems = []
    for seed, phases in runs.items():
        for phase, expected in EXPECTED_IMD_OPCOUNTS.items():
            if phases.get(phase) != expected:
                problems.append(
                    f"seed {seed} phase {phase}: got {phases.get(phase)}, "
                    f"want {expected}"
                )
    return problems


# --- report invariants ----------------------------------------------------


def check_qs_trend(
    report: SweepReport, cr: float = BENCHMARK_CR, tol: float = 1e-9
) -> list[str]:
    """Medians must not decrease along the positive qs grid at this CR."""
    qs_values = sorted({r.qs for r in report.rows if r.qs > 0})
    problems = []
    previous = None
    for qs in qs_values:
        value = report.cell_median(cr, qs)
        if previous is not None and value < previous - tol:
            problems.append(
                f"qs trend violated at CR={cr}: PRD({qs})={value:.4f} < "
                f"PRD(previous)={previous:.4f}"
            )
        previous = value
    return problems


def check_cr_trend(report: SweepReport, tol: float = 1e-9) -> list[str]:
    """Medians must not decrease along CR, within every qs column."""
    cr_values = sorted({r.cr for r in report.rows})
    qs_values = sorted({r.qs for r in report.rows})
    problems = []
    for qs in qs_values:
        previous = None
        for cr in cr_values:
            value = report.cell_median(cr, qs)
            if previous is not None and value < previous - tol:
                problems.append(
                    f"CR trend violated at qs={qs}: PRD(CR={cr})={value:.4f} "
                    f"< previous {previous:.4f}"
                )
            previous = value
    return problems


def check_communication_saving(report: SweepReport) -> list[str]:
    """Quantized cells with acceptable quality must halve the raw size."""
    problems = []
    for row in report.rows:
        if row.qs <= 0 or row.quality == recovery.QualityClass.NOT_GOOD.value:
            continue
        if row.payload_bytes > row.raw_bytes // 2:
            problems.append(
                f"cell ({row.record_id}, CR={row.cr:g}, qs={row.qs}): payload "
                f"{row.payload_bytes} B exceeds half of {row.raw_bytes} B"
            )
    return problems


def check_attack_separation(report: SweepReport) -> list[str]:
    """Legitimate recovery must stay below the not-good line while every
    attack lands at or above it, in every attack cell."""
    problems = []
    for row in report.rows:
        extras = dict(row.extra)
        uniform = float(extras["uniform_best_prd"])
        rand_min = float(extras["random_min_prd"])
        if row.prd_median >= 9.0:
            problems.append(f"CR={row.cr:g}: legitimate PRD {row.prd_median:.2f} >= 9")
        if uniform < 9.0:
            problems.append(f"CR={row.cr:g}: uniform-guess PRD {uniform:.2f} < 9")
        if rand_min < 9.0:
            problems.append(f"CR={row.cr:g}: random-guess min {rand_min:.2f} < 9")
    return problems


_CLAIM_CELLS = {
    "cr50_qs20_very_good": (50, 20, 2.0),
    "cr60_qs10_very_good": (60, 10, 2.0),
    "cr85_qs100_good": (85, 100, 9.0),
    "cr95_qs60_good": (95, 60, 9.0),
    "cr90_qs100_good": (90, 100, 9.0),
}


def evaluate_claims(report: SweepReport) -> dict[str, str]:
    """Check the headline compression/quality targets the evaluation
    states; cells outside the sweep grid come back 'not-evaluated'."""
    verdicts = {}
    for name, (cr, qs, threshold) in _CLAIM_CELLS.items():
        try:
            value = report.cell_median(cr, qs)
        except KeyError:
            verdicts[name] = "not-evaluated"
            continue
        verdicts[name] = "met" if value < threshold else "not-met"
    return verdicts


# --- emission --------------------------------------------------------------


def emit_report(report: SweepReport, path) -> None:
    """Write metadata block plus CSV; stable ordering, byte-reproducible."""
    buf = io.StringIO()
    for key in sorted(report.metadata):
        buf.write(f"# {key} = {report.metadata[key]}\n")
    buf.write(report.header + "\n")
    for row in report.rows:
        buf.write(row.as_csv() + "\n")
    Path(path).write_text(buf.getvalue())


def parse_report(path) -> SweepReport:
    metadata: dict[str, str] = {}
    rows: list[SweepRow] = []
    header = None
    base_fields = _BASE_HEADER.split(",")
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            metadata[key.strip()] = value.strip()
            continue
        if header is None:
            header = line
            columns = line.split(",")
            continue
        cells = line.split(",")
        named = dict(zip(columns, cells))
        extra = tuple(
            (name, named[name]) for name in columns if name not in base_fields
        )
        rows.append(
            SweepRow(
                record_id=named["record_id"],
                provenance=named["provenance"],
                cr=float(named["cr"]),
                qs=int(named["qs"]),
                prd_median=float(named["prd_median"]),
                quality=named["quality"],
                payload_bytes=int(named["payload_bytes"]),
                raw_bytes=int(named["raw_bytes"]),
                extra=extra,
            )
        )
    if header is None:
        raise ValueError(f"{path}: not a report file")
    return SweepReport(
        kind=metadata.get("kind", "sweep"),
        header=header,
        rows=rows,
        metadata=metadata,
    )
