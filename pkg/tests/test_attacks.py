import numpy as np
import pytest

from imdsec import codec, ecg, recovery
from imdsec.attacks import (
    default_shift_grid,
    forge_read_auth_attempts,
    indistinguishability_test,
    mitm_read_attack,
    random_guess_attack,
    uniform_guess_attack,
)
from imdsec.reports import sweep_solver_params

L1, L2 = 590, 1487


@pytest.fixture(scope="module")
def bench():
    record = ecg.synth_ecg_like(b"attack-bench", s=11)
    psi = recovery.build_basis(512)
    phi = recovery.gen_sensing_matrix(b"public-sensing-matrix", 256, 512)
    key = codec.cs_gen(b"attack-key", 512, L1, L2)
    cipher = codec.quantize(
        codec.cs_enc(key, ecg.to_bounded_signal(record), phi), 20
    )
    truth = record.samples.astype(float)
    return record, psi, phi, key, cipher, truth


class TestShiftGrid:
    def test_contains_zero_and_endpoints(self):
        grid = default_shift_grid()
        assert 0 in grid and -449 in grid and 449 in grid
        assert grid == sorted(grid)

    def test_step_structure(self):
        grid = default_shift_grid()
        assert {0, 50, -50, 400, -400} <= set(grid)


class TestUniformGuess:
    def test_degenerate_zero_key_matches_legit(self, bench):
        record, psi, phi, _, _, truth = bench
        zero_key = codec.ShiftKey(
            entries=np.zeros(512, dtype=np.int64), value_range=L2 - L1
        )
        cipher = codec.cs_enc(zero_key, ecg.to_bounded_signal(record), phi)
        params = sweep_solver_params(phi.m)
        result = uniform_guess_attack(
            cipher, phi, psi, truth, grid=[0], params=params
        )
        y = codec.cs_deshift(zero_key, cipher, phi, L1, L2)
        _, x_hat = recovery.omp_reconstruct(y, phi, psi, params)
        assert result.best_prd == pytest.approx(recovery.prd(truth, x_hat))

    @pytest.mark.parametrize("cr", [50, 75, 90])
    def test_best_guess_stays_not_good(self, cr):
        record = ecg.synth_ecg_like(b"attack-bench", s=11)
        truth = record.samples.astype(float)
        psi = recovery.build_basis(512)
        m = recovery.cr_to_measurements(512, cr)
        phi = recovery.gen_sensing_matrix(b"public-sensing-matrix", m, 512)
        key = codec.cs_gen(b"attack-key", 512, L1, L2)
        cipher = codec.quantize(
            codec.cs_enc(key, ecg.to_bounded_signal(record), phi), 20
        )
        result = uniform_guess_attack(
            cipher, phi, psi, truth, params=sweep_solver_params(m)
        )
        assert result.best_prd >= 9.0
        assert recovery.classify_prd(result.best_prd) == recovery.QualityClass.NOT_GOOD

    def test_curve_worsens_at_extremes(self, bench):
        _, psi, phi, _, cipher, truth = bench
        result = uniform_guess_attack(
            cipher, phi, psi, truth, params=sweep_solver_params(phi.m)
        )
        curve = dict(result.curve)
        assert curve[449] > curve[0]
        assert curve[-449] > curve[0]


class TestRandomGuess:
    def test_min_stays_not_good_and_planted_matches(self, bench):
        _, psi, phi, key, cipher, truth = bench
        params = sweep_solver_params(phi.m)
        result = random_guess_attack(
            cipher, phi, psi, truth, L1, L2,
            trials=30, seed=b"rg", params=params, planted_key=key,
        )
        # the planted-true-key trial is the legitimate recovery
        y = codec.cs_deshift(key, cipher, phi, L1, L2)
        _, x_hat = recovery.omp_reconstruct(y, phi, psi, params)
        assert result.prds[0] == pytest.approx(recovery.prd(truth, x_hat))
        assert result.prds[0] < 9.0
        assert min(result.prds[1:]) >= 9.0

    def test_deterministic_per_seed(self, bench):
        _, psi, phi, _, cipher, truth = bench
        params = sweep_solver_params(phi.m)
        a = random_guess_attack(
            cipher, phi, psi, truth, L1, L2, trials=5, seed=b"s", params=params
        )
        b = random_guess_attack(
            cipher, phi, psi, truth, L1, L2, trials=5, seed=b"s", params=params
        )
        assert a.prds == b.prds


class TestMitm:
    def test_blocked_programmer_and_bad_attacker_recovery(self):
        result = mitm_read_attack(seed=3)
        assert not result.honest_programmer_completed
        assert not result.attacker_derived_key
        assert result.attacker_prd >= 9.0
        assert result.honest_baseline_prd < 9.0

    def test_degraded_oob_flips_the_outcome(self):
        result = mitm_read_attack(seed=3, degraded_oob=True)
        assert result.attacker_derived_key
        assert result.attacker_prd < 9.0

    def test_rm_forgeries_all_rejected(self):
        attempts = 10_000
        assert forge_read_auth_attempts(attempts=attempts, seed=4) == attempts


class TestIndistinguishability:
    def test_passes_at_default_benchmark(self):
        result = indistinguishability_test(samples=100_000, seed=0)
        assert result.passed
        assert result.pvalue > 0.01

    def test_degenerate_key_fails(self):
        result = indistinguishability_test(
            samples=100_000, seed=0, degenerate_key=True
        )
        assert not result.passed

    def test_doubling_never_flips_pass_to_fail(self):
        flips = []
        for seed in range(20):
            small = indistinguishability_test(samples=100_000, seed=seed)
            if not small.passed:
                continue
            large = indistinguishability_test(samples=200_000, seed=seed)
            if not large.passed:
                flips.append(seed)
        assert flips == []
