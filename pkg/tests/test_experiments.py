import math

import numpy as np
import pytest

from bdkf.blockstruct import project_block_diag
from bdkf.errors import ValidationError
from bdkf.experiments import (
    decoupling_study,
    loglog_slope,
    monte_carlo_error,
    scaling_benchmark,
    speckle_study,
    write_bench_csv,
    write_decoupling_csv,
    write_speckle_csv,
)
from bdkf.model import CoupledSystem, RngSpec, make_identical_chain, make_random_system
from bdkf.steady_state import solve_bd_dare, solve_dare, true_error_cov


class TestDecouplingStudy:
    def test_row_count_and_fields(self):
        rows = decoupling_study([0.1, 2.0], [2, 4, 8], 8, tol=1e-10)
        assert len(rows) == 6
        for row in rows:
            assert row.converged
            assert row.dist_P0 >= 0
            assert math.isfinite(row.dist_P)

    def test_triangle_inequality(self):
        rows = decoupling_study([0.5], [2, 4], 4, tol=1e-10)
        for row in rows:
            assert row.dist_P <= row.dist_P0 + row.dist_P0_full + 1e-9

    def test_dense_arm_capped(self):
        rows = decoupling_study([0.1], [2, 4], 2, tol=1e-10)
        assert math.isfinite(rows[0].dist_P)
        assert math.isnan(rows[1].dist_P)
        assert math.isnan(rows[1].dist_P0_full)

    def test_ns_must_ascend(self):
        with pytest.raises(ValidationError):
            decoupling_study([0.1], [4, 2], 4)

    def test_dist_p0_is_block_difference_over_sqrt_n(self):
        # identical sub-systems: every block of the difference is the same,
        # so the scaled distance equals ||single-block diff|| / sqrt(n),
        # and it decreases strictly with n
        from bdkf.steady_state import banded_steady

        dists = []
        for n in (4, 8, 16):
            sys_ = make_identical_chain(0.5, n)
            bd = solve_bd_dare(sys_, warn_detectability=False)
            p0 = banded_steady(sys_.uncoupled())
            diff = bd.P_plus.blocks - p0.P_plus.blocks
            for i in range(1, n):
                assert np.allclose(diff[i], diff[0], atol=1e-9)
            row = decoupling_study([0.5], [n], 0)[0]
            assert np.isclose(
                row.dist_P0, np.linalg.norm(diff[0]) / math.sqrt(n), rtol=1e-6
            )
            dists.append(row.dist_P0)
        assert dists[0] > dists[1] > dists[2]

    def test_csv_determinism(self, tmp_path):
        rows = decoupling_study([0.1], [2, 4], 4, tol=1e-10)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_decoupling_csv(rows, a)
        write_decoupling_csv(decoupling_study([0.1], [2, 4], 4, tol=1e-10), b)
        assert a.read_bytes() == b.read_bytes()
        header = a.read_text().splitlines()[0]
        assert header == "beta,n,dist_P0,dist_P,dist_P0_full,converged"


class TestSpeckleStudy:
    def test_row_count_and_determinism(self):
        kwargs = dict(
            n_pixels=8,
            r_modes=2,
            horizon=6,
            seeds=2,
            drift_scale=1.0,
            photon_scale=200.0,
            rng=RngSpec(7),
        )
        rows = speckle_study(**kwargs)
        assert len(rows) == 2 * 6 * 3
        again = speckle_study(**kwargs)
        assert [r.mse for r in rows] == [r.mse for r in again]
        assert [(r.seed, r.step, r.filter) for r in rows] == [
            (r.seed, r.step, r.filter) for r in again
        ]

    def test_static_field_with_exact_init_near_zero_error(self):
        rows = speckle_study(
            n_pixels=16,
            r_modes=2,
            horizon=20,
            seeds=1,
            drift_scale=0.0,
            photon_scale=500.0,
            rng=RngSpec(1),
            init="truth",
        )
        for row in rows:
            assert row.mse <= 0.01 * 500.0

    def test_filters_share_measurement_streams(self):
        # identical first-step behavior across arms from the same stream:
        # with drift 0 and exact init the three filters see the same
        # innovations, so their first-step errors coincide.
        rows = speckle_study(
            n_pixels=8,
            r_modes=2,
            horizon=1,
            seeds=1,
            drift_scale=0.0,
            photon_scale=100.0,
            rng=RngSpec(2),
            init="truth",
        )
        first = {r.filter: r.mse for r in rows if r.step == 0}
        assert np.isclose(first["full"], first["bd"], rtol=1e-8)
        assert np.isclose(first["bd"], first["banded"], rtol=1e-8)

    def test_pixel_cap(self):
        with pytest.raises(ValidationError):
            speckle_study(n_pixels=2048, r_modes=2, horizon=1, seeds=1)

    def test_csv_schema(self, tmp_path):
        rows = speckle_study(
            n_pixels=8, r_modes=2, horizon=2, seeds=1, drift_scale=1.0,
            photon_scale=100.0, rng=RngSpec(3),
        )
        path = tmp_path / "speckle.csv"
        write_speckle_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "seed,step,filter,mse,step_time_s"
        assert len(lines) == 1 + 2 * 3


class TestScalingBenchmark:
    def test_smoke_rows_and_slopes(self):
        rows, slopes = scaling_benchmark([64, 128], [16, 32], reps=5, seed=1)
        assert len(rows) == 4
        assert all(r.median_step_time_s > 0 for r in rows)
        assert all(r.reps == 5 for r in rows)
        assert set(slopes) == {"bd_fast", "full"}

    def test_reps_floor(self):
        with pytest.raises(ValidationError):
            scaling_benchmark([64], [], reps=3)

    def test_loglog_slope_exact_on_power_law(self):
        ns = [64, 128, 256, 512]
        ts = [1e-6 * n**1.17 for n in ns]
        assert abs(loglog_slope(ns, ts) - 1.17) < 1e-12

    def test_csv_schema(self, tmp_path):
        rows, _ = scaling_benchmark([64], [16], reps=5, seed=2)
        path = tmp_path / "bench.csv"
        write_bench_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "filter,n,r,median_step_time_s,reps"
        assert len(lines) == 3


class TestMonteCarloError:
    def test_zero_noise_zero_error(self):
        # vanishing noise so the innovation covariance stays factorizable
        n = 2
        sys_ = CoupledSystem(
            F=np.full((n, 1, 1), 0.9),
            H=np.ones((n, 1, 1)),
            V=np.zeros((n, 1, 1)),
            R=np.full((n, 1, 1), 1e-12),
            G=np.ones((n, 1, 1)),
            U=np.zeros((1, 1)),
        )
        cov = monte_carlo_error(sys_, "bd_fast", "filter", trials=20, horizon=4,
                                rng=RngSpec(0))
        assert np.linalg.norm(cov) <= 1e-9

    def test_full_backend_matches_steady_covariance(self):
        sys_ = make_random_system(1, 1, 1, 2, 0.8, RngSpec(3))
        cov = monte_carlo_error(sys_, "full", "filter", trials=600, horizon=60,
                                rng=RngSpec(4))
        res = solve_dare(sys_, warn_detectability=False)
        rel = np.linalg.norm(cov - res.P_plus) / np.linalg.norm(res.P_plus)
        assert rel <= 0.15

    def test_bd_steady_gain_matches_true_error_cov_blocks(self):
        sys_ = make_identical_chain(0.1, 16)
        bd = solve_bd_dare(sys_, warn_detectability=False)
        sig = true_error_cov(sys_, bd.K)
        cov = monte_carlo_error(sys_, "bd_fast", "steady", trials=500, horizon=80,
                                rng=RngSpec(5))
        got = project_block_diag(cov, 2).blocks
        want = project_block_diag(sig, 2).blocks
        assert np.linalg.norm(got - want) / np.linalg.norm(want) <= 0.15

    def test_backend_validation(self):
        sys_ = make_identical_chain(0.1, 2)
        with pytest.raises(ValidationError):
            monte_carlo_error(sys_, "nope")
        with pytest.raises(ValidationError):
            monte_carlo_error(sys_, "full", "sometimes")
