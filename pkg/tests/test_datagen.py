import numpy as np
import pytest

import avgmix
from avgmix import datagen, runtime
from avgmix.errors import DimensionMismatchError, InvalidArgumentError


def spec_for(model, d=8, style=datagen.FEATURE_SPARSE5, seed=0, **kw):
    return avgmix.GenSpec(model=model, d=d, feature_style=style, seed=seed, **kw)


class TestTruth:
    def test_normal_truth_is_u(self):
        truth = avgmix.draw_truth(spec_for("normal", seed=4))
        assert truth.theta_star_source == datagen.CLOSED_FORM
        np.testing.assert_array_equal(truth.theta_star, truth.u)
        assert np.all((truth.u >= 0) & (truth.u <= 1))

    def test_cubic_dense_closed_form(self):
        truth = avgmix.draw_truth(
            spec_for("cubic", style=datagen.FEATURE_DENSE, seed=5)
        )
        np.testing.assert_array_equal(truth.theta_star, truth.u + 3.0 * truth.v)
        assert np.all((truth.v >= 0) & (truth.v <= 1))

    def test_heteroskedastic_needs_oracle(self):
        truth = avgmix.draw_truth(spec_for("heteroskedastic", seed=6))
        assert truth.theta_star_source == datagen.ORACLE_FIT
        assert truth.theta_star is None

    def test_cubic_sparse_needs_oracle(self):
        truth = avgmix.draw_truth(spec_for("cubic", seed=7))
        assert truth.theta_star_source == datagen.ORACLE_FIT


class TestGeneration:
    def test_sparse5_rows_have_exactly_five_nonzeros(self):
        spec = spec_for("normal", d=30, seed=1)
        ds = avgmix.gen_dataset(spec, avgmix.draw_truth(spec), 500)
        nnz = (ds.X != 0).sum(axis=1)
        assert np.all(nnz == 5)

    def test_zero_noise_normal_is_exact(self):
        spec = spec_for("normal", d=10, seed=2, zero_noise=True)
        truth = avgmix.draw_truth(spec)
        ds = avgmix.gen_dataset(spec, truth, 200)
        np.testing.assert_array_equal(ds.y, ds.X @ truth.u)

    def test_zero_noise_cubic_identity_per_row(self):
        spec = spec_for(
            "cubic", d=6, style=datagen.FEATURE_DENSE, seed=3, zero_noise=True
        )
        truth = avgmix.draw_truth(spec)
        ds = avgmix.gen_dataset(spec, truth, 300)
        predicted = ds.X @ truth.u + (ds.X**3) @ truth.v
        np.testing.assert_array_equal(ds.y, predicted)

    def test_zero_noise_does_not_change_features(self):
        spec = spec_for("normal", d=10, seed=8)
        truth = avgmix.draw_truth(spec)
        noisy = avgmix.gen_dataset(spec, truth, 100)
        quiet = avgmix.gen_dataset(
            spec_for("normal", d=10, seed=8, zero_noise=True), truth, 100
        )
        assert noisy.X.tobytes() == quiet.X.tobytes()

    def test_residual_mean_monte_carlo(self):
        n = 100_000
        spec = spec_for("normal", d=20, seed=9)
        truth = avgmix.draw_truth(spec)
        ds = avgmix.gen_dataset(spec, truth, n)
        residual = ds.y - ds.X @ truth.u
        assert abs(residual.mean()) < 4.0 / np.sqrt(n)

    def test_bernoulli_frequency(self):
        n = 50_000
        spec = spec_for("bernoulli_pathological", d=1, seed=10)
        ds = avgmix.gen_dataset(spec, avgmix.draw_truth(spec), n)
        values = np.asarray(ds.X).ravel()
        assert set(np.unique(values)) <= {0.0, 1.0}
        assert abs(values.mean() - 0.5) < 4.0 * 0.5 / np.sqrt(n)

    def test_heteroskedastic_targets_match_formula(self):
        spec = spec_for("heteroskedastic", d=6, seed=11)
        truth = avgmix.draw_truth(spec)
        ds = avgmix.gen_dataset(spec, truth, 500)
        h = ((ds.X / 2.0) ** 3).sum(axis=1)
        scaled = ds.y - ds.X @ truth.u
        # |eps| is nonnegative, so the residual sign must follow h's sign
        nonzero = h != 0
        assert np.all(np.sign(scaled[nonzero]) == np.sign(h[nonzero]))

    def test_determinism_byte_for_byte(self):
        spec = spec_for("normal", d=12, seed=12)
        truth = avgmix.draw_truth(spec)
        a = avgmix.gen_dataset(spec, truth, 3000)
        b = avgmix.gen_dataset(spec, truth, 3000)
        assert a.X.tobytes() == b.X.tobytes()
        assert a.y.tobytes() == b.y.tobytes()

    def test_range_slicing_consistent_across_blocks(self):
        spec = spec_for("normal", d=7, seed=13)
        truth = avgmix.draw_truth(spec)
        full = avgmix.gen_dataset(spec, truth, datagen.BLOCK + 700)
        lo, hi = datagen.BLOCK - 100, datagen.BLOCK + 250
        window = avgmix.gen_range(spec, truth, lo, hi)
        assert window.X.tobytes() == full.X[lo:hi].tobytes()
        assert window.y.tobytes() == full.y[lo:hi].tobytes()

    def test_count_zero_rejected(self):
        spec = spec_for("normal", seed=14)
        with pytest.raises(InvalidArgumentError):
            avgmix.gen_dataset(spec, avgmix.draw_truth(spec), 0)

    def test_sparse5_coordinate_frequencies(self):
        n, d = 10_000, 20
        spec = spec_for("normal", d=d, seed=15)
        ds = avgmix.gen_dataset(spec, avgmix.draw_truth(spec), n)
        freq = (ds.X != 0).mean(axis=0)
        tol = 5.0 * np.sqrt((5.0 / d) / n)
        assert np.all(np.abs(freq - 5.0 / d) < tol)

    def test_shards_share_no_samples(self):
        spec = spec_for("normal", d=10, seed=16)
        truth = avgmix.draw_truth(spec)
        plan = runtime.make_shard_plan(2000, 4, base_seed=17)
        shards = [
            avgmix.gen_range(spec, truth, plan.offsets[i], plan.offsets[i] + plan.sizes[i])
            for i in range(4)
        ]
        seen = set()
        for shard in shards:
            for i in range(len(shard)):
                row = shard.X[i].tobytes()
                assert row not in seen
                seen.add(row)


class TestOracleFit:
    def test_well_specified_oracle_recovers_u(self):
        n = 2000
        spec = spec_for("normal", d=5, seed=18)
        truth = avgmix.draw_truth(spec)
        forced = datagen.TruthRecord(
            u=truth.u, v=None, theta_star=None, theta_star_source=datagen.ORACLE_FIT
        )
        theta = avgmix.resolve_theta_star(spec, forced, n, oversample=10)
        assert np.linalg.norm(theta - truth.u) < 5.0 * np.sqrt(5.0 / (10 * n))

    def test_heteroskedastic_oracle_is_stable_across_seeds(self):
        n = 100_000
        spec = spec_for("heteroskedastic", d=1, style=datagen.FEATURE_DENSE, seed=19)
        truth1 = avgmix.draw_truth(spec)
        truth2 = datagen.TruthRecord(
            u=truth1.u, v=None, theta_star=None, theta_star_source=datagen.ORACLE_FIT
        )
        t1 = avgmix.resolve_theta_star(spec, truth1, n, oracle_seed=111)
        t2 = avgmix.resolve_theta_star(spec, truth2, n, oracle_seed=222)
        assert abs(float(t1[0] - t2[0])) < 1e-2
        # d=1 standard normal input: population shift is E[x^4]/8 * E|eps|
        shift = 3.0 / 8.0 * np.sqrt(2.0 / np.pi)
        assert t1[0] == pytest.approx(truth1.u[0] + shift, abs=0.02)

    def test_closed_form_truth_passthrough(self):
        spec = spec_for("normal", seed=20)
        truth = avgmix.draw_truth(spec)
        before = truth.theta_star.copy()
        out = avgmix.resolve_theta_star(spec, truth, 1000)
        np.testing.assert_array_equal(out, before)

    def test_result_is_cached(self):
        spec = spec_for("heteroskedastic", d=5, seed=21)
        truth = avgmix.draw_truth(spec)
        first = avgmix.resolve_theta_star(spec, truth, 500)
        assert truth.theta_star is first
        again = avgmix.resolve_theta_star(spec, truth, 500)
        assert again is first


class TestClickSource:
    def test_rows_sum_to_nnz(self):
        ds, _ = avgmix.gen_click_dataset(d=40, nnz_per_row=7, count=300, seed=22)
        np.testing.assert_array_equal(np.asarray(ds.X).sum(axis=1), 7.0)

    def test_base_rate_half_when_truth_zero(self):
        n, d = 20_000, 10
        spec = spec_for("sparse_click", d=d, seed=23)
        zero_truth = datagen.TruthRecord(
            u=np.zeros(d),
            v=None,
            theta_star=np.zeros(d),
            theta_star_source=datagen.CLOSED_FORM,
        )
        ds = avgmix.gen_dataset(spec, zero_truth, n)
        rate = (ds.y == 1.0).mean()
        assert abs(rate - 0.5) < 4.0 / (2.0 * np.sqrt(n))

    def test_same_seed_same_dataset(self):
        a, ta = avgmix.gen_click_dataset(d=12, nnz_per_row=4, count=500, seed=24)
        b, tb = avgmix.gen_click_dataset(d=12, nnz_per_row=4, count=500, seed=24)
        np.testing.assert_array_equal(ta.theta_star, tb.theta_star)
        assert a.X.tobytes() == b.X.tobytes()
        assert a.y.tobytes() == b.y.tobytes()

    def test_labels_are_plus_minus_one(self):
        ds, _ = avgmix.gen_click_dataset(d=6, nnz_per_row=2, count=200, seed=25)
        assert set(np.unique(ds.y)) <= {-1.0, 1.0}

    def test_large_dimension_stays_sparse(self):
        ds, _ = avgmix.gen_click_dataset(d=5000, nnz_per_row=3, count=50, seed=26)
        assert ds.is_sparse()
        np.testing.assert_array_equal(np.asarray(ds.X.sum(axis=1)).ravel(), 3.0)


class TestValidation:
    def test_sparse5_needs_d_at_least_five(self):
        with pytest.raises(InvalidArgumentError):
            spec_for("normal", d=4)

    def test_bernoulli_forces_d_one(self):
        with pytest.raises(InvalidArgumentError):
            spec_for("bernoulli_pathological", d=2)

    def test_click_nnz_bounds(self):
        with pytest.raises(InvalidArgumentError):
            avgmix.gen_click_dataset(d=3, nnz_per_row=4, count=10, seed=0)

    def test_unknown_model(self):
        with pytest.raises(InvalidArgumentError):
            spec_for("mystery")


class TestTextFormat:
    def test_round_trip(self, tmp_path):
        spec = spec_for("normal", d=9, seed=27)
        ds = avgmix.gen_dataset(spec, avgmix.draw_truth(spec), 50)
        path = tmp_path / "data.txt"
        avgmix.save_text(ds, path)
        loaded = avgmix.load_text(path, d=9)
        np.testing.assert_array_equal(np.asarray(loaded.X.todense() if loaded.is_sparse() else loaded.X), ds.X)
        np.testing.assert_array_equal(loaded.y, ds.y)

    def test_dimension_inference(self, tmp_path):
        path = tmp_path / "tiny.txt"
        path.write_text("1.5 0:2.0 3:-1.0\n-0.5 1:1.0\n")
        ds = avgmix.load_text(path)
        assert ds.d == 4
        assert len(ds) == 2

    def test_malformed_line_reports_position(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1.0 0:1.0\nnot_a_number junk\n")
        with pytest.raises(InvalidArgumentError, match="line 2"):
            avgmix.load_text(path)

    def test_index_beyond_declared_dimension(self, tmp_path):
        path = tmp_path / "wide.txt"
        path.write_text("1.0 7:1.0\n")
        with pytest.raises(DimensionMismatchError):
            avgmix.load_text(path, d=3)
