import numpy as np
import pytest

from stinr.data import (
    DegradationSpec,
    NoisySlice,
    STSlice,
    SyntheticParams,
    add_noise,
    apply_degradation,
    filter_empty,
    generate_synthetic,
    load_slice,
    mask_genes,
    normalize_total,
    read_triplets,
    save_slice,
    split_spatial,
    write_triplets,
)
from stinr.errors import DataError


def _write_fixture(tmp_path, expr_lines, coords_lines, labels=None):
    expr = tmp_path / "expr.txt"
    expr.write_text("\n".join(expr_lines) + "\n")
    coords = tmp_path / "coords.csv"
    coords.write_text("\n".join(coords_lines) + "\n")
    labels_path = None
    if labels is not None:
        labels_path = tmp_path / "labels.txt"
        labels_path.write_text("\n".join(labels) + "\n")
    return expr, coords, labels_path


class TestLoadSlice:
    def test_fixture_round_trip(self, tmp_path):
        expr, coords, labels = _write_fixture(
            tmp_path,
            ["3 4 3", "0 0 1.5", "1 2 2", "2 3 0.25"],
            ["0.0,0.0", "1.0,0.5", "2.0,2.0"],
            ["a", "a", "b"],
        )
        s = load_slice(expr, coords, labels)
        assert s.n_spots == 3 and s.n_genes == 4
        assert s.nnz == 3
        assert s.expr[0, 0] == 1.5 and s.expr[1, 2] == 2.0 and s.expr[2, 3] == 0.25
        assert s.labels == ("a", "a", "b")
        assert s.gene_names == ("g0", "g1", "g2", "g3")

    def test_dimension_mismatch(self, tmp_path):
        expr, coords, _ = _write_fixture(
            tmp_path, ["3 2 1", "0 0 1"], ["0,0", "1,1"]
        )
        with pytest.raises(DataError, match="rows"):
            load_slice(expr, coords)

    def test_negative_entry(self, tmp_path):
        expr, coords, _ = _write_fixture(
            tmp_path, ["2 2 1", "0 1 -1.0"], ["0,0", "1,1"]
        )
        with pytest.raises(DataError, match="negative"):
            load_slice(expr, coords)

    def test_unparsable_row_reports_line(self, tmp_path):
        expr, coords, _ = _write_fixture(
            tmp_path, ["2 2 1", "0 zero 1.0"], ["0,0", "1,1"]
        )
        with pytest.raises(DataError, match=":2:"):
            load_slice(expr, coords)

    def test_nnz_mismatch(self, tmp_path):
        expr, coords, _ = _write_fixture(
            tmp_path, ["2 2 2", "0 0 1.0"], ["0,0", "1,1"]
        )
        with pytest.raises(DataError, match="nnz"):
            load_slice(expr, coords)


class TestWriterRoundTrip:
    def test_write_read_write_is_stable(self, tmp_path, small_slice):
        p1 = tmp_path / "a.txt"
        write_triplets(small_slice.expr, p1)
        mat = read_triplets(p1)
        p2 = tmp_path / "b.txt"
        write_triplets(mat, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert np.array_equal(mat, small_slice.expr)

    def test_save_load_slice(self, tmp_path, small_slice):
        paths = (
            tmp_path / "e.txt", tmp_path / "c.csv",
            tmp_path / "l.txt", tmp_path / "g.txt",
        )
        save_slice(small_slice, *paths)
        back = load_slice(paths[0], paths[1], paths[2], paths[3])
        assert np.array_equal(back.expr, small_slice.expr)
        assert np.allclose(back.coords, small_slice.coords)
        assert back.labels == small_slice.labels
        assert back.gene_names == small_slice.gene_names


class TestFilterEmpty:
    def test_enumerated_example(self):
        s = STSlice([[0, 0], [1, 1]], [[1.0, 0.0], [0.0, 0.0]], ("a", "b"))
        out = filter_empty(s)
        assert out.expr.shape == (1, 1)
        assert out.expr[0, 0] == 1.0
        assert out.gene_names == ("a",)

    def test_dense_identity(self):
        s = STSlice([[0, 0], [1, 1]], [[1.0, 2.0], [3.0, 4.0]], ("a", "b"), ("x", "y"))
        out = filter_empty(s)
        assert np.array_equal(out.expr, s.expr)
        assert out.labels == s.labels

    def test_all_zero_errors(self):
        s = STSlice([[0, 0]], [[0.0, 0.0]], ("a", "b"))
        with pytest.raises(DataError):
            filter_empty(s)


class TestNormalizeTotal:
    def test_hand_scaling(self):
        s = STSlice([[0, 0]], [[2.0, 0.0, 2.0]], ("a", "b", "c"))
        out = normalize_total(s, target_sum=100.0, high_expr_fraction=0.6)
        assert np.allclose(out.expr, [[50.0, 0.0, 50.0]])

    def test_already_normalized_unchanged(self):
        s = STSlice([[0, 0]], [[30.0, 0.0, 70.0]], ("a", "b", "c"))
        out = normalize_total(s, target_sum=100.0, high_expr_fraction=0.8)
        assert np.allclose(out.expr, s.expr)

    def test_high_expression_gene_removed(self):
        # gene a carries 80% of spot 0's counts
        s = STSlice([[0, 0], [1, 1]], [[8.0, 1.0, 1.0], [1.0, 1.0, 1.0]], ("a", "b", "c"))
        out = normalize_total(s, target_sum=10.0, high_expr_fraction=0.5)
        assert out.gene_names == ("b", "c")
        assert np.allclose(out.expr.sum(axis=1), 10.0)

    def test_row_sums_hit_target(self, small_slice):
        out = normalize_total(small_slice, target_sum=1e4)
        assert np.allclose(out.expr.sum(axis=1), 1e4, rtol=1e-6)

    def test_zeros_stay_zero(self, small_slice):
        out = normalize_total(small_slice, target_sum=1e4)
        # gene set may shrink; compare via surviving columns
        keep = [small_slice.gene_names.index(g) for g in out.gene_names]
        assert np.array_equal(out.expr == 0, small_slice.expr[:, keep] == 0)

    def test_idempotent(self, small_slice):
        once = normalize_total(small_slice, target_sum=1e4)
        twice = normalize_total(once, target_sum=1e4)
        assert once.expr.shape == twice.expr.shape
        assert np.allclose(once.expr, twice.expr, atol=1e-9)


class TestSplitSpatial:
    def test_sizes_80_20(self, small_slice):
        sub = small_slice.take_spots(np.arange(10))
        train, test = split_spatial(sub, 0.8, seed=1)
        assert train.n_spots == 8 and test.n_spots == 2

    def test_deterministic(self, small_slice):
        a = split_spatial(small_slice, 0.8, seed=42)
        b = split_spatial(small_slice, 0.8, seed=42)
        assert np.array_equal(a[0].coords, b[0].coords)
        assert np.array_equal(a[1].expr, b[1].expr)

    def test_partition_brute_force(self, tiny_slice):
        s = STSlice(
            np.arange(8).reshape(4, 2), np.ones((4, 3)), ("a", "b", "c"), ("p", "q", "r", "s")
        )
        train, test = split_spatial(s, 0.5, seed=0)
        assert train.n_spots == 2 and test.n_spots == 2
        rows = {tuple(r) for r in train.coords} | {tuple(r) for r in test.coords}
        assert rows == {tuple(r) for r in s.coords}
        assert not ({tuple(r) for r in train.coords} & {tuple(r) for r in test.coords})
        assert set(train.labels) | set(test.labels) <= {"p", "q", "r", "s"}

    def test_empty_side_rejected(self, tiny_slice):
        with pytest.raises(DataError):
            split_spatial(tiny_slice, 0.01, seed=0)


class TestMaskGenes:
    def test_exact_count(self, small_slice):
        sub = small_slice.take_spots(np.arange(10))
        sub = STSlice(sub.coords, sub.expr[:, :10], sub.gene_names[:10], sub.labels)
        degraded, mask = mask_genes(sub, 0.7, seed=0)
        assert mask.sum() == 70
        assert (degraded.expr[mask] == 0).all()

    def test_floor_rule(self, small_slice):
        _, mask = mask_genes(small_slice, 0.7, seed=3)
        n, g = small_slice.expr.shape
        assert mask.sum() == int(np.floor(0.7 * n * g))

    def test_fraction_bounds_rejected(self, small_slice):
        for bad in (0.0, 1.0, -0.2):
            with pytest.raises(DataError):
                mask_genes(small_slice, bad, seed=0)

    def test_masking_zero_position_still_marked(self, small_slice):
        degraded, mask = mask_genes(small_slice, 0.7, seed=1)
        zero_and_masked = mask & (small_slice.expr == 0)
        assert zero_and_masked.any()
        assert (degraded.expr[zero_and_masked] == 0).all()

    def test_source_untouched(self, small_slice):
        before = small_slice.expr.copy()
        mask_genes(small_slice, 0.5, seed=2)
        assert np.array_equal(small_slice.expr, before)


class TestAddNoise:
    def test_sigma_zero_identity(self, small_slice):
        out = add_noise(small_slice, 0.0, False, seed=0)
        assert np.array_equal(out.expr, small_slice.expr)

    def test_noise_mean_lln(self, small_slice):
        out = add_noise(small_slice, 1.0, False, seed=0)
        delta = out.expr - small_slice.expr
        assert abs(delta.mean()) <= 3.0 / np.sqrt(delta.size)

    def test_clamp_nonnegative(self, small_slice):
        out = add_noise(small_slice, 1.0, True, seed=0)
        assert out.expr.min() >= 0.0

    def test_unclamped_allows_negative(self, small_slice):
        out = add_noise(small_slice, 1.0, False, seed=0)
        assert isinstance(out, NoisySlice)
        assert out.expr.min() < 0.0

    def test_deterministic(self, small_slice):
        a = add_noise(small_slice, 0.5, False, seed=9)
        b = add_noise(small_slice, 0.5, False, seed=9)
        assert np.array_equal(a.expr, b.expr)


class TestDegradationSpec:
    def test_dispatch(self, small_slice):
        train, test = apply_degradation(
            small_slice, DegradationSpec("spatial_split", fraction=0.8, seed=0)
        )
        assert train.n_spots + test.n_spots == small_slice.n_spots
        degraded, mask = apply_degradation(
            small_slice, DegradationSpec("gene_mask", fraction=0.7, seed=0)
        )
        assert mask.dtype == bool
        noisy = apply_degradation(
            small_slice, DegradationSpec("gaussian_noise", sigma=1.0, seed=0)
        )
        assert noisy.expr.shape == small_slice.expr.shape

    def test_invalid_specs(self):
        with pytest.raises(DataError):
            DegradationSpec("warp")
        with pytest.raises(DataError):
            DegradationSpec("gene_mask", fraction=1.5)
        with pytest.raises(DataError):
            DegradationSpec("gaussian_noise", sigma=-1.0)


class TestGenerateSynthetic:
    def test_default_scale_sparsity(self):
        params = SyntheticParams(
            n_spots=1000, n_genes=300, n_types=5, target_sparsity=0.9,
            signature_genes_per_type=20, seed=7,
        )
        s = generate_synthetic(params)
        assert 0.85 <= s.zero_fraction() <= 0.95
        assert len(set(s.labels)) == 5

    def test_single_type(self):
        s = generate_synthetic(SyntheticParams(n_spots=50, n_genes=40, n_types=1,
                                               signature_genes_per_type=5, seed=0))
        assert set(s.labels) == {"type0"}

    def test_bit_identical_per_seed(self):
        p = SyntheticParams(n_spots=100, n_genes=50, n_types=3,
                            signature_genes_per_type=5, seed=5)
        a, b = generate_synthetic(p), generate_synthetic(p)
        assert np.array_equal(a.expr, b.expr)
        assert np.array_equal(a.coords, b.coords)
        assert a.labels == b.labels

    def test_spatial_coherence(self, small_slice):
        # mean own-label share among each spot's 5 nearest (self included)
        from stinr.graph import build_knn

        g = build_knn(small_slice.coords, 5)
        labels = np.asarray(small_slice.labels)
        share = (labels[g.neighbor_ids] == labels[:, None]).mean()
        assert share >= 0.8

    def test_denser_target_calibrates_rates(self):
        s = generate_synthetic(
            SyntheticParams(n_spots=200, n_genes=60, n_types=2, target_sparsity=0.4,
                            signature_genes_per_type=10, seed=1)
        )
        assert abs(s.zero_fraction() - 0.4) <= 0.05

    def test_invalid_params(self):
        with pytest.raises(DataError):
            SyntheticParams(n_types=0)
        with pytest.raises(DataError):
            SyntheticParams(n_spots=3, n_types=5)
        with pytest.raises(DataError):
            SyntheticParams(n_genes=10, n_types=5, signature_genes_per_type=10)
