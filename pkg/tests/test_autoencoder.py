import numpy as np
import pytest

from stinr.autoencoder import build_gae, decode, encode, gae_loss, train_gae
from stinr.errors import DataError
from stinr.graph import build_knn
from stinr.metrics import cluster_ari, pca_scores, kmeans, adjusted_rand_index


@pytest.fixture(scope="module")
def trained(small_slice):
    graph = build_knn(small_slice.coords, 5)
    model, trace = train_gae(
        small_slice, graph, epochs=200, lr=1e-3, seed=0, latent_dim=16, hidden=128
    )
    return small_slice, graph, model, trace


class TestGaeLoss:
    def test_zero_at_equality(self):
        y = np.random.default_rng(0).uniform(size=(4, 6))
        assert gae_loss(y, y) == 0.0

    def test_hand_value(self):
        assert gae_loss(np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]])) == 0.5

    def test_quadratic_homogeneity(self):
        a = np.array([[1.0, 2.0], [0.0, 3.0]])
        b = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert gae_loss(2 * a, 2 * b) == pytest.approx(4 * gae_loss(a, b))

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            gae_loss(np.zeros((2, 2)), np.zeros((2, 3)))


class TestEncodeDecode:
    def test_zero_weight_encoder_gives_zero_embeddings(self, small_slice):
        graph = build_knn(small_slice.coords, 5)
        model = build_gae(small_slice.n_genes, latent_dim=8, hidden=32, seed=0)
        for w in model.params.weights[: len(model.encoder_specs)]:
            w[:] = 0.0
        z = encode(model, small_slice, graph)
        assert np.allclose(z, 0.0)

    def test_permutation_equivariance(self, small_slice):
        graph = build_knn(small_slice.coords, 5)
        model = build_gae(small_slice.n_genes, latent_dim=8, hidden=32, seed=1)
        z = encode(model, small_slice, graph)
        rng = np.random.default_rng(2)
        perm = rng.permutation(small_slice.n_spots)
        permuted = small_slice.take_spots(perm)
        z_perm = encode(model, permuted, build_knn(permuted.coords, 5))
        assert np.allclose(z_perm, z[perm], atol=1e-5)

    def test_decoder_never_negative(self, small_slice):
        model = build_gae(small_slice.n_genes, latent_dim=8, hidden=32, seed=3)
        Z = np.random.default_rng(4).normal(scale=10.0, size=(20, 8))
        assert decode(model, Z).min() >= 0.0

    def test_zero_decoder_gives_zero_output(self, small_slice):
        model = build_gae(small_slice.n_genes, latent_dim=8, hidden=32, seed=5)
        ne = len(model.encoder_specs)
        for w in model.params.weights[ne:]:
            w[:] = 0.0
        for b in model.params.biases[ne:]:
            b[:] = 0.0
        assert np.allclose(decode(model, np.ones((3, 8))), 0.0)

    def test_gene_count_mismatch(self, small_slice):
        graph = build_knn(small_slice.coords, 5)
        model = build_gae(small_slice.n_genes + 1, seed=0)
        with pytest.raises(DataError):
            encode(model, small_slice, graph)


class TestTrainGae:
    def test_zero_epochs_returns_initialized_model(self, small_slice):
        graph = build_knn(small_slice.coords, 5)
        model, trace = train_gae(small_slice, graph, epochs=0, seed=7)
        fresh = build_gae(small_slice.n_genes, seed=7)
        assert trace == []
        for a, b in zip(model.params.weights, fresh.params.weights):
            assert np.array_equal(a, b)

    def test_same_seed_same_final_loss(self, small_slice):
        graph = build_knn(small_slice.coords, 5)
        _, t1 = train_gae(small_slice, graph, epochs=20, lr=1e-3, seed=9, hidden=64, latent_dim=8)
        _, t2 = train_gae(small_slice, graph, epochs=20, lr=1e-3, seed=9, hidden=64, latent_dim=8)
        assert t1[-1] == t2[-1]

    def test_loss_halves_at_desk_scale_lr(self, trained):
        _, _, _, trace = trained
        assert trace[-1] < 0.5 * trace[0]
        assert all(np.isfinite(v) for v in trace)

    def test_embedding_channels_alive(self, trained):
        slice_, graph, model, _ = trained
        z = encode(model, slice_, graph)
        variances = z.var(axis=0)
        assert (variances > 0).mean() >= 0.9

    def test_reconstruction_beats_zero_predictor(self, trained):
        slice_, graph, model, _ = trained
        recon = decode(model, encode(model, slice_, graph))
        pos = slice_.expr > 0
        mse_model = float(((recon[pos] - slice_.expr[pos]) ** 2).mean())
        mse_zeros = float((slice_.expr[pos] ** 2).mean())
        assert mse_model < mse_zeros

    def test_dense_encoder_variant(self, small_slice):
        model, trace = train_gae(
            small_slice, None, epochs=20, lr=1e-3, seed=0, hidden=64,
            latent_dim=8, encoder_kind="dense",
        )
        assert trace[-1] < trace[0]
        z = encode(model, small_slice, None)
        assert z.shape == (small_slice.n_spots, 8)


def test_embeddings_cluster_no_worse_than_raw_pca(trained):
    slice_, graph, model, _ = trained
    z = encode(model, slice_, graph)
    k = len(set(slice_.labels))
    labels = np.asarray(slice_.labels)
    ari_z = adjusted_rand_index(kmeans(np.asarray(z, dtype=np.float64), k, seed=0), labels)
    ari_raw = adjusted_rand_index(
        kmeans(pca_scores(slice_.expr, 32), k, seed=0), labels
    )
    assert ari_z >= ari_raw - 0.05
