import numpy as np
import pytest

from stinr import nn
from stinr.errors import DataError
from stinr.inr import (
    InrModel,
    build_inr,
    coord_bounds_of,
    embd_loss,
    inr_forward,
    normalize_coords,
    select_backbone,
    train_inr,
)


class TestNormalizeCoords:
    BOUNDS = np.array([[0.0, 10.0], [0.0, 10.0]])

    def test_midpoint_maps_to_origin(self):
        out = normalize_coords(np.array([[5.0, 5.0]]), self.BOUNDS)
        assert np.allclose(out, 0.0)

    def test_min_corner(self):
        out = normalize_coords(np.array([[0.0, 0.0]]), self.BOUNDS)
        assert np.allclose(out, -1.0)

    def test_hand_affine(self):
        out = normalize_coords(np.array([[2.5, 7.5]]), self.BOUNDS)
        assert np.allclose(out, [[-0.5, 0.5]])

    def test_outside_points_pass_through(self):
        out = normalize_coords(np.array([[12.0, -2.0]]), self.BOUNDS)
        assert np.allclose(out, [[1.4, -1.4]])

    def test_degenerate_bounds(self):
        with pytest.raises(DataError):
            normalize_coords(np.zeros((1, 2)), np.array([[3.0, 3.0], [0.0, 1.0]]))


class TestEmbdLoss:
    def test_zero(self):
        z = np.random.default_rng(0).normal(size=(5, 3))
        assert embd_loss(z, z) == 0.0

    def test_hand_value(self):
        assert embd_loss(np.array([[1.0, 1.0]]), np.array([[0.0, 0.0]])) == 1.0

    def test_translation_invariance(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
        assert embd_loss(a + 3.0, b + 3.0) == pytest.approx(embd_loss(a, b))

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            embd_loss(np.zeros((2, 2)), np.zeros((3, 2)))


class TestInrForward:
    def _model(self, backbone, seed=0):
        return build_inr(backbone, out_dim=4, coord_bounds=np.array([[-1.0, 1.0], [-1.0, 1.0]]),
                         seed=seed, hidden=32, depth=2, fourier_size=16)

    @pytest.mark.parametrize("backbone", ["ffn", "siren"])
    def test_zero_final_layer(self, backbone):
        m = self._model(backbone)
        m.params.weights[-1][:] = 0.0
        m.params.biases[-1][:] = 0.0
        out = inr_forward(m, np.random.default_rng(0).uniform(-1, 1, (7, 2)))
        assert np.allclose(out, 0.0)

    @pytest.mark.parametrize("backbone", ["ffn", "siren"])
    def test_identical_coords_identical_outputs(self, backbone):
        m = self._model(backbone)
        coords = np.array([[0.3, -0.2], [0.3, -0.2]])
        out = inr_forward(m, coords)
        assert np.array_equal(out[0], out[1])

    def test_repeated_call_bit_identical(self):
        m = self._model("siren")
        coords = np.random.default_rng(2).uniform(-1, 1, (11, 2))
        assert np.array_equal(inr_forward(m, coords), inr_forward(m, coords))

    def test_siren_lipschitz_probe(self):
        m = self._model("siren", seed=3)
        # chain bound: product of omega * ||W||_2 through sine layers
        L = 1.0
        for spec, W in zip(m.specs, m.params.weights):
            gain = np.linalg.norm(W.astype(np.float64), 2)
            if spec.activation == "sine":
                gain *= spec.omega
            L *= gain
        rng = np.random.default_rng(4)
        x = rng.uniform(-1, 1, (64, 2))
        delta = rng.normal(size=(64, 2))
        delta *= 1e-3 / np.linalg.norm(delta, axis=1, keepdims=True)
        a = inr_forward(m, x).astype(np.float64)
        b = inr_forward(m, x + delta).astype(np.float64)
        step = np.linalg.norm(b - a, axis=1)
        assert (step <= L * 1e-3 + 1e-6).all()

    @pytest.mark.parametrize("backbone", ["ffn", "siren"])
    def test_gradient_check(self, backbone):
        m = build_inr(backbone, out_dim=3, coord_bounds=np.array([[-1.0, 1.0], [-1.0, 1.0]]),
                      seed=5, hidden=10, depth=2, fourier_size=8, dtype=np.float64)
        rng = np.random.default_rng(6)
        coords = rng.uniform(-1, 1, (10, 2))
        X = nn.fourier_map(coords, m.params.fourier_b) if backbone == "ffn" else coords
        target = rng.normal(size=(10, 3))
        report = nn.finite_diff_check(m.params, m.specs, X, None, nn.MseTail(target))
        assert report.passed, str(report)


class TestTrainInr:
    def test_zero_epochs(self):
        rng = np.random.default_rng(7)
        coords = rng.uniform(size=(20, 2))
        z = rng.normal(size=(20, 4))
        model, trace = train_inr(coords, z, backbone="ffn", epochs=0, seed=8)
        fresh = build_inr("ffn", 4, coord_bounds_of(coords), seed=8)
        assert trace == []
        for a, b in zip(model.params.weights, fresh.params.weights):
            assert np.array_equal(a, b)

    @pytest.mark.parametrize("backbone", ["ffn", "siren"])
    def test_loss_halves(self, backbone):
        rng = np.random.default_rng(9)
        coords = rng.uniform(size=(60, 2))
        z = np.stack([np.sin(3 * coords[:, 0]), coords[:, 1] ** 2], axis=1)
        model, trace = train_inr(coords, z, backbone=backbone, epochs=400, lr=1e-3,
                                 seed=10, hidden=64, depth=2, fourier_size=32)
        assert trace[-1] < 0.5 * trace[0]

    def test_heldout_loss_finite(self):
        rng = np.random.default_rng(11)
        coords = rng.uniform(size=(50, 2))
        z = rng.normal(size=(50, 3))
        model, _ = train_inr(coords, z, backbone="ffn", epochs=50, seed=12,
                             hidden=32, depth=2, fourier_size=16)
        test_coords = rng.uniform(size=(10, 2))
        z_hat = inr_forward(model, normalize_coords(test_coords, model.coord_bounds))
        assert np.isfinite(embd_loss(z_hat, rng.normal(size=(10, 3))))

    def test_relu_output_head(self):
        rng = np.random.default_rng(13)
        coords = rng.uniform(size=(30, 2))
        y = rng.uniform(0, 3, size=(30, 5)) * (rng.uniform(size=(30, 5)) < 0.3)
        model, _ = train_inr(coords, y, backbone="ffn", epochs=30, seed=14,
                             hidden=32, depth=2, fourier_size=16, out_activation="relu")
        out = inr_forward(model, normalize_coords(coords, model.coord_bounds))
        assert out.min() >= 0.0


class TestSelectBackbone:
    def test_dense_sampling_prefers_ffn(self):
        # 250 spots along a unit segment: spacing/diameter = 1/249 < 1%
        x = np.linspace(0, 1, 250)
        coords = np.stack([x, 0.01 * np.sin(40 * x)], axis=1)
        assert select_backbone(coords) == "ffn"

    def test_sparse_scatter_prefers_siren(self):
        coords = np.random.default_rng(15).uniform(size=(30, 2))
        assert select_backbone(coords) == "siren"

    def test_threshold_override(self):
        coords = np.random.default_rng(16).uniform(size=(30, 2))
        assert select_backbone(coords, threshold=0.9) == "ffn"
