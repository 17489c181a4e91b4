import csv

import numpy as np
import pytest

from conftest import small_config, toy_field
from factorized_fields.imageio import bundled_image
from factorized_fields.model import VARIANTS, ModelConfig, forward, init_field
from factorized_fields.optim import (
    AdamState,
    FitConfig,
    adam_step,
    fit,
    fit_joint,
    gradcheck,
    loss_and_grad,
)


def _small_image():
    return bundled_image("small")


class TestFitConfig:
    def test_defaults(self):
        cfg = FitConfig()
        assert cfg.iterations == 256
        assert cfg.loss == "l1"
        assert (cfg.beta1, cfg.beta2, cfg.eps) == (0.9, 0.99, 1e-8)

    @pytest.mark.parametrize(
        "kwargs", [{"iterations": 0}, {"loss": "huber"}, {"learning_rate": 0.0}, {"dtype": "float16"}]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            FitConfig(**kwargs)

    def test_from_dict_rejects_unknown(self):
        with pytest.raises(ValueError):
            FitConfig.from_dict({"iters": 3})


class TestLossAndGrad:
    def test_exact_target_l2(self):
        f = init_field(small_config())
        pred = np.asarray(forward(f, 8, 8))
        # unclamped prediction equals the clamped one for this init
        loss, grads = loss_and_grad(f, pred, "l2")
        assert loss == pytest.approx(0.0, abs=1e-25)
        for g in grads.values():
            np.testing.assert_allclose(g, 0.0, atol=1e-12)

    def test_exact_target_l1_subgradient(self):
        f = toy_field("full")
        target = np.full((2, 2, 3), 2 * np.sin(0.5))
        loss, grads = loss_and_grad(f, target, "l1")
        assert loss == 0.0
        for g in grads.values():
            np.testing.assert_array_equal(g, 0.0)

    def test_toy_basis_gradient(self):
        # Every pixel and channel predicts p = c sin(b) with c=2, b=0.5 and
        # weight 1.  L = mean (p - t)^2 over H*W*3 entries, so
        # dL/db = 3HW * 2(p - t) / (3HW) * c cos(b) = 2(p - t) * 2 cos(0.5).
        t = 0.3
        p = 2 * np.sin(0.5)
        _, grads = loss_and_grad(toy_field("full"), np.full((4, 5, 3), t), "l2")
        expected = 2 * (p - t) * 2 * np.cos(0.5)
        np.testing.assert_allclose(grads["basis_0"].ravel(), [expected], rtol=1e-12)
        np.testing.assert_allclose(grads["coeff"].ravel(), [2 * (p - t) * np.sin(0.5)], rtol=1e-12)
        np.testing.assert_allclose(grads["bias"], [2 * (p - t) / 3] * 3, rtol=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            loss_and_grad(toy_field(), np.zeros((4, 4)), "l2")

    def test_grad_shapes(self):
        f = init_field(small_config())
        _, grads = loss_and_grad(f, np.zeros((8, 8, 3)))
        for name, p in f.parameters().items():
            assert grads[name].shape == p.shape


class TestGradcheck:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_variants(self, variant, rng):
        f = init_field(small_config(variant=variant, levels=3, tiles=(1, 2, 4)))
        err = gradcheck(f, rng.random((8, 8, 3)))
        assert err <= 1e-4

    @pytest.mark.parametrize("variant", ["full", "no_psi", "factor_fields"])
    def test_tied_coefficients(self, variant, rng):
        f = init_field(small_config(variant=variant, levels=2, tie_coefficients=True))
        assert gradcheck(f, rng.random((8, 8, 3))) <= 1e-4

    def test_zero_field_zero_target(self):
        f = init_field(small_config())
        for p in f.parameters().values():
            p[...] = 0.0
        assert gradcheck(f, np.zeros((8, 8, 3))) == 0.0

    def test_leaves_field_unchanged(self, rng):
        f = init_field(small_config())
        before = {k: v.copy() for k, v in f.parameters().items()}
        gradcheck(f, rng.random((8, 8, 3)))
        for k, v in f.parameters().items():
            np.testing.assert_array_equal(v, before[k])


class TestAdam:
    def test_zero_grad_no_change(self):
        p = {"x": np.array([1.0, -2.0])}
        adam_step(p, {"x": np.zeros(2)}, AdamState(), FitConfig())
        np.testing.assert_array_equal(p["x"], [1.0, -2.0])

    def test_first_step_magnitude(self):
        # at t=1 the bias-corrected step is lr * g / (|g| + eps)
        cfg = FitConfig(learning_rate=0.01)
        g = np.array([3.0, -0.5])
        p = {"x": np.zeros(2)}
        adam_step(p, {"x": g}, AdamState(), cfg, t=1)
        np.testing.assert_allclose(p["x"], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)

    def test_equal_grads_move_equally(self):
        p = {"a": np.zeros(3), "b": np.ones(3)}
        state = AdamState()
        for _ in range(5):
            adam_step(p, {"a": np.full(3, 0.7), "b": np.full(3, 0.7)}, state, FitConfig())
        np.testing.assert_allclose(p["a"], p["b"] - 1.0, atol=1e-15)

    def test_bad_step_index(self):
        with pytest.raises(ValueError):
            adam_step({"x": np.zeros(1)}, {"x": np.zeros(1)}, AdamState(), FitConfig(), t=0)


class TestFit:
    def test_constant_image(self):
        # L2: the L1 sign gradient keeps Adam hovering around the optimum
        target = np.full((16, 16, 3), [0.2, 0.5, 0.8])
        cfg = ModelConfig.for_image(16, 16, levels=3)
        _, report = fit(target, cfg, FitConfig(iterations=64, loss="l2"))
        assert report.final_psnr >= 50.0

    def test_report_lengths(self):
        _, report = fit(_small_image(), small_config(size=16), FitConfig(iterations=12))
        assert len(report.losses) == len(report.psnrs) == 12
        assert all(np.isfinite(report.losses))
        assert all(p <= 99.0 for p in report.psnrs)

    def test_deterministic(self):
        cfg, fc = small_config(size=16), FitConfig(iterations=10)
        a, ra = fit(_small_image(), cfg, fc)
        b, rb = fit(_small_image(), cfg, fc)
        assert ra.losses == rb.losses
        for k, v in a.parameters().items():
            np.testing.assert_array_equal(v, b.parameters()[k])

    def test_report_csv(self, tmp_path):
        _, report = fit(_small_image(), small_config(size=16), FitConfig(iterations=5))
        path = tmp_path / "r.csv"
        report.to_csv(path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["iteration", "loss", "psnr"]
        assert len(rows) == 6

    def test_smoothed_psnr_nondecreasing(self):
        cfg = ModelConfig.for_image(
            64, 64, levels=3, basis_channels=4, basis_resolutions=((16, 16), (8, 8), (4, 4)),
            tiles_per_level=(4, 8, 16), coeff_resolution=(16, 16),
        )
        _, report = fit(_small_image(), cfg, FitConfig(iterations=256))
        smooth = np.convolve(report.psnrs, np.ones(32) / 32, mode="valid")
        assert np.all(np.diff(smooth) >= 0)

    def test_tiling_helps_on_periodic_target(self):
        # a pattern repeating 4x per axis; same parameter budget either way
        yy, xx = np.mgrid[0:32, 0:32] / 32
        pattern = 0.5 + 0.4 * np.sin(2 * np.pi * 4 * xx) * np.cos(2 * np.pi * 4 * yy)
        target = np.repeat(pattern[..., None], 3, axis=2)
        losses = {}
        for tiles in (1, 4):
            cfg = ModelConfig(
                variant="full", levels=1, basis_channels=2, alphas=(1.0, 4.0),
                tiles_per_level=(tiles,), basis_resolutions=((8, 8),), coeff_resolution=(2, 2),
            )
            _, report = fit(target, cfg, FitConfig(iterations=200))
            losses[tiles] = report.losses[-1]
        assert losses[4] < losses[1]


class TestFitJoint:
    def test_single_image_matches_fit(self):
        cfg, fc = small_config(size=16), FitConfig(iterations=8)
        img = _small_image()
        a, _ = fit(img, cfg, fc)
        (b,), _ = fit_joint([img], cfg, fc, share_bases=True)
        for k, v in a.parameters().items():
            np.testing.assert_array_equal(v, b.parameters()[k])

    def test_identical_copies_equal_psnr(self):
        img = _small_image()
        fields, report = fit_joint([img] * 3, small_config(size=16), FitConfig(iterations=20))
        np.testing.assert_allclose(report.per_image_psnr, report.per_image_psnr[0], atol=1e-6)
        assert fields[0].bases is fields[1].bases

    def test_shared_basis_gradient_is_sum(self):
        img = _small_image()[:16, :16]
        other = img[::-1].copy()
        cfg = small_config(size=16)
        fc = FitConfig(iterations=1, learning_rate=1e-3, dtype="float64")
        fields, _ = fit_joint([img, other], cfg, fc)
        start = init_field(cfg, fc.seed)
        g = loss_and_grad(start, img, "l1")[1]["basis_0"] + loss_and_grad(start, other, "l1")[1]["basis_0"]
        # one Adam step at t=1 moves by lr * g / (|g| + eps)
        expected = start.bases[0].data - 1e-3 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(fields[0].bases[0].data, expected, atol=1e-15)

    def test_mismatched_sizes(self):
        with pytest.raises(ValueError):
            fit_joint([np.zeros((8, 8, 3)), np.zeros((8, 16, 3))], small_config(), FitConfig(iterations=1))
