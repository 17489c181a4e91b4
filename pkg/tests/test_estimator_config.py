import json

import numpy as np
import pytest
from sklearn.base import clone

from factorized_fields.config import ABLATION_MODEL, CODEC_MODEL, ConfigError, JobConfig, load_job
from factorized_fields.estimator import FactorizedFieldRegressor
from factorized_fields.imageio import bundled_image
from factorized_fields.model import pixel_centers
from factorized_fields.validation import NotFittedError, check_coords, check_image

TINY = dict(
    levels=2,
    basis_channels=2,
    alphas=(1.0, 4.0),
    basis_resolutions=((16, 16), (8, 8)),
    tiles_per_level=(4, 8),
    coeff_resolution=(8, 8),
    iterations=30,
)


class TestRegressor:
    def test_get_set_params(self):
        est = FactorizedFieldRegressor(variant="no_psi", iterations=7)
        params = est.get_params()
        assert params["variant"] == "no_psi"
        assert params["iterations"] == 7
        est.set_params(levels=3)
        assert est.levels == 3
        assert clone(est).get_params() == est.get_params()

    def test_predict_before_fit(self):
        with pytest.raises(NotFittedError):
            FactorizedFieldRegressor().predict(np.zeros((1, 2)))

    def test_fit_predict_render(self):
        img = bundled_image("small")
        est = FactorizedFieldRegressor(**TINY).fit(img)
        assert est.image_shape_ == (64, 64, 3)
        assert len(est.report_.losses) == 30
        rendered = est.render()
        assert rendered.shape == (64, 64, 3)
        uu, vv = np.meshgrid(pixel_centers(64), pixel_centers(64))
        pts = est.predict(np.column_stack([uu.ravel(), vv.ravel()]))
        np.testing.assert_allclose(pts.reshape(64, 64, 3), rendered, atol=1e-5)
        assert est.score(img) == pytest.approx(est.report_.final_psnr, abs=1e-9)

    def test_render_scale(self):
        est = FactorizedFieldRegressor(**{**TINY, "iterations": 2}).fit(bundled_image("small"))
        assert est.render(scale=2).shape == (128, 128, 3)

    def test_rejects_bad_image(self):
        with pytest.raises(ValueError):
            FactorizedFieldRegressor().fit(np.full((8, 8, 3), 2.0))


class TestValidation:
    def test_check_image(self):
        with pytest.raises(ValueError):
            check_image(np.zeros((4, 4)))
        with pytest.raises(ValueError):
            check_image(np.full((2, 2, 3), np.nan))
        assert check_image(np.zeros((2, 2, 3))).dtype == np.float64

    def test_check_coords(self):
        with pytest.raises(ValueError):
            check_coords(np.zeros((3, 3)))
        with pytest.raises(ValueError):
            check_coords(np.full((1, 2), 1.5))


class TestJobConfig:
    def test_defaults(self):
        job = load_job(None)
        assert job.fit.iterations == 256
        assert job.codec.lambdas == (0.0025, 0.0067, 0.025)
        assert job.model_config(64, 64).levels == 6

    def test_presets_valid(self):
        for preset in (ABLATION_MODEL, CODEC_MODEL):
            JobConfig.from_dict({"model": preset})

    def test_unknown_top_level(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"modle": {}}))
        with pytest.raises(ConfigError, match="modle"):
            load_job(path)

    @pytest.mark.parametrize("section", ["model", "fit", "codec", "analysis"])
    def test_unknown_section_key(self, section):
        with pytest.raises(ConfigError):
            JobConfig.from_dict({section: {"bogus": 1}})

    def test_bad_values(self):
        with pytest.raises(ConfigError):
            JobConfig.from_dict({"fit": {"iterations": 0}})
        with pytest.raises(ConfigError):
            JobConfig.from_dict({"model": {"variant": "nope"}})
        with pytest.raises(ConfigError):
            JobConfig.from_dict({"codec": {"lam": -1}})

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="malformed"):
            load_job(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_job(tmp_path / "none.json")

    def test_field_wise_defaults(self):
        job = JobConfig.from_dict({"fit": {"iterations": 5}})
        assert job.fit.iterations == 5
        assert job.fit.loss == "l1"

    def test_seed_override(self):
        job = JobConfig.from_dict({}).with_seed(9)
        assert job.fit.seed == 9
        assert job.model_config(16, 16).seed == 9
