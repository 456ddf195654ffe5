import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pnstrace import PnSPredictor, check_scenes
from pnstrace.errors import ShapeMismatch
from pnstrace.synth import SynthParams, gen_follow_scene, generate

TINY = dict(hidden=8, n_modes=4, epochs=2, batch_size=8)


@pytest.fixture(scope="module")
def scenes():
    return [s.scene for s in generate(20, seed=4, n_distractors=2)]


@pytest.fixture(scope="module")
def fitted(scenes):
    return PnSPredictor(**TINY).fit(scenes)


class TestCheckScenes:
    def test_empty(self):
        with pytest.raises(ValueError):
            check_scenes([])

    def test_wrong_type(self, scenes):
        with pytest.raises(TypeError):
            check_scenes([scenes[0], "scene"])
        with pytest.raises(TypeError):
            check_scenes(scenes[0])

    def test_mixed_horizons(self, scenes):
        other = gen_follow_scene(SynthParams(t_h=6)).scene
        with pytest.raises(ShapeMismatch):
            check_scenes([scenes[0], other])

    def test_pinned_horizon(self, scenes):
        with pytest.raises(ShapeMismatch):
            check_scenes(scenes, t_f=6)


class TestEstimator:
    def test_params(self):
        est = PnSPredictor(k=3, lam=0.1)
        p = est.get_params()
        assert p["k"] == 3 and p["lam"] == 0.1
        assert clone(est).get_params() == p
        est.set_params(k=1)
        assert est.k == 1

    def test_not_fitted(self, scenes):
        with pytest.raises(NotFittedError):
            PnSPredictor().predict(scenes)

    def test_predict_sorted_by_probability(self, fitted, scenes):
        pred = fitted.predict(scenes[:3])
        mix = fitted.predict_mixture(scenes[:3])
        assert pred.shape == (3, 4, 12, 2)
        top = np.argmax(mix["pi"], axis=1)
        np.testing.assert_array_equal(pred[:, 0], mix["mu"][np.arange(3), top])

    def test_score_is_negative_made(self, fitted, scenes):
        rep = fitted.evaluate(scenes, ks=(4,))
        assert np.isclose(fitted.score(scenes, k=4), -rep.made[4])

    def test_fitted_attributes(self, fitted):
        assert len(fitted.history_) == 2 and fitted.t_f_ == 12

    def test_save_load(self, fitted, scenes, tmp_path):
        path = tmp_path / "m.npz"
        fitted.save(path)
        back = PnSPredictor.load(path)
        assert back.get_params() == fitted.get_params()
        np.testing.assert_array_equal(back.predict(scenes[:2]), fitted.predict(scenes[:2]))

    def test_horizon_mismatch_at_predict(self, fitted):
        other = gen_follow_scene(SynthParams(t_f=6)).scene
        with pytest.raises(ShapeMismatch):
            fitted.predict([other])

    def test_bad_config_on_fit(self, scenes):
        with pytest.raises(ValueError):
            PnSPredictor(metric="cosine").fit(scenes)
