import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ternpack import TernaryQuantizer, dequantize


@pytest.fixture
def fitted(rng):
    w = rng.normal(size=(6, 24)) + 0.3
    x = rng.normal(size=(48, 24))
    return w, x, TernaryQuantizer(group_size=8).fit(w, x)


class TestEstimatorProtocol:
    def test_get_set_params_round_trip(self):
        tq = TernaryQuantizer(group_size=64, aga=False, scale_dtype="f16")
        params = tq.get_params()
        assert params["group_size"] == 64 and params["aga"] is False
        tq2 = TernaryQuantizer().set_params(**params)
        assert tq2.get_params() == params

    def test_clone_preserves_params_drops_state(self, fitted):
        _, _, tq = fitted
        c = clone(tq)
        assert c.get_params() == tq.get_params()
        assert not hasattr(c, "packed_")

    def test_unfitted_raises(self):
        with pytest.raises(NotFittedError):
            TernaryQuantizer().transform(np.zeros((2, 4)))
        with pytest.raises(NotFittedError):
            TernaryQuantizer().dequantize()

    def test_fit_sets_attributes(self, fitted):
        w, _, tq = fitted
        assert tq.n_features_in_ == 24
        assert tq.packed_.shape == (6, 24)
        assert tq.report_.e_w > 0


class TestEstimatorBehavior:
    def test_transform_applies_quantized_map(self, fitted, rng):
        _, _, tq = fitted
        x_new = rng.normal(size=(5, 24))
        got = tq.transform(x_new)
        np.testing.assert_allclose(got, x_new @ dequantize(tq.packed_).T, rtol=1e-15)

    def test_transform_checks_width(self, fitted):
        _, _, tq = fitted
        with pytest.raises(ValueError, match="features"):
            tq.transform(np.zeros((2, 7)))

    def test_fit_without_activations_uses_identity_gram(self, rng):
        w = rng.normal(size=(4, 16))
        tq = TernaryQuantizer(group_size=8).fit(w)
        assert tq.report_.gram_identity

    def test_fit_without_fallback_requires_activations(self, rng):
        w = rng.normal(size=(4, 16))
        tq = TernaryQuantizer(group_size=8, identity_gram_fallback=False)
        with pytest.raises(ValueError):
            tq.fit(w)

    def test_params_flow_into_report(self, rng):
        w = rng.normal(size=(4, 16))
        tq = TernaryQuantizer(group_size=4, ssr=False, aga=False,
                              scale_dtype="f16").fit(w)
        rep = tq.report_
        assert rep.k == 4 and rep.ssr is False and rep.aga is False
        assert rep.scale_dtype == "f16"
        assert tq.packed_.grid.alpha.dtype == np.float16

    def test_calibration_changes_result(self, rng):
        w = rng.normal(size=(8, 32)) + 0.2
        x = rng.standard_t(df=3, size=(64, 32)) * np.exp(rng.normal(0, 1, 32))
        plain = TernaryQuantizer(group_size=8).fit(w)
        calib = TernaryQuantizer(group_size=8).fit(w, x)
        assert plain.packed_ != calib.packed_
