import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ccop.estimator import MStationaryAnalyzer
from ccop.model import bundled_problem


def test_fit_and_predict():
    est = MStationaryAnalyzer().fit(bundled_problem("stability_compact"))
    np.testing.assert_array_equal(est.stationary_points(), [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert len(est.classifications_) == 3 and est.n_features_in_ == 2
    got = est.predict([[1.0, 0.0], [2.0, 0.0], [0.5, 0.5], [0.0, 0.0]])
    np.testing.assert_array_equal(got, [True, False, False, True])


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        MStationaryAnalyzer().predict([[0.0, 0.0]])


def test_predict_shape_check():
    est = MStationaryAnalyzer().fit(bundled_problem("instability"))
    with pytest.raises(ValueError):
        est.predict([[0.0, 0.0, 0.0]])


def test_fit_rejects_arrays():
    with pytest.raises(TypeError):
        MStationaryAnalyzer().fit(np.zeros((3, 2)))


def test_params_round_trip():
    est = MStationaryAnalyzer(seeds_per_system=8, rng_seed=4)
    assert clone(est).get_params() == est.get_params()
    est.set_params(n_jobs=2)
    assert est.n_jobs == 2


def test_thread_count_does_not_change_result():
    p = bundled_problem("so_ss")
    a = MStationaryAnalyzer(n_jobs=1).fit(p).stationary_points()
    b = MStationaryAnalyzer(n_jobs=3).fit(p).stationary_points()
    np.testing.assert_array_equal(a, b)
