import numpy as np
import pytest

from dpdllb.calibration import (InformationPair, calibrate_dpd, calibrate_scale, estimate_information,
                                self_information_grad)
from dpdllb.datasim import SCALAR_SCENARIOS, gen_contaminated_scalar
from dpdllb.errors import DegenerateDataError, ShapeError, SingularityError
from dpdllb.models import Normal


def test_identity_information_gives_unit_scale():
    assert calibrate_scale(InformationPair(np.eye(3), np.eye(3), np.zeros(3))) == 1.0


def test_scale_formula_hand_case():
    # sensitivity diag(2, 1), variability diag(4, 1): (4/4 + 1) / 3
    pair = InformationPair(np.diag([4.0, 1.0]), np.diag([2.0, 1.0]), np.zeros(2))
    assert calibrate_scale(pair) == pytest.approx(2.0 / 3.0, rel=1e-14)


def test_self_information_recovers_unit_scale():
    x = np.random.default_rng(0).normal(1.0, 2.0, 5000)
    model = Normal()
    pair = estimate_information(self_information_grad(model), x, model.mle(x))
    assert 0.9 <= calibrate_scale(pair) <= 1.1


def test_sandwich_is_inverse_fisher_for_correct_model():
    x = np.random.default_rng(1).normal(0.0, 1.0, 20_000)
    model = Normal()
    pair = estimate_information(self_information_grad(model), x, model.mle(x))
    np.testing.assert_allclose(pair.sandwich(), np.diag([1.0, 0.5]), atol=0.05)


def test_dpd_calibration_on_contaminated_data():
    data = gen_contaminated_scalar(SCALAR_SCENARIOS["contaminated-normal"], np.random.default_rng(2))
    w, pair = calibrate_dpd(Normal(), data, 0.5)
    assert 1.5 < w < 4.5
    assert np.allclose(pair.sensitivity, pair.sensitivity.T)


def test_singular_information_raises():
    with pytest.raises(SingularityError):
        calibrate_scale(InformationPair(np.zeros((2, 2)), np.eye(2), np.zeros(2)))


def test_zero_trace_raises():
    with pytest.raises(DegenerateDataError):
        calibrate_scale(InformationPair(np.eye(2), np.diag([1.0, -1.0]), np.zeros(2)))


def test_too_few_observations():
    with pytest.raises(ShapeError):
        estimate_information(self_information_grad(Normal()), np.array([0.0, 1.0]), np.array([0.5, 0.5]))
