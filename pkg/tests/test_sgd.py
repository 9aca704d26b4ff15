import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpdllb.dpd import GradientEstimate
from dpdllb.errors import ConfigError, ConstraintError, DivergenceError
from dpdllb.sgd import make_schedule, rate_sums, sgd_minimize


def test_inverse_time_rates():
    s = make_schedule("inverse-time", 0.5, 2.0, T=10)
    np.testing.assert_allclose(s.rates(4), 0.5 / (1 + np.arange(4) / 2.0))
    assert s.rate(3) == pytest.approx(0.2)


def test_inverse_time_default_tau():
    assert make_schedule("inverse-time", 0.1, T=500).decay_param == 100.0


def test_step_decay_rates():
    s = make_schedule("step-decay", 1.0, (0.5, 3), T=12)
    np.testing.assert_allclose(s.rates(9), [1, 1, 1, 0.5, 0.5, 0.5, 1 / 3, 1 / 3, 1 / 3])


@pytest.mark.parametrize("kind,eta,decay", [
    ("cosine", 0.1, None), ("inverse-time", 0.0, None), ("inverse-time", 0.1, -1.0),
    ("step-decay", 0.1, (1.5, 10)), ("step-decay", 0.1, (0.5, 0)),
])
def test_schedule_validation(kind, eta, decay):
    with pytest.raises(ConfigError):
        make_schedule(kind, eta, decay, T=100)


@pytest.mark.parametrize("kind", ["inverse-time", "step-decay"])
def test_rates_sum_diverges_while_squares_converge(kind):
    s = make_schedule(kind, 1.0, (0.5, 10) if kind == "step-decay" else 5.0, T=10)
    small, big = rate_sums(s, 10**4), rate_sums(s, 10**6)
    assert big[0] > 1.5 * small[0]
    r = s.rates(10**6)
    assert (r * r).sum() < 10 * (r[: 10**4] ** 2).sum()


def test_quadratic_converges():
    target = np.array([1.0, -2.0])
    trace = sgd_minimize(lambda th, rng: th - target, np.zeros(2), make_schedule("inverse-time", 0.5, 50.0), 200)
    np.testing.assert_allclose(trace.final_theta, target, atol=1e-8)
    assert trace.iterations == 200 and trace.grad_norms.shape == (200,)


def test_positive_coordinates_use_log_scale():
    # minimize (log s - log 3)^2 / 2 written in natural coordinates: gradient is (log s - log 3) / s
    grad = lambda th, rng: (np.log(th) - np.log(3.0)) / th
    trace = sgd_minimize(grad, np.array([0.01]), make_schedule("inverse-time", 0.5, 100.0), 300,
                         positive=[True])
    assert trace.final_theta[0] == pytest.approx(3.0, rel=1e-6)


def test_accepts_gradient_estimates():
    grad = lambda th, rng: GradientEstimate(th - 1.0, 0, False, 1)
    trace = sgd_minimize(grad, np.zeros(1), make_schedule("inverse-time", 0.5, 50.0), 100)
    assert trace.final_theta[0] == pytest.approx(1.0)


def test_batch_rows_match_single_runs():
    targets = np.array([[1.0, 2.0], [-3.0, 0.5], [0.0, 0.0]])
    grad = lambda th, rng: (th - targets[: len(th)]) ** 3 + (th - targets[: len(th)])
    sched = make_schedule("inverse-time", 0.2, 10.0)
    batch = sgd_minimize(grad, np.zeros((3, 2)), sched, 50).final_theta
    for b in range(3):
        one = sgd_minimize(lambda th, rng: (th - targets[b]) ** 3 + (th - targets[b]), np.zeros(2), sched, 50)
        np.testing.assert_allclose(batch[b], one.final_theta, rtol=1e-14)


def test_nonfinite_gradient_raises_with_iteration():
    calls = []

    def grad(th, rng):
        calls.append(1)
        return np.array([np.nan]) if len(calls) == 4 else th

    with pytest.raises(DivergenceError) as info:
        sgd_minimize(grad, np.ones(1), make_schedule("inverse-time", 0.1, 10.0), 10)
    assert info.value.iteration == 4


def test_freeze_mode_isolates_bad_rows():
    def grad(th, rng):
        g = th - 1.0
        g[1] = np.nan
        return g

    trace = sgd_minimize(grad, np.zeros((3, 1)), make_schedule("inverse-time", 0.5, 50.0), 100,
                         on_nonfinite="freeze")
    assert trace.failed.tolist() == [False, True, False]
    np.testing.assert_allclose(trace.final_theta[[0, 2], 0], 1.0, atol=1e-6)
    assert trace.final_theta[1, 0] == 0.0


def test_clip_caps_step_length():
    trace = sgd_minimize(lambda th, rng: np.array([1e6]), np.zeros(1), make_schedule("inverse-time", 1.0, 1e9),
                         3, clip=0.5)
    assert trace.final_theta[0] == pytest.approx(-1.5, rel=1e-6)


def test_bad_inputs():
    s = make_schedule("inverse-time", 0.1, 10.0)
    with pytest.raises(ConfigError):
        sgd_minimize(lambda th, r: th, np.zeros(1), s, 0)
    with pytest.raises(ConstraintError):
        sgd_minimize(lambda th, r: th, np.array([-1.0]), s, 5, positive=[True])
    with pytest.raises(ConfigError):
        sgd_minimize(lambda th, r: th, np.zeros(1), s, 5, on_nonfinite="ignore")


def test_record_every_stores_path():
    trace = sgd_minimize(lambda th, r: th - 1, np.zeros(1), make_schedule("inverse-time", 0.1, 10.0), 20,
                         record_every=5)
    assert trace.path.shape == (4, 1)


@settings(max_examples=30, deadline=None)
@given(eta=st.floats(0.01, 5), tau=st.floats(0.1, 100), T=st.integers(1, 400))
def test_inverse_time_rates_positive_and_decreasing(eta, tau, T):
    r = make_schedule("inverse-time", eta, tau, T).rates(T)
    assert np.all(r > 0) and np.all(np.diff(r) <= 0) and r[0] == eta
