import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpdllb.bootstrap import (PosteriorDraws, batched_llb, draw_weights, exact_minimizer, llb_exact_sample,
                              llb_sample, llb_sgd_sample, replicate_rng)
from dpdllb.datasim import SCALAR_SCENARIOS, gen_contaminated_scalar
from dpdllb.dpd import DpdConfig
from dpdllb.errors import ConfigError, ReplicateError
from dpdllb.models import Normal, Poisson
from dpdllb.sgd import make_schedule


@pytest.fixture(scope="module")
def normal_data():
    spec = SCALAR_SCENARIOS["contaminated-normal"].with_n(200)
    return gen_contaminated_scalar(spec, np.random.default_rng(11))


def test_dirichlet_weight_moments():
    n, reps = 5, 40_000
    rng = np.random.default_rng(0)
    W = np.array([draw_weights(n, rng) for _ in range(reps)])
    np.testing.assert_allclose(W.sum(axis=1), 1.0, rtol=1e-12)
    np.testing.assert_allclose(W.mean(axis=0), 1 / n, rtol=0.02)
    np.testing.assert_allclose(W.var(axis=0), (n - 1) / (n**2 * (n + 1)), rtol=0.05)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 500), seed=st.integers(0, 2**32 - 1))
def test_weights_on_simplex(n, seed):
    w = draw_weights(n, np.random.default_rng(seed))
    assert w.shape == (n,) and np.all(w >= 0) and w.sum() == pytest.approx(1.0)


def test_draw_weights_rejects_bad_n():
    with pytest.raises(ConfigError):
        draw_weights(0, np.random.default_rng(0))


def test_replicate_streams_are_distinct_and_reproducible():
    a = replicate_rng(5, 3).random(4)
    assert np.array_equal(a, replicate_rng(5, 3).random(4))
    assert not np.array_equal(a, replicate_rng(5, 4).random(4))
    assert not np.array_equal(a, replicate_rng(5, 3, attempt=1).random(4))


def test_sgd_llb_is_identical_across_workers_and_chunks(tmp_path, normal_data):
    sched = make_schedule("inverse-time", 1.5, 3.0)
    args = (Normal(), normal_data, DpdConfig(0.5, 10), sched, 60, 50, 9)
    one = llb_sgd_sample(*args, workers=1, chunk_size=25)
    four = llb_sgd_sample(*args, workers=4, chunk_size=25)
    one.to_csv(tmp_path / "a.csv")
    four.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_csv_round_trip(tmp_path):
    d = PosteriorDraws(np.random.default_rng(0).standard_normal((7, 2)) * 1e-3, ("mu", "sigma"))
    d.to_csv(tmp_path / "d.csv")
    back = PosteriorDraws.from_csv(tmp_path / "d.csv")
    assert back.names == d.names and np.array_equal(back.draws, d.draws)


def test_posterior_draws_access():
    d = PosteriorDraws(np.arange(6.0).reshape(3, 2), ["a", "b"])
    assert d.S == len(d) == 3
    np.testing.assert_array_equal(d["b"], [1.0, 3.0, 5.0])


def test_exact_minimizer_unit_weights_is_stationary(normal_data):
    theta, _, gnorm = exact_minimizer(Normal(), normal_data, 0.5)(np.full(200, 1 / 200))
    assert gnorm < 1e-7
    assert abs(theta[0]) < 0.3 and 0.7 < theta[1] < 1.3


def test_sgd_and_exact_llb_agree(normal_data):
    sched = make_schedule("inverse-time", 1.5, 3.0)
    sgd = llb_sgd_sample(Normal(), normal_data, DpdConfig(0.5, 50), sched, 300, 400, seed=1)
    ex = llb_exact_sample(Normal(), normal_data, 0.5, 300, seed=1)
    np.testing.assert_allclose(sgd.draws.mean(axis=0), ex.draws.mean(axis=0), atol=0.02)
    ratio = sgd.draws.var(axis=0) / ex.draws.var(axis=0)
    assert np.all((ratio > 0.7) & (ratio < 1.4))


def test_same_seed_gives_same_weights_for_both_samplers(normal_data):
    # exact LLB draw s and SGD draw s share the Dirichlet weights of replicate s
    ex = llb_exact_sample(Normal(), normal_data, 0.5, 5, seed=3)
    w = draw_weights(200, replicate_rng(3, 2))
    theta, _, _ = exact_minimizer(Normal(), normal_data, 0.5)(w)
    np.testing.assert_allclose(ex.draws[2], theta, rtol=1e-10)


def test_failed_rows_are_retried_once():
    n = 2

    def make_grad(W):
        bad = W[:, 0] > 0.85

        def grad(theta, rngs):
            g = theta - W[:, :1]
            g[bad] = np.nan
            return g

        return grad

    draws = batched_llb(("a",), [False], n, make_grad, np.zeros(1), make_schedule("inverse-time", 0.5, 50.0),
                        50, 40, seed=2)
    assert draws.attempts.sum() > 0
    assert np.all(np.isfinite(draws.draws)) and np.all(draws.draws < 0.85 + 1e-6)


def test_second_failure_raises_replicate_error():
    def make_grad(W):
        return lambda theta, rngs: np.full_like(theta, np.nan)

    with pytest.raises(ReplicateError) as info:
        batched_llb(("a",), [False], 3, make_grad, np.zeros(1), make_schedule("inverse-time", 0.1, 5.0), 5, 4,
                    seed=0)
    assert info.value.replicate == 0


def test_generic_llb_with_custom_minimizer():
    x = np.arange(10.0)
    draws = llb_sample(Poisson(), x, lambda w, rng: np.array([w @ x]), 100, seed=0)
    assert draws.S == 100
    assert draws.draws.mean() == pytest.approx(4.5, abs=0.3)


def test_bad_S_rejected(normal_data):
    with pytest.raises(ConfigError):
        llb_exact_sample(Normal(), normal_data, 0.5, 0, seed=0)
