import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffabm.ad import RngStream, Tape, forward_jacobian
from diffabm.calibration import BHLoss, bh_ground_truth
from diffabm.infer.families import DiagonalGaussian, GaussianPrior, MaskedAffineAutoregressiveFlow
from diffabm.objective import (GaussianKernel, GviConfig, gaussian_kl, gvi_objective, log10_sse, median_heuristic,
                               mmd2)


def mmd2_loops(x, y, bw):
    k = lambda a, b: math.exp(-(a - b) ** 2 / (2 * bw * bw))
    tx, ty = len(x), len(y)
    sxx = sum(k(x[i], x[j]) for i in range(tx) for j in range(tx) if i != j)
    syy = sum(k(y[i], y[j]) for i in range(ty) for j in range(ty) if i != j)
    sxy = sum(k(x[i], y[j]) for i in range(tx) for j in range(ty))
    return sxx / (tx * (tx - 1)) + syy / (ty * (ty - 1)) - 2 * sxy / (tx * ty)


# --- kernel and MMD ------------------------------------------------------------

def test_kernel_basic():
    k = GaussianKernel(0.7)
    assert k(np.array(1.3), np.array(1.3)) == 1.0
    assert k(np.array(0.2), np.array(-0.5)) == k(np.array(-0.5), np.array(0.2))
    with pytest.raises(ValueError):
        GaussianKernel(0.0)


def test_mmd_identical_constants():
    assert mmd2([0.0, 0.0], [0.0, 0.0], GaussianKernel(1.0)) == 0.0


@pytest.mark.parametrize("a, bw", [(0.5, 1.0), (2.0, 0.3), (-1.0, 2.5)])
def test_mmd_shifted_constants(a, bw):
    got = mmd2([0.0, 0.0], [a, a], GaussianKernel(bw))
    assert got == pytest.approx(2 - 2 * math.exp(-a * a / (2 * bw * bw)), rel=1e-14)


def test_mmd_permutation_invariant():
    rng = RngStream(1)
    x, y = rng.normal(15), rng.normal(12)
    k = GaussianKernel(0.8)
    assert mmd2(x, y, k) == pytest.approx(mmd2(x[rng.permutation(15)], y, k), abs=1e-15)


@settings(max_examples=40)
@given(st.integers(2, 20), st.integers(2, 20), st.integers(0, 2 ** 31), st.floats(0.1, 3.0))
def test_mmd_matches_double_loop(tx, ty, seed, bw):
    rng = RngStream(seed)
    x, y = rng.normal(tx), rng.normal(ty) + 0.3
    assert abs(float(mmd2(x, y, GaussianKernel(bw))) - mmd2_loops(x, y, bw)) <= 1e-12


def test_mmd_self_matches_double_loop():
    x = RngStream(2).normal(20)
    assert abs(float(mmd2(x, x, GaussianKernel(0.5))) - mmd2_loops(x, x, 0.5)) <= 1e-12


def test_mmd_short_series():
    with pytest.raises(ValueError):
        mmd2([1.0], [1.0, 2.0], GaussianKernel())


def test_mmd_gradient_vs_fd():
    rng = RngStream(3)
    x0, y = rng.normal(10), rng.normal(10)
    k = GaussianKernel(0.9)
    tape = Tape()
    x = tape.variable(x0)
    rev = tape.backward(mmd2(x, y, k))[x]
    fd = np.zeros(10)
    for i in range(10):
        e = np.zeros(10)
        e[i] = 1e-5
        fd[i] = (mmd2(x0 + e, y, k) - mmd2(x0 - e, y, k)) / 2e-5
    assert np.max(np.abs(rev - fd) / np.maximum(np.abs(fd), 1e-6)) <= 1e-5
    np.testing.assert_allclose(forward_jacobian(lambda v: mmd2(v, y, k), x0), rev, rtol=1e-10)


# --- median heuristic ------------------------------------------------------------

def test_median_heuristic_examples():
    assert median_heuristic([0.0, 1.0]) == 1.0
    assert median_heuristic([0.0, 1.0, 2.0]) == 1.0


def test_median_heuristic_constant_falls_back(caplog):
    with caplog.at_level(logging.WARNING):
        assert median_heuristic([0.4, 0.4, 0.4]) == 1.0
    assert "bandwidth 1.0" in caplog.text


def test_bh_loss_bandwidth_frozen():
    y = bh_ground_truth(seed=1)
    loss = BHLoss(y)
    assert loss.kernel.bandwidth == median_heuristic(y)


# --- log10 loss ---------------------------------------------------------------------

def test_log10_sse_examples():
    y = np.arange(50.0)
    assert log10_sse(y, y) == 0.0
    assert log10_sse(10 * (y + 1) - 1, y) == pytest.approx(50.0, rel=1e-13)
    assert log10_sse(np.array([9.0]), np.array([99.0])) == pytest.approx(1.0, rel=1e-14)


def test_log10_sse_errors():
    with pytest.raises(ValueError):
        log10_sse(np.ones(3), np.ones(4))
    with pytest.raises(ValueError):
        log10_sse(np.array([-1.0, 2.0]), np.ones(2))


def test_log10_sse_gradient():
    y = np.array([3.0, 10.0, 40.0])
    x0 = np.array([5.0, 2.0, 100.0])
    g = forward_jacobian(lambda x: log10_sse(x, y), x0)
    expected = 2 * (np.log10(x0 + 1) - np.log10(y + 1)) / ((x0 + 1) * np.log(10))
    np.testing.assert_allclose(g, expected, rtol=1e-13)


# --- KL and the GVI objective --------------------------------------------------------

def test_closed_form_kl_example():
    assert float(gaussian_kl(np.array([1.0]), np.array([0.0]), [0.0], [1.0])) == pytest.approx(0.5)


def test_mc_kl_converges_to_closed_form():
    mu, log_s = np.array([0.5, -0.3, 1.0]), np.log(np.array([0.7, 1.2, 0.4]))
    q = DiagonalGaussian(mu, log_s)
    prior = GaussianPrior.standard(3)
    u = RngStream(5).normal((10 ** 5, 3))
    theta = mu + np.exp(log_s) * u
    log_q = -0.5 * (u ** 2).sum(1) - log_s.sum() - 1.5 * math.log(2 * math.pi)
    log_p = -0.5 * (theta ** 2).sum(1) - 1.5 * math.log(2 * math.pi)
    terms = log_q - log_p
    closed = float(q.closed_form_kl(prior))
    assert abs(terms.mean() - closed) <= 3 * terms.std(ddof=1) / math.sqrt(terms.size)


def zero_loss(theta, rng, horizon=None):
    return 0.0


def test_objective_q_equals_prior():
    q = DiagonalGaussian(np.zeros(4), np.zeros(4))
    obj = [gvi_objective(q, GaussianPrior.standard(4), zero_loss, GviConfig(w=1.0, n_samples=5),
                         RngStream(s), kl="mc")[0] for s in range(3)]
    np.testing.assert_allclose([float(o) for o in obj], 0.0, atol=1e-12)


def test_objective_shifted_mean_tends_to_half():
    q = DiagonalGaussian(np.ones(1), np.zeros(1))
    cfg = GviConfig(w=1.0, n_samples=20000, weight_on="loss")
    obj, _, kl, _ = gvi_objective(q, GaussianPrior.standard(1), zero_loss, cfg, RngStream(6), kl="mc")
    assert float(obj) == pytest.approx(0.5, abs=0.03)


def test_w_zero_leaves_kl_alone():
    q = DiagonalGaussian(np.array([0.3, -0.2]), np.array([0.1, -0.4]))
    loss = lambda theta, rng, h=None: (theta * theta).sum() + 7.0
    cfg = GviConfig(w=0.0, n_samples=4, weight_on="loss")
    obj, loss_term, kl, _ = gvi_objective(q, GaussianPrior.standard(2), loss, cfg, RngStream(1))
    assert float(loss_term) > 7.0
    assert float(obj) == float(kl)


def test_weight_placement():
    q = DiagonalGaussian(np.array([0.3]), np.array([0.1]))
    loss = lambda theta, rng, h=None: theta.sum() + 2.0
    for on in ("kl", "loss"):
        cfg = GviConfig(w=0.25, n_samples=3, weight_on=on)
        obj, lt, kt, _ = gvi_objective(q, GaussianPrior.standard(1), loss, cfg, RngStream(2))
        expected = lt + 0.25 * kt if on == "kl" else 0.25 * lt + kt
        assert float(obj) == pytest.approx(float(expected), rel=1e-15)


def test_objective_deterministic_and_differentiable():
    q = MaskedAffineAutoregressiveFlow(2, n_layers=2, hidden=6)
    prior = GaussianPrior.standard(2)
    loss = lambda theta, rng, h=None: ((theta - 1.0) * (theta - 1.0)).sum()
    vals = []
    for _ in range(2):
        tape = Tape()
        obj, *_, params = gvi_objective(q, prior, loss, GviConfig(), RngStream(9), tape=tape)
        vals.append((float(obj), tape.backward(obj)[params[-1]].tobytes()))
    assert vals[0] == vals[1]


def test_prior_support_violation_raises():
    class HalfLine:
        def log_prob(self, theta):
            return 0.0 if np.all(np.asarray(theta) > 0) else -np.inf

    q = DiagonalGaussian(np.array([-5.0]), np.array([-3.0]))
    with pytest.raises(ValueError, match="prior density is zero"):
        gvi_objective(q, HalfLine(), zero_loss, GviConfig(), RngStream(0), kl="mc")


def test_config_validation():
    with pytest.raises(ValueError):
        GviConfig(n_samples=0)
    with pytest.raises(ValueError):
        GviConfig(w=-1.0)
    with pytest.raises(ValueError):
        GviConfig(weight_on="both")
