import math

import numpy as np
import pytest

from diffabm.abm.brock_hommes import TRUE_THETA
from diffabm.ad import RngStream, Tape, TapeRecorder, ops
from diffabm.calibration import BHLoss, bh_ground_truth
from diffabm.infer import estimators as est
from diffabm.infer.families import (DiagonalGaussian, GaussianPrior, MaskedAffineAutoregressiveFlow, family_from_dict,
                                    made_masks, sample_reparam)
from diffabm.infer.optim import NonFiniteGradient, OptimizerState, optimizer_step
from diffabm.infer.train import TrainingAborted, train
from diffabm.objective import GviConfig


def first_square(theta, rng, horizon=None):
    return theta[0] * theta[0]


def first_coord(theta, rng, horizon=None):
    return theta[0] * 1.0


def const(theta, rng, horizon=None):
    return theta[0] * 0.0 + 1.0


def trained_flow(dim=3, seed=4):
    """A flow with non-trivial weights (the untrained flow is the identity)."""
    q = MaskedAffineAutoregressiveFlow(dim, n_layers=4, hidden=8, seed=seed)
    rng = RngStream(seed, 1)
    q.set_parameters([p + 0.3 * rng.normal(p.shape) for p in q.parameters()])
    return q


# --- families ---------------------------------------------------------------------

def test_gaussian_at_mode():
    q = DiagonalGaussian(np.zeros(4), np.zeros(4))
    theta, log_q = q.rsample(np.zeros(4))
    assert np.all(theta == 0)
    assert float(log_q) == pytest.approx(-2 * math.log(2 * math.pi), rel=1e-15)


def test_gaussian_reparam_partials():
    mu, log_s = np.array([0.2, -1.0]), np.array([0.3, -0.5])
    q = DiagonalGaussian(mu, log_s)
    u = np.array([0.7, -1.3])
    for i in range(2):
        tape = Tape()
        params = q.bind(tape)
        theta, _ = q.rsample(u, params)
        g = tape.backward(theta[i])
        assert g[params[0]][i] == 1.0
        assert g[params[1]][i] == pytest.approx(np.exp(log_s[i]) * u[i], rel=1e-15)
        assert g[params[0]][1 - i] == 0.0


def test_gaussian_rejects_non_finite():
    with pytest.raises(ValueError):
        DiagonalGaussian(np.array([np.nan]), np.zeros(1))


def test_untrained_flow_is_base():
    q = MaskedAffineAutoregressiveFlow(4)
    u = RngStream(1).normal(4)
    theta, log_q = q.rsample(u)
    # an odd number of order reversals between the 16 layers
    np.testing.assert_allclose(theta, u[::-1], atol=1e-15)
    assert float(log_q) == pytest.approx(-0.5 * (u @ u) - 2 * math.log(2 * math.pi), rel=1e-13)


def test_flow_round_trip_density():
    q = trained_flow()
    rng = RngStream(2)
    worst = 0.0
    for i in range(100):
        theta, log_q = q.rsample(rng.normal(3))
        worst = max(worst, abs(float(q.log_prob(theta)) - float(log_q)))
    assert worst <= 1e-8


def test_flow_batched_values_match_single():
    q = trained_flow()
    u = RngStream(3).normal((6, 3))
    batch = q.sample_values(u)
    for i in range(6):
        np.testing.assert_allclose(batch[i], q.rsample(u[i])[0], rtol=1e-13, atol=1e-14)


def test_flow_is_autoregressive():
    masks = made_masks(4, 8, 2)
    connect = masks[2] @ masks[1] @ masks[0]
    out = connect[:4]
    assert np.all(np.triu(out) == 0)


def test_flow_scale_floor():
    q = trained_flow()
    q.set_parameters([p * 50 for p in q.parameters()])
    lp = q._layer_params(q.parameters(), 0)
    _, scale = q._shift_scale(RngStream(0).normal(3) * 10, lp)
    assert np.all(scale >= 1e-3)


def test_flow_density_finite_and_stable():
    q = trained_flow(dim=2, seed=6)
    means = []
    for seed in (10, 11):
        u = RngStream(seed).normal((10 ** 4, 2))
        vals = [float(q.rsample(u[i])[1]) for i in range(0, 10 ** 4, 5)]
        assert np.all(np.isfinite(vals))
        means.append(np.mean(vals))
    assert abs(means[0] - means[1]) <= 0.05 * abs(means[0])


def test_family_serialisation():
    for q in (DiagonalGaussian(np.array([0.1, 0.2]), np.array([-0.3, 0.0])), trained_flow()):
        back = family_from_dict(q.to_dict())
        u = RngStream(0).normal(q.dim)
        np.testing.assert_array_equal(back.rsample(u)[0], q.rsample(u)[0])


def test_sample_reparam_binds():
    q = DiagonalGaussian(np.zeros(2), np.zeros(2))
    tape = Tape()
    s = sample_reparam(q, RngStream(0), tape=tape)
    assert s.theta.attached and len(s.params) == 2


# --- estimators ---------------------------------------------------------------------

def test_constant_loss_pathwise_zero():
    q = DiagonalGaussian(np.zeros(3), np.zeros(3))
    g = est.pathwise_gradient(q, lambda t, r, h=None: 3.0, None, 20, RngStream(0))
    assert np.all(g.mean == 0) and np.all(g.std == 0)


def test_pathwise_square_analytic():
    mu = np.array([0.7, -0.2])
    q = DiagonalGaussian(mu, np.zeros(2))
    g = est.pathwise_gradient(q, first_square, None, 10 ** 4, RngStream(1))
    assert abs(g.mean[0] - 2 * mu[0]) <= 3 * g.stderr[0]
    assert g.mean[1] == 0.0


def test_score_zero_noise_zero_contribution():
    q = DiagonalGaussian(np.array([0.5, 0.5]), np.zeros(2))
    tape = Tape()
    params = q.bind(tape)
    g = tape.backward(q.log_prob(np.array([0.5, 0.5]), params))
    assert np.all(g[params[0]] == 0)


def test_score_zero_mean_for_constant_loss():
    q = DiagonalGaussian(np.array([0.3, -0.4]), np.array([0.2, -0.1]))
    g = est.score_gradient(q, const, 10 ** 4, RngStream(2))
    assert np.all(np.abs(g.mean) <= 3 * g.stderr)


def test_score_linear_toy():
    q = DiagonalGaussian(np.array([0.4, 0.0]), np.zeros(2))
    g = est.score_gradient(q, first_coord, 10 ** 4, RngStream(3))
    assert abs(g.mean[0] - 1.0) <= 3 * g.stderr[0]


def test_hybrid_identity_flow():
    q = DiagonalGaussian(np.array([0.2, 0.3, -0.1]), np.full(3, -40.0))
    g = est.hybrid_gradient(q, first_coord, 3, RngStream(4))
    np.testing.assert_allclose(g.mean[:3], [1.0, 0.0, 0.0], atol=1e-15)


def quad(theta, rng, horizon=None):
    c = np.array([1.0, -0.5, 2.0])
    d = theta - c
    return (d * d * np.array([1.0, 3.0, 0.5])).sum()


def test_estimators_consistent_on_quadratic():
    q = DiagonalGaussian(np.array([0.2, 0.1, -0.3]), np.log(np.array([0.5, 0.8, 1.1])))
    p = est.pathwise_gradient(q, quad, None, 2000, RngStream(5))
    h = est.hybrid_gradient(q, quad, 2000, RngStream(6))
    s = est.score_gradient(q, quad, 10 ** 4, RngStream(7))
    for a, b in ((p, s), (h, s), (p, h)):
        assert np.all(np.abs(a.mean - b.mean) <= 3 * np.sqrt(a.stderr ** 2 + b.stderr ** 2))


@pytest.fixture(scope="module")
def bh_loss():
    return BHLoss(bh_ground_truth(seed=1))


def test_hybrid_equals_full_pathwise_on_bh(bh_loss):
    q = trained_flow(dim=4, seed=8)
    p = est.pathwise_gradient(q, bh_loss, None, 3, RngStream(9))
    h = est.hybrid_gradient(q, bh_loss, 3, RngStream(9))
    scale = np.maximum(np.abs(p.mean), 1e-12)
    assert np.max(np.abs(h.mean - p.mean) / scale) <= 1e-8


def test_hybrid_flow_tape_only(bh_loss):
    q = trained_flow(dim=4, seed=8)
    with TapeRecorder() as sampling:
        tape = Tape()
        sample_reparam(q, RngStream(0).spawn("base", 0), tape=tape)
    with TapeRecorder() as hybrid:
        est.hybrid_gradient(q, bh_loss, 1, RngStream(0))
    assert len(hybrid.tapes) == 1
    assert hybrid.node_count == sampling.node_count


def test_horizon_zero_lower_variance_than_full(bh_loss):
    q = DiagonalGaussian(TRUE_THETA, np.full(4, np.log(0.1)))
    h0, hf = [], []
    for rep in range(100):
        rng = RngStream(10).spawn("rep", rep)
        h0.append(est.pathwise_gradient(q, bh_loss, 0, 5, rng).mean)
        hf.append(est.pathwise_gradient(q, bh_loss, 100, 5, rng).mean)
    s0, sf = np.std(h0, axis=0), np.std(hf, axis=0)
    assert np.count_nonzero(s0 <= sf) >= 6


def test_simulator_failure_reports_sample():
    def broken(theta, rng, horizon=None):
        raise FloatingPointError("boom")

    q = DiagonalGaussian(np.zeros(2), np.zeros(2))
    with pytest.raises(est.SimulatorFailure, match="sample 0"):
        est.pathwise_gradient(q, broken, None, 2, RngStream(0))


def test_unknown_estimator():
    with pytest.raises(ValueError):
        est.estimate("finite-difference", DiagonalGaussian(np.zeros(1), np.zeros(1)), const, 1, RngStream(0))


def test_gradient_estimate_stats():
    g = est.GradientEstimate.from_samples(np.array([[1.0, 2.0], [3.0, 2.0]]))
    np.testing.assert_array_equal(g.mean, [2.0, 2.0])
    assert g.n == 2 and np.all(g.std >= 0)


# --- optimiser ---------------------------------------------------------------------

def test_zero_gradient_no_decay_unchanged():
    p = [np.array([1.0, -2.0])]
    state = OptimizerState.for_params(p, weight_decay=0.0)
    state, new = optimizer_step(state, p, [np.zeros(2)])
    np.testing.assert_array_equal(new[0], p[0])
    assert state.step == 1


def test_first_step_is_signed_lr():
    p = [np.array([1.0, -2.0, 0.5])]
    g = [np.array([3.0, -1e-3, 250.0])]
    state = OptimizerState.for_params(p, weight_decay=0.0)
    _, new = optimizer_step(state, p, g)
    np.testing.assert_allclose(new[0] - p[0], -1e-3 * np.sign(g[0]), rtol=1e-4)


def test_decay_alone_shrinks():
    p = [np.array([2.0, -4.0])]
    state = OptimizerState.for_params(p, lr=0.1, weight_decay=0.5)
    _, new = optimizer_step(state, p, [np.zeros(2)])
    np.testing.assert_allclose(new[0], p[0] * (1 - 0.1 * 0.5))


def test_non_finite_gradient_rejected():
    p = [np.ones(2)]
    state = OptimizerState.for_params(p)
    with pytest.raises(NonFiniteGradient):
        optimizer_step(state, p, [np.array([1.0, np.inf])])
    assert state.step == 0


def test_shape_mismatch():
    with pytest.raises(ValueError):
        optimizer_step(OptimizerState(), [np.ones(2)], [np.ones(3)])


def test_quadratic_descends_monotonically():
    p = [np.array([3.0, -2.0])]
    state = OptimizerState.for_params(p, lr=0.05, weight_decay=0.0)
    losses = []
    for _ in range(60):
        losses.append(float(p[0] @ p[0]))
        state, p = optimizer_step(state, p, [2 * p[0]])
    assert np.all(np.diff(losses[10:]) < 0)
    assert np.all(state.v[0] >= 0)


# --- training loop --------------------------------------------------------------------

def test_zero_epochs_returns_q():
    q = DiagonalGaussian(np.array([0.4]), np.array([0.1]))
    res = train(q, GaussianPrior.standard(1), first_square, epochs=0)
    np.testing.assert_array_equal(res.q.flat(), q.flat())
    assert len(res.log) == 0


def test_training_deterministic_and_moves_towards_minimum():
    q = DiagonalGaussian(np.array([2.0, -1.0]), np.zeros(2))
    loss = lambda t, r, h=None: ((t - 0.5) * (t - 0.5)).sum()
    a = train(q, GaussianPrior.standard(2), loss, epochs=300, seed=3, lr=0.02)
    b = train(q, GaussianPrior.standard(2), loss, epochs=300, seed=3, lr=0.02)
    assert a.log.rows == b.log.rows
    assert np.all(np.abs(a.q.mean - 0.5) < 0.2)
    ma = a.log.column("objective_ma10")
    assert ma[-1] < ma[9]


def test_training_aborts_on_non_finite():
    bad = lambda t, r, h=None: ops.log(t[0] * 0.0)
    q = DiagonalGaussian(np.zeros(1), np.zeros(1))
    with pytest.raises((TrainingAborted, est.SimulatorFailure), match="epoch 0|sample 0"):
        train(q, GaussianPrior.standard(1), bad, epochs=2)
