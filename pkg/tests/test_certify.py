import math

import numpy as np
import pytest

from reachcert.certify import (HoldoutSet, PerIterationEstimates, draw_holdout,
                               estimate_bias, estimate_errors, estimate_single_step,
                               initial_error_budget, policy_performance_bound,
                               sample_certificate)
from reachcert.bounds import QuadratureEstimate
from reachcert.errors import EtaMismatchError, SeedOverlapError
from reachcert.func_approx import FittedFunction, zero_function
from reachcert.model import BoxSet, ReachAvoidSpec, benchmark_spec, thermal_process, uniform_eta
from reachcert.rng import substream


def test_draw_holdout_shapes_and_support(process, spec10, eta):
    holdout = draw_holdout(process, spec10, eta, 40, 25, seed=101)
    assert holdout.base_points.shape == (40, 2)
    assert np.all(spec10.in_safe(holdout.base_points))
    assert not np.any(spec10.in_target(holdout.base_points))
    batch = holdout.successor_batch(3, 2, 0)
    assert batch.shape == (25, 2)
    # twin batches at the same pair differ almost surely, regeneration is exact
    assert not np.array_equal(batch, holdout.successor_batch(3, 2, 1))
    assert np.array_equal(batch, holdout.successor_batch(3, 2, 0))


def test_single_step_estimate_zero_case(process, rbf50):
    # zero functions and successors that never reach the target: exactly 0
    spec = ReachAvoidSpec(safe=BoxSet(np.array([0.0, 0.0]), np.array([200.0, 200.0])),
                          target=BoxSet(np.array([150.0, 150.0]), np.array([151.0, 151.0])),
                          horizon=3, initial_state=np.array([19.0, 19.0]))
    eta = uniform_eta(spec.safe, spec.target)
    holdout = draw_holdout(process, spec, eta, 30, 20, seed=5)
    zero = zero_function(rbf50)
    assert estimate_single_step(holdout, zero, zero, spec) == 0.0
    assert estimate_single_step(holdout, zero, None, spec) == 0.0


def test_estimates_in_unit_interval(process, spec10, eta, rbf50):
    rng = substream(31, 0)
    f = FittedFunction(rbf50, rng.uniform(0, 0.5, 50))
    g = FittedFunction(rbf50, rng.uniform(0, 0.5, 50))
    holdout = draw_holdout(process, spec10, eta, 50, 40, seed=7)
    assert 0.0 <= estimate_single_step(holdout, f, g, spec10) <= 1.0
    assert 0.0 <= estimate_bias(holdout, g, spec10) <= 1.0


def test_bias_shrinks_with_batch_size(process, spec10, eta, rbf50):
    rng = substream(31, 1)
    g = FittedFunction(rbf50, rng.uniform(0, 0.5, 50))
    small = estimate_bias(draw_holdout(process, spec10, eta, 60, 30, seed=9), g, spec10)
    large = estimate_bias(draw_holdout(process, spec10, eta, 60, 3000, seed=9), g, spec10)
    assert large < small


def test_identical_twin_batches_give_zero_bias(process, spec10, eta, rbf50, monkeypatch):
    rng = substream(31, 2)
    g = FittedFunction(rbf50, rng.uniform(0, 0.5, 50))
    holdout = draw_holdout(process, spec10, eta, 20, 25, seed=13)
    original = HoldoutSet.successor_batch
    monkeypatch.setattr(HoldoutSet, "successor_batch",
                        lambda self, i, a, batch: original(self, i, a, 0))
    assert estimate_bias(holdout, g, spec10) == 0.0


def test_estimate_errors_matches_per_step_ops(process, spec4, small_run):
    cfg, result = small_run
    holdout = draw_holdout(process, spec4, cfg.eta, 25, 30, seed=99)
    bundle = estimate_errors(holdout, result, spec4)
    assert bundle.steps.tolist() == [1, 2, 3]
    for k in (1, 2, 3):
        next_fn = result.function(k + 1) if k + 1 < spec4.horizon else None
        single = estimate_single_step(holdout, result.function(k), next_fn, spec4)
        bias = estimate_bias(holdout, next_fn if next_fn is not None
                             else zero_function(cfg.rbf), spec4)
        assert bundle.single_step[k - 1] == pytest.approx(single, abs=1e-9)
        assert bundle.bias[k - 1] == pytest.approx(bias, abs=1e-9)


def test_estimate_errors_worker_invariance(process, spec4, small_run):
    cfg, result = small_run
    holdout = draw_holdout(process, spec4, cfg.eta, 30, 40, seed=55)
    one = estimate_errors(holdout, result, spec4, n_workers=1)
    two = estimate_errors(holdout, result, spec4, n_workers=2)
    assert np.array_equal(one.single_step, two.single_step)
    assert np.array_equal(one.bias, two.bias)


def test_seed_overlap_is_refused(process, spec4, small_run):
    cfg, result = small_run
    holdout = draw_holdout(process, spec4, cfg.eta, 10, 10, seed=result.seed)
    with pytest.raises(SeedOverlapError):
        estimate_errors(holdout, result, spec4)


def test_eta_mismatch_is_refused(process, spec4, small_run):
    cfg, result = small_run
    holdout = draw_holdout(process, spec4, cfg.eta, 10, 10, seed=321)
    bundle = estimate_errors(holdout, result, spec4)
    wrong = QuadratureEstimate(value=2.0, refinement_delta=0.0, resolution=10,
                               eta_fingerprint=("something", "else"))
    with pytest.raises(EtaMismatchError):
        sample_certificate(bundle, wrong, 1.0, m_init=100)


def _bundle(single, bias, horizon, n_base=400, m_succ=100, n_actions=4):
    return PerIterationEstimates(
        single_step=np.asarray(single, dtype=float),
        bias=np.asarray(bias, dtype=float), horizon=horizon,
        n_base=n_base, m_succ=m_succ, n_actions=n_actions,
        holdout_seed=2, stack_seed=1, eta_fingerprint=("t",))


def test_certificate_single_term_assembly():
    bundle = _bundle([0.004], [0.003], horizon=2)
    cert = sample_certificate(bundle, B=123.0, B0=1.0, eps=0.01, eps0=0.02, delta0=0.05)
    # one step: B never enters the sum, L = 2
    assert cert.L == 2.0
    assert cert.Delta == pytest.approx(0.004 + 0.003 + 0.01 + 0.02)
    assert cert.delta_Delta == pytest.approx(math.exp(-2 * 400 * 0.01 ** 2 / 4.0) - 0.05)


def test_certificate_L_identity():
    B, horizon = 3.07, 10
    bundle = _bundle([0.004] * 9, [0.003] * 9, horizon)
    cert = sample_certificate(bundle, B=B, B0=1.0, eps=0.01, eps0=0.0, delta0=0.05)
    closed_form = 2.0 * (B ** (horizon - 1) - 1.0) / (B - 1.0)
    assert cert.L == pytest.approx(closed_form, rel=1e-12)


def test_certificate_default_concentration_knob():
    bundle = _bundle([0.004] * 3, [0.003] * 3, horizon=4)
    cert = sample_certificate(bundle, B=2.0, B0=1.0, eps0=0.01, delta0=0.05)
    # default eps makes the concentration term exactly 0.1
    assert math.exp(-2 * bundle.n_base * cert.eps ** 2 / cert.L ** 2) == pytest.approx(0.1)
    assert cert.delta_Delta == pytest.approx(0.05)
    assert cert.valid


def test_certificate_invalid_when_confidence_nonpositive():
    bundle = _bundle([0.004] * 3, [0.003] * 3, horizon=4)
    cert = sample_certificate(bundle, B=2.0, B0=1.0, eps0=0.01, delta0=0.2)
    assert cert.delta_Delta < 0 and not cert.valid


def test_certificate_monotone_in_inputs():
    base = sample_certificate(_bundle([0.004] * 5, [0.003] * 5, 6),
                              B=2.0, B0=3.0, eps=0.01, eps0=0.01, delta0=0.05)
    worse = sample_certificate(_bundle([0.005] * 5, [0.003] * 5, 6),
                               B=2.0, B0=3.0, eps=0.01, eps0=0.01, delta0=0.05)
    assert worse.Delta >= base.Delta
    assert sample_certificate(_bundle([0.004] * 5, [0.003] * 5, 6),
                              B=2.5, B0=3.0, eps=0.01, eps0=0.01,
                              delta0=0.05).Delta >= base.Delta
    assert sample_certificate(_bundle([0.004] * 5, [0.003] * 5, 6),
                              B=2.0, B0=4.0, eps=0.01, eps0=0.01,
                              delta0=0.05).Delta >= base.Delta


def test_per_step_accuracy_recursion():
    bundle = _bundle([0.01, 0.02, 0.03], [0.0, 0.0, 0.0], horizon=4)
    B = 2.0
    cert = sample_certificate(bundle, B=B, B0=1.0, eps=0.01, eps0=0.0, delta0=0.05)
    conf = math.exp(-2 * 400 * 0.01 ** 2 / cert.L ** 2)
    slack = math.sqrt(math.log(1 / conf) / (2 * 400))
    expect_3 = 0.03 + 2.0 * slack
    expect_2 = 0.02 + B * 0.03 + 2.0 * (1 + B) * slack
    expect_1 = 0.01 + B * (0.02 + B * 0.03) + 2.0 * (1 + B + B * B) * slack
    assert cert.per_k_accuracy == pytest.approx([expect_1, expect_2, expect_3])


def test_initial_error_budget_round_trip():
    eps0, delta0 = initial_error_budget(1000, 4, eps0=0.05)
    eps_back, delta_back = initial_error_budget(1000, 4, delta0=delta0)
    assert eps_back == pytest.approx(eps0, rel=1e-10)
    assert delta_back == pytest.approx(delta0, rel=1e-12)
    with pytest.raises(ValueError):
        initial_error_budget(1000, 4)
    with pytest.raises(ValueError):
        initial_error_budget(1000, 4, eps0=0.05, delta0=0.05)


def test_policy_performance_bound_composition():
    bundle = _bundle([0.004], [0.003], horizon=2)
    cert = sample_certificate(bundle, B=1.0, B0=1.0, eps=0.01, eps0=0.02, delta0=0.05)
    bound = policy_performance_bound(cert, r_hat=0.5, mc_estimate=0.5, mc_half_width=0.01)
    assert bound.bound == pytest.approx(cert.Delta + 0.01)
    assert not bound.vacuous
    assert bound.value_lower_bound == pytest.approx(0.49)
    big = sample_certificate(_bundle([0.1] * 9, [0.1] * 9, 10), B=3.0, B0=12.0,
                             eps=0.5, eps0=0.02, delta0=0.05)
    capped = policy_performance_bound(big, 0.9, 0.8, 0.01)
    assert capped.bound == 1.0 and capped.vacuous


def test_estimator_stability_across_holdout_seeds(process, spec4, small_run):
    # repeated holdouts scatter tightly around the same per-step estimates
    cfg, result = small_run
    singles = []
    for seed in range(200, 212):
        holdout = draw_holdout(process, spec4, cfg.eta, 300, 800, seed=seed)
        bundle = estimate_errors(holdout, result, spec4)
        singles.append(bundle.single_step)
    singles = np.asarray(singles)
    mean = singles.mean(axis=0)
    std = singles.std(axis=0, ddof=1)
    assert np.all(std <= 0.25 * mean)
