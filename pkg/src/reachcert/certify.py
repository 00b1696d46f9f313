"""Sample-based a-posteriori certificates.

A fresh holdout set (base points plus twin successor batches per state-action
pair) estimates the per-iteration regression error and the Monte-Carlo bias of
the empirical operator.  Propagating those estimates through the horizon with
the concentrability factors yields an accuracy/confidence pair for the final
answer, plus the per-iteration accuracy profile.  The holdout must never share
a seed with the run it certifies; that is enforced, not assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EtaMismatchError, SeedOverlapError
from .func_approx import FittedFunction, batch_values
from .fvi import FviResult
from .model import MarkovProcess, ReachAvoidSpec, SamplingDistribution
from .rng import DOMAIN_CERTIFY, StreamFamily

_BASE, _SUCC = 0, 1


@dataclass(frozen=True)
class HoldoutSet:
    """Fresh evaluation samples: base points and twin successor batches.

    Successor batches are regenerated on demand from per-(point, action,
    batch) streams instead of being stored; at the benchmark sizes the full
    array would not fit in memory, and the streams make regeneration exact.
    """

    base_points: np.ndarray
    n_base: int
    m_succ: int
    seed: int
    eta_fingerprint: tuple
    process: MarkovProcess

    def successor_batch(self, i: int, action: int, batch: int) -> np.ndarray:
        """The (m_succ, dim) twin batch for base point i; batch is 0 or 1."""
        if batch not in (0, 1):
            raise ValueError("batch index must be 0 or 1")
        stream = StreamFamily(self.seed, DOMAIN_CERTIFY).stream(_SUCC, i, action, batch)
        return self.process.kernel_sample(self.base_points[i], action, stream,
                                          size=self.m_succ)

    def successor_chunk(self, i_lo: int, i_hi: int) -> np.ndarray:
        """(i_hi-i_lo, n_actions, 2, m_succ, dim) block of twin batches."""
        n_actions = self.process.n_actions
        out = np.empty((i_hi - i_lo, n_actions, 2, self.m_succ,
                        self.process.state_dim))
        for i in range(i_lo, i_hi):
            for a in range(n_actions):
                for alpha in (0, 1):
                    out[i - i_lo, a, alpha] = self.successor_batch(i, a, alpha)
        return out


def draw_holdout(process: MarkovProcess, spec: ReachAvoidSpec,
                 eta: SamplingDistribution, n_base: int, m_succ: int,
                 seed: int) -> HoldoutSet:
    """Draw the holdout base points; successor streams are fixed by the seed."""
    if n_base < 1 or m_succ < 1:
        raise ValueError("holdout sizes must be at least 1")
    family = StreamFamily(seed, DOMAIN_CERTIFY)
    base = eta.sample(family.stream(_BASE), n_base)
    return HoldoutSet(base_points=base, n_base=int(n_base), m_succ=int(m_succ),
                      seed=int(seed), eta_fingerprint=eta.fingerprint,
                      process=process)


def _estimator_table(holdout: HoldoutSet, functions: dict, spec: ReachAvoidSpec,
                     chunk: int = 1, n_workers: int = 1) -> np.ndarray:
    """Empirical operator means for every (point, action, batch, step).

    functions maps step index k+1 to the fitted function it evaluates.
    Output axis order is (base point, action, batch, sorted step keys).
    Chunks are independent (disjoint writes, per-pair streams), so worker
    threads change nothing but wall time.
    """
    ks = sorted(functions)
    config = functions[ks[0]].config
    weight_stack = np.asarray([functions[k].weights for k in ks])

    n_actions = holdout.process.n_actions
    table = np.empty((holdout.n_base, n_actions, 2, len(ks)))

    def work(lo: int):
        hi = min(lo + chunk, holdout.n_base)
        block = holdout.successor_chunk(lo, hi)
        flat = block.reshape(-1, block.shape[-1])
        hit = spec.in_target(flat)
        alive = spec.in_safe(flat) & ~hit
        values = batch_values(config, weight_stack, flat)      # (pts, n_ks)
        values *= alive[:, None]
        values[hit] = 1.0
        contrib = values.reshape(hi - lo, n_actions, 2, holdout.m_succ, len(ks))
        table[lo:hi] = contrib.mean(axis=3)

    starts = range(0, holdout.n_base, chunk)
    if n_workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(work, starts))
    else:
        for lo in starts:
            work(lo)
    return table


def estimate_single_step(holdout: HoldoutSet, value_k: FittedFunction,
                         value_k_plus_1: Optional[FittedFunction],
                         spec: ReachAvoidSpec) -> float:
    """Mean absolute gap between the fitted step-k function and the empirical
    operator applied to the next function, over the holdout base points.

    Uses only the first twin batch.  A None next function means the zero
    terminal function.
    """
    if value_k_plus_1 is None:
        value_k_plus_1 = _zero_like(value_k)
    table = _estimator_table(holdout, {0: value_k_plus_1}, spec)
    op = table[:, :, 0, 0].max(axis=1)
    return float(np.mean(np.abs(value_k.batch(holdout.base_points) - op)))


def _zero_like(f: FittedFunction) -> FittedFunction:
    return FittedFunction(f.config, np.zeros(f.config.n_basis))


def estimate_bias(holdout: HoldoutSet, value_k_plus_1: FittedFunction,
                  spec: ReachAvoidSpec) -> float:
    """Twin-batch estimate of the maximization bias of the empirical operator:
    the absolute twin difference, maxed over actions, averaged over points."""
    table = _estimator_table(holdout, {0: value_k_plus_1}, spec)
    diff = np.abs(table[:, :, 0, 0] - table[:, :, 1, 0]).max(axis=1)
    return float(diff.mean())


@dataclass(frozen=True)
class PerIterationEstimates:
    """Eq.-(14)/(16)-style estimates for every step, plus provenance."""

    single_step: np.ndarray     # index k-1 holds the step-k estimate
    bias: np.ndarray
    horizon: int
    n_base: int
    m_succ: int
    n_actions: int
    holdout_seed: int
    stack_seed: int
    eta_fingerprint: tuple

    @property
    def steps(self) -> np.ndarray:
        return np.arange(1, self.horizon)


def estimate_errors(holdout: HoldoutSet, result: FviResult,
                    spec: ReachAvoidSpec, n_workers: int = 1) -> PerIterationEstimates:
    """Single-step and bias estimates for all steps in one pass over the holdout.

    Evaluating every fitted function against each successor chunk shares the
    expensive design-matrix work across steps; results equal the per-step
    estimators exactly up to float reduction order.
    """
    if holdout.seed == result.seed:
        raise SeedOverlapError(
            "holdout shares its seed with the run under certification; "
            "draw it from a fresh seed")
    horizon = result.horizon
    functions = {k: (None if k == horizon else result.function(k))
                 for k in range(2, horizon + 1)}
    if functions:
        example = result.function(1)
        functions = {k: (_zero_like(example) if f is None else f)
                     for k, f in functions.items()}
    table = _estimator_table(holdout, functions, spec, n_workers=n_workers)
    ks = sorted(functions)
    single = np.empty(horizon - 1)
    bias = np.empty(horizon - 1)
    base = holdout.base_points
    for j, k_next in enumerate(ks):
        k = k_next - 1
        op1 = table[:, :, 0, j].max(axis=1)
        single[k - 1] = np.mean(np.abs(result.function(k).batch(base) - op1))
        bias[k - 1] = np.mean(np.abs(table[:, :, 0, j] - table[:, :, 1, j]).max(axis=1))
    return PerIterationEstimates(
        single_step=single, bias=bias, horizon=horizon,
        n_base=holdout.n_base, m_succ=holdout.m_succ,
        n_actions=holdout.process.n_actions,
        holdout_seed=holdout.seed, stack_seed=result.seed,
        eta_fingerprint=holdout.eta_fingerprint)


def initial_error_budget(m_init: int, n_actions: int, eps0: Optional[float] = None,
                         delta0: Optional[float] = None):
    """Initial-state estimation error at confidence, one of (eps0, delta0) given.

    Single-state Hoeffding over the action set: delta0 = 1 - (1 - 2
    exp(-2 M0 eps0^2))^{|A|}; inverted for eps0 when delta0 is the input.
    """
    if (eps0 is None) == (delta0 is None):
        raise ValueError("provide exactly one of eps0, delta0")
    if eps0 is not None:
        q = 2.0 * math.exp(-2.0 * m_init * eps0 * eps0)
        if q > 1.0:
            raise ValueError("eps0 too small for this m_init: single-event bound vacuous")
        return eps0, -math.expm1(n_actions * math.log1p(-q))
    if not 0 < delta0 < 1:
        raise ValueError("delta0 must lie in (0, 1)")
    q = -math.expm1(math.log1p(-delta0) / n_actions)
    return math.sqrt(math.log(2.0 / q) / (2.0 * m_init)), delta0


@dataclass(frozen=True)
class SampleCertificate:
    """Accuracy/confidence pair from holdout estimates, plus the per-step profile."""

    per_k_single_step: np.ndarray
    per_k_bias: np.ndarray
    per_k_accuracy: np.ndarray   # propagated accuracy of step k, same confidence
    Delta: float
    delta_Delta: float
    L: float
    B: float
    B0: float
    eps: float
    eps0: float
    delta0: float
    n_base: int
    valid: bool                  # delta_Delta inside (0, 1)
    vacuous: bool                # Delta >= 1 carries no information

    @property
    def steps(self) -> np.ndarray:
        return np.arange(1, self.per_k_single_step.shape[0] + 1)


def sample_certificate(estimates: PerIterationEstimates, B, B0,
                       eps: Optional[float] = None,
                       eps0: Optional[float] = None,
                       delta0: Optional[float] = None,
                       n_tilde: Optional[int] = None,
                       m_init: Optional[int] = None) -> SampleCertificate:
    """Assemble the sample-based certificate from per-step estimates.

    Delta = B0 * sum_k B^(k-1) (single_step_k + bias_k) + B0*eps + eps0 and
    delta_Delta = exp(-2 n_tilde eps^2 / L^2) - delta0 with L = 2 sum B^(k-1),
    exactly as printed (the subtraction is reproduced verbatim; a value
    outside (0,1) flags the certificate invalid rather than being clamped).
    Defaults: eps makes the concentration term 0.1; delta0 = 0.05 inverted
    through the single-state bound to get eps0 (m_init required for that).
    """
    B = _check_eta_and_float(B, estimates, "B")
    B0 = _check_eta_and_float(B0, estimates, "B0")
    horizon = estimates.horizon
    n_tilde = estimates.n_base if n_tilde is None else int(n_tilde)
    if n_tilde != estimates.n_base:
        raise ValueError("n_tilde disagrees with the holdout the estimates came from")

    powers = B ** np.arange(horizon - 1)            # B^(k-1), k = 1..horizon-1
    L = 2.0 * float(powers.sum())
    if eps is None:
        eps = L * math.sqrt(math.log(10.0) / (2.0 * n_tilde))
    conf = math.exp(-2.0 * n_tilde * eps * eps / (L * L))

    if delta0 is None and eps0 is None:
        delta0 = 0.05
    if eps0 is None:
        if m_init is None:
            raise ValueError("need m_init to derive eps0 from delta0")
        eps0, delta0 = initial_error_budget(m_init, estimates.n_actions, delta0=delta0)
    elif delta0 is None:
        if m_init is None:
            raise ValueError("need m_init to derive delta0 from eps0")
        eps0, delta0 = initial_error_budget(m_init, estimates.n_actions, eps0=eps0)

    per_step = estimates.single_step + estimates.bias
    Delta = float(B0 * (powers * per_step).sum() + B0 * eps + eps0)
    delta_Delta = conf - delta0

    # per-step propagated accuracy at the same confidence level: estimate
    # E_k = sum_{j>=k} B^(j-k) (e_j + b_j) plus its own concentration slack
    n_steps = horizon - 1
    accuracy = np.empty(n_steps)
    running = 0.0
    for k in range(n_steps, 0, -1):
        running = per_step[k - 1] + B * running if k < n_steps else per_step[k - 1]
        l_k = 2.0 * float((B ** np.arange(horizon - k)).sum())
        eps_k = l_k * math.sqrt(math.log(1.0 / conf) / (2.0 * n_tilde))
        accuracy[k - 1] = running + eps_k
    return SampleCertificate(
        per_k_single_step=estimates.single_step.copy(),
        per_k_bias=estimates.bias.copy(),
        per_k_accuracy=accuracy,
        Delta=Delta, delta_Delta=float(delta_Delta), L=L, B=B, B0=B0,
        eps=float(eps), eps0=float(eps0), delta0=float(delta0),
        n_base=n_tilde,
        valid=bool(0.0 < delta_Delta < 1.0),
        vacuous=bool(Delta >= 1.0))


def _check_eta_and_float(value, estimates: PerIterationEstimates, name: str) -> float:
    fp = getattr(value, "eta_fingerprint", None)
    if fp is not None and fp != estimates.eta_fingerprint:
        raise EtaMismatchError(
            f"{name} was computed under a different sampling distribution "
            "than the holdout estimates")
    return float(value)


@dataclass(frozen=True)
class PolicyPerformanceBound:
    """Triangle-inequality bound on the gap between optimal and policy values."""

    bound: float                 # capped at 1
    raw: float
    vacuous: bool
    value_lower_bound: float     # optimal value is at least the policy's

    def __float__(self):
        return self.bound


def policy_performance_bound(cert: SampleCertificate, r_hat: float,
                             mc_estimate: float, mc_half_width: float) -> PolicyPerformanceBound:
    """|optimal - policy| <= certificate accuracy + |estimate - trace mean| +
    trace confidence half-width; probabilities cap the bound at 1."""
    raw = cert.Delta + abs(r_hat - mc_estimate) + mc_half_width
    return PolicyPerformanceBound(
        bound=float(min(raw, 1.0)), raw=float(raw), vacuous=bool(raw > 1.0),
        value_lower_bound=float(max(0.0, mc_estimate - mc_half_width)))
