"""Sampled fitted value iteration for reach-avoid probabilities.

Each backward iteration draws fresh base points and successor batches, applies
the empirical backward operator at every base point, and fits the function
class to those targets.  The step-0 value is never fitted: it is a plain
Monte-Carlo estimate at the initial state.  Policy extraction labels base
points with the operator's argmax and generalizes by nearest neighbor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .func_approx import FittedFunction, RbfClassConfig, fit, zero_function
from .model import MarkovProcess, ReachAvoidSpec, SamplingDistribution
from .oracle import Policy, nearest_prototype_policy
from .rng import DOMAIN_FVI, DOMAIN_POLICY, StreamFamily

# stream tags inside one iteration
_BASE, _SUCC, _INIT = 0, 1, 2


@dataclass(frozen=True)
class FviConfig:
    """Sample budget and function class for one fitted-value-iteration run."""

    n_base: int            # base points per iteration
    m_succ: int            # successor draws per (base point, action)
    m_init: int            # successor draws per action at the initial state
    rbf: RbfClassConfig
    eta: SamplingDistribution
    seed: int
    p: int = 2             # norm order of the regression

    def __post_init__(self):
        if min(self.n_base, self.m_succ, self.m_init) < 1:
            raise ValueError("sample budgets must be at least 1")
        if self.p < 1:
            raise ValueError("norm order must be >= 1")


@dataclass(frozen=True)
class FviResult:
    """Fitted functions for k = 1 .. horizon-1 plus the initial-state estimate."""

    value_functions: tuple      # ascending k; empty when horizon == 1
    horizon: int
    seed: int
    r_hat: float
    w0_hat: Optional[float]
    initial_action: Optional[int]
    fit_residuals: tuple        # empirical p-norm residual per k, ascending

    def function(self, k: int) -> FittedFunction:
        """Fitted function for step k; the terminal step is identically zero."""
        if not 1 <= k <= self.horizon:
            raise ValueError(f"step {k} outside 1..{self.horizon}")
        if k == self.horizon:
            cfg = (self.value_functions[0].config if self.value_functions
                   else None)
            if cfg is None:
                raise ValueError("horizon-1 run keeps no function class")
            return zero_function(cfg)
        return self.value_functions[k - 1]


def generate_samples(process: MarkovProcess, spec: ReachAvoidSpec,
                     eta: SamplingDistribution, n_base: int, m_succ: int,
                     streams: StreamFamily):
    """One iteration's sample set: base points and per-action successor batches.

    Every (base point, action) pair owns its stream, so any parallel schedule
    over base points consumes identical randomness.
    """
    if n_base < 1 or m_succ < 1:
        raise ValueError("sample budgets must be at least 1")
    base = eta.sample(streams.stream(_BASE), n_base)
    succ = np.empty((n_base, process.n_actions, m_succ, process.state_dim))
    for i in range(n_base):
        for a in range(process.n_actions):
            succ[i, a] = process.kernel_sample(base[i], a,
                                               streams.stream(_SUCC, i, a),
                                               size=m_succ)
    return base, succ


def _operator_table(successors: np.ndarray, value_next: FittedFunction,
                    spec: ReachAvoidSpec) -> np.ndarray:
    """Per-action empirical operator values at each base point: (n_base, n_actions)."""
    n_base, n_actions, m_succ, dim = successors.shape
    flat = successors.reshape(-1, dim)
    vals = value_next.batch(flat)
    contrib = spec.successor_value(flat, vals).reshape(n_base, n_actions, m_succ)
    return contrib.mean(axis=2)


def empirical_operator(successors: np.ndarray, value_next: FittedFunction,
                       spec: ReachAvoidSpec) -> Tuple[float, int]:
    """Empirical backward operator at one base point.

    successors: (n_actions, m_succ, dim) kernel draws.  Returns the max over
    actions of the per-action Monte-Carlo means and the argmax index (ties
    resolve to the lowest index).
    """
    per_action = _operator_table(successors[None, ...], value_next, spec)[0]
    return float(per_action.max()), int(per_action.argmax())


def initial_state_estimate(process: MarkovProcess, spec: ReachAvoidSpec,
                           value_k1: FittedFunction, m_init: int, seed: int):
    """Monte-Carlo estimate of the step-0 value at the spec's initial state.

    Uses the same stream family a full run with this seed would use, so
    estimates at several initial states can share one fitted stack.
    """
    family = StreamFamily(seed, DOMAIN_FVI, 0)
    x0 = spec.initial_state
    succ = np.empty((process.n_actions, m_init, process.state_dim))
    for a in range(process.n_actions):
        succ[a] = process.kernel_sample(x0, a, family.stream(_INIT, a), size=m_init)
    return empirical_operator(succ, value_k1, spec)


def run_fvi(process: MarkovProcess, spec: ReachAvoidSpec, config: FviConfig) -> FviResult:
    """Full fitted-value-iteration run for the spec's reach-avoid instance.

    Initial states already inside the target (probability 1) or outside the
    safe set (probability 0) short-circuit without drawing any samples.
    """
    x0 = spec.initial_state
    if bool(spec.in_target(x0)):
        return FviResult((), spec.horizon, config.seed, 1.0, None, None, ())
    if not bool(spec.in_safe(x0)):
        return FviResult((), spec.horizon, config.seed, 0.0, None, None, ())

    family = StreamFamily(config.seed, DOMAIN_FVI)
    value_next = zero_function(config.rbf)
    functions: dict[int, FittedFunction] = {}
    residuals: dict[int, float] = {}
    for k in range(spec.horizon - 1, 0, -1):
        base, succ = generate_samples(process, spec, config.eta,
                                      config.n_base, config.m_succ, family.child(k))
        targets = _operator_table(succ, value_next, spec).max(axis=1)
        fitted = fit(config.rbf, base, targets, p=config.p)
        residual = float(np.mean(np.abs(fitted.batch(base) - targets) ** config.p)
                         ** (1.0 / config.p))
        functions[k] = fitted
        residuals[k] = residual
        value_next = fitted

    w0_hat, action = initial_state_estimate(process, spec, value_next,
                                            config.m_init, config.seed)
    ks = sorted(functions)
    return FviResult(
        value_functions=tuple(functions[k] for k in ks),
        horizon=spec.horizon,
        seed=config.seed,
        r_hat=float(w0_hat),
        w0_hat=float(w0_hat),
        initial_action=action,
        fit_residuals=tuple(residuals[k] for k in ks),
    )


def extract_policy(process: MarkovProcess, spec: ReachAvoidSpec,
                   result: FviResult, config: FviConfig) -> Policy:
    """Near-optimal policy from a fitted stack.

    For each step, fresh base points are labeled with the empirical operator's
    argmax against the next fitted function, then generalized by 1-nearest-
    neighbor classification.  States where the process has terminated (inside
    the target or outside the safe set) get the fixed filler action 0.
    """
    family = StreamFamily(config.seed, DOMAIN_POLICY)
    points, labels = [], []
    for k in range(spec.horizon):
        value_next = (zero_function(config.rbf) if k + 1 == spec.horizon
                      else result.function(k + 1))
        base, succ = generate_samples(process, spec, config.eta,
                                      config.n_base, config.m_succ, family.child(k))
        per_action = _operator_table(succ, value_next, spec)
        points.append(base)
        labels.append(per_action.argmax(axis=1))
    return nearest_prototype_policy(points, labels, process.n_actions, spec)
