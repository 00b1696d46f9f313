"""Controlled Markov processes, box geometry, and the two-room thermal benchmark.

A process is a pair (sampler, density) over R^n with a finite ordered action
set.  Safe and target regions are axis-aligned boxes (target nested in safe);
base points are drawn from a sampling distribution supported on safe-minus-
target whose density is known in closed form, which is what the scaling
factors downstream need.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import GeometryError, SamplingStallError


def _as_vector(x, dim: Optional[int] = None) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"expected a flat vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {v.shape[0]}")
    return v


@dataclass(frozen=True)
class BoxSet:
    """Closed axis-aligned hyperrectangle [lower, upper]."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _as_vector(self.lower)
        hi = _as_vector(self.upper, lo.shape[0])
        if not np.all(lo < hi):
            raise GeometryError(f"box needs lower < upper per axis, got {lo} vs {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Membership test, closed on all faces. x: (..., dim) -> bool (...)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"dimension mismatch: expected {self.dim}, got {x.shape[-1]}")
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)

    def encloses(self, other: "BoxSet") -> bool:
        return bool(np.all(self.lower <= other.lower) and np.all(other.upper <= self.upper))


def box_contains(box: BoxSet, x) -> bool:
    """True iff lower <= x <= upper coordinate-wise (closed box)."""
    return bool(box.contains(_as_vector(x, box.dim)))


@dataclass(frozen=True)
class ReachAvoidSpec:
    """Reach-avoid instance: stay in `safe`, enter `target`, within `horizon` steps."""

    safe: BoxSet
    target: BoxSet
    horizon: int
    initial_state: np.ndarray

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        x0 = _as_vector(self.initial_state, self.safe.dim)
        if not np.all(np.isfinite(x0)):
            raise ValueError("initial_state must be finite")
        if self.target.dim != self.safe.dim:
            raise GeometryError("safe and target sets have different dimensions")
        if not self.safe.encloses(self.target):
            raise GeometryError("target set must be contained in the safe set")
        object.__setattr__(self, "initial_state", x0)

    @property
    def dim(self) -> int:
        return self.safe.dim

    def in_target(self, x) -> np.ndarray:
        return self.target.contains(x)

    def in_safe(self, x) -> np.ndarray:
        return self.safe.contains(x)

    def successor_value(self, points: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Indicator algebra for one backward step.

        Returns 1 where points hit the target, `values` where they stay in
        safe-minus-target, 0 outside the safe set.  Target membership wins
        at shared boundaries (checked first).
        """
        hit = self.in_target(points)
        alive = self.in_safe(points) & ~hit
        return np.where(hit, 1.0, np.where(alive, values, 0.0))


@dataclass(frozen=True)
class SamplingDistribution:
    """Distribution for base points, supported exactly on safe minus target."""

    safe: BoxSet
    target: BoxSet
    density_fn: Callable[[np.ndarray], np.ndarray]
    sample_fn: Callable[[np.random.Generator, int], np.ndarray]
    fingerprint: tuple

    def density(self, x) -> np.ndarray:
        return self.density_fn(np.asarray(x, dtype=float))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.sample_fn(rng, int(size))

    @property
    def support_volume(self) -> float:
        return self.safe.volume - self.target.volume


def uniform_eta(safe: BoxSet, target: BoxSet, max_rejection_rounds: int = 1000) -> SamplingDistribution:
    """Uniform distribution over safe-minus-target for nested boxes.

    Sampling is by rejection from the safe box; the density is the constant
    1 / (vol(safe) - vol(target)) on the support and 0 elsewhere.
    """
    if not safe.encloses(target):
        raise GeometryError("uniform_eta expects the target nested inside the safe set")
    vol = safe.volume - target.volume
    if vol <= 0:
        raise GeometryError("degenerate geometry: safe set has no volume outside the target")
    inv_vol = 1.0 / vol
    span = safe.upper - safe.lower

    def density(x: np.ndarray) -> np.ndarray:
        inside = safe.contains(x) & ~target.contains(x)
        return np.where(inside, inv_vol, 0.0)

    def sample(rng: np.random.Generator, size: int) -> np.ndarray:
        out = np.empty((size, safe.dim))
        have = 0
        batch = max(size, 1024)
        for _ in range(max_rejection_rounds):
            if have >= size:
                break
            draw = safe.lower + rng.random((batch, safe.dim)) * span
            keep = draw[~target.contains(draw)]
            take = min(size - have, keep.shape[0])
            out[have:have + take] = keep[:take]
            have += take
        if have < size:
            raise SamplingStallError(
                f"rejection sampler stalled: {have}/{size} accepted after "
                f"{max_rejection_rounds} rounds")
        return out

    fp = ("uniform-box-difference",
          tuple(safe.lower.tolist()), tuple(safe.upper.tolist()),
          tuple(target.lower.tolist()), tuple(target.upper.tolist()))
    return SamplingDistribution(safe=safe, target=target, density_fn=density,
                                sample_fn=sample, fingerprint=fp)


@dataclass(frozen=True)
class LinearGaussianKernel:
    """Successor ~ Normal(dynamics @ x + offset[a], noise_std^2 * I).

    Structure hint used by the quadrature routines for a separable fast
    path; the generic sampler/density interface stays authoritative.
    """

    dynamics: np.ndarray        # (n, n)
    action_offsets: np.ndarray  # (n_actions, n)
    noise_std: float

    def mean(self, x: np.ndarray, action: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ self.dynamics.T + self.action_offsets[action]


@dataclass(frozen=True)
class MarkovProcess:
    """Controlled stochastic kernel over R^n with a finite ordered action set.

    kernel_sample(x, action, rng, size=None):
        x of shape (n,) with size=None -> one draw (n,);
        x of shape (n,) with size=k    -> (k, n) i.i.d. draws;
        x of shape (m, n)              -> one draw per row, (m, n).
    kernel_density(y, x, action):
        broadcasts y against x over leading axes; returns densities.
    """

    state_dim: int
    actions: tuple
    kernel_sample: Callable
    kernel_density: Callable
    gaussian: Optional[LinearGaussianKernel] = None

    def __post_init__(self):
        if len(self.actions) == 0:
            raise ValueError("action set must be nonempty")

    @property
    def n_actions(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class ThermalParams:
    """Two-room heating parameters (defaults are the benchmark values)."""

    x_a: float = 6.0
    b: tuple = (0.0375, 0.025)
    a_ex: float = 0.0625
    c: tuple = (0.65, 0.6)
    nu: float = 0.5

    def __post_init__(self):
        if min(self.b) < 0 or min(self.c) < 0 or self.a_ex < 0:
            raise ValueError("loss, heater, and exchange rates must be nonnegative")
        if self.nu <= 0:
            raise ValueError("noise std must be positive")


def thermal_matrices(params: ThermalParams):
    """Dynamics matrix, heater input matrix, and ambient offset vector."""
    b1, b2 = params.b
    c1, c2 = params.c
    a = params.a_ex
    dyn = np.array([[1.0 - b1 - a, a],
                    [a, 1.0 - b2 - a]])
    inp = np.diag([c1, c2])
    off = np.array([b1 * params.x_a, b2 * params.x_a])
    return dyn, inp, off


# Heater configurations in fixed lexicographic order so reports are stable.
THERMAL_ACTIONS = ((0, 0), (0, 1), (1, 0), (1, 1))


def thermal_process(params: ThermalParams = ThermalParams()) -> MarkovProcess:
    """Two-state, four-action benchmark process with a Gaussian kernel."""
    dyn, inp, off = thermal_matrices(params)
    offsets = np.array([inp @ np.asarray(a, dtype=float) + off for a in THERMAL_ACTIONS])
    nu = params.nu
    norm_const = 1.0 / (2.0 * np.pi * nu * nu)  # (2 pi nu^2)^(-n/2) for n = 2

    def kernel_sample(x, action, rng, size=None):
        x = np.asarray(x, dtype=float)
        mean = x @ dyn.T + offsets[action]
        if size is not None:
            if x.ndim != 1:
                raise ValueError("size is only meaningful for a single state")
            return mean + nu * rng.standard_normal((int(size), 2))
        return mean + nu * rng.standard_normal(mean.shape)

    def kernel_density(y, x, action):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        mean = x @ dyn.T + offsets[action]
        diff = y - mean
        quad = np.sum(diff * diff, axis=-1)
        return norm_const * np.exp(-0.5 * quad / (nu * nu))

    return MarkovProcess(
        state_dim=2,
        actions=THERMAL_ACTIONS,
        kernel_sample=kernel_sample,
        kernel_density=kernel_density,
        gaussian=LinearGaussianKernel(dynamics=dyn, action_offsets=offsets, noise_std=nu),
    )


def benchmark_spec(horizon: int = 10, initial_state=(19.0, 19.0)) -> ReachAvoidSpec:
    """The benchmark reach-avoid instance: A = [17.5, 22]^2, K = [19.25, 20.25]^2."""
    safe = BoxSet(np.array([17.5, 17.5]), np.array([22.0, 22.0]))
    target = BoxSet(np.array([19.25, 19.25]), np.array([20.25, 20.25]))
    return ReachAvoidSpec(safe=safe, target=target, horizon=horizon,
                          initial_state=np.asarray(initial_state, dtype=float))
