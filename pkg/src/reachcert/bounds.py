"""A-priori, distribution-free certificate machinery.

Hoeffding and pseudo-dimension deviation bounds for a single backward step,
their propagation over the horizon through the concentrability factors, the
confidence decomposition, and the sample-size planner.  All formula work is
done in log space: the capacity term blows up any naive evaluation already
at moderate dictionary sizes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import VacuousBoundError
from .model import MarkovProcess, ReachAvoidSpec, SamplingDistribution
from .oracle import Grid


@dataclass(frozen=True)
class BoundBudget:
    """Per-step error/confidence split plus the quantities the formulas need."""

    eps0: float
    eps1: float
    eps2: float
    delta0: float
    delta1: float
    delta2: float
    p: int
    d: int
    n_actions: int
    horizon: int

    def __post_init__(self):
        for name in ("eps0", "eps1", "eps2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("delta0", "delta1", "delta2"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.p < 1 or self.d < 1 or self.n_actions < 1 or self.horizon < 1:
            raise ValueError("p, d, n_actions, horizon must be at least 1")

    @property
    def total_confidence_loss(self) -> float:
        return self.delta0 + (self.horizon - 1) * (self.delta1 + self.delta2)


@dataclass(frozen=True)
class ScalingFactors:
    """Concentrability constants tying the kernel to the sampling distribution."""

    B: float
    B0: float
    method: str                       # "numeric" or "analytic"
    eta_fingerprint: Optional[tuple] = None

    def __post_init__(self):
        if self.B < 0 or self.B0 < 0:
            raise ValueError("scaling factors are nonnegative")


@dataclass(frozen=True)
class QuadratureEstimate:
    """Grid estimate of a sup/integral plus a half-resolution consistency delta."""

    value: float
    refinement_delta: float
    resolution: int
    eta_fingerprint: Optional[tuple] = None

    def __float__(self):
        return self.value


def hoeffding_delta(m_succ: int, eps1: float, n_actions: int, n_base: int) -> float:
    """Failure probability of the per-step Monte-Carlo estimates.

    1 - (1 - 2 exp(-2 M eps1^2))^(|A| N), computed via log1p/expm1 so tiny
    per-event probabilities survive the huge exponent.
    """
    if m_succ < 1 or n_base < 1 or n_actions < 1:
        raise ValueError("sample counts must be at least 1")
    if eps1 <= 0:
        raise ValueError("eps1 must be positive")
    log_q = math.log(2.0) - 2.0 * m_succ * eps1 * eps1
    if log_q > 0:
        raise VacuousBoundError(
            f"bound vacuous: 2 exp(-2 M eps1^2) = {math.exp(log_q):.3g} > 1 "
            f"(need M eps1^2 >= ln(2)/2)")
    q = math.exp(log_q)
    if q == 1.0:
        return 1.0
    return -math.expm1(n_actions * n_base * math.log1p(-q))


def pollard_delta(n_base: int, eps2: float, p: int, d: int) -> float:
    """Uniform-convergence failure probability for the empirical p-norm.

    4 e (d+1) (32 e / eps2^p)^d exp(-N eps2^(2p) / 128), capped at 1; the
    capacity factor overflows naive arithmetic already for d around 50.
    """
    if not 0 < eps2 <= 1:
        raise ValueError("eps2 must lie in (0, 1]")
    if d < 1 or n_base < 1 or p < 1:
        raise ValueError("d, N, p must be at least 1")
    log_val = (math.log(4.0) + 1.0 + math.log(d + 1.0)
               + d * (math.log(32.0) + 1.0 - p * math.log(eps2))
               - n_base * eps2 ** (2 * p) / 128.0)
    return math.exp(min(log_val, 0.0))


@dataclass(frozen=True)
class SingleStepBound:
    """Theorem-level one-step error: eps = 2 eps1 + 2 eps2 at confidence loss
    delta1 + delta2, on top of an unquantified nonnegative approximation bias."""

    eps: float
    confidence_loss: float
    bias_symbolic: bool = True


def single_step_bound(budget: BoundBudget) -> SingleStepBound:
    """Error and confidence loss of one fitted backward step.

    The inherent approximation bias of the function class is carried
    symbolically (reported, never silently set to zero).
    """
    return SingleStepBound(eps=2.0 * budget.eps1 + 2.0 * budget.eps2,
                           confidence_loss=budget.delta1 + budget.delta2)


def _eta_from(obj) -> Optional[tuple]:
    return getattr(obj, "eta_fingerprint", None)


def _masked_grid(spec: ReachAvoidSpec, resolution: int):
    grid = Grid.regular(spec.safe, resolution)
    centers = grid.centers
    outside_target = ~spec.in_target(centers)
    return grid, centers, outside_target


def _b_value(process: MarkovProcess, spec: ReachAvoidSpec, eta: SamplingDistribution,
             resolution: int) -> float:
    grid, centers, keep = _masked_grid(spec, resolution)
    eta_x = eta.density(centers)           # zero outside the support by construction
    weights = eta_x * grid.cell_volume
    y_pts = centers[keep]
    eta_y = eta.density(y_pts)
    if np.any(eta_y <= 0):
        raise ValueError("eta density vanished on its own support")
    if process.gaussian is not None and grid.dim == 2:
        integral = _b_integral_gaussian(process, grid, centers, weights, keep)
    else:
        integral = _b_integral_generic(process, centers, weights, y_pts)
    if not np.all(np.isfinite(integral)):
        raise ValueError("non-finite density values in scaling-factor quadrature")
    return float((integral / eta_y).max())


def _b_integral_gaussian(process, grid, centers, weights, keep):
    """sum_x max_a t(y | x, a) eta(x) dx for every kept grid point y."""
    g = process.gaussian
    ax1, ax2 = grid.axes
    n1, n2 = grid.shape
    nu2 = g.noise_std ** 2
    norm1d = 1.0 / math.sqrt(2.0 * math.pi * nu2)
    # per-axis factors: value of the 1-D Gaussian at each y-axis coordinate,
    # for the mean induced by every x cell
    f1 = np.empty((process.n_actions, n1, centers.shape[0]))
    f2 = np.empty((process.n_actions, n2, centers.shape[0]))
    for a in range(process.n_actions):
        mean = centers @ g.dynamics.T + g.action_offsets[a]
        f1[a] = norm1d * np.exp(-0.5 * (ax1[:, None] - mean[None, :, 0]) ** 2 / nu2)
        f2[a] = norm1d * np.exp(-0.5 * (ax2[:, None] - mean[None, :, 1]) ** 2 / nu2)
    keep2d = keep.reshape(n1, n2)
    out = np.zeros((n1, n2))
    for i1 in range(n1):
        cols = np.flatnonzero(keep2d[i1])
        if cols.size == 0:
            continue
        dens = f1[:, i1, None, :] * f2[:, cols, :]      # (A, kept2, cells)
        out[i1, cols] = np.max(dens, axis=0) @ weights
    return out.ravel()[keep]


def _b_integral_generic(process, centers, weights, y_pts, chunk=128):
    out = np.empty(y_pts.shape[0])
    for lo in range(0, y_pts.shape[0], chunk):
        hi = min(lo + chunk, y_pts.shape[0])
        dens = np.stack([
            process.kernel_density(y_pts[lo:hi, None, :], centers[None, :, :], a)
            for a in range(process.n_actions)])
        out[lo:hi] = np.max(dens, axis=0) @ weights
    return out


def scaling_B_numeric(process: MarkovProcess, spec: ReachAvoidSpec,
                      eta: SamplingDistribution, grid_resolution: int = 100) -> QuadratureEstimate:
    """Concentrability factor B: the worst-case one-step density concentration.

    Outer sup over a grid of successor states; inner integral by the midpoint
    rule, both over safe-minus-target.  A half-resolution re-evaluation is
    reported as a consistency delta.
    """
    value = _b_value(process, spec, eta, grid_resolution)
    half = _b_value(process, spec, eta, max(2, grid_resolution // 2))
    return QuadratureEstimate(value=value, refinement_delta=abs(value - half),
                              resolution=int(grid_resolution),
                              eta_fingerprint=_eta_from(eta))


def scaling_B_analytic_linear_gaussian(dynamics: np.ndarray, n_actions: int) -> float:
    """Closed-form upper bound on B for invertible linear-Gaussian kernels:
    number of actions over |det(dynamics)|."""
    det = float(np.linalg.det(np.asarray(dynamics, dtype=float)))
    if det == 0.0 or not math.isfinite(det):
        raise ValueError("dynamics matrix must be invertible")
    return n_actions / abs(det)


def scaling_B0(process: MarkovProcess, spec: ReachAvoidSpec, eta: SamplingDistribution,
               x0, grid_resolution: int = 100) -> QuadratureEstimate:
    """Initial-state concentrability: sup over successors of the worst
    action's density-to-eta ratio, from the given initial state."""

    def value_at(resolution):
        grid, centers, keep = _masked_grid(spec, resolution)
        pts = centers[keep]
        eta_y = eta.density(pts)
        if np.any(eta_y <= 0):
            raise ValueError("eta density vanished on its own support")
        dens = np.stack([process.kernel_density(pts, np.asarray(x0, dtype=float), a)
                         for a in range(process.n_actions)])
        return float((dens.max(axis=0) / eta_y).max())

    value = value_at(grid_resolution)
    half = value_at(max(2, grid_resolution // 2))
    return QuadratureEstimate(value=value, refinement_delta=abs(value - half),
                              resolution=int(grid_resolution),
                              eta_fingerprint=_eta_from(eta))


@dataclass(frozen=True)
class AprioriCertificate:
    """Distribution-free accuracy/confidence pair, bias carried symbolically."""

    delta_quantified: float     # accuracy minus the symbolic bias term
    confidence_loss: float      # total probability the accuracy claim fails
    bias_symbolic: bool
    B: float
    B0: float
    vacuous: bool


def _propagation_sum(B: float, horizon: int, p: int) -> float:
    return sum(B ** ((k - 1) / p) for k in range(1, horizon))


def global_apriori_certificate(budget: BoundBudget, B: float, B0: float) -> AprioriCertificate:
    """Propagate the per-step bounds over the horizon.

    Accuracy: B0 * sum_k B^((k-1)/p) * (bias + 2 eps1 + 2 eps2) + eps0, with
    the bias term unquantified (>= 0) and excluded from the returned number.
    Confidence loss: delta0 + (horizon-1)(delta1 + delta2); a loss >= 1 is
    flagged vacuous but still returned.
    """
    if B < 0 or B0 < 0:
        raise ValueError("scaling factors must be nonnegative")
    step = single_step_bound(budget)
    delta_quantified = B0 * _propagation_sum(B, budget.horizon, budget.p) * step.eps + budget.eps0
    confidence_loss = budget.delta0 + (budget.horizon - 1) * step.confidence_loss
    vacuous = confidence_loss >= 1.0 or delta_quantified >= 1.0
    if confidence_loss >= 1.0:
        warnings.warn("a-priori certificate is vacuous: confidence loss >= 1")
    return AprioriCertificate(delta_quantified=float(delta_quantified),
                              confidence_loss=float(confidence_loss),
                              bias_symbolic=True, B=float(B), B0=float(B0),
                              vacuous=vacuous)


def plan_sample_sizes(eps0: float, eps1: float, eps2: float,
                      delta0: float, delta1: float, delta2: float,
                      d: int, p: int, n_actions: int):
    """Smallest planned (N, M, M0) meeting the per-term confidence targets.

    The three ceiled polynomial formulas; M depends on N through ln(N), so N
    is computed first.  Substituting the result back into the deviation
    bounds always lands at or below the targets.
    """
    for name, val in (("eps0", eps0), ("eps1", eps1)):
        if val <= 0:
            raise ValueError(f"{name} must be positive")
    if not 0 < eps2 <= 1:
        raise ValueError("eps2 must lie in (0, 1]")
    for name, val in (("delta0", delta0), ("delta1", delta1), ("delta2", delta2)):
        if not 0 < val < 1:
            raise ValueError(f"{name} must lie in (0, 1)")
    if d < 1 or p < 1 or n_actions < 1:
        raise ValueError("d, p, n_actions must be at least 1")
    inv_eps2 = 1.0 / eps2
    n_base = math.ceil(
        128.0 * (math.log(4.0 * math.e * (d + 1)) + d * math.log(32.0 * math.e)) * inv_eps2 ** (2 * p)
        + 128.0 * d * p * inv_eps2 ** (2 * p) * math.log(inv_eps2)
        + 128.0 * inv_eps2 ** (2 * p) * math.log(1.0 / delta2))
    m_succ = math.ceil(0.5 * (1.0 / eps1) ** 2
                       * (math.log(2.0 * n_actions) + math.log(1.0 / delta1) + math.log(n_base)))
    m_init = math.ceil(0.5 * (1.0 / eps0) ** 2
                       * (math.log(2.0 * n_actions) + math.log(1.0 / delta0)))
    return int(n_base), int(m_succ), int(m_init)


def budget_from_sample_sizes(n_base: int, m_succ: int, m_init: int,
                             eps0: float, eps1: float, eps2: float,
                             p: int, d: int, n_actions: int, horizon: int) -> BoundBudget:
    """Budget whose confidence terms are the exact lemma values for given samples."""
    delta1 = hoeffding_delta(m_succ, eps1, n_actions, n_base)
    delta2 = pollard_delta(n_base, eps2, p, d)
    delta0 = hoeffding_delta(m_init, eps0, n_actions, 1)
    clip = lambda v: min(max(v, 1e-300), 1.0 - 1e-16)
    return BoundBudget(eps0=eps0, eps1=eps1, eps2=eps2,
                       delta0=clip(delta0), delta1=clip(delta1), delta2=clip(delta2),
                       p=p, d=d, n_actions=n_actions, horizon=horizon)
