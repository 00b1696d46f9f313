"""Gaussian RBF function class with clipped evaluation and least-squares fitting.

The class is linear in the weights with fixed centers and a shared width, so
it is a plain vector space of functions: its pseudo-dimension is the number
of basis functions.  Evaluation clamps to [0, 1] to keep every member inside
the unit band the value recursion lives in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import FitError
from .model import BoxSet


def _balanced_factors(n: int, dims: int) -> list[int]:
    """Split n into `dims` integer factors, as close to equal as possible."""
    if dims == 1:
        return [n]
    factors = []
    remaining = n
    for axes_left in range(dims, 1, -1):
        target = remaining ** (1.0 / axes_left)
        divisors = [d for d in range(1, remaining + 1) if remaining % d == 0]
        best = min(divisors, key=lambda d: abs(d - target))
        factors.append(best)
        remaining //= best
    factors.append(remaining)
    return factors


def lattice_centers(box: BoxSet, n_basis: int, pad: float = 0.0,
                    larger_first: bool = False) -> np.ndarray:
    """Deterministic uniform lattice of `n_basis` centers over `box`.

    The per-axis counts are a near-balanced factorization of n_basis
    (ascending by default); centers sit at cell midpoints of the box grown
    by `pad` on every face.
    """
    if n_basis < 1:
        raise ValueError("need at least one basis function")
    counts = sorted(_balanced_factors(n_basis, box.dim), reverse=larger_first)
    axes = []
    for axis, m in enumerate(counts):
        lo, hi = box.lower[axis] - pad, box.upper[axis] + pad
        step = (hi - lo) / m
        axes.append(lo + (np.arange(m) + 0.5) * step)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def two_scale_centers(safe: BoxSet, target: BoxSet, n_basis: int,
                      outer_fraction: float = 0.8, outer_pad: float = 0.5,
                      inner_pad: float = 0.3) -> np.ndarray:
    """Two-scale center layout: a coarse lattice over the (padded) safe box
    plus a small dense lattice over the (padded) target.

    Value functions for this problem are steep near the safe-set boundary
    and around the target; a single uniform lattice cannot resolve both at
    realistic dictionary sizes.  The layout depends only on the two boxes,
    never on drawn samples, so the function class stays fixed.
    """
    if n_basis < 2:
        return lattice_centers(safe, n_basis, pad=outer_pad, larger_first=True)
    n_outer = int(round(outer_fraction * n_basis))
    n_outer = min(max(n_outer, 1), n_basis - 1)
    outer = lattice_centers(safe, n_outer, pad=outer_pad, larger_first=True)
    inner = lattice_centers(target, n_basis - n_outer, pad=inner_pad)
    centers = np.vstack([outer, inner])
    # tiny dictionaries can collide at shared box midpoints; a single
    # lattice is then the right layout anyway
    deltas = centers[:, None, :] - centers[None, :, :]
    dists = np.linalg.norm(deltas, axis=-1)
    np.fill_diagonal(dists, np.inf)
    if dists.min() == 0.0:
        return lattice_centers(safe, n_basis, pad=outer_pad, larger_first=True)
    return centers


def _lattice_structure(centers: np.ndarray):
    """Detect a tensor-lattice layout of centers; None if not a lattice.

    Returns per-axis unique values and the index of each center along each
    axis, enabling separable evaluation (one exp per point-axis-value pair
    instead of one per point-center pair).
    """
    n_basis, dim = centers.shape
    axes_vals, axes_idx = [], []
    total = 1
    for axis in range(dim):
        vals, idx = np.unique(centers[:, axis], return_inverse=True)
        axes_vals.append(vals)
        axes_idx.append(idx)
        total *= vals.shape[0]
    if total != n_basis:
        return None
    # centers must enumerate the full product exactly once
    flat = axes_idx[0]
    for axis in range(1, dim):
        flat = flat * axes_vals[axis].shape[0] + axes_idx[axis]
    if np.unique(flat).shape[0] != n_basis:
        return None
    return axes_vals, np.stack(axes_idx, axis=-1)


def _lattice_blocks(centers: np.ndarray, max_blocks: int = 4):
    """Partition centers into consecutive complete-lattice blocks, or None.

    Layouts built from stacked lattices (e.g. two-scale) evaluate separably
    block by block; anything that does not decompose cleanly falls back to
    the dense design matrix.
    """
    blocks = []
    start = 0
    n = centers.shape[0]
    while start < n and len(blocks) < max_blocks:
        found = None
        for stop in range(n, start, -1):
            structure = _lattice_structure(centers[start:stop])
            if structure is not None:
                found = (start, stop, structure)
                break
        if found is None:
            return None
        blocks.append(found)
        start = found[1]
    return blocks if start == n else None


@dataclass(frozen=True)
class RbfClassConfig:
    """Fixed Gaussian RBF dictionary: centers, shared width, ridge strength."""

    centers: np.ndarray
    width: float
    ridge: float = 1e-8

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if centers.shape[0] < 1:
            raise ValueError("need at least one center")
        if self.width <= 0:
            raise ValueError("width must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        dists = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
        np.fill_diagonal(dists, np.inf)
        if centers.shape[0] > 1 and dists.min() == 0.0:
            raise ValueError("centers must be pairwise distinct")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "_blocks",
                           _lattice_blocks(centers) if centers.shape[1] == 2 else None)

    @property
    def n_basis(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


def design_matrix(config: RbfClassConfig, xs: np.ndarray) -> np.ndarray:
    """Gaussian design matrix, one row per query point, one column per center."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    diff = xs[:, None, :] - config.centers[None, :, :]
    sq = np.sum(diff * diff, axis=-1)
    return np.exp(-sq / (2.0 * config.width ** 2))


def _raw_values(config: RbfClassConfig, xs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Unclipped network output at xs, for one weight vector or a (k, n_basis) stack."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    stacked = np.atleast_2d(weights)
    blocks = config._blocks
    if blocks is None:
        out = design_matrix(config, xs) @ stacked.T
    else:
        # separable path: per lattice block, exp factors per axis contracted
        # through the weight grids; algebraically the dense design matrix
        n_funcs = stacked.shape[0]
        out = np.zeros((xs.shape[0], n_funcs))
        for start, stop, ((u, v), idx) in blocks:
            m1, m2 = u.shape[0], v.shape[0]
            e1 = _axis_factors(xs[:, 0], u, config.width)   # (m, m1)
            e2 = _axis_factors(xs[:, 1], v, config.width)   # (m, m2)
            if n_funcs == 1:
                grid = np.zeros((m1, m2))
                grid[idx[:, 0], idx[:, 1]] = stacked[0, start:stop]
                out[:, 0] += np.einsum("ma,ma->m", e1, e2 @ grid.T)
            else:
                # block design matrix from outer products of the axis factors
                # (exp work is per axis value, not per center), then one gemm
                z = (e1[:, :, None] * e2[:, None, :]).reshape(xs.shape[0], m1 * m2)
                w_grid = np.zeros((n_funcs, m1 * m2))
                w_grid[:, idx[:, 0] * m2 + idx[:, 1]] = stacked[:, start:stop]
                out += z @ w_grid.T
    return out[:, 0] if np.ndim(weights) == 1 else out


def _axis_factors(coords: np.ndarray, values: np.ndarray, width: float) -> np.ndarray:
    d = coords[:, None] - values[None, :]
    np.multiply(d, d, out=d)
    d *= -1.0 / (2.0 * width * width)
    np.exp(d, out=d)
    return d


@dataclass(frozen=True)
class FittedFunction:
    """A weight vector over an RBF dictionary; evaluation is clamped to [0, 1]."""

    config: RbfClassConfig
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.config.n_basis,):
            raise ValueError(f"weights shape {w.shape} does not match {self.config.n_basis} centers")
        object.__setattr__(self, "weights", w)

    def __call__(self, x) -> float:
        return evaluate(self, x)

    def batch(self, xs: np.ndarray) -> np.ndarray:
        """Clipped values at many points: (m, dim) -> (m,)."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if xs.shape[-1] != self.config.dim:
            raise ValueError(f"dimension mismatch: expected {self.config.dim}, got {xs.shape[-1]}")
        if not np.any(self.weights):
            return np.zeros(xs.shape[0])
        return np.clip(_raw_values(self.config, xs, self.weights), 0.0, 1.0)

    @property
    def is_zero(self) -> bool:
        return not bool(np.any(self.weights))


def zero_function(config: RbfClassConfig) -> FittedFunction:
    return FittedFunction(config, np.zeros(config.n_basis))


def evaluate(f: FittedFunction, x) -> float:
    """Clipped network output at a single point."""
    x = np.asarray(x, dtype=float)
    if x.shape != (f.config.dim,):
        raise ValueError(f"dimension mismatch: expected ({f.config.dim},), got {x.shape}")
    return float(f.batch(x[None, :])[0])


def batch_values(config: RbfClassConfig, weight_stack: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Clipped values of several weight vectors at once: (m, k) output."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    return np.clip(_raw_values(config, xs, weight_stack), 0.0, 1.0)


def _residual(config, weights, xs, ys, p):
    raw = _raw_values(config, xs, weights)
    return float(np.sum(np.abs(raw - ys) ** p))


def fit(config: RbfClassConfig, xs: np.ndarray, ys: np.ndarray, p: int = 2) -> FittedFunction:
    """Empirical p-norm regression onto the RBF class (raw, unclipped outputs).

    p = 2 solves ridge-regularized normal equations exactly (plain least
    squares when ridge = 0); p = 1 runs iteratively reweighted refits.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.asarray(ys, dtype=float)
    if xs.shape[0] < 1:
        raise ValueError("need at least one sample point")
    if xs.shape[0] != ys.shape[0]:
        raise ValueError("point/target length mismatch")
    if np.any(ys < -1e-12) or np.any(ys > 1.0 + 1e-12):
        raise ValueError("targets must lie in [0, 1]")
    if p not in (1, 2):
        raise ValueError("only p = 2 (exact) and p = 1 (reweighted refits) are supported")

    phi = design_matrix(config, xs)
    weights = _solve_weighted(phi, ys, config.ridge)
    if p == 1:
        # IRLS: reweight by inverse residual magnitude, refit, repeat
        floor = 1e-6
        for _ in range(25):
            resid = np.abs(phi @ weights - ys)
            w_irls = 1.0 / np.maximum(resid, floor)
            new = _solve_weighted(phi, ys, config.ridge, point_weights=w_irls)
            if np.max(np.abs(new - weights)) < 1e-10:
                weights = new
                break
            weights = new

    if not np.all(np.isfinite(weights)):
        raise FitError("design matrix ill-conditioned beyond ridge rescue")
    # the zero function is always admissible; never return anything worse
    if _residual(config, weights, xs, ys, p) > _residual(config, np.zeros_like(weights), xs, ys, p):
        weights = np.zeros_like(weights)
    return FittedFunction(config, weights)


def _solve_weighted(phi: np.ndarray, ys: np.ndarray, ridge: float,
                    point_weights: Optional[np.ndarray] = None) -> np.ndarray:
    if point_weights is not None:
        sq = np.sqrt(point_weights)
        phi = phi * sq[:, None]
        ys = ys * sq
    if ridge == 0.0:
        sol, *_ = scipy.linalg.lstsq(phi, ys)
        return sol
    gram = phi.T @ phi
    gram[np.diag_indices_from(gram)] += ridge
    try:
        return scipy.linalg.solve(gram, phi.T @ ys, assume_a="pos")
    except scipy.linalg.LinAlgError as exc:
        raise FitError(f"normal equations not solvable: {exc}") from exc


def pseudo_dimension(config: RbfClassConfig) -> int:
    """Capacity of the class: a vector space of functions, so one per free weight."""
    return config.n_basis
