from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

CE_EPS = 1e-7
BRUTE_FORCE_MAX_N = 8


@dataclass
class TransportPlan:
    """Coupling with uniform marginals; rows and columns each carry mass 1/n."""

    gamma: np.ndarray
    total_cost: float
    perm: np.ndarray | None = None  # col_of_row when the plan is a scaled permutation

    @property
    def n(self) -> int:
        return self.gamma.shape[0]


def _check_cost(cost) -> np.ndarray:
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost must be a square matrix, got shape {cost.shape}")
    if cost.shape[0] == 0:
        raise ValueError("cost matrix is empty")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")
    return cost


def cost_label(y_src: np.ndarray, p_tgt: np.ndarray, eps: float = CE_EPS) -> np.ndarray:
    """Cross-entropy of each source one-hot label against each target prediction."""
    y_src = np.asarray(y_src, dtype=float)
    p_tgt = np.asarray(p_tgt, dtype=float)
    if y_src.shape[1] != p_tgt.shape[1]:
        raise ValueError(f"label dims differ: {y_src.shape[1]} vs {p_tgt.shape[1]}")
    if not np.allclose(p_tgt.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("target probability rows must sum to 1")
    return -y_src @ np.log(np.maximum(p_tgt, eps)).T


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(sq, 0.0)


def cost_joint(h_src, y_src, h_tgt, p_tgt, alpha: float, beta: float) -> np.ndarray:
    """``alpha * ||h_s - h_t||^2 + beta * CE(y_s, p_t)`` for every source/target pair."""
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    h_src = np.asarray(h_src, dtype=float)
    h_tgt = np.asarray(h_tgt, dtype=float)
    if h_src.shape[1] != h_tgt.shape[1]:
        raise ValueError("embedding dims differ")
    if alpha == 0 and beta == 0:
        warnings.warn("alpha = beta = 0 gives an all-zero transport cost", RuntimeWarning, stacklevel=2)
    cost = np.zeros((h_src.shape[0], h_tgt.shape[0]))
    if alpha:
        cost += alpha * pairwise_sq_dists(h_src, h_tgt)
    if beta:
        cost += beta * cost_label(y_src, p_tgt)
    return cost


def _plan_from_perm(cost: np.ndarray, perm: np.ndarray) -> TransportPlan:
    n = cost.shape[0]
    gamma = np.zeros_like(cost)
    gamma[np.arange(n), perm] = 1.0 / n
    total = math.fsum(cost[np.arange(n), perm]) / n
    return TransportPlan(gamma=gamma, total_cost=total, perm=np.asarray(perm))


def solve_emd(cost, assign=None) -> TransportPlan:
    """Exact optimal plan for uniform, equal-size marginals.

    An optimal vertex is a permutation scaled by 1/n, found with the
    O(n^3) assignment kernel (``assign`` overrides the import-time choice).
    """
    if assign is None:
        from . import _assign as assign

    cost = _check_cost(cost)
    perm = assign(np.ascontiguousarray(cost))
    return _plan_from_perm(cost, perm)


def brute_force_emd(cost) -> TransportPlan:
    """Enumerate all permutations (n <= 8); ties go to the lexicographically first."""
    cost = _check_cost(cost)
    n = cost.shape[0]
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force limited to n <= {BRUTE_FORCE_MAX_N}, got {n}")
    rows = np.arange(n)
    best, best_perm = math.inf, None
    for perm in itertools.permutations(range(n)):
        c = math.fsum(cost[rows, perm])
        if c < best:
            best, best_perm = c, perm
    return _plan_from_perm(cost, np.array(best_perm))


def w1_estimate(plan: TransportPlan | np.ndarray, cost) -> float:
    gamma = plan.gamma if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    cost = np.asarray(cost, dtype=float)
    if gamma.shape != cost.shape:
        raise ValueError(f"plan shape {gamma.shape} does not match cost shape {cost.shape}")
    return float(np.sum(gamma * cost))


def sinkhorn(cost, reg: float = 0.05, n_iter: int = 1000, tol: float = 1e-9) -> TransportPlan:
    """Entropic approximation (log domain), for batches too large for the exact solver."""
    from scipy.special import logsumexp

    cost = _check_cost(cost)
    n = cost.shape[0]
    log_a = np.full(n, -math.log(n))
    f = np.zeros(n)
    g = np.zeros(n)
    k = -cost / reg
    for _ in range(n_iter):
        f = reg * (log_a - logsumexp(k + g[None, :] / reg, axis=1))
        g_new = reg * (log_a - logsumexp(k + f[:, None] / reg, axis=0))
        if np.max(np.abs(g_new - g)) < tol:
            g = g_new
            break
        g = g_new
    gamma = np.exp(k + f[:, None] / reg + g[None, :] / reg)
    return TransportPlan(gamma=gamma, total_cost=float(np.sum(gamma * cost)))
