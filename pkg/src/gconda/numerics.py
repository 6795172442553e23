"""Small numeric helpers shared by every other module.

Random streams are numpy ``Generator`` objects backed by PCG64 and derived
from a ``SeedSequence``.  A stream is identified by a base seed plus a tuple
of integer keys, so independent trials get disjoint, replayable streams:

    rng = make_rng(seed, trial_index, SALT_INIT)
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    """Raised when a statistic is not defined for the given input."""


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a PCG64 generator for ``(seed, *keys)``.

    Streams with different key tuples are statistically independent;
    the same tuple always yields the same bit stream.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive ``n`` child generators from ``rng`` (consumes parent state)."""
    seeds = rng.integers(0, 2**63 - 1, size=n, dtype=np.int64)
    return [make_rng(int(s)) for s in seeds]


def std_normal_cdf(x):
    """Standard normal CDF; accepts scalars or arrays."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("std_normal_cdf requires finite input")
    out = ndtr(arr)
    if np.ndim(out) == 0:
        return float(out)
    return out


def sample_gaussian_matrix(
    rng: np.random.Generator,
    rows: int,
    cols: int,
    mean: Sequence[float] | np.ndarray,
    std: float,
) -> np.ndarray:
    """I.i.d. Gaussian rows with per-coordinate ``mean`` and scalar ``std``."""
    if std < 0:
        raise ValueError(f"std must be non-negative, got {std}")
    mean = np.asarray(mean, dtype=float)
    if mean.shape != (cols,):
        raise ValueError(f"mean has shape {mean.shape}, expected ({cols},)")
    noise = rng.standard_normal((rows, cols))
    return mean[None, :] + std * noise


def roc_auc(scores, labels) -> float:
    """ROC AUC as the Mann-Whitney statistic; ties count one half.

    ``labels`` take values in {-1, +1} (0 is also accepted as negative).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same shape")
    pos = labels > 0
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC AUC needs both classes present")
    ranks = rankdata(scores)  # average ranks handle ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pearson_r(xs, ys) -> float:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("pearson_r expects two 1-d arrays of equal length")
    if xs.size < 2:
        raise UndefinedMetricError("pearson_r needs at least two points")
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedMetricError("pearson_r undefined for zero-variance input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))
