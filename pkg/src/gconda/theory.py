"""Closed-form conditional shift and expected error for CSBM graphs, with Monte-Carlo checks.

Everything is reduced to one dimension: the signed projection of a feature
(or of a 1-layer GCN output) onto the unit vector ``mu / ||mu||``, in units
of the noise std.  In those units the source class means sit at ``+m`` and
``-m``; after the target shift at ``(1 - delta) m`` and ``-(1 + delta) m``.

The source-optimal classifier is ``sign(s)``.  The target-optimal one keeps
the source orientation and moves the threshold to the midpoint of the target
population class means, so the two disagree exactly on the band between the
thresholds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .csbm import CsbmParams, ShiftSpec, generate_target, sample_mu, target_params
from .gnn import normalize_adjacency, theory_gcn_1layer
from .numerics import std_normal_cdf as Phi


@dataclass(frozen=True)
class ShiftInputs:
    m: float
    delta: float = 0.0
    r_src: float = 5.0
    r_tgt: float = 5.0
    D_src: float = 10.0
    D_tgt: float = 10.0

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError(f"signal m must be positive, got {self.m}")
        if self.delta < 0 or not math.isfinite(self.delta):
            raise ValueError(f"delta must be finite and >= 0, got {self.delta}")
        if not (self.r_src > 0 and self.r_tgt > 0):
            raise ValueError("homophily ratios must be positive")
        if self.D_src < 1 or self.D_tgt < 1:
            raise ValueError("average degrees must be >= 1")

    def at_delta(self, delta: float) -> "ShiftInputs":
        return ShiftInputs(self.m, delta, self.r_src, self.r_tgt, self.D_src, self.D_tgt)


@dataclass(frozen=True)
class ClosedFormReport:
    delta_yx: float
    delta_yh: float
    eps_t_f: float
    eps_t_fg: float
    eps_s_f: float
    eps_s_fg: float
    s1: float
    s_neg1: float
    clamped: bool  # delta_yh was negative before clamping


class McEstimate(NamedTuple):
    estimate: float
    se: float


def _contrast(r: float) -> float:
    return (r - 1.0) / (r + 1.0)  # (p - q) / (p + q)


def latent_centroids(inp: ShiftInputs) -> tuple[float, float]:
    """Signed projections of the two target class means after the 1-layer GCN."""
    root = math.sqrt(inp.D_tgt)
    a = root * _contrast(inp.r_tgt) * inp.m
    c = root * inp.delta * inp.m
    return a - c, -a - c


def latent_noise_scale(inp: ShiftInputs) -> float:
    """Std of the latent projection once the random class mix of each neighbourhood is counted.

    The closed forms treat it as 1.  A neighbour's class mean differs by 2m
    between classes and a fraction p'/(p'+q') of neighbours share the node's
    class, which adds ``4 m^2 pi (1 - pi)`` to the variance.
    """
    pi = inp.r_tgt / (1.0 + inp.r_tgt)
    return math.sqrt(1.0 + 4.0 * inp.m ** 2 * pi * (1.0 - pi))


def _scaled_centroids(inp: ShiftInputs, corrected: bool) -> tuple[float, float]:
    s1, s_neg1 = latent_centroids(inp)
    if corrected:
        k = latent_noise_scale(inp)
        s1, s_neg1 = s1 / k, s_neg1 / k
    return s1, s_neg1


def conditional_shift_x(m: float, delta: float) -> float:
    if not m > 0 or delta < 0:
        raise ValueError("need m > 0 and delta >= 0")
    return (Phi((1.0 + delta) * m) - Phi((1.0 - delta) * m)) / 2.0


def _shift_h_raw(inp: ShiftInputs, corrected: bool = False) -> float:
    s1, s_neg1 = _scaled_centroids(inp, corrected)
    return (Phi(-s_neg1) - Phi(s1)) / 2.0


def conditional_shift_h(inp: ShiftInputs, corrected: bool = False) -> float:
    """Latent conditional shift, clamped at 0; ``corrected`` uses :func:`latent_noise_scale`."""
    return max(0.0, _shift_h_raw(inp, corrected))


def conditional_shift_h_literal(inp: ShiftInputs) -> float:
    """The same expression with Euclidean norms in place of signed projections (unclamped)."""
    s1, s_neg1 = latent_centroids(inp)
    return (Phi(abs(s_neg1)) - Phi(abs(s1))) / 2.0


def expected_error_f(m: float, delta: float) -> float:
    if not m > 0 or delta < 0:
        raise ValueError("need m > 0 and delta >= 0")
    return 1.0 - (Phi((1.0 + delta) * m) + Phi((1.0 - delta) * m)) / 2.0


def expected_error_fg(inp: ShiftInputs, corrected: bool = False) -> float:
    s1, s_neg1 = _scaled_centroids(inp, corrected)
    return 1.0 - (Phi(-s_neg1) + Phi(s1)) / 2.0


def expected_error_fg_literal(inp: ShiftInputs) -> float:
    s1, s_neg1 = latent_centroids(inp)
    return 1.0 - (Phi(abs(s_neg1)) + Phi(abs(s1))) / 2.0


def closed_form(inp: ShiftInputs) -> ClosedFormReport:
    """All closed forms at once; source errors are the delta = 0 values."""
    s1, s_neg1 = latent_centroids(inp)
    raw = _shift_h_raw(inp)
    src = inp.at_delta(0.0)
    return ClosedFormReport(
        delta_yx=conditional_shift_x(inp.m, inp.delta),
        delta_yh=max(0.0, raw),
        eps_t_f=expected_error_f(inp.m, inp.delta),
        eps_t_fg=expected_error_fg(inp),
        eps_s_f=expected_error_f(inp.m, 0.0),
        eps_s_fg=expected_error_fg(src),
        s1=s1,
        s_neg1=s_neg1,
        clamped=raw < 0.0,
    )


# Monte-Carlo oracles --------------------------------------------------------

def _binomial(hits: int, n: int) -> McEstimate:
    p = hits / n
    return McEstimate(p, math.sqrt(p * (1.0 - p) / n))


def _feature_projections(inp: ShiftInputs, n_samples: int, rng: np.random.Generator, d: int):
    if n_samples < 10_000:
        raise ValueError(f"n_samples must be >= 1e4, got {n_samples}")
    half = n_samples // 2
    labels = np.repeat([1, -1], [n_samples - half, half])
    mu = rng.standard_normal(d)
    e = mu / np.linalg.norm(mu)
    means = np.where(labels[:, None] > 0, (1.0 - inp.delta) * inp.m, -(1.0 + inp.delta) * inp.m) * e
    x = means + rng.standard_normal((n_samples, d))
    return x @ e, labels


def mc_conditional_shift_feature(inp: ShiftInputs, n_samples: int = 100_000,
                                 rng: np.random.Generator | None = None, d: int = 8) -> McEstimate:
    """Disagreement rate of source- and target-optimal classifiers on target features."""
    rng = np.random.default_rng(0) if rng is None else rng
    s, _ = _feature_projections(inp, n_samples, rng, d)
    t = -inp.delta * inp.m  # midpoint of the target class means
    return _binomial(int(np.count_nonzero((s > 0) != (s > t))), n_samples)


def _mc_error(s: np.ndarray, labels: np.ndarray) -> int:
    return int(np.count_nonzero(np.where(s > 0, 1, -1) != labels))


def inputs_to_params(inp: ShiftInputs, n: int = 2000, d: int = 8) -> tuple[CsbmParams, ShiftSpec]:
    src = CsbmParams(n=n, d=d, degree=inp.D_src, ratio=inp.r_src, signal=inp.m)
    return src, ShiftSpec(delta=inp.delta, ratio=inp.r_tgt, degree=inp.D_tgt)


def _graph_projections(src: CsbmParams, spec: ShiftSpec, n_graphs: int, rng: np.random.Generator):
    """Per target graph: projections of the rescaled 1-layer GCN output, labels, Bayes threshold
    and Bayes orientation.

    The threshold is the midpoint of the population class means of the
    projection given the drawn degrees: a node's neighbour mean has expected
    projection ``cos(theta) m ((2 pi - 1) y - delta)`` with ``pi = r'/(1+r')``,
    so the midpoint is ``-delta m cos(theta) mean(sqrt(deg))``.
    """
    if n_graphs < 10:
        raise ValueError(f"n_graphs must be >= 10, got {n_graphs}")
    tp = target_params(src, spec)
    cos_t = math.cos(math.radians(spec.theta))
    pi = tp.ratio / (1.0 + tp.ratio)
    sign = -1.0 if (2.0 * pi - 1.0) * cos_t < 0 else 1.0
    for sub in rng.spawn(n_graphs):
        rng_mu, rng_g = sub.spawn(2)
        mu = sample_mu(src.d, src.signal * src.sigma, rng_mu)
        g = generate_target(src, spec, mu, rng_g)
        adj = normalize_adjacency(g, "row_mean")
        deg = g.degrees()
        h = theory_gcn_1layer(adj, g.features, deg)
        s = h @ (mu / np.linalg.norm(mu)) / src.sigma
        t = -spec.delta * src.signal * cos_t * float(np.sqrt(np.maximum(deg, 1)).mean())
        yield s, g.labels, t, sign


def _pooled(rates: list[float]) -> McEstimate:
    # graphs are the independent units; nodes within one graph are correlated
    r = np.asarray(rates)
    return McEstimate(float(r.mean()), float(r.std(ddof=1) / math.sqrt(len(r))))


def mc_conditional_shift_graph(src: CsbmParams, spec: ShiftSpec, n_graphs: int = 50,
                               rng: np.random.Generator | None = None,
                               orientation: str = "source") -> McEstimate:
    """Disagreement rate in the latent space of the theoretical 1-layer GCN on target graphs.

    With ``orientation="source"`` the target-optimal rule keeps the source
    direction (the reading the closed form computes).  ``"bayes"`` lets it
    flip when heterophily swaps the latent class means.
    """
    if orientation not in ("source", "bayes"):
        raise ValueError(f"orientation must be 'source' or 'bayes', got {orientation!r}")
    rng = np.random.default_rng(0) if rng is None else rng
    rates = []
    for s, _, t, sign in _graph_projections(src, spec, n_graphs, rng):
        tgt = (s > t) if orientation == "source" or sign > 0 else (s < t)
        rates.append(float(np.mean((s > 0) != tgt)))
    return _pooled(rates)


def mc_expected_error(inp: ShiftInputs, level: str = "feature", *, n_samples: int = 100_000,
                      n_graphs: int = 50, n_nodes: int = 2000, d: int = 8,
                      rng: np.random.Generator | None = None) -> McEstimate:
    """Target error of the source-optimal classifier ``sign(s)``."""
    rng = np.random.default_rng(0) if rng is None else rng
    if level == "feature":
        s, labels = _feature_projections(inp, n_samples, rng, d)
        return _binomial(_mc_error(s, labels), n_samples)
    if level == "latent":
        src, spec = inputs_to_params(inp, n_nodes, d)
        rates = [_mc_error(s, y) / len(y) for s, y, _, _ in _graph_projections(src, spec, n_graphs, rng)]
        return _pooled(rates)
    raise ValueError(f"level must be 'feature' or 'latent', got {level!r}")


@dataclass(frozen=True)
class TheoryRow:
    inp: ShiftInputs
    cf: ClosedFormReport
    delta_yx_mc: McEstimate
    delta_yh_mc: McEstimate
    eps_t_f_mc: McEstimate
    eps_t_fg_mc: McEstimate


def theory_row(inp: ShiftInputs, rng: np.random.Generator, *, n_samples: int = 100_000,
               n_graphs: int = 50, n_nodes: int = 2000, d: int = 8) -> TheoryRow:
    """Closed forms next to their four Monte-Carlo oracles at one grid point."""
    r_dx, r_dh, r_ef, r_eg = rng.spawn(4)
    src, spec = inputs_to_params(inp, n_nodes, d)
    return TheoryRow(
        inp=inp,
        cf=closed_form(inp),
        delta_yx_mc=mc_conditional_shift_feature(inp, n_samples, r_dx, d),
        delta_yh_mc=mc_conditional_shift_graph(src, spec, n_graphs, r_dh),
        eps_t_f_mc=mc_expected_error(inp, "feature", n_samples=n_samples, d=d, rng=r_ef),
        eps_t_fg_mc=mc_expected_error(inp, "latent", n_graphs=n_graphs, n_nodes=n_nodes, d=d, rng=r_eg),
    )
