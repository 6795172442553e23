"""Contextual stochastic block model graphs and target-side shifts.

Features are parameterized by the signal strength ``m = ||mu|| / sigma``;
the class means are ``+mu`` and ``-mu`` and every coordinate carries
independent Gaussian noise of std ``sigma``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import UndefinedMetricError


class GraphFormatError(ValueError):
    pass


@dataclass(frozen=True)
class CsbmParams:
    n: int
    d: int
    degree: float = 10.0
    ratio: float = 5.0  # p / q
    signal: float = 1.0  # ||mu|| / sigma
    sigma: float = 1.0
    balanced: bool = True

    def __post_init__(self):
        if self.n < 2 or self.n % 2:
            raise ValueError(f"n must be even and >= 2, got {self.n}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.degree < 1:
            raise ValueError(f"average degree must be >= 1, got {self.degree}")
        if not self.ratio > 0:
            raise ValueError(f"ratio p/q must be positive, got {self.ratio}")
        if self.signal < 0 or self.sigma <= 0:
            raise ValueError("signal must be >= 0 and sigma > 0")
        if self.p > 1.0:
            raise ValueError(f"parameters give p = {self.p:.4f} > 1")

    @property
    def q(self) -> float:
        return 2.0 * self.degree / (self.n * (1.0 + self.ratio))

    @property
    def p(self) -> float:
        return self.ratio * self.q


@dataclass(frozen=True)
class ShiftSpec:
    delta: float = 0.0
    theta: float = 0.0  # degrees
    ratio: float | None = None  # target p'/q'; None keeps the source value
    degree: float | None = None  # target D'; None keeps the source value

    def __post_init__(self):
        for name in ("delta", "theta"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @classmethod
    def identity(cls) -> "ShiftSpec":
        return cls()


@dataclass(eq=False)
class Graph:
    features: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,), values in {-1, +1}
    edges: np.ndarray  # (E, 2), i < j, 0-indexed
    mu: np.ndarray  # (d,)
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        np.add.at(deg, self.edges[:, 0], 1)
        np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.mu, other.mu)
        )


def _balanced_labels(n: int) -> np.ndarray:
    labels = -np.ones(n, dtype=np.int64)
    labels[: n // 2] = 1
    return labels


def _tri_pairs(k: np.ndarray, size: int):
    """Map linear indices over the strict upper triangle of a size x size block to (i, j)."""
    # row i starts at offset i*size - i*(i+1)/2
    k = k.astype(np.float64)
    i = np.floor((2 * size - 1 - np.sqrt((2 * size - 1) ** 2 - 8 * k)) / 2).astype(np.int64)
    start = i * size - i * (i + 1) // 2
    # guard against rounding at row boundaries
    k = k.astype(np.int64)
    i = np.where(k < start, i - 1, i)
    start = i * size - i * (i + 1) // 2
    i = np.where(k >= start + (size - 1 - i), i + 1, i)
    start = i * size - i * (i + 1) // 2
    j = k - start + i + 1
    return i, j


def _draw_block(n_pairs: int, prob: float, rng: np.random.Generator) -> np.ndarray:
    if n_pairs == 0 or prob <= 0:
        return np.empty(0, dtype=np.int64)
    count = rng.binomial(n_pairs, min(prob, 1.0))
    return rng.choice(n_pairs, size=count, replace=False)


def sample_edges(labels: np.ndarray, p: float, q: float, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli(p) edges within a class and Bernoulli(q) across, i < j.

    Each block draws a binomial edge count and then a uniform subset of its
    pairs, which has the same law as one coin per pair.
    """
    pos = np.flatnonzero(labels > 0)
    neg = np.flatnonzero(labels <= 0)
    parts = []
    for members in (pos, neg):
        size = members.size
        k = _draw_block(size * (size - 1) // 2, p, rng)
        i, j = _tri_pairs(k, size)
        parts.append(np.stack([members[i], members[j]], axis=1))
    k = _draw_block(pos.size * neg.size, q, rng)
    a, b = pos[k // max(neg.size, 1)], neg[k % max(neg.size, 1)]
    parts.append(np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1))
    edges = np.concatenate(parts).astype(np.int64)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order]


def sample_mu(d: int, norm: float, rng: np.random.Generator) -> np.ndarray:
    mu = rng.normal(0.0, 1.0 / math.sqrt(d), size=d)
    return mu * (norm / np.linalg.norm(mu))


def _assemble(labels, mean_pos, mean_neg, sigma, p, q, mu, rng_feat, rng_edge, meta) -> Graph:
    n, d = labels.shape[0], mean_pos.shape[0]
    means = np.where((labels > 0)[:, None], mean_pos[None, :], mean_neg[None, :])
    features = means + sigma * rng_feat.standard_normal((n, d))
    edges = sample_edges(labels, p, q, rng_edge)
    return Graph(features=features, labels=labels, edges=edges, mu=mu.copy(), meta=meta)


def generate_csbm(params: CsbmParams, rng: np.random.Generator, mu: np.ndarray | None = None) -> Graph:
    """Draw one CSBM graph; ``mu`` is sampled unless given."""
    rng_mu, rng_lab, rng_feat, rng_edge = rng.spawn(4)
    if mu is None:
        mu = sample_mu(params.d, params.signal * params.sigma, rng_mu)
    if params.balanced:
        labels = _balanced_labels(params.n)
    else:
        labels = np.where(rng_lab.random(params.n) < 0.5, 1, -1).astype(np.int64)
    meta = {"ratio": params.ratio, "degree": params.degree, "signal": params.signal}
    return _assemble(labels, mu, -mu, params.sigma, params.p, params.q, mu,
                     rng_feat, rng_edge, meta)


def shift_mean(mu: np.ndarray, spec: ShiftSpec, rng: np.random.Generator):
    """Return the shifted class means ``((1-delta) mu, -(1+delta) mu)`` rotated by theta.

    The rotation acts in the plane spanned by ``mu`` and a random unit vector
    orthogonal to it.  The random direction is drawn even when theta is 0 so
    that the stream position does not depend on the shift.
    """
    mu = np.asarray(mu, dtype=float)
    norm = float(np.linalg.norm(mu))
    if norm == 0.0:
        raise ValueError("mu must be nonzero")
    e1 = mu / norm
    v = rng.standard_normal(mu.shape[0])
    v -= (v @ e1) * e1
    vn = float(np.linalg.norm(v))
    e2 = v / vn if vn > 0 else np.zeros_like(e1)
    if spec.theta == 0:
        direction_scaled = mu
    else:
        ang = math.radians(spec.theta)
        direction_scaled = norm * (math.cos(ang) * e1 + math.sin(ang) * e2)
    mu_pos = (1.0 - spec.delta) * direction_scaled
    mu_neg = -(1.0 + spec.delta) * direction_scaled
    return mu_pos, mu_neg


def target_params(src: CsbmParams, spec: ShiftSpec) -> CsbmParams:
    return CsbmParams(
        n=src.n, d=src.d,
        degree=src.degree if spec.degree is None else spec.degree,
        ratio=src.ratio if spec.ratio is None else spec.ratio,
        signal=src.signal, sigma=src.sigma, balanced=src.balanced,
    )


def generate_target(src: CsbmParams, spec: ShiftSpec, mu: np.ndarray, rng: np.random.Generator) -> Graph:
    """Draw a target graph around the source mean ``mu`` with ``spec`` applied."""
    tp = target_params(src, spec)
    rng_rot, rng_lab, rng_feat, rng_edge = rng.spawn(4)
    mu_pos, mu_neg = shift_mean(mu, spec, rng_rot)
    if tp.balanced:
        labels = _balanced_labels(tp.n)
    else:
        labels = np.where(rng_lab.random(tp.n) < 0.5, 1, -1).astype(np.int64)
    meta = {"ratio": tp.ratio, "degree": tp.degree, "signal": tp.signal,
            "delta": spec.delta, "theta": spec.theta}
    return _assemble(labels, mu_pos, mu_neg, tp.sigma, tp.p, tp.q, mu,
                     rng_feat, rng_edge, meta)


def generate_shifted_pair(src: CsbmParams, spec: ShiftSpec, rng: np.random.Generator):
    """Source graph from ``src`` and a target sharing its ``mu`` under ``spec``."""
    rng_src, rng_tgt = rng.spawn(2)
    g_src = generate_csbm(src, rng_src)
    g_tgt = generate_target(src, spec, g_src.mu, rng_tgt)
    return g_src, g_tgt


def edge_homophily(g: Graph) -> float:
    if g.num_edges == 0:
        raise UndefinedMetricError("edge homophily undefined for a graph without edges")
    same = g.labels[g.edges[:, 0]] == g.labels[g.edges[:, 1]]
    return float(same.mean())


# -- serialization ---------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_graph(g: Graph, path) -> None:
    lines = [f"{g.n} {g.d}", " ".join(str(int(y)) for y in g.labels)]
    lines.extend(" ".join(map(_fmt, row)) for row in g.features)
    lines.append(f"E {g.num_edges}")
    lines.extend(f"{int(i)} {int(j)}" for i, j in g.edges)
    lines.append("mu " + " ".join(map(_fmt, g.mu)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_graph(path) -> Graph:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise GraphFormatError(f"line {pos + 1}: unexpected end of file")
        pos += 1
        return pos, lines[pos - 1].split()

    def floats(lineno, toks, count):
        if len(toks) != count:
            raise GraphFormatError(f"line {lineno}: expected {count} values, got {len(toks)}")
        try:
            return [float(t) for t in toks]
        except ValueError as exc:
            raise GraphFormatError(f"line {lineno}: {exc}") from None

    lineno, toks = take()
    try:
        n, d = (int(t) for t in toks)
    except ValueError:
        raise GraphFormatError(f"line {lineno}: header must be 'n d'") from None
    lineno, toks = take()
    if len(toks) != n or any(t not in ("1", "-1", "+1") for t in toks):
        raise GraphFormatError(f"line {lineno}: expected {n} labels in {{-1,+1}}")
    labels = np.array([int(t) for t in toks], dtype=np.int64)
    feats = np.empty((n, d))
    for r in range(n):
        lineno, toks = take()
        feats[r] = floats(lineno, toks, d)
    lineno, toks = take()
    if len(toks) != 2 or toks[0] != "E" or not toks[1].isdigit():
        raise GraphFormatError(f"line {lineno}: expected 'E <count>'")
    n_edges = int(toks[1])
    edges = np.empty((n_edges, 2), dtype=np.int64)
    seen = set()
    for k in range(n_edges):
        lineno, toks = take()
        try:
            i, j = (int(t) for t in toks)
        except ValueError:
            raise GraphFormatError(f"line {lineno}: expected edge 'i j'") from None
        if not (0 <= i < j < n):
            raise GraphFormatError(f"line {lineno}: edge ({i}, {j}) must satisfy 0 <= i < j < n")
        if (i, j) in seen:
            raise GraphFormatError(f"line {lineno}: duplicate edge ({i}, {j})")
        seen.add((i, j))
        edges[k] = (i, j)
    lineno, toks = take()
    if not toks or toks[0] != "mu":
        raise GraphFormatError(f"line {lineno}: expected 'mu' line")
    mu = np.array(floats(lineno, toks[1:], d))
    if pos != len(lines):
        raise GraphFormatError(f"line {pos + 1}: trailing content")
    return Graph(features=feats, labels=labels, edges=edges, mu=mu)
