"""GCN / MLP encoders with a linear head and hand-written reverse-mode gradients.

Layer k computes ``H_k = act(A @ H_{k-1} @ W_k)``; the head maps the last
hidden layer to class logits.  Class index 1 is the positive label (+1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .csbm import Graph
from .ot import CE_EPS

ACTIVATIONS = ("silu", "relu", "identity")
CHECKPOINT_MAGIC = "gconda-model v1"


class NonFiniteLossError(FloatingPointError):
    pass


# -- adjacency -------------------------------------------------------------

@dataclass
class AdjacencyOp:
    matrix: np.ndarray | sparse.csr_matrix  # dense for sym_selfloop, CSR for row_mean
    mode: str

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, other):
        return self.matrix @ other

    @property
    def T(self):
        return self.matrix if self.mode == "sym_selfloop" else self.matrix.T

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if sparse.issparse(self.matrix) else np.array(self.matrix)


def _sparse_adjacency(n: int, edges: np.ndarray) -> sparse.csr_matrix:
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    return sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))


def normalize_adjacency(g: Graph | tuple[int, np.ndarray], mode: str = "sym_selfloop") -> AdjacencyOp:
    """``sym_selfloop``: D^-1/2 (A + I) D^-1/2 (dense).  ``row_mean``: neighbour average (sparse).

    Isolated nodes keep a self-loop in both modes.
    """
    n, edges = (g.n, g.edges) if isinstance(g, Graph) else g
    a = _sparse_adjacency(n, np.asarray(edges, dtype=np.int64).reshape(-1, 2))
    deg = np.asarray(a.sum(1)).ravel()
    if mode == "sym_selfloop":
        a = a.toarray()
        a[np.diag_indices(n)] = 1.0
        s = 1.0 / np.sqrt(a.sum(1))
        return AdjacencyOp(a * s[:, None] * s[None, :], mode)
    if mode == "row_mean":
        loops = (deg == 0).astype(float)
        a = a + sparse.diags(loops)
        inv = 1.0 / (deg + loops)
        return AdjacencyOp(sparse.csr_matrix(sparse.diags(inv) @ a), mode)
    raise ValueError(f"unknown adjacency mode {mode!r}")


def theory_gcn_1layer(adj: AdjacencyOp, X: np.ndarray, degrees: np.ndarray) -> np.ndarray:
    """Neighbour mean rescaled by sqrt(degree): restores unit noise variance."""
    if adj.mode != "row_mean":
        raise ValueError("theory GCN expects a row_mean adjacency")
    scale = np.sqrt(np.maximum(np.asarray(degrees, dtype=float), 1.0))
    return scale[:, None] * (adj @ X)


# -- model -----------------------------------------------------------------

@dataclass
class GcnModel:
    weights: list[np.ndarray]
    activations: list[str]
    head_w: np.ndarray
    head_b: np.ndarray

    def __post_init__(self):
        if len(self.weights) != len(self.activations):
            raise ValueError("one activation per layer is required")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        dims = [w.shape for w in self.weights] + [self.head_w.shape]
        for (_, out_dim), (in_dim, _) in zip(dims, dims[1:]):
            if out_dim != in_dim:
                raise ValueError(f"layer dims do not chain: {dims}")
        if self.head_b.shape != (self.head_w.shape[1],):
            raise ValueError("head bias has wrong shape")

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        return [*self.weights, self.head_w, self.head_b]

    def with_params(self, params: list[np.ndarray]) -> "GcnModel":
        k = self.num_layers
        return GcnModel(list(params[:k]), list(self.activations), params[k], params[k + 1])

    def copy(self) -> "GcnModel":
        return self.with_params([p.copy() for p in self.params()])


def init_model(in_dim: int, rng: np.random.Generator, hidden: int = 16, layers: int = 2,
               n_classes: int = 2, activation: str = "silu") -> GcnModel:
    """Glorot-uniform weights, zero head bias."""
    dims = [in_dim] + [hidden] * layers + [n_classes]
    mats = []
    for a, b in zip(dims, dims[1:]):
        lim = math.sqrt(6.0 / (a + b))
        mats.append(rng.uniform(-lim, lim, size=(a, b)))
    return GcnModel(mats[:-1], [activation] * layers, mats[-1], np.zeros(n_classes))


def _act(name, z):
    if name == "silu":
        return z / (1.0 + np.exp(-z))
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name, z):
    if name == "silu":
        s = 1.0 / (1.0 + np.exp(-z))
        return s * (1.0 + z * (1.0 - s))
    if name == "relu":
        return (z > 0).astype(float)
    return np.ones_like(z)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class TapeCache:
    inputs: list[np.ndarray] = field(default_factory=list)  # A @ H_{k-1}
    pre: list[np.ndarray] = field(default_factory=list)  # Z_k
    acts: list[np.ndarray] = field(default_factory=list)  # H_0 .. H_K

    @property
    def embedding(self) -> np.ndarray:
        return self.acts[-1]


def forward(model: GcnModel, adj: AdjacencyOp | None, X: np.ndarray):
    """Return ``(logits, cache)``; ``adj=None`` runs the stack as an MLP."""
    X = np.asarray(X, dtype=float)
    if model.num_layers and X.shape[1] != model.weights[0].shape[0]:
        raise ValueError(f"feature dim {X.shape[1]} != model input dim {model.weights[0].shape[0]}")
    cache = TapeCache(acts=[X])
    h = X
    for w, a in zip(model.weights, model.activations):
        ah = h if adj is None else adj @ h
        z = ah @ w
        h = _act(a, z)
        cache.inputs.append(ah)
        cache.pre.append(z)
        cache.acts.append(h)
    logits = h @ model.head_w + model.head_b
    return logits, cache


def backward(model: GcnModel, adj: AdjacencyOp | None, cache: TapeCache,
             dlogits: np.ndarray, dembed: np.ndarray | None = None) -> list[np.ndarray]:
    """Gradients for ``model.params()`` given d(loss)/d(logits) and d(loss)/d(H_K)."""
    h_last = cache.acts[-1]
    g_head_w = h_last.T @ dlogits
    g_head_b = dlogits.sum(axis=0)
    dh = dlogits @ model.head_w.T
    if dembed is not None:
        dh = dh + dembed
    g_weights = [None] * model.num_layers
    for k in range(model.num_layers - 1, -1, -1):
        dz = dh * _act_grad(model.activations[k], cache.pre[k])
        g_weights[k] = cache.inputs[k].T @ dz
        if k:
            dah = dz @ model.weights[k].T
            dh = dah if adj is None else adj.T @ dah
    return [*g_weights, g_head_w, g_head_b]


def one_hot(labels: np.ndarray, n_classes: int = 2) -> np.ndarray:
    idx = (np.asarray(labels) > 0).astype(np.int64)
    out = np.zeros((idx.size, n_classes))
    out[np.arange(idx.size), idx] = 1.0
    return out


# -- losses ----------------------------------------------------------------

def cmd_discrepancy(h_s: np.ndarray, h_t: np.ndarray, k: int):
    """Central moment discrepancy and its gradients.

    ``||mean_s - mean_t|| + sum_{j=2..k} ||c_j(s) - c_j(t)||`` with coordinatewise
    central moments ``c_j``; no range normalization.
    """
    if k < 1:
        raise ValueError("number of moments must be >= 1")
    if h_s.shape[1] != h_t.shape[1]:
        raise ValueError("embedding dims differ")
    ns, nt = h_s.shape[0], h_t.shape[0]
    ms, mt = h_s.mean(0), h_t.mean(0)
    cs, ct = h_s - ms, h_t - mt
    diff = ms - mt
    norm = float(np.linalg.norm(diff))
    value = norm
    unit = diff / norm if norm > 0 else np.zeros_like(diff)
    g_s = np.tile(unit / ns, (ns, 1))
    g_t = np.tile(-unit / nt, (nt, 1))
    for j in range(2, k + 1):
        pow_s, pow_t = cs ** (j - 1), ct ** (j - 1)
        d = (pow_s * cs).mean(0) - (pow_t * ct).mean(0)
        dn = float(np.linalg.norm(d))
        value += dn
        if dn == 0:
            continue
        u = d / dn
        # d c_j / d x_i = (j / n) * (x_i - m)^(j-1) - (j / n) * mean((x - m)^(j-1))
        g_s += (j / ns) * (pow_s - pow_s.mean(0)) * u
        g_t -= (j / nt) * (pow_t - pow_t.mean(0)) * u
    return value, g_s, g_t


def label_ce_grad(logits: np.ndarray, y_mass: np.ndarray, eps: float = CE_EPS):
    """Value and logit-gradient of ``-sum_c y_mass[j, c] * log(max(p[j, c], eps))``."""
    p = softmax(logits)
    active = p >= eps
    value = float(-(y_mass * np.log(np.maximum(p, eps))).sum())
    w = np.where(active, y_mass, 0.0)
    grad = w.sum(1, keepdims=True) * p - w
    return value, grad


@dataclass
class LossParts:
    ce: float
    transport: float = 0.0  # sum_ij gamma_ij * cost_ij
    cmd: float = 0.0
    total: float = 0.0


def loss_and_grads(model: GcnModel, adj_s, X_s, y_s, adj_t=None, X_t=None, plan=None, *,
                   lam: float = 0.0, alpha: float = 0.0, beta: float = 0.0,
                   src_idx=None, tgt_idx=None, cmd_moments: int = 0):
    """Source cross-entropy plus ``lam`` times a transport or CMD penalty.

    ``y_s`` are the labels of ``src_idx`` (all source nodes by default).  The
    coupling ``plan`` (shape ``len(src_idx) x len(tgt_idx)``) is a constant.
    Returns ``(loss, grads, parts)``.
    """
    logits_s, cache_s = forward(model, adj_s, X_s)
    n_s = logits_s.shape[0]
    src_idx = np.arange(n_s) if src_idx is None else np.asarray(src_idx)
    Y = one_hot(y_s, logits_s.shape[1])
    p_s = softmax(logits_s[src_idx])
    ce = float(-(Y * np.log(np.maximum(p_s, 1e-300))).sum() / len(src_idx))
    dlogits_s = np.zeros_like(logits_s)
    dlogits_s[src_idx] = (p_s - Y) / len(src_idx)
    dembed_s = np.zeros_like(cache_s.embedding)
    parts = LossParts(ce=ce)

    need_target = plan is not None or cmd_moments > 0
    if need_target:
        logits_t, cache_t = forward(model, adj_t, X_t)
        tgt_idx = np.arange(logits_t.shape[0]) if tgt_idx is None else np.asarray(tgt_idx)
        dlogits_t = np.zeros_like(logits_t)
        dembed_t = np.zeros_like(cache_t.embedding)
        h_s = cache_s.embedding[src_idx]
        h_t = cache_t.embedding[tgt_idx]

    if plan is not None:
        gamma = plan.gamma if hasattr(plan, "gamma") else np.asarray(plan, dtype=float)
        transport = 0.0
        if alpha:
            r = gamma.sum(1)
            c = gamma.sum(0)
            sq = ((h_s * h_s).sum(1) @ r + (h_t * h_t).sum(1) @ c
                  - 2.0 * float(np.sum(gamma * (h_s @ h_t.T))))
            transport += alpha * sq
            dembed_s[src_idx] += lam * alpha * 2.0 * (r[:, None] * h_s - gamma @ h_t)
            dembed_t[tgt_idx] += lam * alpha * 2.0 * (c[:, None] * h_t - gamma.T @ h_s)
        if beta:
            v, g = label_ce_grad(logits_t[tgt_idx], gamma.T @ Y)
            transport += beta * v
            dlogits_t[tgt_idx] += lam * beta * g
        parts.transport = float(transport)

    if cmd_moments > 0:
        v, g_s, g_t = cmd_discrepancy(h_s, h_t, cmd_moments)
        parts.cmd = v
        dembed_s[src_idx] += lam * g_s
        dembed_t[tgt_idx] += lam * g_t

    loss = ce + lam * (parts.transport + parts.cmd)
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss (ce={ce}, transport={parts.transport}, cmd={parts.cmd})")
    parts.total = loss
    grads = backward(model, adj_s, cache_s, dlogits_s, dembed_s)
    if need_target:
        grads_t = backward(model, adj_t, cache_t, dlogits_t, dembed_t)
        grads = [a + b for a, b in zip(grads, grads_t)]
    return loss, grads, parts


# -- optimizer -------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(model: GcnModel, grads, state: AdamState, lr: float,
              b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
    """One adaptive-moment update; returns ``(new_model, new_state)``."""
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(model.params(), grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return model.with_params(new_p), AdamState(new_m, new_v, t)


# -- checkpoints -----------------------------------------------------------

def _write_matrix(lines, name, a):
    shape = " ".join(str(s) for s in a.shape)
    lines.append(f"{name} {shape}")
    rows = a if a.ndim == 2 else a[None, :]
    lines.extend(" ".join(repr(float(x)) for x in row) for row in rows)


def save_model(model: GcnModel, path) -> None:
    lines = [CHECKPOINT_MAGIC, f"layers {model.num_layers}",
             "activations " + " ".join(model.activations)]
    for w in model.weights:
        _write_matrix(lines, "weight", w)
    _write_matrix(lines, "head_w", model.head_w)
    _write_matrix(lines, "head_b", model.head_b)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path) -> GcnModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a {CHECKPOINT_MAGIC!r} checkpoint")
    it = iter(enumerate(lines[1:], start=2))

    def read_block(expected):
        lineno, head = next(it)
        toks = head.split()
        if toks[0] != expected:
            raise ValueError(f"line {lineno}: expected {expected!r}")
        shape = tuple(int(s) for s in toks[1:])
        n_rows = shape[0] if len(shape) == 2 else 1
        rows = [list(map(float, next(it)[1].split())) for _ in range(n_rows)]
        return np.array(rows).reshape(shape)

    _, layers_line = next(it)
    k = int(layers_line.split()[1])
    _, act_line = next(it)
    acts = act_line.split()[1:]
    weights = [read_block("weight") for _ in range(k)]
    return GcnModel(weights, acts, read_block("head_w"), read_block("head_b"))
