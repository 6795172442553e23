"""Training loops for ERM, CMD and the transport-regularized GCONDA family."""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import gnn, ot
from .csbm import Graph
from .numerics import UndefinedMetricError, make_rng, roc_auc

log = logging.getLogger(__name__)

METHODS = ("ERM", "CMD", "GCONDA", "GCONDA_PP", "GCONDA_DIRL")
OT_METHODS = ("GCONDA", "GCONDA_PP", "GCONDA_DIRL")

# stream keys under the trial seed
_STREAM_INIT, _STREAM_SPLIT, _STREAM_BATCH = 101, 102, 103


@dataclass(frozen=True)
class TrainConfig:
    method: str = "ERM"
    lam: float = 1.0
    alpha: float = 0.0
    beta: float = 1.0
    cmd_moments: int = 5
    epochs: int = 200
    lr: float = 0.01
    seed: int = 0
    val_fraction: float = 0.2
    hidden: int = 16
    layers: int = 2
    activation: str = "silu"
    encoder: str = "gcn"  # "gcn" or "mlp"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.lam < 0 or self.alpha < 0 or self.beta < 0:
            raise ValueError("lam, alpha and beta must be non-negative")
        if self.method == "GCONDA" and not (self.alpha == 0 and self.beta > 0):
            raise ValueError("GCONDA uses the label cost only: alpha = 0, beta > 0")
        if self.method == "GCONDA_DIRL" and not (self.beta == 0 and self.alpha > 0):
            raise ValueError("GCONDA_DIRL uses the embedding cost only: beta = 0, alpha > 0")
        if self.method == "GCONDA_PP" and not (self.alpha > 0 and self.beta > 0):
            raise ValueError("GCONDA_PP needs alpha > 0 and beta > 0")
        if self.method == "CMD" and self.cmd_moments < 1:
            raise ValueError("CMD needs cmd_moments >= 1")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.encoder not in ("gcn", "mlp"):
            raise ValueError(f"unknown encoder {self.encoder!r}")

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in mapping.items():
            if key not in kinds:
                raise KeyError(f"unknown TrainConfig key {key!r}")
            kw[key] = _coerce(kinds[key], raw)
        return cls(**kw)

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        return cls.from_mapping(parse_key_values(text))


def _coerce(kind: str, raw):
    if not isinstance(raw, str):
        return raw
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_key_values(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


@dataclass
class EpochRecord:
    ce: float
    w1: float  # transport term; nan when unused
    cmd: float  # CMD term; nan when unused
    val_auc: float


@dataclass
class TrainReport:
    model: gnn.GcnModel
    history: list[EpochRecord]
    best_epoch: int
    config: TrainConfig
    final_model: gnn.GcnModel | None = None
    extras: dict = field(default_factory=dict)


class TrainingFailed(RuntimeError):
    def __init__(self, message, epoch):
        super().__init__(message)
        self.epoch = epoch


@dataclass
class PreparedGraph:
    graph: Graph
    adj: gnn.AdjacencyOp | None
    features: np.ndarray

    @classmethod
    def build(cls, g: Graph, encoder: str = "gcn") -> "PreparedGraph":
        adj = gnn.normalize_adjacency(g, "sym_selfloop") if encoder == "gcn" else None
        return cls(g, adj, g.features)


def split_source(labels: np.ndarray, val_fraction: float, rng: np.random.Generator):
    """Stratified train/validation split of source nodes."""
    train, val = [], []
    for cls_ in (-1, 1):
        idx = np.flatnonzero(labels == cls_)
        idx = idx[rng.permutation(idx.size)]
        k = max(1, int(round(val_fraction * idx.size)))
        val.append(idx[:k])
        train.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def positive_scores(logits: np.ndarray) -> np.ndarray:
    return gnn.softmax(logits)[:, 1]


def evaluate(model: gnn.GcnModel, g: Graph | PreparedGraph, encoder: str = "gcn", idx=None) -> dict:
    """AUC, mean log-loss and accuracy of ``model`` on (a subset of) ``g``."""
    pg = g if isinstance(g, PreparedGraph) else PreparedGraph.build(g, encoder)
    logits, _ = gnn.forward(model, pg.adj, pg.features)
    labels = pg.graph.labels
    if idx is not None:
        logits, labels = logits[idx], labels[idx]
    probs = gnn.softmax(logits)
    y = (labels > 0).astype(np.int64)
    p_true = probs[np.arange(y.size), y]
    out = {
        "logloss": float(-np.mean(np.log(np.maximum(p_true, 1e-300)))),
        "accuracy": float(np.mean(np.argmax(probs, axis=1) == y)),
    }
    try:
        out["auc"] = roc_auc(probs[:, 1], labels)
    except UndefinedMetricError:
        out["auc"] = math.nan
    return out


def shift_diagnostics(model: gnn.GcnModel, src: PreparedGraph, tgt: PreparedGraph,
                      cmd_moments: int = 5) -> dict:
    """Label-cost transport estimate and CMD between the two graphs' embeddings."""
    logits_s, cache_s = gnn.forward(model, src.adj, src.features)
    logits_t, cache_t = gnn.forward(model, tgt.adj, tgt.features)
    y = gnn.one_hot(src.graph.labels)
    p_t = gnn.softmax(logits_t)
    n = min(len(y), len(p_t))
    cost = ot.cost_label(y[:n], p_t[:n])
    plan = ot.solve_emd(cost)
    cmd, _, _ = gnn.cmd_discrepancy(cache_s.embedding, cache_t.embedding, cmd_moments)
    return {"w1_hat": ot.w1_estimate(plan, cost), "cmd_value": cmd}


def sample_batch(g: Graph, size: int, rng: np.random.Generator):
    """Uniform node sample and its induced subgraph.

    Returns ``(nodes, subgraph, adjacency)`` where the subgraph is relabelled
    ``0..size-1`` in the order of ``nodes`` (sorted).
    """
    if size <= 0:
        raise ValueError("batch size must be positive")
    if size > g.n:
        raise ValueError(f"batch size {size} exceeds node count {g.n}")
    nodes = np.sort(rng.choice(g.n, size=size, replace=False)) if size < g.n else np.arange(g.n)
    remap = -np.ones(g.n, dtype=np.int64)
    remap[nodes] = np.arange(size)
    keep = (remap[g.edges[:, 0]] >= 0) & (remap[g.edges[:, 1]] >= 0)
    sub_edges = remap[g.edges[keep]]
    sub = Graph(g.features[nodes], g.labels[nodes], sub_edges, g.mu, dict(g.meta))
    return nodes, sub, gnn.normalize_adjacency(sub, "sym_selfloop")


def train(cfg: TrainConfig, g_src: Graph, g_tgt: Graph, keep_final: bool = False) -> TrainReport:
    """Full-batch training on ``g_src`` with unlabeled ``g_tgt``.

    Each epoch: fix the model and build the transport cost, solve the plan,
    then take one optimizer step on the loss with the plan held constant.
    The returned model is the one with the best source-validation AUC
    (latest epoch on ties).
    """
    if g_src.d != g_tgt.d:
        raise ValueError("source and target feature dims differ")
    src = PreparedGraph.build(g_src, cfg.encoder)
    tgt = PreparedGraph.build(g_tgt, cfg.encoder)
    rng_init = make_rng(cfg.seed, _STREAM_INIT)
    rng_split = make_rng(cfg.seed, _STREAM_SPLIT)
    rng_batch = make_rng(cfg.seed, _STREAM_BATCH)

    train_idx, val_idx = split_source(g_src.labels, cfg.val_fraction, rng_split)
    if len(train_idx) > g_tgt.n:
        raise ValueError("target graph has fewer nodes than the source training batch")
    y_train = g_src.labels[train_idx]
    y_train_oh = gnn.one_hot(y_train)

    model = gnn.init_model(g_src.d, rng_init, hidden=cfg.hidden, layers=cfg.layers,
                           activation=cfg.activation)
    state = gnn.AdamState.zeros_like(model.params())
    use_ot = cfg.method in OT_METHODS
    use_cmd = cfg.method == "CMD"

    history: list[EpochRecord] = []
    best_auc, best_epoch, best_model = -math.inf, -1, model
    for epoch in range(cfg.epochs):
        plan = tgt_idx = None
        if use_ot:
            tgt_idx = np.sort(rng_batch.choice(g_tgt.n, size=len(train_idx), replace=False))
            _, cache_s = gnn.forward(model, src.adj, src.features)
            logits_t, cache_t = gnn.forward(model, tgt.adj, tgt.features)
            cost = ot.cost_joint(cache_s.embedding[train_idx], y_train_oh,
                                 cache_t.embedding[tgt_idx], gnn.softmax(logits_t[tgt_idx]),
                                 cfg.alpha, cfg.beta)
            plan = ot.solve_emd(cost)
        try:
            _, grads, parts = gnn.loss_and_grads(
                model, src.adj, src.features, y_train, tgt.adj, tgt.features, plan,
                lam=cfg.lam, alpha=cfg.alpha, beta=cfg.beta,
                src_idx=train_idx, tgt_idx=tgt_idx,
                cmd_moments=cfg.cmd_moments if use_cmd else 0,
            )
        except gnn.NonFiniteLossError as exc:
            raise TrainingFailed(str(exc), epoch) from exc
        model, state = gnn.adam_step(model, grads, state, cfg.lr)
        val = evaluate(model, src, idx=val_idx)
        history.append(EpochRecord(
            ce=parts.ce,
            w1=parts.transport if use_ot else math.nan,
            cmd=parts.cmd if use_cmd else math.nan,
            val_auc=val["auc"],
        ))
        if val["auc"] >= best_auc:
            best_auc, best_epoch, best_model = val["auc"], epoch, model
    return TrainReport(model=best_model, history=history, best_epoch=best_epoch, config=cfg,
                       final_model=model if keep_final else None)


def default_search_grid(cfg: TrainConfig) -> list[TrainConfig]:
    """Hyperparameter candidates for ``cfg.method``; the given config comes first."""
    vals = (0.01, 0.1, 1.0)
    if cfg.method == "GCONDA":
        cands = [replace(cfg, beta=b) for b in vals]
    elif cfg.method == "GCONDA_DIRL":
        cands = [replace(cfg, alpha=a) for a in vals]
    elif cfg.method == "GCONDA_PP":
        cands = [replace(cfg, alpha=a, beta=b) for a in vals for b in vals]
    elif cfg.method == "CMD":
        cands = [replace(cfg, cmd_moments=k) for k in (1, 3, 5)]
    else:
        cands = []
    return [cfg] + [c for c in cands if c != cfg]


def train_with_search(cfg: TrainConfig, g_src: Graph, g_tgt: Graph) -> TrainReport:
    """Pick hyperparameters by best source-validation AUC (first candidate wins ties)."""
    best = None
    for cand in default_search_grid(cfg):
        rep = train(cand, g_src, g_tgt)
        score = rep.history[rep.best_epoch].val_auc
        if best is None or score > best[0]:
            best = (score, rep)
    return best[1]


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
