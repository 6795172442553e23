"""Self-contained verification suites: exact transport vs enumeration, gradients vs finite differences.

Shared by the ``selftest`` subcommand and the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gnn, ot

GRAD_CONFIGS = ("ERM", "GCONDA", "GCONDA_PP", "CMD")


@dataclass
class CheckResult:
    name: str
    passed: int = 0
    failed: int = 0
    worst: float = 0.0
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.failed == 0 and self.passed > 0

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.name}: {self.passed} passed, {self.failed} failed, worst {self.worst:.3g}"


def ot_oracle_check(n_instances: int = 200, max_n: int = 7, seed: int = 0, tol: float = 1e-9) -> CheckResult:
    """Exact solver against permutation enumeration on random costs, plus marginal feasibility."""
    rng = np.random.default_rng(seed)
    res = CheckResult(f"ot-exactness (n <= {max_n})")
    for _ in range(n_instances):
        n = int(rng.integers(1, max_n + 1))
        cost = rng.random((n, n)) * rng.choice([1.0, 10.0, 100.0])
        if rng.random() < 0.25:
            cost = np.round(cost)  # force ties
        plan = ot.solve_emd(cost)
        ref = ot.brute_force_emd(cost)
        err = max(abs(plan.total_cost - ref.total_cost),
                  float(np.max(np.abs(plan.gamma.sum(0) - 1.0 / n))),
                  float(np.max(np.abs(plan.gamma.sum(1) - 1.0 / n))),
                  abs(ot.w1_estimate(plan, cost) - plan.total_cost))
        res.worst = max(res.worst, err)
        if err <= tol:
            res.passed += 1
        else:
            res.failed += 1
    return res


def _instance(rng: np.random.Generator, n: int = 8, d: int = 5):
    def graph():
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.35]
        edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
        return gnn.normalize_adjacency((n, edges), "sym_selfloop"), rng.standard_normal((n, d))

    adj_s, X_s = graph()
    adj_t, X_t = graph()
    y = np.where(np.arange(n) % 2 == 0, 1, -1)
    rng.shuffle(y)
    act = str(rng.choice(["silu", "identity"]))
    model = gnn.init_model(d, rng, hidden=4, layers=2, activation=act)
    # larger-than-init weights so the loss surface is not nearly linear
    model = model.with_params([p * 2.0 + 0.1 * rng.standard_normal(p.shape) for p in model.params()])
    return model, adj_s, X_s, y, adj_t, X_t


def _loss_kwargs(method: str, rng: np.random.Generator):
    lam = float(rng.uniform(0.5, 2.0))
    if method == "ERM":
        return dict(lam=0.0)
    if method == "GCONDA":
        return dict(lam=lam, alpha=0.0, beta=float(rng.uniform(0.1, 1.0)))
    if method == "GCONDA_PP":
        return dict(lam=lam, alpha=float(rng.uniform(0.1, 1.0)), beta=float(rng.uniform(0.1, 1.0)))
    if method == "CMD":
        return dict(lam=lam, cmd_moments=int(rng.integers(1, 6)))
    raise ValueError(f"no gradient check for {method!r}")


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)`` per parameter tensor (0 when both vanish)."""
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)))
    return 0.0 if scale == 0.0 else float(np.linalg.norm(a - b)) / scale


def gradient_check(method: str, n_instances: int = 50, seed: int = 0, step: float = 1e-4,
                   tol: float = 1e-4) -> CheckResult:
    """Analytic gradients of ``loss_and_grads`` against central differences on 8-node graphs."""
    rng = np.random.default_rng([seed, GRAD_CONFIGS.index(method)])
    res = CheckResult(f"gradients {method}")
    for _ in range(n_instances):
        model, adj_s, X_s, y, adj_t, X_t = _instance(rng)
        kw = _loss_kwargs(method, rng)
        plan = None
        if method in ("GCONDA", "GCONDA_PP"):
            perm = rng.permutation(len(y))
            gamma = np.zeros((len(y), len(y)))
            gamma[np.arange(len(y)), perm] = 1.0 / len(y)
            plan = ot.TransportPlan(gamma, 0.0, perm)
        needs_t = plan is not None or kw.get("cmd_moments", 0) > 0

        def loss_at(params):
            m = model.with_params(params)
            return gnn.loss_and_grads(m, adj_s, X_s, y, adj_t if needs_t else None,
                                      X_t if needs_t else None, plan, **kw)

        _, grads, _ = loss_at(model.params())
        params = [p.copy() for p in model.params()]
        worst = 0.0
        for k, p in enumerate(params):
            num = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                orig = p[idx]
                p[idx] = orig + step
                up = loss_at(params)[0]
                p[idx] = orig - step
                down = loss_at(params)[0]
                p[idx] = orig
                num[idx] = (up - down) / (2.0 * step)
            worst = max(worst, relative_error(grads[k], num))
        res.worst = max(res.worst, worst)
        if worst <= tol:
            res.passed += 1
        else:
            res.failed += 1
    return res


def run_all(quick: bool = False) -> list[CheckResult]:
    n_grad = 5 if quick else 50
    out = [ot_oracle_check(20 if quick else 200)]
    out += [gradient_check(m, n_grad) for m in GRAD_CONFIGS]
    return out
