"""Experiment suites behind the command line: sweeps, theory grid, Fig-1 style comparison, correlation.

Every suite reads its settings from a flat key=value config (shipped defaults
in ``gconda/configs``), derives all randomness from the base seed and the
position of a trial in the grid, and writes CSVs whose bytes do not depend
on the number of worker processes.
"""
from __future__ import annotations

import csv
import itertools
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import theory
from .csbm import CsbmParams, ShiftSpec, generate_csbm, generate_shifted_pair, generate_target
from .numerics import make_rng, pearson_r
from .trainer import (
    METHODS,
    PreparedGraph,
    TrainConfig,
    TrainingFailed,
    evaluate,
    parse_key_values,
    shift_diagnostics,
    train,
    train_with_search,
)

SUITES = ("sweep_pq", "sweep_delta", "theory", "fig1", "correlate")
_SUITE_KEY = {name: i + 1 for i, name in enumerate(SUITES)}
WORKERS_ENV = "GCONDA_WORKERS"


# -- settings ------------------------------------------------------------------

def _floats(raw: str) -> list[float]:
    return [float(t) for t in raw.split(",") if t.strip()]


def _strs(raw: str) -> list[str]:
    return [t.strip() for t in raw.split(",") if t.strip()]


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


SCHEMA = {
    "n": int, "d": int, "degree": float, "ratio": float, "signal": float,
    "points": _floats, "trials": int, "methods": _strs, "seed": int,
    "epochs": int, "lr": float, "hidden": int, "layers": int, "val_fraction": float,
    "lam": float, "alpha": float, "beta": float, "cmd_lam": float, "cmd_moments": int,
    "search": _bool, "theta_per_delta": float,
    "signals": _floats, "deltas": _floats, "r_tgts": _floats, "D_tgts": _floats,
    "r_src": float, "D_src": float, "n_samples": int, "n_graphs": int, "n_nodes": int,
    "qp_points": _floats, "delta_points": _floats, "pq_points": _floats, "pairs": int,
}


class SettingsError(ValueError):
    pass


def shipped_config_text(suite: str) -> str:
    return resources.files("gconda").joinpath("configs", f"{suite}.cfg").read_text(encoding="utf-8")


def suite_keys(suite: str) -> list[str]:
    return list(parse_key_values(shipped_config_text(suite)))


def _coerce_all(raw: dict[str, str], allowed: list[str], origin: str) -> dict:
    out = {}
    for key, value in raw.items():
        if key not in allowed:
            raise SettingsError(f"{origin}: unknown key {key!r}")
        try:
            out[key] = SCHEMA[key](value) if isinstance(value, str) else value
        except ValueError as exc:
            raise SettingsError(f"{origin}: bad value for {key}: {exc}") from None
    return out


def resolve_settings(suite: str, config_text: str | None = None, overrides: dict | None = None) -> dict:
    """Shipped defaults, then a user config file, then explicit overrides."""
    if suite not in SUITES:
        raise SettingsError(f"unknown suite {suite!r}")
    allowed = suite_keys(suite)
    st = _coerce_all(parse_key_values(shipped_config_text(suite)), allowed, f"{suite}.cfg")
    if config_text is not None:
        try:
            user = parse_key_values(config_text)
        except ValueError as exc:
            raise SettingsError(f"config: {exc}") from None
        st.update(_coerce_all(user, allowed, "config"))
    if overrides:
        st.update(_coerce_all({k: v for k, v in overrides.items() if v is not None}, allowed, "flag"))
    _validate(suite, st)
    return st


def _validate(suite: str, st: dict) -> None:
    for key in ("trials", "pairs", "n_graphs", "n_samples"):
        if key in st and st[key] < 1:
            raise SettingsError(f"{key} must be >= 1")
    for key in ("points", "signals", "deltas", "r_tgts", "D_tgts", "qp_points", "delta_points",
                "pq_points", "methods"):
        if key in st and not st[key]:
            raise SettingsError(f"{key} must not be empty")
    bad = [m for m in st.get("methods", []) if m not in METHODS]
    if bad:
        raise SettingsError(f"unknown methods {bad}; choose from {list(METHODS)}")


def worker_count(explicit: int | None = None) -> int:
    if explicit is not None:
        return max(1, explicit)
    raw = os.environ.get(WORKERS_ENV, "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        raise SettingsError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def derive_seed(*keys: int) -> int:
    """A 63-bit seed determined by ``keys`` (base seed first)."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1, np.uint64)[0] >> np.uint64(1))


def _pmap(fn, tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


# -- CSV ---------------------------------------------------------------------------

def fmt(value) -> str:
    """Shortest round-trip text: repr for floats, empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return "" if math.isnan(v) else repr(v)
    return str(value)


def write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in columns])


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# -- training sweeps ------------------------------------------------------------

RESULT_COLUMNS = [
    "suite", "method", "r_src", "r_tgt", "delta", "theta", "trial", "seed", "status",
    "auc", "logloss", "accuracy", "w1_hat", "cmd_value", "best_epoch",
    "lam", "alpha", "beta", "cmd_moments", "config_hash", "error",
]
SUMMARY_COLUMNS = [
    "suite", "method", "r_tgt", "delta", "theta", "n_ok", "n_failed",
    "auc_mean", "auc_std", "logloss_mean", "accuracy_mean", "w1_hat_mean", "cmd_value_mean",
]
TIMING_COLUMNS = ["suite", "method", "r_tgt", "delta", "trial", "wall_ms"]


@dataclass
class SuiteOutput:
    files: list[Path]
    n_failed: int
    lines: list[str]


def method_config(method: str, st: dict, seed: int) -> TrainConfig:
    common = dict(method=method, epochs=st["epochs"], lr=st["lr"], hidden=st["hidden"],
                  layers=st["layers"], val_fraction=st["val_fraction"], seed=seed,
                  cmd_moments=st["cmd_moments"])
    if method == "ERM":
        return TrainConfig(lam=0.0, alpha=0.0, beta=0.0, **common)
    if method == "CMD":
        return TrainConfig(lam=st["cmd_lam"], alpha=0.0, beta=0.0, **common)
    if method == "GCONDA":
        return TrainConfig(lam=st["lam"], alpha=0.0, beta=st["beta"], **common)
    if method == "GCONDA_DIRL":
        return TrainConfig(lam=st["lam"], alpha=st["alpha"], beta=0.0, **common)
    return TrainConfig(lam=st["lam"], alpha=st["alpha"], beta=st["beta"], **common)


def _shift_for(suite: str, point: float, st: dict) -> ShiftSpec:
    if suite == "sweep_pq":
        return ShiftSpec(ratio=point)
    return ShiftSpec(delta=point, theta=st["theta_per_delta"] * point)


def _source_params(st: dict) -> CsbmParams:
    return CsbmParams(n=st["n"], d=st["d"], degree=st["degree"], ratio=st["ratio"], signal=st["signal"])


def _sweep_task(task):
    suite, i, point, trial, st = task
    key = _SUITE_KEY[suite]
    spec = _shift_for(suite, point, st)
    src = _source_params(st)
    g_s, g_t = generate_shifted_pair(src, spec, make_rng(st["seed"], key, i, trial))
    seed = derive_seed(st["seed"], key, i, trial)
    rows, timing = [], []
    for method in st["methods"]:
        cfg = method_config(method, st, seed)
        row = {"suite": suite, "method": method, "r_src": src.ratio,
               "r_tgt": src.ratio if spec.ratio is None else spec.ratio,
               "delta": spec.delta, "theta": spec.theta, "trial": trial, "seed": seed}
        t0 = time.perf_counter()
        try:
            rep = train_with_search(cfg, g_s, g_t) if st["search"] else train(cfg, g_s, g_t)
        except TrainingFailed as exc:
            row.update(status="failed", error=f"epoch {exc.epoch}: {exc}", lam=cfg.lam, alpha=cfg.alpha,
                       beta=cfg.beta, cmd_moments=cfg.cmd_moments, config_hash=cfg.config_hash())
        else:
            ev = evaluate(rep.model, g_t)
            diag = shift_diagnostics(rep.model, PreparedGraph.build(g_s), PreparedGraph.build(g_t),
                                     rep.config.cmd_moments)
            c = rep.config
            row.update(status="ok", auc=ev["auc"], logloss=ev["logloss"], accuracy=ev["accuracy"],
                       w1_hat=diag["w1_hat"], cmd_value=diag["cmd_value"], best_epoch=rep.best_epoch,
                       lam=c.lam, alpha=c.alpha, beta=c.beta, cmd_moments=c.cmd_moments,
                       config_hash=c.config_hash())
        rows.append(row)
        timing.append({"suite": suite, "method": method, "r_tgt": row["r_tgt"], "delta": row["delta"],
                       "trial": trial, "wall_ms": round((time.perf_counter() - t0) * 1000.0, 1)})
    return rows, timing


def summarize(rows: list[dict]) -> list[dict]:
    """Mean and std per (method, shift point) over ok rows; failed rows are only counted.

    Accepts rows straight from a sweep or re-read from ``results.csv``.
    """
    def num(v):
        return float(v) if v not in (None, "") else math.nan

    groups: dict[tuple, list[dict]] = {}
    order: list[tuple] = []
    for r in rows:
        key = (r["suite"], r["method"], num(r["r_tgt"]), num(r["delta"]), num(r["theta"]))
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r)
    out = []
    for key in order:
        ok = [r for r in groups[key] if r["status"] == "ok"]
        rec = dict(zip(("suite", "method", "r_tgt", "delta", "theta"), key))
        rec["n_ok"], rec["n_failed"] = len(ok), len(groups[key]) - len(ok)
        for col in ("auc", "logloss", "accuracy", "w1_hat", "cmd_value"):
            vals = np.array([num(r[col]) for r in ok])
            rec[f"{col}_mean"] = float(np.mean(vals)) if len(vals) else math.nan
            if col == "auc":
                rec["auc_std"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else (0.0 if len(vals) else math.nan)
        out.append(rec)
    return out


def run_sweep(suite: str, st: dict, out_dir: Path, workers: int = 1) -> SuiteOutput:
    if suite not in ("sweep_pq", "sweep_delta"):
        raise SettingsError(f"not a sweep suite: {suite}")
    tasks = [(suite, i, float(p), t, st) for i, p in enumerate(st["points"]) for t in range(st["trials"])]
    results = _pmap(_sweep_task, tasks, workers)
    method_rank = {m: k for k, m in enumerate(st["methods"])}
    keyed = []
    for (_, i, _, t, _), (rows, timing) in zip(tasks, results):
        for row, tm in zip(rows, timing):
            keyed.append(((i, method_rank[row["method"]], t), row, tm))
    keyed.sort(key=lambda x: x[0])
    rows = [r for _, r, _ in keyed]
    summary = summarize(rows)
    out_dir = Path(out_dir)
    files = [out_dir / "results.csv", out_dir / "summary.csv", out_dir / "timing.csv"]
    write_csv(files[0], RESULT_COLUMNS, rows)
    write_csv(files[1], SUMMARY_COLUMNS, summary)
    write_csv(files[2], TIMING_COLUMNS, [tm for _, _, tm in keyed])
    xcol = "r_tgt" if suite == "sweep_pq" else "delta"
    lines = [f"{s['method']:<12} {xcol}={fmt(s[xcol]):<5} auc {100 * s['auc_mean']:6.2f} "
             f"+- {100 * s['auc_std']:5.2f}  (n={s['n_ok']}, failed={s['n_failed']})" for s in summary]
    return SuiteOutput(files, sum(s["n_failed"] for s in summary), lines)


# -- theory grid -------------------------------------------------------------------

THEORY_COLUMNS = [
    "m", "delta", "r_src", "r_tgt", "D_src", "D_tgt",
    "delta_yx_cf", "delta_yx_mc", "se_delta_yx",
    "delta_yh_cf", "delta_yh_mc", "se_delta_yh",
    "eps_t_f_cf", "eps_t_f_mc", "se_eps_t_f",
    "eps_t_fg_cf", "eps_t_fg_mc", "se_eps_t_fg",
    "eps_s_f_cf", "eps_s_fg_cf", "s1", "s_neg1",
    "delta_yh_clamped", "delta_yh_literal", "delta_yh_corrected", "eps_t_fg_corrected",
]


def _theory_task(task):
    i, inp, st = task
    row = theory.theory_row(inp, make_rng(st["seed"], _SUITE_KEY["theory"], i),
                            n_samples=st["n_samples"], n_graphs=st["n_graphs"],
                            n_nodes=st["n_nodes"], d=st["d"])
    cf = row.cf
    return {
        "m": inp.m, "delta": inp.delta, "r_src": inp.r_src, "r_tgt": inp.r_tgt,
        "D_src": inp.D_src, "D_tgt": inp.D_tgt,
        "delta_yx_cf": cf.delta_yx, "delta_yx_mc": row.delta_yx_mc.estimate, "se_delta_yx": row.delta_yx_mc.se,
        "delta_yh_cf": cf.delta_yh, "delta_yh_mc": row.delta_yh_mc.estimate, "se_delta_yh": row.delta_yh_mc.se,
        "eps_t_f_cf": cf.eps_t_f, "eps_t_f_mc": row.eps_t_f_mc.estimate, "se_eps_t_f": row.eps_t_f_mc.se,
        "eps_t_fg_cf": cf.eps_t_fg, "eps_t_fg_mc": row.eps_t_fg_mc.estimate, "se_eps_t_fg": row.eps_t_fg_mc.se,
        "eps_s_f_cf": cf.eps_s_f, "eps_s_fg_cf": cf.eps_s_fg, "s1": cf.s1, "s_neg1": cf.s_neg1,
        "delta_yh_clamped": cf.clamped,
        "delta_yh_literal": theory.conditional_shift_h_literal(inp),
        "delta_yh_corrected": theory.conditional_shift_h(inp, corrected=True),
        "eps_t_fg_corrected": theory.expected_error_fg(inp, corrected=True),
    }


def theory_grid(st: dict) -> list[theory.ShiftInputs]:
    return [theory.ShiftInputs(m=m, delta=dl, r_src=st["r_src"], r_tgt=r, D_src=st["D_src"], D_tgt=D)
            for m, dl, r, D in itertools.product(st["signals"], st["deltas"], st["r_tgts"], st["D_tgts"])]


def run_theory(st: dict, out_dir: Path, workers: int = 1) -> SuiteOutput:
    grid = theory_grid(st)
    rows = _pmap(_theory_task, [(i, inp, st) for i, inp in enumerate(grid)], workers)
    path = Path(out_dir) / "theory.csv"
    write_csv(path, THEORY_COLUMNS, rows)
    lines = [f"{len(rows)} grid points written"]
    return SuiteOutput([path], 0, lines)


# -- Fig-1 style comparison --------------------------------------------------------

FIG1_MODELS = {"MLP": dict(encoder="mlp", layers=2), "GCN1": dict(layers=1), "GCN2": dict(layers=2)}
FIG1_COLUMNS = ["sweep", "x", "r_tgt", "delta", "model", "trial", "status", "eps_s", "eps_t", "gap"]


def _fig1_targets(st: dict) -> list[tuple[str, float, ShiftSpec]]:
    out = [("pq", float(x), ShiftSpec(ratio=1.0 / x)) for x in st["qp_points"]]
    out += [("delta", float(x), ShiftSpec(delta=x)) for x in st["delta_points"]]
    return out


def _fig1_task(task):
    trial, st = task
    key = _SUITE_KEY["fig1"]
    p = _source_params(st)
    rng_src, rng_test = make_rng(st["seed"], key, trial).spawn(2)
    g_s = generate_csbm(p, rng_src)
    g_test = generate_target(p, ShiftSpec.identity(), g_s.mu, rng_test)
    targets = [(sweep, x, spec, generate_target(p, spec, g_s.mu, make_rng(st["seed"], key, trial, 1 + j)))
               for j, (sweep, x, spec) in enumerate(_fig1_targets(st))]
    seed = derive_seed(st["seed"], key, trial)
    rows = []
    for name, kw in FIG1_MODELS.items():
        cfg = TrainConfig(method="ERM", lam=0.0, beta=0.0, epochs=st["epochs"], lr=st["lr"],
                          hidden=st["hidden"], seed=seed, **kw)
        try:
            rep = train(cfg, g_s, g_s)
        except TrainingFailed as exc:
            rows += [{"sweep": sw, "x": x, "model": name, "trial": trial, "status": "failed",
                      "r_tgt": p.ratio if sp.ratio is None else sp.ratio, "delta": sp.delta}
                     for sw, x, sp, _ in targets]
            continue
        eps_s = 1.0 - evaluate(rep.model, g_test, cfg.encoder)["accuracy"]
        for sw, x, sp, g_t in targets:
            eps_t = 1.0 - evaluate(rep.model, g_t, cfg.encoder)["accuracy"]
            rows.append({"sweep": sw, "x": x, "r_tgt": p.ratio if sp.ratio is None else sp.ratio,
                         "delta": sp.delta, "model": name, "trial": trial, "status": "ok",
                         "eps_s": eps_s, "eps_t": eps_t, "gap": eps_t - eps_s})
    return rows


def fig1_wins(rows: list[dict], model: str = "GCN2", baseline: str = "MLP", top: int = 2) -> dict:
    """Per sweep and per most-shifted point: fraction of trials where ``model``'s gap exceeds ``baseline``'s."""
    gaps: dict[tuple, float] = {}
    xs: dict[str, set] = {}
    for r in rows:
        if r["status"] != "ok":
            continue
        gaps[(r["sweep"], float(r["x"]), r["model"], int(r["trial"]))] = float(r["gap"])
        xs.setdefault(r["sweep"], set()).add(float(r["x"]))
    out = {}
    trials = sorted({int(r["trial"]) for r in rows})
    for sweep, pts in xs.items():
        for x in sorted(pts)[-top:]:
            wins = [gaps[(sweep, x, model, t)] > gaps[(sweep, x, baseline, t)] for t in trials
                    if (sweep, x, model, t) in gaps and (sweep, x, baseline, t) in gaps]
            out[(sweep, x)] = sum(wins) / len(wins) if wins else math.nan
    return out


def run_fig1(st: dict, out_dir: Path, workers: int = 1) -> SuiteOutput:
    chunks = _pmap(_fig1_task, [(t, st) for t in range(st["trials"])], workers)
    rank = {m: k for k, m in enumerate(FIG1_MODELS)}
    rows = sorted((r for ch in chunks for r in ch),
                  key=lambda r: (r["sweep"] != "pq", r["x"], rank[r["model"]], r["trial"]))
    path = Path(out_dir) / "fig1.csv"
    write_csv(path, FIG1_COLUMNS, rows)
    n_failed = sum(r["status"] != "ok" for r in rows)
    lines = []
    for sweep in ("pq", "delta"):
        for x in sorted({r["x"] for r in rows if r["sweep"] == sweep}):
            parts = []
            for m in FIG1_MODELS:
                g = [r["gap"] for r in rows if r["sweep"] == sweep and r["x"] == x and r["model"] == m
                     and r["status"] == "ok"]
                parts.append(f"{m} {np.mean(g):+.3f}" if g else f"{m} n/a")
            label = "q'/p'" if sweep == "pq" else "delta"
            lines.append(f"{label}={fmt(x):<5} gap: " + "  ".join(parts))
    return SuiteOutput([path], n_failed, lines)


# -- shift-estimate correlation ------------------------------------------------------

CORRELATE_COLUMNS = ["pair", "kind", "r_tgt", "delta", "theta", "seed", "status", "w1_hat", "cmd_value", "auc"]


def correlate_pair_spec(k: int, st: dict) -> tuple[str, ShiftSpec]:
    """Pairs alternate between structure and feature shifts, cycling through each grid."""
    j = k // 2
    if k % 2 == 0:
        return "pq", ShiftSpec(ratio=st["pq_points"][j % len(st["pq_points"])])
    dl = st["delta_points"][j % len(st["delta_points"])]
    return "delta", ShiftSpec(delta=dl, theta=st["theta_per_delta"] * dl)


def _correlate_task(task):
    k, st = task
    key = _SUITE_KEY["correlate"]
    kind, spec = correlate_pair_spec(k, st)
    src = _source_params(st)
    g_s, g_t = generate_shifted_pair(src, spec, make_rng(st["seed"], key, k))
    seed = derive_seed(st["seed"], key, k)
    row = {"pair": k, "kind": kind, "r_tgt": src.ratio if spec.ratio is None else spec.ratio,
           "delta": spec.delta, "theta": spec.theta, "seed": seed}
    cfg = TrainConfig(method="ERM", lam=0.0, beta=0.0, epochs=st["epochs"], lr=st["lr"], hidden=st["hidden"],
                      layers=st["layers"], val_fraction=st["val_fraction"], seed=seed)
    try:
        rep = train(cfg, g_s, g_t)
    except TrainingFailed:
        row["status"] = "failed"
        return row
    diag = shift_diagnostics(rep.model, PreparedGraph.build(g_s), PreparedGraph.build(g_t), st["cmd_moments"])
    row.update(status="ok", w1_hat=diag["w1_hat"], cmd_value=diag["cmd_value"], auc=evaluate(rep.model, g_t)["auc"])
    return row


def correlation_summary(rows: list[dict]) -> dict:
    ok = [r for r in rows if r["status"] == "ok"]
    auc = [float(r["auc"]) for r in ok]
    return {
        "n_pairs": len(ok),
        "pearson_w1_auc": pearson_r([float(r["w1_hat"]) for r in ok], auc),
        "pearson_cmd_auc": pearson_r([float(r["cmd_value"]) for r in ok], auc),
    }


def run_correlate(st: dict, out_dir: Path, workers: int = 1) -> SuiteOutput:
    if st["pairs"] < 2:
        raise SettingsError("correlate needs at least 2 pairs")
    rows = _pmap(_correlate_task, [(k, st) for k in range(st["pairs"])], workers)
    summ = correlation_summary(rows)
    out_dir = Path(out_dir)
    files = [out_dir / "correlate.csv", out_dir / "summary.csv"]
    write_csv(files[0], CORRELATE_COLUMNS, rows)
    write_csv(files[1], ["statistic", "value"], [{"statistic": k, "value": v} for k, v in summ.items()])
    n_failed = sum(r["status"] != "ok" for r in rows)
    lines = [f"pairs {summ['n_pairs']}: r(W1, AUC) = {summ['pearson_w1_auc']:+.3f}, "
             f"r(CMD, AUC) = {summ['pearson_cmd_auc']:+.3f}"]
    return SuiteOutput(files, n_failed, lines)
