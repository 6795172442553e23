"""End-to-end acceptance criteria.

Each criterion runs at its stated tolerance and records one PASS/FAIL line,
printed in the pytest terminal summary (and to stdout when run directly).
Suites run with the shipped configs; ``GCONDA_WORKERS`` sets the pool size.
Deselect with ``-m "not acceptance"``.
"""
import itertools
import math
import sys

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from gconda import checks
from gconda import experiments as ex
from gconda import theory as th
from gconda.numerics import std_normal_cdf

pytestmark = pytest.mark.acceptance

WORKERS = ex.worker_count()


def verdict(k: int, ok: bool, detail: str) -> None:
    line = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[k] = line
    print(line)
    assert ok, line


def _f(row, col):
    return float(row[col])


# -- shared suite runs -----------------------------------------------------------

@pytest.fixture(scope="module")
def theory_rows(tmp_path_factory):
    out = tmp_path_factory.mktemp("theory")
    ex.run_theory(ex.resolve_settings("theory"), out, WORKERS)
    return ex.read_csv(out / "theory.csv")


@pytest.fixture(scope="module")
def fig1_rows(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig1")
    ex.run_fig1(ex.resolve_settings("fig1"), out, WORKERS)
    return ex.read_csv(out / "fig1.csv")


def _sweep(tmp_path_factory, suite, points):
    out = tmp_path_factory.mktemp(suite)
    st = ex.resolve_settings(suite, None, {"points": points, "trials": "30"})
    ex.run_sweep(suite, st, out, WORKERS)
    return ex.read_csv(out / "results.csv"), ex.read_csv(out / "summary.csv")


@pytest.fixture(scope="module")
def pq_sweep(tmp_path_factory):
    return _sweep(tmp_path_factory, "sweep_pq", "1,5,10")


@pytest.fixture(scope="module")
def delta_sweep(tmp_path_factory):
    return _sweep(tmp_path_factory, "sweep_delta", "0.5,1.0")


def _cell(summary, method, col, value):
    (row,) = [r for r in summary if r["method"] == method and float(r[col]) == value]
    return row


def _aucs(results, method, col, value):
    return np.array([_f(r, "auc") for r in results
                     if r["method"] == method and float(r[col]) == value and r["status"] == "ok"])


# -- 1-4: theory -----------------------------------------------------------------

def test_criterion_01_conditional_shift_matches_oracles(theory_rows):
    assert len(theory_rows) == 48
    bad_x, bad_h, worst_h = [], [], 0.0
    for r in theory_rows:
        pt = f"(m={r['m']}, delta={r['delta']}, r'={r['r_tgt']})"
        err = abs(_f(r, "delta_yx_cf") - _f(r, "delta_yx_mc"))
        if err > max(3 * _f(r, "se_delta_yx"), 0.01):
            bad_x.append(pt)
        err = abs(_f(r, "delta_yh_cf") - _f(r, "delta_yh_mc"))
        worst_h = max(worst_h, err)
        if err > max(3 * _f(r, "se_delta_yh"), 0.05):
            bad_h.append(pt)
    verdict(1, not bad_x and not bad_h,
            f"feature-level misses {len(bad_x)}/48, graph-level misses {len(bad_h)}/48 "
            f"(worst graph-level error {worst_h:.3f}) {' '.join(bad_h[:4])}")


def test_criterion_02_error_formulas_match_oracles(theory_rows):
    bad_f, bad_fg, bad_src = [], [], []
    for r in theory_rows:
        pt = f"(m={r['m']}, delta={r['delta']}, r'={r['r_tgt']})"
        if abs(_f(r, "eps_t_f_cf") - _f(r, "eps_t_f_mc")) > max(3 * _f(r, "se_eps_t_f"), 0.01):
            bad_f.append(pt)
        if abs(_f(r, "eps_t_fg_cf") - _f(r, "eps_t_fg_mc")) > max(3 * _f(r, "se_eps_t_fg"), 0.05):
            bad_fg.append(pt)
        if _f(r, "delta") == 0:
            exact = 1.0 - float(std_normal_cdf(_f(r, "m")))
            if abs(_f(r, "eps_t_f_mc") - exact) > 3 * _f(r, "se_eps_t_f"):
                bad_src.append(pt)
    verdict(2, not (bad_f or bad_fg or bad_src),
            f"eps_T(f) misses {len(bad_f)}/48, eps_T(f.g) misses {len(bad_fg)}/48, "
            f"delta=0 source-error misses {len(bad_src)}/12 {' '.join(bad_fg[:4])}")


def test_criterion_03_shift_bounds_error_gap(theory_rows):
    bad = 0
    for r in theory_rows:
        bad += _f(r, "delta_yx_cf") < abs(_f(r, "eps_t_f_cf") - _f(r, "eps_s_f_cf")) - 1e-9
        bad += _f(r, "delta_yh_cf") < abs(_f(r, "eps_t_fg_cf") - _f(r, "eps_s_fg_cf")) - 1e-9
    verdict(3, bad == 0, f"{bad} violations over 48 points x 2 closed-form pairs")


def test_criterion_04_amplification_identity():
    worst, structure_only = 0.0, []
    for m, dl, r in itertools.product([0.5, 1.0, 2.0], [0.0, 0.25, 0.5, 1.0], [0.5, 1.0, 3.0, 5.0]):
        inp = th.ShiftInputs(m=m, delta=dl, r_tgt=r, D_tgt=10)
        s1, s_neg1 = th.latent_centroids(inp)
        b1, b_neg1 = th.latent_centroids(inp.at_delta(0.0))
        amp = math.sqrt(10) * dl * m
        worst = max(worst, abs(abs(s1 - b1) - amp), abs(abs(s_neg1 - b_neg1) - amp))
        if dl == 0:
            structure_only.append(th.conditional_shift_x(m, 0.0))
    ok = worst <= 1e-12 and all(v == 0.0 for v in structure_only)
    verdict(4, ok, f"worst identity error {worst:.2e}; structure-only delta_yx values all zero: "
                   f"{all(v == 0.0 for v in structure_only)}")


# -- 5: MLP vs GCN -----------------------------------------------------------------

def test_criterion_05_gcn_gap_exceeds_mlp(fig1_rows):
    wins = ex.fig1_wins(fig1_rows, "GCN2", "MLP", top=2)
    eps_s = {m: np.mean([_f(r, "eps_s") for r in fig1_rows if r["model"] == m and r["status"] == "ok"])
             for m in ("MLP", "GCN2")}
    ok = len(wins) == 4 and all(v >= 0.8 for v in wins.values())
    detail = ", ".join(f"{s} {x:g}: {100 * v:.0f}%" for (s, x), v in sorted(wins.items()))
    verdict(5, ok, f"GCN2 gap > MLP gap in {detail} of 20 seeds "
                   f"(source error MLP {eps_s['MLP']:.3f}, GCN2 {eps_s['GCN2']:.3f})")


# -- 6-7: training sweeps --------------------------------------------------------

PAPER_PQ = {1.0: 62.6, 5.0: 94.9, 10.0: 97.8}
PAPER_DELTA = {0.5: 80.2, 1.0: 56.8}


def test_criterion_06_structure_shift_table(pq_sweep):
    results, summary = pq_sweep
    notes, ok = [], True
    for x, ref in PAPER_PQ.items():
        erm = 100 * _f(_cell(summary, "ERM", "r_tgt", x), "auc_mean")
        gc = 100 * _f(_cell(summary, "GCONDA", "r_tgt", x), "auc_mean")
        cmd = 100 * _f(_cell(summary, "CMD", "r_tgt", x), "auc_mean")
        band = abs(erm - ref) <= 6
        ok &= band and gc >= erm
        notes.append(f"p/q={x:g}: ERM {erm:.1f} (ref {ref}{'' if band else ' OUT'}) "
                     f"GCONDA {gc:.1f} CMD {cmd:.1f}")
    gap = 100 * (_f(_cell(summary, "GCONDA", "r_tgt", 1.0), "auc_mean")
                 - _f(_cell(summary, "ERM", "r_tgt", 1.0), "auc_mean"))
    ok &= gap >= 3
    g, c = _aucs(results, "GCONDA", "r_tgt", 1.0), _aucs(results, "CMD", "r_tgt", 1.0)
    # one-sided: fail only if CMD is ahead by more than 1.645 standard errors of the difference
    se = math.sqrt(g.var(ddof=1) / len(g) + c.var(ddof=1) / len(c))
    vs_cmd = g.mean() - c.mean() >= -1.645 * se
    ok &= vs_cmd
    verdict(6, ok, "; ".join(notes) + f"; gap at p/q=1 {gap:+.1f} (need >= 3); "
                   f"GCONDA vs CMD at p/q=1 {'ok' if vs_cmd else 'behind'}")


def test_criterion_07_feature_shift_table(delta_sweep):
    _, summary = delta_sweep
    notes, ok = [], True
    for x, ref, floor in ((0.5, 80.2, 93.0), (1.0, 56.8, 88.0)):
        erm = 100 * _f(_cell(summary, "ERM", "delta", x), "auc_mean")
        gc = 100 * _f(_cell(summary, "GCONDA", "delta", x), "auc_mean")
        ok &= abs(erm - ref) <= 8 and gc >= floor
        notes.append(f"delta={x:g}: ERM {erm:.1f} (ref {ref} +-8) GCONDA {gc:.1f} (need >= {floor:g})")
    verdict(7, ok, "; ".join(notes))


# -- 8: shift estimates vs AUC -------------------------------------------------------

def test_criterion_08_transport_estimate_tracks_auc(tmp_path):
    st = ex.resolve_settings("correlate")
    assert st["pairs"] >= 40
    ex.run_correlate(st, tmp_path, WORKERS)
    summ = {r["statistic"]: float(r["value"]) for r in ex.read_csv(tmp_path / "summary.csv")}
    r_w, r_c = summ["pearson_w1_auc"], summ["pearson_cmd_auc"]
    verdict(8, abs(r_w) > abs(r_c) and r_w < 0,
            f"{summ['n_pairs']:.0f} pairs: r(W1, AUC) = {r_w:+.3f}, r(CMD, AUC) = {r_c:+.3f}")


# -- 9-10: exactness and gradients -------------------------------------------------

def test_criterion_09_transport_exactness():
    res = checks.ot_oracle_check(200, max_n=7, seed=2024, tol=1e-9)
    verdict(9, res.ok and res.passed == 200, res.line())


def test_criterion_10_gradient_suite():
    results = [checks.gradient_check(m, 50, seed=2024, tol=1e-4) for m in checks.GRAD_CONFIGS]
    ok = all(r.ok and r.passed == 50 for r in results)
    verdict(10, ok, "; ".join(f"{r.name.split()[-1]} {r.passed}/50 worst {r.worst:.1e}" for r in results))


# -- 11: determinism ---------------------------------------------------------------

SMALL = {
    "sweep_pq": {"points": "1,10", "trials": "2", "epochs": "25"},
    "sweep_delta": {"points": "0.5,1.0", "trials": "2", "epochs": "25"},
    "theory": {"signals": "1", "deltas": "0,0.5", "r_tgts": "1,5", "n_graphs": "10", "n_nodes": "400",
               "n_samples": "10000"},
    "fig1": {"trials": "2", "qp_points": "1,5", "delta_points": "0,1", "epochs": "25", "n": "200"},
    "correlate": {"pairs": "4", "epochs": "25"},
}


def _run(suite, st, out, workers):
    if suite.startswith("sweep"):
        return ex.run_sweep(suite, st, out, workers)
    return {"theory": ex.run_theory, "fig1": ex.run_fig1, "correlate": ex.run_correlate}[suite](st, out, workers)


def test_criterion_11_determinism(tmp_path):
    mismatched = []
    for suite, over in SMALL.items():
        st = ex.resolve_settings(suite, None, over)
        a = _run(suite, st, tmp_path / suite / "a", 1)
        b = _run(suite, st, tmp_path / suite / "b", 2)
        for fa, fb in zip(a.files, b.files):
            if fa.name != "timing.csv" and fa.read_bytes() != fb.read_bytes():
                mismatched.append(f"{suite}/{fa.name}")
    verdict(11, not mismatched, f"5 suites rerun (1 vs 2 workers), mismatched files: {mismatched or 'none'}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
