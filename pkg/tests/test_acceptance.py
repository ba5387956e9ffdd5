"""Acceptance criteria 1-10 on the shipped reference configurations.

Each test prints a single ``criterion N: PASS|FAIL`` line (collected again
in the terminal summary) and then asserts the same condition.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from eulalign import backend
from eulalign import diagnostics as dg
from eulalign import particles as pc
from eulalign.config import load, parse_config
from eulalign.integrate import StepControl
from eulalign.kernels import Kernel
from eulalign.runner import EXIT_BLOWUP, EXIT_OK, run
from eulalign.scenarios import UnidirectionalSpec, build_unidirectional

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _run(name, tmp_path_factory, threads=1):
    cfg = parse_config(load(CONFIGS / f"{name}.yaml"), strict=True)
    out = tmp_path_factory.mktemp(f"{name}-t{threads}")
    t0 = time.perf_counter()
    res = run(cfg, output_dir=out, threads=threads)
    backend.set_num_threads(1)
    return res, time.perf_counter() - t0, out, cfg


@pytest.fixture(scope="module")
def subcritical(tmp_path_factory):
    return _run("subcritical", tmp_path_factory)


@pytest.fixture(scope="module")
def supercritical(tmp_path_factory):
    return _run("supercritical", tmp_path_factory)


@pytest.fixture(scope="module")
def stability(tmp_path_factory):
    return _run("stability", tmp_path_factory)


@pytest.fixture(scope="module")
def mikado(tmp_path_factory):
    return _run("mikado", tmp_path_factory)


@pytest.fixture(scope="module")
def two_body(tmp_path_factory):
    return _run("two_body", tmp_path_factory)


def _two_agents():
    return pc.agents([[0.0, 0.0], [1.0, 0.5]], [[0.0, 0.0], [2.0, -1.0]], Kernel.constant(1.0))


def test_criterion_01_two_body(report):
    w0 = np.array([2.0, -1.0])
    t0 = time.perf_counter()
    f, ctl, worst = _two_agents(), StepControl(dt=1e-3), 0.0
    for k in range(5000):
        f = pc.step(f, ctl)
        exact = w0 * math.exp(-f.time)
        worst = max(worst, float(np.max(np.abs(f.vel[1] - f.vel[0] - exact) / np.abs(exact))))
    elapsed = time.perf_counter() - t0
    errs = []
    for dt in (0.2, 0.1, 0.05):
        g = pc.advance(_two_agents(), StepControl(dt=dt), 5.0)
        errs.append(float(np.max(np.abs(g.vel[1] - g.vel[0] - w0 * math.exp(-5.0)))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    ok = worst <= 1e-8 and bool(np.all(np.abs(orders - 4.0) <= 0.2)) and elapsed < 1.0
    report(1, ok, f"max rel err {worst:.2e} (<=1e-8), orders {np.round(orders, 3).tolist()} (4+-0.2), "
                  f"runtime {elapsed:.2f}s (<1s)")
    assert ok


def test_criterion_02_conservation(report, subcritical, supercritical, stability, mikado, two_body):
    lines, ok = [], True
    for name, (res, _, _, cfg) in [("subcritical", subcritical), ("supercritical", supercritical),
                                    ("stability", stability), ("two_body", two_body)]:
        c = res.verdict["conservation"]
        mp = res.verdict["max_principle"]
        good = (c["momentum_drift"] <= 1e-10 * c["momentum_scale"] and c["mass_drift"] == 0.0
                and mp["max_step_increase"] <= 1e-9)
        ok &= good
        lines.append(f"{name}: dP={c['momentum_drift']:.1e} rise={mp['max_step_increase']:.1e}")
    res = mikado[0]
    recs = res.records
    gm = np.array([r["global_momentum"] for r in recs])
    scale = 1.0 + float(np.max(np.abs(gm[0])))
    masses = np.array([[f["mass"] for f in r["flocks"]] for r in recs])
    frame = max(float(np.max(np.abs(f["frame_drift"]))) for r in recs for f in r["flocks"])
    good = (res.verdict["global_momentum_drift"] <= 1e-10 * scale and np.all(masses == masses[0])
            and res.verdict["max_principle"]["max_step_increase"] <= 1e-9 and frame <= 1e-10)
    ok &= bool(good)
    lines.append(f"mikado: dP={res.verdict['global_momentum_drift']:.1e} "
                 f"rise={res.verdict['max_principle']['max_step_increase']:.1e}")
    report(2, ok, "; ".join(lines))
    assert ok


def test_criterion_03_subcritical(report, subcritical):
    res, elapsed, _, _ = subcritical
    v = res.verdict
    fits = v["fits"]
    lb = v["entropy_lower_bound"]
    ok = (res.status == EXIT_OK and v["entropy_min"] >= -1e-8
          and fits["amplitude"]["rate"] > 0 and fits["amplitude"]["r_squared"] >= 0.98
          and all(fits[k]["rate"] > 0 and fits[k]["r_squared"] >= 0.95 for k in ("grad_sup", "hess_sup"))
          and lb["t_star"] is not None and lb["min_after"] >= 0.95 * lb["bound"]
          and res.state.size >= 1400 and elapsed <= 300)
    report(3, ok, f"N={res.state.size}, min e={v['entropy_min']:.3g}, "
                  f"A: d={fits['amplitude']['rate']:.3g} r2={fits['amplitude']['r_squared']:.4f}, "
                  f"grad: d={fits['grad_sup']['rate']:.3g} r2={fits['grad_sup']['r_squared']:.4f}, "
                  f"hess: d={fits['hess_sup']['rate']:.3g} r2={fits['hess_sup']['r_squared']:.4f}, "
                  f"t*={lb['t_star']}, min after t*={lb['min_after']:.3g} vs 0.95*{lb['bound']:.3g}, "
                  f"runtime {elapsed:.0f}s")
    assert ok


def test_criterion_04_traveling_wave(report, subcritical):
    v = subcritical[0].verdict
    fit = v["fits"]["traveling_wave"]
    gap = v["traveling_wave"]["relative_gap_T_minus_2"]
    ok = fit["rate"] > 0 and fit["r_squared"] >= 0.95 and gap is not None and gap <= 0.02
    report(4, ok, f"d={fit['rate']:.3g} r2={fit['r_squared']:.4f}, |rho(T-2)-rho(T)|/peak={gap:.2e} (<=0.02)")
    assert ok


def test_criterion_05_supercritical(report, supercritical):
    res, elapsed, _, cfg = supercritical
    v = res.verdict
    cls = v["classification"]
    info = v.get("blow_up") or {}
    cells = info.get("label_offset_cells")
    ok = (res.status == EXIT_BLOWUP and abs(cls["min_e0"] + 2.0) <= 1e-6 and cfg.step.method == "adaptive"
          and v["detected_blow_up_time"] <= 1.1 * (-1.0 / cls["min_e0"])
          and cells is not None and max(cells) <= 1.0 and elapsed < 60)
    report(5, ok, f"min e0={cls['min_e0']:.6g}, blow-up t={v['detected_blow_up_time']:.4g} "
                  f"(<= {1.1 * (-1.0 / cls['min_e0']):.3g}), label offset {cells} cells, runtime {elapsed:.0f}s")
    assert ok


def _entropy_gap_run(grid, dt, T=5.0):
    spec = UnidirectionalSpec((1.0, 0.0), "0.2 + 0.4*sin(pi*x2/2) - 0.2*sin(pi*x1/2)*cos(pi*x2/2)",
                              "cos(pi*x1/2)**2 * cos(pi*x2/2)**2", grid=grid,
                              box=([-1.0, -1.0], [1.0, 1.0]), kernel=Kernel.algebraic(1.0))
    f = build_unidirectional(spec).flock
    ctl = StepControl(dt=dt)
    worst = dg.entropy_gap(f)
    for k in range(1, 11):
        f = pc.advance(f, ctl, T * k / 10)
        worst = max(worst, dg.entropy_gap(f))
    return worst


def test_criterion_06_entropy_cross_check(report):
    levels = [(10, 0.2), (20, 0.1), (40, 0.05)]
    gaps = [_entropy_gap_run(g, dt) for g, dt in levels]
    orders = np.log2(np.array(gaps[:-1]) / np.array(gaps[1:]))
    ok = bool(np.all(orders >= 1.8))
    report(6, ok, f"gaps {[f'{g:.2e}' for g in gaps]}, orders {np.round(orders, 2).tolist()} (>=1.8)")
    assert ok


def test_criterion_07_residual(report, subcritical, supercritical):
    worst = 0.0
    for res in (subcritical[0], supercritical[0]):
        for r in res.records:
            scale = max(r["grad_sup"], 1.0)
            worst = max(worst, r["residual_sup"] / scale**2)
    ok = worst <= 1e-10
    report(7, ok, f"max residual_sup/scale^2 = {worst:.2e} (<=1e-10) over both unidirectional runs")
    assert ok


def test_criterion_08_stability(report, stability):
    res, elapsed, _, cfg = stability
    eps = cfg.spec.eps
    recs = res.records
    f0 = res.state
    E = max(r["residual_sup"] for r in recs)
    e_min = min(r["entropy_min"] for r in recs)
    e_max = max(r["entropy_max"] for r in recs)
    e0_sup = max(abs(recs[0]["entropy_min"]), abs(recs[0]["entropy_max"]))
    C0 = 2.0 * max(e0_sup, f0.total_mass * f0.kernel.sup)
    gv = max(r["grad_v_sup"] for r in recs) / eps
    blocks = max(r["block_norms"]["d1v"] + r["block_norms"]["d2v"] for r in recs)
    ok = (E < eps and 0.5 * math.sqrt(eps) <= e_min and e_max <= C0 and gv <= 10.0
          and blocks <= 10.0 * eps**1.5 and cfg.step.t_end == 50.0 and elapsed <= 600)
    report(8, ok, f"E_max={E:.2e} (<{eps}), e in [{e_min:.4f}, {e_max:.4f}] within [{0.5 * math.sqrt(eps):.3g}, "
                  f"{C0:.3g}], sup|grad v|/eps={gv:.3g} (<=10), |d1v|+|d2v|={blocks:.2e} "
                  f"(<= {10 * eps**1.5:.2e}), runtime {elapsed:.0f}s")
    assert ok


def test_criterion_09_mikado(report, mikado):
    res, elapsed, _, cfg = mikado
    v = res.verdict
    fits = v["fits"]
    glob = fits["global_amplitude"]
    local = [f["amplitude"]["rate"] for f in fits["flocks"]]
    ok = (len(local) == 3 and all(d >= 5 * glob["rate"] for d in local) and glob["rate"] > 0
          and min(v["entropy_min"]) >= -1e-8 and v["momentum_tracking_error"] <= 1e-6
          and glob["r_squared"] >= 0.95 and cfg.spec.eps == 0.01 and elapsed <= 900)
    report(9, ok, f"local d={np.round(local, 3).tolist()} vs global d={glob['rate']:.3g} (x5), "
                  f"min e_a={min(v['entropy_min']):.3g}, tracking={v['momentum_tracking_error']:.1e}, "
                  f"global r2={glob['r_squared']:.4f}, runtime {elapsed:.0f}s")
    assert ok


@pytest.mark.skipif("compiled" not in backend.available(), reason="thread count only matters for the compiled core")
def test_criterion_10_determinism(report, subcritical, tmp_path_factory):
    _, _, out1, _ = subcritical
    _, _, out8, _ = _run("subcritical", tmp_path_factory, threads=8)
    a = (out1 / "series.ndjson").read_bytes()
    b = (out8 / "series.ndjson").read_bytes()
    ok = a == b and len(a) > 0
    report(10, ok, f"series.ndjson with 1 and 8 workers: {len(a)} vs {len(b)} bytes, identical={a == b}")
    assert ok
