"""Run orchestration and artifact writing.

A run samples its observables on a fixed time grid and writes

* ``series.ndjson``: one JSON record per sample time;
* ``verdict.json``: classification, blow-up report, fits and final state summaries;
* ``profiles.csv``: density snapshots (when a profile grid is configured).

Exit status is 0 on success and 2 when the blow-up sensor fired.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backend
from . import diagnostics as dg
from . import multiflock as mf
from . import particles as pc
from .config import RunConfig
from .entropy import classify, lower_bound
from .integrate import BlowUpDetected
from .scenarios import build_agents, build_perturbed, build_unidirectional, limiting_velocity

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_BLOWUP = 2


@dataclass
class RunResult:
    status: int
    verdict: dict
    records: list
    profiles: list = field(default_factory=list)
    state: object = None


def build_state(cfg: RunConfig):
    """Initial state and t=0 classification (``None`` for agent runs)."""
    sp = cfg.spec
    if cfg.scenario == "unidirectional":
        b = build_unidirectional(sp)
        return b.flock, b.verdict
    if cfg.scenario == "perturbed":
        b = build_perturbed(sp)
        return b.flock, b.verdict
    if cfg.scenario == "agents":
        fl = build_agents(sp.positions, sp.velocities, cfg.kernel, cfg.domain, count=sp.count,
                          dim=sp.dim, seed=cfg.seed, spread=sp.spread, speed=sp.speed)
        if sp.mass is not None:
            fl = fl.replace(mass=np.asarray(sp.mass, dtype=float))
        return fl, None
    state = mf.build_mikado([f.spec for f in sp.flocks], [f.X0 for f in sp.flocks],
                            [f.V0 for f in sp.flocks], sp.psi, sp.eps)
    return state, mf.entropy_verdicts(state)


def sample_times(t_end: float, every: float, extra=()) -> list[float]:
    k = int(math.floor(t_end / every + 1e-9))
    ts = {round(i * every, 12) for i in range(k + 1)} | {round(t_end, 12)}
    ts |= {round(t, 12) for t in extra if t <= t_end + 1e-12}
    return sorted(ts)


def observe_multi(state: mf.MultiFlockState) -> dict:
    lab = mf.lab_velocities(state)
    allv = np.concatenate(lab)
    rec = {"time": float(state.time),
           "global_amplitude": dg._pair_max_free(allv),
           "macro_amplitude": dg._pair_max_free(state.V),
           "global_momentum": mf.global_momentum(state).tolist(),
           "macro_X": state.X.tolist(), "macro_V": state.V.tolist(),
           "damping": mf.damping_coefficients(state).tolist(),
           "flocks": []}
    drift = mf.frame_drift(state)
    for a, f in enumerate(state.flocks):
        g = pc.velocity_gradients(f)
        rec["flocks"].append({
            "amplitude": dg.amplitude(f), "diameter": dg.diameter(f),
            "entropy_min": float(np.min(f.entropy.values)), "entropy_max": float(np.max(f.entropy.values)),
            "residual_sup": dg.residual_sup(f, g), "grad_sup": dg.grad_sup(f, g),
            "frame_drift": drift[a].tolist(),
            "lab_momentum": (drift[a] + state.V[a]).tolist(),
            "mass": f.total_mass,
            "vel_max": np.max(f.vel, axis=0).tolist(), "vel_min": np.min(f.vel, axis=0).tolist(),
        })
    return rec


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _fit(times, values, window):
    try:
        return dg.fit_decay(times, values, window).to_dict()
    except ValueError as exc:
        return {"error": str(exc)}


def _window(cfg: RunConfig, T: float):
    return cfg.fit_window or (0.25 * T, T)


def run(cfg: RunConfig, output_dir=None, threads: int | None = None, write: bool = True) -> RunResult:
    """Execute a configured run and (optionally) write its artifacts."""
    if threads is not None:
        backend.set_num_threads(threads)
    out = Path(output_dir or cfg.output_dir)
    state, verdict0 = build_state(cfg)
    ctl = cfg.step
    prof_times = []
    if cfg.profile is not None:
        prof_times = sample_times(ctl.t_end, cfg.profile.every)
    times = sample_times(ctl.t_end, cfg.sample_every, prof_times)
    prof_set = set(prof_times)
    multi = cfg.scenario == "multiflock"

    def observe(s):
        return observe_multi(s) if multi else dg.observe(s, hessian=cfg.hessian)

    records, profiles = [], []
    blow = None
    watch = _ExtremaWatch(state, multi)
    series_fh = None
    if write:
        out.mkdir(parents=True, exist_ok=True)
        series_fh = open(out / "series.ndjson", "w", encoding="utf-8")
    try:
        for t in times:
            if t > state.time:
                try:
                    state = (mf.advance(state, ctl, t, watch) if multi
                             else pc.advance(state, ctl, t, watch))
                except BlowUpDetected as exc:
                    blow = exc
                    break
            rec = _clean(observe(state))
            records.append(rec)
            if series_fh is not None:
                series_fh.write(json.dumps(rec, sort_keys=True) + "\n")
            if cfg.profile is not None and t in prof_set and not multi:
                profiles.append((float(state.time), dg.density_profile(state, cfg.profile.grid)))
    finally:
        if series_fh is not None:
            series_fh.close()

    verdict = _verdict(cfg, state, verdict0, records, profiles, blow)
    verdict["max_principle"] = watch.summary()
    status = EXIT_BLOWUP if blow is not None else EXIT_OK
    verdict["exit_status"] = status
    if write:
        with open(out / "verdict.json", "w", encoding="utf-8") as fh:
            json.dump(_clean(verdict), fh, indent=2, sort_keys=True)
        if profiles:
            _write_profiles(out / "profiles.csv", cfg.profile.grid, profiles)
    return RunResult(status, _clean(verdict), records, profiles, state)


class _ExtremaWatch:
    """Largest one-step rise of any velocity maximum (or fall of any minimum).

    Multi-flock runs are checked per flock in the moving frame.
    """

    def __init__(self, state, multi: bool):
        if multi:
            self.keys = [f"{a}:vel" for a in range(state.count)]
            vels = [f.vel for f in state.flocks]
        else:
            self.keys = ["vel"]
            vels = [state.vel]
        self.hi = [v.max(axis=0) for v in vels]
        self.lo = [v.min(axis=0) for v in vels]
        self.rise = 0.0
        self.steps = 0

    def __call__(self, blocks: dict) -> None:
        self.steps += 1
        for k, key in enumerate(self.keys):
            v = blocks[key]
            hi, lo = v.max(axis=0), v.min(axis=0)
            self.rise = max(self.rise, float(np.max(hi - self.hi[k])), float(np.max(self.lo[k] - lo)))
            self.hi[k], self.lo[k] = hi, lo

    def summary(self) -> dict:
        return {"max_step_increase": self.rise, "steps": self.steps}


def _write_profiles(path: Path, grid: dg.ProfileGrid, profiles) -> None:
    n = len(grid.shape)
    axes = [grid.centres(a) for a in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"x{a + 1}" for a in range(n)] + ["density"])
        for t, p in profiles:
            for c, v in zip(coords, p.reshape(-1)):
                w.writerow([repr(t)] + [repr(float(x)) for x in c] + [repr(float(v))])


def _verdict(cfg, state, verdict0, records, profiles, blow) -> dict:
    v = {"scenario": cfg.scenario, "name": cfg.name, "backend": backend.current(),
         "final_time": float(state.time)}
    if isinstance(verdict0, list):
        v["classification"] = [x.to_dict() for x in verdict0]
    else:
        v["classification"] = None if verdict0 is None else verdict0.to_dict()
    v["detected_blow_up_time"] = None
    if blow is not None:
        v["detected_blow_up_time"] = blow.time
        info = {"time": blow.time, "particle": blow.index, "reason": blow.reason, "block": blow.block}
        flock = state if not isinstance(state, mf.MultiFlockState) else None
        if flock is not None and blow.index is not None and blow.index < flock.size:
            label = flock.labels[blow.index]
            info["label"] = label.tolist()
            if verdict0 is not None and verdict0.witness_label is not None:
                dist = np.abs(label - np.asarray(verdict0.witness_label))
                info["label_offset"] = dist.tolist()
                if flock.grid is not None:
                    info["label_offset_cells"] = (dist / flock.grid.spacing).tolist()
        v["blow_up"] = info
    T = records[-1]["time"] if records else 0.0
    win = _window(cfg, T)
    times = np.array([r["time"] for r in records])
    col = lambda key: np.array([np.nan if r.get(key) is None else r[key] for r in records], dtype=float)
    fits = {}
    if cfg.scenario == "multiflock":
        fits["global_amplitude"] = _fit(times, col("global_amplitude"), win)
        fits["macro_amplitude"] = _fit(times, col("macro_amplitude"), win)
        fits["flocks"] = []
        for a in range(len(state.flocks)):
            amp = np.array([r["flocks"][a]["amplitude"] for r in records])
            fits["flocks"].append({"amplitude": _fit(times, amp, win)})
        v["global_momentum"] = mf.global_momentum(state).tolist()
        v["macro_V"] = state.V.tolist()
        if records:
            mism = max(float(np.max(np.abs(np.asarray(f["lab_momentum"]) - np.asarray(r["macro_V"][a]))))
                       for r in records for a, f in enumerate(r["flocks"]))
            v["momentum_tracking_error"] = mism
            v["entropy_min"] = [min(r["flocks"][a]["entropy_min"] for r in records)
                                for a in range(len(state.flocks))]
            gm = np.array([r["global_momentum"] for r in records])
            v["global_momentum_drift"] = float(np.max(np.abs(gm - gm[0])))
    else:
        fits["amplitude"] = _fit(times, col("amplitude"), win)
        if state.tracking:
            fits["grad_sup"] = _fit(times, col("grad_sup"), win)
            if cfg.hessian:
                fits["hess_sup"] = _fit(times, col("hess_sup"), win)
        v["limiting_velocity"] = limiting_velocity(state).tolist()
        if records:
            mom = np.array([r["momentum"] for r in records])
            mass = col("mass")
            vmax = np.array([r["vel_max"] for r in records])
            vmin = np.array([r["vel_min"] for r in records])
            v["conservation"] = {
                "momentum_drift": float(np.max(np.abs(mom - mom[0]))),
                "momentum_scale": float(1.0 + np.max(np.abs(mom[0]))),
                "mass_drift": float(np.max(np.abs(mass - mass[0]))),
                "max_increase": float(np.max(np.diff(vmax, axis=0), initial=0.0)),
                "min_decrease": float(np.max(-np.diff(vmin, axis=0), initial=0.0)),
            }
        if state.entropy is not None and records and "entropy_min" in records[0]:
            emin = col("entropy_min")
            v["entropy_min"] = float(np.nanmin(emin))
            v["entropy_max"] = float(np.nanmax(col("entropy_max")))
            D_bar = float(np.nanmax(col("diameter")))
            floor = lower_bound(state.kernel, D_bar, state.total_mass, state.strength)
            reached = np.flatnonzero(emin >= floor)
            lb = {"diameter_bar": D_bar, "bound": floor, "t_star": None, "min_after": None}
            if reached.size:
                k = int(reached[0])
                lb["t_star"] = float(times[k])
                lb["min_after"] = float(np.nanmin(emin[k:]))
            v["entropy_lower_bound"] = lb
            v["residual_sup_max"] = float(np.nanmax(col("residual_sup"))) if "residual_sup" in records[0] else None
            v["entropy_gap_max"] = float(np.nanmax(col("entropy_gap"))) if "entropy_gap" in records[0] else None
        if profiles:
            grid = cfg.profile.grid
            ubar = limiting_velocity(state)
            tw = dg.traveling_wave_error(profiles, ubar, grid)
            wwin = cfg.wave_window or win
            fits["traveling_wave"] = _fit(tw.times, tw.errors, wwin)
            peak = float(np.max(tw.rho_bar))
            tail = None
            t_last = profiles[-1][0]
            for k, (t, _) in enumerate(profiles[:-1]):
                if abs(t - (t_last - 2.0)) < 1e-9:
                    tail = float(tw.errors[k]) / peak
            v["traveling_wave"] = {"times": tw.times.tolist(), "errors": tw.errors.tolist(),
                                   "peak": peak, "relative_gap_T_minus_2": tail}
            v["rho_bar"] = {"lower": list(grid.lower), "spacing": list(grid.spacing),
                            "shape": list(grid.shape), "values": tw.rho_bar.tolist()}
    v["fits"] = fits
    return v


def classify_config(cfg: RunConfig) -> dict:
    """t=0 verdict only."""
    state, verdict0 = build_state(cfg)
    if isinstance(verdict0, list):
        return {"scenario": cfg.scenario, "classification": [x.to_dict() for x in verdict0]}
    return {"scenario": cfg.scenario,
            "classification": None if verdict0 is None else verdict0.to_dict()}
