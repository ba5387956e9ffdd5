"""Run configuration: parsing, defaults and validation.

A configuration is a JSON-compatible tree (usually read from YAML).
:func:`parse_config` reports every problem it finds at once through
:class:`ConfigError`.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .diagnostics import ProfileGrid
from .expr import ExpressionError, parse
from .integrate import StepControl
from .kernels import Domain, DomainError, Kernel, KernelError
from .scenarios import HypothesisViolation, PerturbedSpec, UnidirectionalSpec

log = logging.getLogger(__name__)

SCENARIOS = ("unidirectional", "perturbed", "agents", "multiflock")
TOP_KEYS = {"scenario", "name", "description", "kernel", "domain", "step", "sample_every", "hessian",
            "profile", "output_dir", "seed", "fits", *SCENARIOS}
STEP_KEYS = {"dt", "method", "dt_min", "tol", "t_end"}
SCENARIO_KEYS = {
    "unidirectional": {"direction", "profile", "density", "grid", "box", "strength"},
    "perturbed": {"u0", "v0", "eps", "density", "grid", "box", "direction", "direction_perp",
                  "norm_samples", "validate"},
    "agents": {"positions", "velocities", "mass", "count", "dim", "spread", "speed"},
    "multiflock": {"eps", "psi", "flocks"},
}
FLOCK_KEYS = {"direction", "profile", "density", "grid", "box", "strength", "kernel", "X0", "V0"}
PROFILE_KEYS = {"lower", "upper", "spacing", "every"}
FIT_KEYS = {"window", "wave_window"}


class ConfigError(ValueError):
    """Invalid configuration; ``violations`` lists every problem found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


@dataclass
class ProfileSchedule:
    grid: ProfileGrid
    every: float


@dataclass
class RunConfig:
    scenario: str
    kernel: Kernel | None
    domain: Domain
    step: StepControl
    sample_every: float
    spec: object
    output_dir: Path
    seed: int | None = None
    hessian: bool = True
    profile: ProfileSchedule | None = None
    fit_window: tuple | None = None
    wave_window: tuple | None = None
    name: str = ""
    document: dict = field(default_factory=dict)


@dataclass
class AgentsSpec:
    positions: list | None = None
    velocities: list | None = None
    mass: list | None = None
    count: int | None = None
    dim: int = 2
    spread: float = 1.0
    speed: float = 1.0


@dataclass
class FlockBlock:
    spec: UnidirectionalSpec
    X0: np.ndarray
    V0: np.ndarray


@dataclass
class MultiflockSpec:
    flocks: list
    psi: Kernel
    eps: float


def load(path) -> dict:
    """Read a YAML or JSON document."""
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return doc


class _Collector:
    def __init__(self, strict: bool):
        self.strict = strict
        self.errors: list[str] = []

    def add(self, msg: str):
        self.errors.append(msg)

    def keys(self, block, allowed, where: str):
        if not isinstance(block, dict):
            self.add(f"{where}: expected a mapping")
            return False
        extra = sorted(set(block) - set(allowed))
        if extra:
            msg = f"{where}: unknown key(s) {', '.join(extra)}"
            if self.strict:
                self.add(msg)
            else:
                log.warning(msg)
        return True

    def number(self, block, key, where, default=None, positive=False, nonneg=False, integer=False):
        if key not in block:
            if default is None:
                self.add(f"{where}.{key}: required")
            return default
        val = block[key]
        ok = isinstance(val, (int, float)) and not isinstance(val, bool) and math.isfinite(val)
        if integer:
            ok = ok and float(val).is_integer()
        if not ok:
            self.add(f"{where}.{key}: expected a {'integer' if integer else 'number'}, got {val!r}")
            return default
        if positive and not val > 0:
            self.add(f"{where}.{key}: must be positive")
        if nonneg and not val >= 0:
            self.add(f"{where}.{key}: must be nonnegative")
        return int(val) if integer else float(val)


def _vector(val, where, col: _Collector, dim=None):
    try:
        arr = np.asarray(val, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        col.add(f"{where}: expected a list of numbers")
        return None
    if dim is not None and arr.size != dim:
        col.add(f"{where}: expected {dim} components, got {arr.size}")
        return None
    return arr


def _kernel(block, where, col: _Collector):
    if not isinstance(block, dict):
        col.add(f"{where}: expected a mapping")
        return None
    try:
        k = Kernel.from_dict(block)
        k.sample_check()
        return k
    except KernelError as exc:
        col.add(f"{where}: {exc}")
        return None


def _domain(block, dim, col: _Collector):
    if block is None:
        return Domain.free()
    if not col.keys(block, {"kind", "period", "images"}, "domain"):
        return Domain.free()
    kind = block.get("kind", "free")
    try:
        if kind == "free":
            return Domain.free()
        if kind == "torus":
            period = block.get("period")
            if period is None:
                col.add("domain.period: required for a torus")
                return Domain.free()
            if np.isscalar(period):
                period = [float(period)] * dim
            return Domain.torus(period, block.get("images"))
    except (DomainError, ValueError, TypeError) as exc:
        col.add(f"domain: {exc}")
        return Domain.free()
    col.add(f"domain.kind: expected 'free' or 'torus', got {kind!r}")
    return Domain.free()


def _expr(val, dim, where, col):
    try:
        return parse(val, dim)
    except ExpressionError as exc:
        col.add(f"{where}: {exc}")
        return None


def _box(block, dim, where, col):
    if block is None:
        return None
    if isinstance(block, dict):
        lo, hi = block.get("lower"), block.get("upper")
    elif isinstance(block, (list, tuple)) and len(block) == 2:
        lo, hi = block
    else:
        col.add(f"{where}: expected {{lower, upper}}")
        return None
    lo = _vector(lo, f"{where}.lower", col, dim)
    hi = _vector(hi, f"{where}.upper", col, dim)
    if lo is None or hi is None:
        return None
    if np.any(hi <= lo):
        col.add(f"{where}: upper must exceed lower on every axis")
        return None
    return (lo, hi)


def _grid(val, dim, where, col):
    if val is None:
        return None
    if isinstance(val, int) and not isinstance(val, bool) and val >= 1:
        return val
    if isinstance(val, (list, tuple)) and len(val) == dim and all(isinstance(v, int) and v >= 1 for v in val):
        return tuple(val)
    col.add(f"{where}: expected a positive integer or {dim} of them")
    return None


def _infer_dim(doc) -> int:
    sc = doc.get("scenario")
    blk = doc.get(sc) if isinstance(doc.get(sc), dict) else {}
    for key in ("direction",):
        if key in blk and isinstance(blk[key], (list, tuple)):
            return len(blk[key])
    if sc == "multiflock":
        fl = blk.get("flocks") or []
        if fl and isinstance(fl[0], dict) and isinstance(fl[0].get("direction"), (list, tuple)):
            return len(fl[0]["direction"])
    if sc == "agents":
        if isinstance(blk.get("positions"), list) and blk["positions"]:
            first = blk["positions"][0]
            return len(first) if isinstance(first, (list, tuple)) else 1
        return int(blk.get("dim", 2))
    return 2


def parse_config(doc: dict, strict: bool = False, check_hypotheses: bool = True) -> RunConfig:
    """Validate ``doc`` and fill defaults.

    Raises :class:`ConfigError` listing every violation.  With ``strict``
    unknown keys are errors rather than warnings.  Scenario hypotheses (the
    stability brackets, flock entropy signs) are checked by building the
    initial state once.
    """
    col = _Collector(strict)
    if not isinstance(doc, dict):
        raise ConfigError(["top level must be a mapping"])
    doc = copy.deepcopy(doc)
    col.keys(doc, TOP_KEYS, "config")
    scenario = doc.get("scenario")
    if scenario not in SCENARIOS:
        col.add(f"scenario: expected one of {', '.join(SCENARIOS)}, got {scenario!r}")
        raise ConfigError(col.errors)
    dim = _infer_dim(doc)

    kernel = None
    if scenario != "multiflock":
        if "kernel" not in doc:
            col.add("kernel: required")
        else:
            kernel = _kernel(doc["kernel"], "kernel", col)
    domain = _domain(doc.get("domain"), dim, col)

    st = doc.get("step")
    if st is None:
        col.add("step: required")
        st = {}
    col.keys(st, STEP_KEYS, "step")
    dt = col.number(st, "dt", "step", positive=True)
    t_end = col.number(st, "t_end", "step", nonneg=True)
    dt_min = col.number(st, "dt_min", "step", default=1e-10, positive=True)
    tol = col.number(st, "tol", "step", default=1e-8, positive=True)
    method = st.get("method", "rk4")
    if method not in ("rk4", "adaptive"):
        col.add(f"step.method: expected 'rk4' or 'adaptive', got {method!r}")
        method = "rk4"
    if dt is not None and dt_min is not None and not dt > dt_min:
        col.add(f"step.dt_min: must be below step.dt ({dt_min} >= {dt})")
    ctl = None
    if dt is not None and t_end is not None and dt > dt_min:
        ctl = StepControl(dt=dt, method=method, dt_min=dt_min, tol=tol, t_end=t_end)

    sample = doc.get("sample_every")
    if sample is None:
        sample = max(dt or 0.0, (t_end or 0.0) / 100.0) or 1.0
    elif not isinstance(sample, (int, float)) or not sample > 0:
        col.add("sample_every: must be a positive number")
        sample = 1.0
    if dt is not None and sample < dt:
        col.add(f"sample_every: must be at least step.dt ({sample} < {dt})")

    profile = None
    if doc.get("profile") is not None:
        pb = doc["profile"]
        if col.keys(pb, PROFILE_KEYS, "profile"):
            box = _box({"lower": pb.get("lower"), "upper": pb.get("upper")}, dim, "profile", col)
            h = col.number(pb, "spacing", "profile", positive=True)
            every = col.number(pb, "every", "profile", default=sample, positive=True)
            if box is not None and h is not None:
                periodic = domain.periodic and box is not None
                profile = ProfileSchedule(ProfileGrid.covering(box[0], box[1], h, periodic), every)

    fit_window = wave_window = None
    if doc.get("fits") is not None:
        fb = doc["fits"]
        if col.keys(fb, FIT_KEYS, "fits"):
            for key in ("window", "wave_window"):
                if key in fb:
                    w = _vector(fb[key], f"fits.{key}", col, 2)
                    if w is not None:
                        if key == "window":
                            fit_window = tuple(w)
                        else:
                            wave_window = tuple(w)

    blk = doc.get(scenario)
    if blk is None:
        if scenario != "agents":
            col.add(f"{scenario}: scenario block required")
        blk = {}
    col.keys(blk, SCENARIO_KEYS[scenario], scenario)
    spec = None
    if scenario == "unidirectional":
        spec = _unidirectional(blk, dim, kernel, domain, scenario, col)
    elif scenario == "perturbed":
        spec = _perturbed(blk, dim, kernel, domain, col)
    elif scenario == "agents":
        spec = _agents(blk, col)
    else:
        spec = _multiflock(blk, dim, domain, col)

    seed = doc.get("seed")
    if seed is not None and not (isinstance(seed, int) and not isinstance(seed, bool)):
        col.add("seed: expected an integer")
    out = Path(doc.get("output_dir") or f"runs/{doc.get('name') or scenario}")

    if col.errors:
        raise ConfigError(col.errors)
    cfg = RunConfig(scenario, kernel, domain, ctl, float(sample), spec, out, seed,
                    bool(doc.get("hessian", True)), profile, fit_window, wave_window,
                    str(doc.get("name", "")), doc)
    if check_hypotheses and scenario in ("perturbed", "multiflock"):
        from .runner import build_state

        try:
            build_state(cfg)
        except HypothesisViolation as exc:
            raise ConfigError([f"{scenario}: hypothesis violated: {v}" for v in exc.violations]) from None
    return cfg


def _unidirectional(blk, dim, kernel, domain, where, col):
    d = _vector(blk.get("direction"), f"{where}.direction", col, dim) if "direction" in blk else None
    if d is None:
        if "direction" not in blk:
            col.add(f"{where}.direction: required")
        return None
    if abs(np.linalg.norm(d) - 1.0) > 1e-12:
        col.add(f"{where}.direction: must be a unit vector")
    for key in ("profile", "density"):
        if key not in blk:
            col.add(f"{where}.{key}: required")
    prof = _expr(blk.get("profile", 0), dim, f"{where}.profile", col)
    dens = _expr(blk.get("density", 0), dim, f"{where}.density", col)
    box = _box(blk.get("box"), dim, f"{where}.box", col)
    if box is None and not domain.periodic and "box" not in blk:
        col.add(f"{where}.box: required in free space")
    grid = _grid(blk.get("grid", 40), dim, f"{where}.grid", col)
    strength = col.number(blk, "strength", where, default=1.0, nonneg=True)
    if prof is None or dens is None or grid is None or kernel is None:
        return None
    return UnidirectionalSpec(tuple(d), prof, dens, grid, box, kernel, domain, strength)


def _perturbed(blk, dim, kernel, domain, col):
    where = "perturbed"
    for key in ("u0", "v0", "eps"):
        if key not in blk:
            col.add(f"{where}.{key}: required")
    if not domain.periodic:
        col.add("domain: perturbed scenarios need kind 'torus'")
    u0 = _expr(blk.get("u0", 0), dim, f"{where}.u0", col)
    v0 = _expr(blk.get("v0", 0), dim, f"{where}.v0", col)
    dens = _expr(blk.get("density", 1.0), dim, f"{where}.density", col)
    eps = col.number(blk, "eps", where, default=0.0, positive=True) if "eps" in blk else None
    grid = _grid(blk.get("grid", 32), dim, f"{where}.grid", col)
    box = _box(blk.get("box"), dim, f"{where}.box", col)
    e1 = np.eye(dim)
    d = _vector(blk.get("direction", e1[0]), f"{where}.direction", col, dim)
    dp = _vector(blk.get("direction_perp", e1[min(1, dim - 1)]), f"{where}.direction_perp", col, dim)
    samples = col.number(blk, "norm_samples", where, default=10_000, positive=True, integer=True)
    if any(x is None for x in (u0, v0, dens, eps, grid, d, dp, kernel)) or not domain.periodic:
        return None
    return PerturbedSpec(u0, v0, eps, dens, grid, box, kernel, domain, tuple(d), tuple(dp), samples,
                         bool(blk.get("validate", True)))


def _agents(blk, col):
    where = "agents"
    spec = AgentsSpec()
    if "positions" in blk or "velocities" in blk:
        try:
            pos = np.asarray(blk.get("positions"), dtype=float)
            vel = np.asarray(blk.get("velocities"), dtype=float)
        except (TypeError, ValueError):
            col.add(f"{where}: positions and velocities must be numeric lists")
            return None
        if pos.ndim == 1:
            pos, vel = pos[:, None], vel.reshape(-1, 1)
        if pos.shape != vel.shape or pos.ndim != 2 or pos.shape[0] < 1:
            col.add(f"{where}: positions and velocities must have the same (N, n) shape")
            return None
        spec.positions, spec.velocities = pos.tolist(), vel.tolist()
        if "mass" in blk:
            m = np.asarray(blk["mass"], dtype=float)
            if m.shape != (pos.shape[0],) or np.any(m < 0):
                col.add(f"{where}.mass: need one nonnegative mass per agent")
            spec.mass = m.tolist()
    else:
        spec.count = col.number(blk, "count", where, positive=True, integer=True)
        spec.dim = col.number(blk, "dim", where, default=2, positive=True, integer=True)
        spec.spread = col.number(blk, "spread", where, default=1.0, positive=True)
        spec.speed = col.number(blk, "speed", where, default=1.0, positive=True)
    return spec


def _multiflock(blk, dim, domain, col):
    where = "multiflock"
    if domain.periodic:
        col.add("domain: multiflock scenarios run in free space")
    psi = _kernel(blk["psi"], f"{where}.psi", col) if "psi" in blk else None
    if "psi" not in blk:
        col.add(f"{where}.psi: required")
    eps = col.number(blk, "eps", where, nonneg=True)
    flocks = blk.get("flocks")
    if not isinstance(flocks, list) or not flocks:
        col.add(f"{where}.flocks: expected a nonempty list")
        return None
    out = []
    for a, fb in enumerate(flocks):
        w = f"{where}.flocks[{a}]"
        if not col.keys(fb, FLOCK_KEYS, w):
            continue
        k = _kernel(fb["kernel"], f"{w}.kernel", col) if "kernel" in fb else None
        if "kernel" not in fb:
            col.add(f"{w}.kernel: required")
        spec = _unidirectional(fb, dim, k, Domain.free(), w, col)
        X0 = _vector(fb.get("X0"), f"{w}.X0", col, dim) if "X0" in fb else None
        V0 = _vector(fb.get("V0"), f"{w}.V0", col, dim) if "V0" in fb else None
        for key, val in (("X0", X0), ("V0", V0)):
            if key not in fb:
                col.add(f"{w}.{key}: required")
        if spec is not None and X0 is not None and V0 is not None:
            out.append(FlockBlock(spec, X0, V0))
    if psi is None or eps is None or len(out) != len(flocks):
        return None
    return MultiflockSpec(out, psi, eps)


def set_path(doc: dict, path: str, value) -> dict:
    """Copy of ``doc`` with the dotted ``path`` set to ``value`` (list indices allowed)."""
    doc = copy.deepcopy(doc)
    keys = path.split(".")
    node = doc
    for k in keys[:-1]:
        node = node[int(k)] if isinstance(node, list) else node.setdefault(k, {})
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value
    return doc
