import copy
from pathlib import Path

import pytest

from eulalign.config import ConfigError, load, parse_config, set_path
from eulalign.scenarios import PerturbedSpec

CONFIGS = sorted((Path(__file__).resolve().parents[1] / "configs").glob("*.yaml"))

BASE = {
    "scenario": "unidirectional",
    "kernel": {"family": "algebraic", "exponent": 1},
    "step": {"dt": 0.1, "t_end": 1.0},
    "unidirectional": {"direction": [1, 0], "profile": "0.1*x2", "density": "1",
                       "grid": 4, "box": {"lower": [0, 0], "upper": [1, 1]}},
}

PERTURBED = {
    "scenario": "perturbed",
    "kernel": {"family": "constant", "value": 1.0},
    "domain": {"kind": "torus", "period": 6.283185307179586},
    "step": {"dt": 0.1, "t_end": 1.0},
    "perturbed": {"u0": "1 + 0.25*sin(x1)", "v0": "0.0016*cos(x2)", "eps": 0.04,
                  "density": "0.5/(4*pi**2)", "grid": 8},
}


def _errors(doc, **kw):
    with pytest.raises(ConfigError) as info:
        parse_config(doc, **kw)
    return info.value.violations


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_parse_strictly(path):
    cfg = parse_config(load(path), strict=True)
    assert cfg.step.t_end > 0


def test_defaults():
    cfg = parse_config(BASE)
    assert cfg.step.method == "rk4" and cfg.step.dt_min == 1e-10
    assert cfg.sample_every == 0.1
    assert cfg.domain.periodic is False
    assert str(cfg.output_dir) == "runs/unidirectional"


def test_perturbed_spec_built():
    cfg = parse_config(PERTURBED)
    assert isinstance(cfg.spec, PerturbedSpec) and cfg.spec.eps == 0.04


def test_v0_bracket_violation_named():
    doc = set_path(PERTURBED, "perturbed.v0", "0.1*cos(x2)")
    errs = _errors(doc)
    assert any("eps^2/2 <= ||v0||_W1inf <= 2 eps^2 violated" in e for e in errs)


def test_all_violations_reported_together():
    doc = copy.deepcopy(BASE)
    doc["step"] = {"dt": 0.1, "dt_min": 0.5, "t_end": -1}
    doc["sample_every"] = 0.01
    doc["kernel"] = {"family": "nope"}
    errs = _errors(doc)
    assert any(e.startswith("step.dt_min") for e in errs)
    assert any(e.startswith("step.t_end") for e in errs)
    assert any(e.startswith("sample_every") for e in errs)
    assert any(e.startswith("kernel") for e in errs)


def test_unknown_keys(caplog):
    doc = set_path(BASE, "unidirectional.colour", "red")
    assert any("colour" in e for e in _errors(doc, strict=True))
    parse_config(doc)
    assert "colour" in caplog.text


def test_bad_expression():
    errs = _errors(set_path(BASE, "unidirectional.profile", "import os"))
    assert any(e.startswith("unidirectional.profile") for e in errs)


def test_missing_blocks():
    errs = _errors({"scenario": "unidirectional"})
    assert "kernel: required" in errs and "step: required" in errs
    assert "unidirectional: scenario block required" in errs
    assert _errors({"scenario": "fluid"})[0].startswith("scenario")


def test_perturbed_needs_torus():
    doc = set_path(PERTURBED, "domain", {"kind": "free"})
    assert any("torus" in e for e in _errors(doc))


def test_set_path_copies():
    doc = set_path(BASE, "step.dt", 0.05)
    assert doc["step"]["dt"] == 0.05 and BASE["step"]["dt"] == 0.1
    mf = {"multiflock": {"flocks": [{"V0": [0, 0]}]}}
    assert set_path(mf, "multiflock.flocks.0.V0", [1, 1])["multiflock"]["flocks"][0]["V0"] == [1, 1]
