"""Selection between the compiled pair-sum core and the numpy fallback.

The compiled extension is used when it imported successfully and the
state dimension fits its fixed-size accumulators.  Setting the
environment variable ``EULALIGN_BACKEND=python`` forces the fallback.
"""

from __future__ import annotations

import contextlib
import os

import numpy as np

from . import _pairs_py
from .kernels import Domain, Kernel

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

_state = {
    "name": "compiled" if _core is not None else "python",
    "threads": 1,
}
if os.environ.get("EULALIGN_BACKEND", "").strip().lower() == "python":
    _state["name"] = "python"


def available() -> tuple[str, ...]:
    return ("compiled", "python") if _core is not None else ("python",)


def current() -> str:
    return _state["name"]


def select(name: str) -> None:
    if name not in available():
        raise ValueError(f"backend {name!r} unavailable; have {available()}")
    _state["name"] = name


@contextlib.contextmanager
def using(name: str):
    """Temporarily switch backend (used by tests and the benchmark)."""
    prev = _state["name"]
    select(name)
    try:
        yield
    finally:
        _state["name"] = prev


def set_num_threads(k: int) -> None:
    """Worker threads for the compiled core.  Never changes results."""
    if k < 1:
        raise ValueError("thread count must be at least 1")
    _state["threads"] = int(k)


def num_threads() -> int:
    return _state["threads"]


_DUMMY_X = np.zeros(2)
_DUMMY_C = np.zeros((4, 1))
_DUMMY_G = np.zeros((1, 1, 1))


def pair_sums(pos: np.ndarray, vel: np.ndarray, mass: np.ndarray,
              kernel: Kernel, domain: Domain, grad: bool = True):
    """Convolution, alignment sums and kernel-gradient commutators.

    Returns ``(conv, force, G)`` with shapes ``(N,)``, ``(N, n)`` and
    ``(N, n, n)`` (``G`` is ``None`` when ``grad`` is false).  ``conv``
    includes the self term ``m_i phi(0)``; ``force`` and ``G`` skip it.
    """
    pos = np.ascontiguousarray(pos, dtype=float)
    vel = np.ascontiguousarray(vel, dtype=float)
    mass = np.ascontiguousarray(mass, dtype=float)
    N, n = pos.shape
    if _state["name"] == "python" or n > _core.MAX_DIM:
        return _pairs_py.pair_sums(pos, vel, mass, kernel, domain, grad)
    conv = np.empty(N)
    force = np.empty((N, n))
    G = np.empty((N, n, n)) if grad else _DUMMY_G
    _core.pair_sums(pos, vel, mass, *_core_args(kernel, domain, n),
                    bool(grad), _state["threads"], conv, force, G)
    return conv, force, (G if grad else None)


_ARGS: dict = {}


def _core_args(kernel: Kernel, domain: Domain, n: int) -> tuple:
    # keyed by identity; the entry holds references so ids stay valid
    key = (id(kernel), id(domain), n)
    hit = _ARGS.get(key)
    if hit is not None:
        return hit[2]
    if kernel.family == "tabulated":
        tx = np.ascontiguousarray(kernel.table_x, dtype=float)
        tc = np.ascontiguousarray(kernel.table_c, dtype=float)
    else:
        tx, tc = _DUMMY_X, _DUMMY_C
    params = np.ascontiguousarray(kernel.params + (0.0,) * (3 - len(kernel.params)), dtype=float)
    args = (kernel.code, params, tx, tc,
            np.ascontiguousarray(domain.periods(n), dtype=float),
            np.ascontiguousarray(domain.image_shifts(n, kernel), dtype=float))
    if len(_ARGS) >= 64:
        _ARGS.clear()
    _ARGS[key] = (kernel, domain, args)
    return args
