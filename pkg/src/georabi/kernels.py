"""Backend selection for the driven propagator.

The compiled extension is used when importable; ``GEORABI_BACKEND=python``
forces the numpy fallback.
"""

from __future__ import annotations

import os

from . import _kernel_py

try:
    from . import _kernel as _compiled
except ImportError:  # extension not built
    _compiled = None

__all__ = ["propagate", "available", "resolve", "DEFAULT"]


def available() -> tuple:
    return ("compiled", "python") if _compiled is not None else ("python",)


DEFAULT = "compiled" if _compiled is not None and os.environ.get("GEORABI_BACKEND", "") != "python" else "python"


def resolve(backend: str | None) -> str:
    backend = backend or DEFAULT
    if backend not in ("compiled", "python"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "compiled" and _compiled is None:
        raise RuntimeError("compiled kernel is not built; reinstall the package or use backend='python'")
    return backend


def propagate(tables: dict, b0, phi0, theta0: float, t0: float, h: float, nsteps: int, stride: int,
              backend: str | None = None):
    mod = _compiled if resolve(backend) == "compiled" else _kernel_py
    return mod.propagate(tables["knots"], tables["e"], tables["w"], tables["a"], tables["o"],
                         b0, phi0, float(theta0), float(t0), float(h), int(nsteps), int(stride))
