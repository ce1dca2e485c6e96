"""Hot kernels with a compiled backend and a numpy fallback chosen at import."""
from __future__ import annotations

from . import _spline_py

try:
    from . import _spline_ext
except ImportError:  # extension not built
    _spline_ext = None

_BACKENDS = {"python": _spline_py.rq_spline}
if _spline_ext is not None:
    _BACKENDS["cython"] = _spline_ext.rq_spline

_active = "cython" if "cython" in _BACKENDS else "python"


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def backend() -> str:
    return _active


def use_backend(name: str) -> str:
    """Switch the spline backend; returns the previous one."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    prev, _active = _active, name
    return prev


def rq_spline(x, widths, heights, derivs, need_grad=True):
    return _BACKENDS[_active](x, widths, heights, derivs, need_grad)
