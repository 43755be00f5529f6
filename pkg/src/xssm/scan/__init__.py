"""Selective state-space scan.

The recurrence kernels come from the compiled ``_kernel`` extension when it
was built, otherwise from the numpy ``_fallback``. ``XSSM_SCAN_BACKEND=numpy``
forces the fallback.
"""
import os

from . import _fallback

_BACKENDS = {"numpy": _fallback}
try:
    from . import _kernel
except ImportError:  # extension not built
    _kernel = None
else:
    _BACKENDS["cython"] = _kernel

_active = ["cython" if "cython" in _BACKENDS else "numpy"]
if os.environ.get("XSSM_SCAN_BACKEND"):
    _requested = os.environ["XSSM_SCAN_BACKEND"]
    if _requested not in _BACKENDS:
        raise ImportError(f"XSSM_SCAN_BACKEND={_requested!r} unavailable; have {sorted(_BACKENDS)}")
    _active[0] = _requested


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def get_backend() -> str:
    return _active[0]


def set_backend(name: str) -> None:
    if name not in _BACKENDS:
        raise ValueError(f"unknown scan backend {name!r}; have {sorted(_BACKENDS)}")
    _active[0] = name


def kernels():
    return _BACKENDS[_active[0]]


from .s6 import S6Params, discretize, scan_coefficients, selective_scan, ssm_scan  # noqa: E402
from .bench import scan_complexity_bench  # noqa: E402

__all__ = [
    "S6Params",
    "available_backends",
    "discretize",
    "get_backend",
    "scan_coefficients",
    "scan_complexity_bench",
    "selective_scan",
    "set_backend",
    "ssm_scan",
]
