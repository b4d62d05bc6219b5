"""Kernel backend selection.

The compiled Cython module is used when it was built; otherwise, or when
``VEINMT_PURE_PYTHON=1`` is set, the NumPy implementations are used.
"""
import os

from . import _pykernels

BACKENDS = {"python": _pykernels}

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    BACKENDS["cython"] = _ckernels

if _ckernels is not None and os.environ.get("VEINMT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    BACKEND = "cython"
else:
    BACKEND = "python"

_impl = BACKENDS[BACKEND]


def use(name: str) -> None:
    """Switch the active backend at runtime (tests and benchmarks)."""
    global BACKEND, _impl
    if name not in BACKENDS:
        raise ValueError(f"kernel backend {name!r} not available; have {sorted(BACKENDS)}")
    BACKEND = name
    _impl = BACKENDS[name]


def im2col(xp, k, stride, ho, wo):
    return _impl.im2col(xp, k, stride, ho, wo)


def col2im(cols, n, c, hp, wp, k, stride, ho, wo):
    return _impl.col2im(cols, n, c, hp, wp, k, stride, ho, wo)


def grid_sample_fwd(x, flow):
    return _impl.grid_sample_fwd(x, flow)


def grid_sample_bwd(x, flow, gout):
    return _impl.grid_sample_bwd(x, flow, gout)
