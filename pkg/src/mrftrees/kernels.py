"""Backend selection for the sampling kernels.

The compiled extension is used when it imports; set ``MRFTREES_PURE_PYTHON=1``
to force the pure-Python fallback.
"""
import os
from types import ModuleType

from . import _pykernels

_compiled: ModuleType | None
try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

if _compiled is not None and not os.environ.get("MRFTREES_PURE_PYTHON"):
    backend: ModuleType = _compiled
    BACKEND = "cython"
else:
    backend = _pykernels
    BACKEND = "python"


def available() -> list[str]:
    return ["cython", "python"] if _compiled is not None else ["python"]


def get_backend(name: str | None = None) -> ModuleType:
    if name is None:
        return backend
    if name == "python":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")
