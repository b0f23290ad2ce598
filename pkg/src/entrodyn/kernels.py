"""Backend selection for the hot loops.

The compiled extension ``_ckernels`` is used when it imports; otherwise,
or when ``ENTRODYN_BACKEND=python``, the numpy implementation in
``_pykernels`` is used. Both expose the same functions.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels


def _load_compiled() -> ModuleType | None:
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


_compiled = _load_compiled()


def get_backend(name: str | None = None) -> ModuleType:
    """Return the kernel module: "cython", "python" or None for the default."""
    if name is None:
        name = os.environ.get("ENTRODYN_BACKEND", "auto")
    if name == "python":
        return _pykernels
    if name in ("cython", "compiled"):
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _compiled
    if name != "auto":
        raise ValueError(f"unknown backend {name!r}")
    return _compiled if _compiled is not None else _pykernels


def available_backends() -> list[str]:
    return ["cython", "python"] if _compiled is not None else ["python"]


backend = get_backend()
BACKEND = "cython" if backend is _compiled and _compiled is not None else "python"
