"""Backend selection for the hot kernels.

The compiled extension ``crtb._ckernels`` is used when it was built;
otherwise the numpy fallback ``crtb._pykernels`` is used.  Set the
environment variable ``CRTB_BACKEND`` to ``python`` or ``compiled`` to
force a choice (``compiled`` raises if the extension is missing).
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS: dict[str, ModuleType | None] = {"python": _pykernels, "compiled": _ckernels}


def available() -> list[str]:
    return [name for name, mod in _BACKENDS.items() if mod is not None]


def get(name: str) -> ModuleType:
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; choose from {sorted(_BACKENDS)}")
    mod = _BACKENDS[name]
    if mod is None:
        raise ImportError("compiled kernels are not built; run `pip install -e .`")
    return mod


def _select() -> ModuleType:
    choice = os.environ.get("CRTB_BACKEND", "auto").lower()
    if choice == "auto":
        return _ckernels if _ckernels is not None else _pykernels
    return get(choice)


backend: ModuleType = _select()


def use(name: str) -> ModuleType:
    """Switch the process-wide backend; returns the previous one."""
    global backend
    previous = backend
    backend = get(name)
    return previous
