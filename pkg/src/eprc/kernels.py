"""Selection between the compiled kernels and the pure-Python fallbacks.

The compiled extension (``eprc._ext``) is used when it imports and
``EPRC_PURE_PYTHON`` is unset. Both paths implement the same contracts;
the range coder produces identical bytes either way.
"""
from __future__ import annotations

import os

_FORCE_PURE = os.environ.get("EPRC_PURE_PYTHON", "").strip() not in ("", "0")

try:
    if _FORCE_PURE:
        raise ImportError("disabled by EPRC_PURE_PYTHON")
    from ._ext import _coder as _compiled_coder
    from ._ext import _density as _compiled_density
except ImportError:  # pragma: no cover - depends on build
    _compiled_coder = None
    _compiled_density = None

_enabled = True


def compiled_available() -> bool:
    return _compiled_coder is not None and _compiled_density is not None


def use_compiled(enabled: bool) -> None:
    """Globally switch the compiled kernels on or off (for tests and benchmarks)."""
    global _enabled
    _enabled = enabled


def coder_backend():
    if _enabled and _compiled_coder is not None:
        return _compiled_coder
    from . import _coder_py
    return _coder_py


def density_backend():
    """Compiled density module, or None when the autodiff graph should be used."""
    return _compiled_density if _enabled else None


def backend_name() -> str:
    return "compiled" if _enabled and compiled_available() else "python"
