"""Kernel backend selection.

The compiled core is preferred when importable; ``LAPSEGEN_BACKEND``
(``cython`` or ``numpy``) forces a choice. Both backends implement the
same ``im2col``/``col2im`` contract and produce identical results.
"""
import os

from . import convcore_np

_FORCED = os.environ.get("LAPSEGEN_BACKEND", "").strip().lower()

if _FORCED == "numpy":
    _impl = convcore_np
elif _FORCED == "cython":
    from . import _convcore as _impl  # noqa: F401  (ImportError is intentional here)
else:
    try:
        from . import _convcore as _impl
    except ImportError:
        _impl = convcore_np

name = _impl.BACKEND_NAME
im2col = _impl.im2col
col2im = _impl.col2im


def use(backend):
    """Switch backend at runtime ('cython' | 'numpy'). Returns previous name.

    Exists for the kernel benchmark and for tests that cross-check the
    two implementations; normal code never calls this.
    """
    global _impl, name, im2col, col2im
    prev = name
    if backend == "numpy":
        _impl = convcore_np
    elif backend == "cython":
        from . import _convcore
        _impl = _convcore
    else:
        raise ValueError(f"unknown backend {backend!r}")
    name = _impl.BACKEND_NAME
    im2col = _impl.im2col
    col2im = _impl.col2im
    return prev
