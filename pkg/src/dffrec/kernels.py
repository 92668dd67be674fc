"""Kernel backend selection.

Prefers the compiled Cython extension, falls back to the numpy reference
implementations. DFFREC_PURE_PY=1 forces the fallback. Both backends are
bit-identical; tests/test_kernels.py asserts exact equality.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("DFFREC_PURE_PY"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "compiled"


def scatter_add_rows(out, idx, rows):
    """out[idx[i], :] += rows[i, :] for each i, in index order."""
    if out.dtype != np.float32 or rows.dtype != np.float32:
        np.add.at(out, idx, rows)
        return
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    _impl.scatter_add_rows(out, idx, np.ascontiguousarray(rows))


def adamw_update(param, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """In-place AdamW step; buffers must be contiguous float32, any shape."""
    _impl.adamw_update(
        param.reshape(-1), np.ascontiguousarray(grad).reshape(-1),
        m.reshape(-1), v.reshape(-1),
        step, lr, beta1, beta2, eps, weight_decay,
    )
