"""Numpy reference implementations of the hot kernels.

These define the semantics; the compiled extension in _kernels.pyx must be
bit-identical. Keep every elementwise expression in the same order and
precision as the C code, float32 throughout.
"""

import numpy as np


def scatter_add_rows(out, idx, rows):
    """out[idx[i], :] += rows[i, :], accumulating in index order."""
    np.add.at(out, idx, rows)


def adamw_update(param, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """One in-place AdamW step on flat float32 buffers.

    Decay is decoupled: the parameter is scaled by (1 - lr*weight_decay)
    before the moment-based update, so a zero-gradient step is a pure decay.
    """
    if weight_decay != 0.0:
        param *= np.float32(1.0 - lr * weight_decay)
    b1 = np.float32(beta1)
    b2 = np.float32(beta2)
    one = np.float32(1.0)
    m *= b1
    m += (one - b1) * grad
    v *= b2
    v += (one - b2) * grad * grad
    # bias corrections computed in float64, rounded once
    m_scale = np.float32(1.0 / (1.0 - beta1 ** step))
    v_scale = np.float32(1.0 / (1.0 - beta2 ** step))
    lr32 = np.float32(lr)
    eps32 = np.float32(eps)
    param -= lr32 * (m * m_scale) / (np.sqrt(v * v_scale) + eps32)
