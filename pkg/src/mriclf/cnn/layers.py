"""Layer kernels with hand-written reverse passes.

Activations are held channels-last, ``(N, X, Y, Z, C)``, so an im2col matrix
reshapes straight into the next activation without transposes. Kernels keep
the conventional ``(out, in, 3, 3, 3)`` layout. :func:`conv3d` and
:func:`conv3d_backward` are the channels-first entry points.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import DegenerateBatch, ShapeMismatch

BN_EPS = 1e-5


def out_size(n: int, stride: int) -> int:
    return (n - 1) // stride + 1


def _im2col(x, stride):
    """(N, X, Y, Z, C) -> (N*ox*oy*oz, 27*C) with 'same' zero padding."""
    N, X, Y, Z, C = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1), (0, 0)))
    ox, oy, oz = out_size(X, stride), out_size(Y, stride), out_size(Z, stride)
    s = xp.strides
    view = as_strided(
        xp,
        shape=(N, ox, oy, oz, 3, 3, 3, C),
        strides=(s[0], s[1] * stride, s[2] * stride, s[3] * stride, s[1], s[2], s[3], s[4]),
        writeable=False,
    )
    return view.reshape(N * ox * oy * oz, 27 * C), (ox, oy, oz)


def _kernel_matrix(w):
    # (O, C, a, b, c) -> (27*C, O) matching the im2col column order (a, b, c, C)
    O, C = w.shape[:2]
    return w.transpose(2, 3, 4, 1, 0).reshape(27 * C, O)


def conv_forward(x, w, b, stride):
    if w.ndim != 5 or w.shape[2:] != (3, 3, 3):
        raise ShapeMismatch(f"kernel must be (out, in, 3, 3, 3), got {w.shape}")
    if x.ndim != 5 or x.shape[4] != w.shape[1]:
        raise ShapeMismatch(f"input channels {x.shape[-1] if x.ndim == 5 else '?'} != kernel in-channels {w.shape[1]}")
    if stride not in (1, 2):
        raise ShapeMismatch(f"stride must be 1 or 2, got {stride}")
    cols, (ox, oy, oz) = _im2col(x, stride)
    out = cols @ _kernel_matrix(w)
    out += b
    out = out.reshape(x.shape[0], ox, oy, oz, w.shape[0])
    return out, (cols, x.shape, stride)


def conv_backward(dout, cache, w, need_dx=True):
    cols, xshape, stride = cache
    N, X, Y, Z, C = xshape
    O = w.shape[0]
    if dout.shape[-1] != O or dout.shape[0] != N:
        raise ShapeMismatch(f"gradient shape {dout.shape} does not match forward output")
    dmat = dout.reshape(-1, O)
    dw = (cols.T @ dmat).reshape(3, 3, 3, C, O).transpose(4, 3, 0, 1, 2)
    db = dmat.sum(axis=0)
    if not need_dx:
        return None, np.ascontiguousarray(dw), db
    ox, oy, oz = dout.shape[1:4]
    dcols = (dmat @ _kernel_matrix(w).T).reshape(N, ox, oy, oz, 3, 3, 3, C)
    dxp = np.zeros((N, X + 2, Y + 2, Z + 2, C), dtype=dout.dtype)
    s = stride
    for a in range(3):
        for bb in range(3):
            for c in range(3):
                dxp[:, a:a + s * (ox - 1) + 1:s, bb:bb + s * (oy - 1) + 1:s, c:c + s * (oz - 1) + 1:s, :] += \
                    dcols[:, :, :, :, a, bb, c, :]
    return dxp[:, 1:-1, 1:-1, 1:-1, :], np.ascontiguousarray(dw), db


def conv3d(x, kernels, bias, stride: int = 1):
    """3x3x3 convolution with 'same' zero padding on ``(N, C, X, Y, Z)`` tensors.

    Output spatial size is ``ceil(n / stride)``.
    """
    x = np.asarray(x)
    if x.ndim != 5:
        raise ShapeMismatch(f"expected a 5D tensor, got shape {x.shape}")
    out, _ = conv_forward(np.moveaxis(x, 1, -1), np.asarray(kernels), np.asarray(bias), stride)
    return np.moveaxis(out, -1, 1)


def conv3d_backward(grad_out, x, kernels, stride: int = 1):
    """Gradients of :func:`conv3d` w.r.t. input, kernels and bias (channels-first)."""
    xl = np.moveaxis(np.asarray(x), 1, -1)
    kernels = np.asarray(kernels)
    cols, _ = _im2col(xl, stride)
    dx, dw, db = conv_backward(np.moveaxis(np.asarray(grad_out), 1, -1), (cols, xl.shape, stride), kernels)
    return np.moveaxis(dx, -1, 1), dw, db


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training, momentum=0.99, eps=BN_EPS):
    """Per-channel batch normalization over (batch, spatial).

    In training mode the running statistics are updated in place.
    """
    C = x.shape[-1]
    if training:
        m = x.size // C
        if m < 2:
            raise DegenerateBatch("batch normalization needs at least two values per channel")
        flat = x.reshape(-1, C)
        mean = flat.mean(axis=0, dtype=np.float64)
        var = ((flat - mean.astype(x.dtype)) ** 2).mean(axis=0, dtype=np.float64)
        running_mean *= momentum
        running_mean += (1 - momentum) * mean.astype(running_mean.dtype)
        running_var *= momentum
        running_var += (1 - momentum) * var.astype(running_var.dtype)
        mean = mean.astype(x.dtype)
        inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    else:
        mean = running_mean
        inv = (1.0 / np.sqrt(running_var.astype(np.float64) + eps)).astype(x.dtype)
    xhat = (x - mean) * inv
    out = gamma * xhat + beta
    return out, (xhat, inv, gamma, training)


def batchnorm_backward(dout, cache):
    xhat, inv, gamma, training = cache
    C = dout.shape[-1]
    flat = dout.reshape(-1, C)
    xflat = xhat.reshape(-1, C)
    dbeta = flat.sum(axis=0, dtype=np.float64).astype(dout.dtype)
    dgamma = (flat * xflat).sum(axis=0, dtype=np.float64).astype(dout.dtype)
    if not training:
        return dout * (gamma * inv), dgamma, dbeta
    m = flat.shape[0]
    dx = (gamma * inv / m) * (m * dout - dbeta - xhat * dgamma)
    return dx, dgamma, dbeta


def dropout_forward(x, rate, training, rng):
    """Inverted dropout; identity outside training or at rate 0."""
    if not training or rate == 0:
        return x, None
    if not 0 <= rate < 1:
        raise ValueError("dropout rate must lie in [0, 1)")
    keep = (rng.random(x.shape, dtype=np.float32) >= rate)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    mask = keep.astype(x.dtype) * scale
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def dropout(x, rate, training, rng):
    return dropout_forward(x, rate, training, rng)[0]


def relu_backward(dout, x, guided=False):
    """ReLU reverse pass. ``guided`` also blocks negative incoming gradients."""
    gate = x > 0
    if guided:
        gate = gate & (dout > 0)
    return np.where(gate, dout, 0).astype(dout.dtype)


def global_avg_pool(x):
    return x.reshape(x.shape[0], -1, x.shape[-1]).mean(axis=1, dtype=np.float64).astype(x.dtype)


def global_avg_pool_backward(dpooled, shape):
    N, C = shape[0], shape[-1]
    count = int(np.prod(shape[1:-1]))
    return np.broadcast_to((dpooled / count)[:, None, None, None, :], shape).astype(dpooled.dtype)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def head_forward(features, w, b):
    """Global average pool, affine map to logits, softmax."""
    pooled = global_avg_pool(features)
    logits = pooled @ w + b
    return softmax(logits.astype(np.float64)), logits, pooled


PROB_CLIP = 1e-7


def bce_loss(probs, targets):
    """Mean over the batch of ``-sum(t * log p)`` with p clipped to [1e-7, 1 - 1e-7]."""
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLIP, 1 - PROB_CLIP)
    t = np.asarray(targets, dtype=np.float64)
    return float(-(t * np.log(p)).sum(axis=-1).mean())


def bce_backward(probs, targets):
    """Gradient of :func:`bce_loss` w.r.t. the probabilities."""
    p = np.asarray(probs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    inside = (p > PROB_CLIP) & (p < 1 - PROB_CLIP)
    return np.where(inside, -t / np.clip(p, PROB_CLIP, 1 - PROB_CLIP), 0.0) / p.shape[0]


def softmax_backward(dprobs, probs):
    dot = (dprobs * probs).sum(axis=-1, keepdims=True)
    return probs * (dprobs - dot)
