"""Neural-network primitives with fused analytic backward rules.

Convolution is implemented as an im2col gather followed by a batched matmul;
its backward scatters patch gradients back with a col2im loop.  Batch norm,
L2 normalization, and the stabilized log-sum construct used by the tuplet
loss are fused so numerical gradient checks see a single smooth op.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class DegenerateVectorError(ValueError):
    """Raised when a vector with (near-)zero norm reaches l2_normalize."""


def _pair(value, name: str) -> tuple[int, int]:
    if isinstance(value, (tuple, list)):
        if len(value) != 2:
            raise ValueError(f"{name} must be an int or a pair, got {value!r}")
        a, b = int(value[0]), int(value[1])
    else:
        a = b = int(value)
    return a, b


def _im2col(x: np.ndarray, kh: int, kw: int, sh: int, sw: int,
            out_h: int, out_w: int) -> np.ndarray:
    """Gather conv patches: [N,C,H,W] -> [N, C*kh*kw, out_h*out_w]."""
    n, c = x.shape[:2]
    cols = np.empty((n, c, kh, kw, out_h, out_w), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i:i + sh * out_h:sh, j:j + sw * out_w:sw]
    return cols.reshape(n, c * kh * kw, out_h * out_w)


def _col2im(cols: np.ndarray, x_shape: tuple, kh: int, kw: int,
            sh: int, sw: int, out_h: int, out_w: int) -> np.ndarray:
    """Scatter-add patch gradients back to input shape (inverse of _im2col)."""
    n, c = x_shape[:2]
    grad = np.zeros(x_shape, dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, out_h, out_w)
    for i in range(kh):
        for j in range(kw):
            grad[:, :, i:i + sh * out_h:sh, j:j + sw * out_w:sw] += cols[:, :, i, j]
    return grad


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride=1, padding=0) -> Tensor:
    """2-D cross-correlation over a batch.

    Args:
        x: input of shape [N, C_in, H, W] (a 3-D [C_in, H, W] input is
           treated as a batch of one and returned without the batch axis).
        weight: filters of shape [C_out, C_in, kh, kw].
        bias: optional per-filter offset of shape [C_out].
        stride: int or (sh, sw).
        padding: int or (ph, pw); zero padding added to both sides per axis.

    Output spatial size per axis is floor((n + 2p - k) / s) + 1.
    """
    squeeze = False
    if x.ndim == 3:
        x = x.reshape((1,) + x.shape)
        squeeze = True
    if x.ndim != 4:
        raise ValueError(f"conv2d input must be 3-D or 4-D, got {x.ndim}-D")
    if weight.ndim != 4:
        raise ValueError(f"conv2d weight must be 4-D, got shape {weight.shape}")
    n, c_in, h, w = x.shape
    c_out, c_w, kh, kw = weight.shape
    if c_w != c_in:
        raise ValueError(f"input has {c_in} channels but weight expects {c_w}")
    sh, sw = _pair(stride, "stride")
    ph, pw = _pair(padding, "padding")
    if sh < 1 or sw < 1:
        raise ValueError("stride must be >= 1")
    if ph < 0 or pw < 0:
        raise ValueError("padding must be >= 0")
    out_h = (h + 2 * ph - kh) // sh + 1
    out_w = (w + 2 * pw - kw) // sw + 1
    if out_h < 1 or out_w < 1:
        raise ValueError(
            f"kernel {kh}x{kw} does not fit input {h}x{w} with padding ({ph},{pw})"
        )
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"bias shape {bias.shape} does not match {c_out} filters")

    xd = x.data
    if ph or pw:
        xd = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(xd, kh, kw, sh, sw, out_h, out_w)       # [N, K, L]
    wmat = weight.data.reshape(c_out, -1)                  # [C_out, K]
    out = np.matmul(wmat, cols)                            # [N, C_out, L]
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(n, c_out, out_h, out_w)

    padded_shape = xd.shape
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g = g.reshape(n, c_out, out_h * out_w)
        if weight.requires_grad:
            weight._accumulate(
                np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
            )
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g)                   # [N, K, L]
            dx = _col2im(dcols, padded_shape, kh, kw, sh, sw, out_h, out_w)
            if ph or pw:
                dx = dx[:, :, ph:ph + h, pw:pw + w]
            x._accumulate(dx)

    result = Tensor._node(out, parents, backward)
    if squeeze:
        result = result.reshape(result.shape[1:])
    return result


def maxpool2d(x: Tensor, kernel: int = 2) -> Tensor:
    """Non-overlapping max pooling with window == stride == kernel.

    Trailing rows/columns that do not fill a window are dropped (floor
    semantics).  Within a window, ties route the gradient to the first
    element in row-major order.
    """
    squeeze = False
    if x.ndim == 3:
        x = x.reshape((1,) + x.shape)
        squeeze = True
    if x.ndim != 4:
        raise ValueError(f"maxpool2d input must be 3-D or 4-D, got {x.ndim}-D")
    k = int(kernel)
    if k < 1:
        raise ValueError("kernel must be >= 1")
    n, c, h, w = x.shape
    out_h, out_w = h // k, w // k
    if out_h < 1 or out_w < 1:
        raise ValueError(f"kernel {k} larger than input {h}x{w}")
    crop = x.data[:, :, :out_h * k, :out_w * k]
    windows = crop.reshape(n, c, out_h, k, out_w, k)
    windows = windows.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, out_h, out_w, k * k)
    arg = windows.argmax(axis=-1)                          # first max wins
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        if not x.requires_grad:
            return
        gw = np.zeros((n, c, out_h, out_w, k * k), dtype=g.dtype)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gw = gw.reshape(n, c, out_h, out_w, k, k).transpose(0, 1, 2, 4, 3, 5)
        grad = np.zeros_like(x.data)
        grad[:, :, :out_h * k, :out_w * k] = gw.reshape(n, c, out_h * k, out_w * k)
        x._accumulate(grad)

    result = Tensor._node(out, (x,), backward)
    if squeeze:
        result = result.reshape(result.shape[1:])
    return result


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, eps: float = 1e-5,
                momentum: float = 0.1) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    Training mode normalizes with batch statistics (biased variance) and
    updates the running buffers in place; those updates are a side effect
    and never feed the graph.  Eval mode normalizes with the running
    buffers only.
    """
    if x.ndim != 4:
        raise ValueError(f"batchnorm2d input must be 4-D, got {x.ndim}-D")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(
            f"gamma/beta shapes {gamma.shape}/{beta.shape} do not match {c} channels"
        )
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise ValueError("running statistics do not match channel count")

    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))                   # biased
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    count = n * h * w

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gi = g * gamma.data[None, :, None, None]
            if training:
                # Batch statistics depend on x, so their gradient terms appear.
                sum_gi = gi.sum(axis=(0, 2, 3), keepdims=True)
                sum_gi_xhat = (gi * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = (gi - sum_gi / count - xhat * sum_gi_xhat / count)
                dx *= inv_std[None, :, None, None]
            else:
                dx = gi * inv_std[None, :, None, None]
            x._accumulate(dx)

    return Tensor._node(out, (x, gamma, beta), backward)


def gap(x: Tensor) -> Tensor:
    """Global average pooling: [C,H,W] -> [C] or [N,C,H,W] -> [N,C]."""
    if x.ndim == 3 or x.ndim == 4:
        return x.mean(axis=(x.ndim - 2, x.ndim - 1))
    raise ValueError(f"gap input must be 3-D or 4-D, got {x.ndim}-D")


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map y = x @ W^T + b for a vector [n] or batch of rows [N,n]."""
    if weight.ndim != 2:
        raise ValueError(f"weight must be 2-D, got shape {weight.shape}")
    m, n_in = weight.shape
    if bias.shape != (m,):
        raise ValueError(f"bias shape {bias.shape} does not match {m} outputs")
    if x.shape[-1] != n_in:
        raise ValueError(f"input width {x.shape[-1]} does not match weight {n_in}")
    if x.ndim not in (1, 2):
        raise ValueError(f"linear input must be 1-D or 2-D, got {x.ndim}-D")

    out = x.data @ weight.data.T + bias.data

    def backward(g):
        if x.ndim == 1:
            if weight.requires_grad:
                weight._accumulate(np.outer(g, x.data))
            if bias.requires_grad:
                bias._accumulate(g)
            if x.requires_grad:
                x._accumulate(g @ weight.data)
        else:
            if weight.requires_grad:
                weight._accumulate(g.T @ x.data)
            if bias.requires_grad:
                bias._accumulate(g.sum(axis=0))
            if x.requires_grad:
                x._accumulate(g @ weight.data)

    return Tensor._node(out, (x, weight, bias), backward)


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product; also accepts a per-channel scale against a map.

    Valid shape pairs: identical shapes, or one side shaped like the other
    with trailing spatial axes of size 1 (e.g. [N,C,1,1] against [N,C,H,W]).
    """
    sa, sb = a.shape, b.shape
    if sa != sb:
        if len(sa) != len(sb):
            raise ValueError(f"shape mismatch {sa} vs {sb}")
        for da, db in zip(sa, sb):
            if da != db and da != 1 and db != 1:
                raise ValueError(f"shape mismatch {sa} vs {sb}")
    return a * b


def l2_normalize(v: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale a vector (or each row of a matrix) to unit Euclidean norm.

    Raises DegenerateVectorError when any norm is <= eps; callers must not
    feed all-zero embeddings forward.
    """
    if v.ndim not in (1, 2):
        raise ValueError(f"l2_normalize input must be 1-D or 2-D, got {v.ndim}-D")
    norms = np.sqrt((v.data * v.data).sum(axis=-1, keepdims=True))
    if np.any(norms <= eps):
        raise DegenerateVectorError(
            f"cannot normalize vector with norm <= {eps}"
        )
    out = v.data / norms

    def backward(g):
        if v.requires_grad:
            inner = (g * out).sum(axis=-1, keepdims=True)
            v._accumulate((g - out * inner) / norms)

    return Tensor._node(out, (v,), backward)


def sq_euclidean(u: Tensor, v: Tensor) -> Tensor:
    """Squared Euclidean distance between two equal-length vectors."""
    if u.ndim != 1 or v.ndim != 1:
        raise ValueError("sq_euclidean expects 1-D vectors")
    if u.shape != v.shape:
        raise ValueError(f"length mismatch {u.shape} vs {v.shape}")
    diff = u - v
    return (diff * diff).sum()


def log1p_sum_exp(terms: Tensor) -> Tensor:
    """Numerically stable log(1 + sum_i exp(terms_i)).

    With m = max(0, max_i terms_i), computes
    m + log(exp(-m) + sum_i exp(terms_i - m)), which never overflows and
    returns exactly 0.0 for an empty term vector.
    """
    if terms.ndim != 1:
        raise ValueError(f"log1p_sum_exp expects a 1-D tensor, got {terms.ndim}-D")
    t = terms.data
    m = max(0.0, float(t.max())) if t.size else 0.0
    shifted = np.exp(t - m)
    total = np.exp(-m) + shifted.sum()
    out = np.asarray(m + np.log(total))

    def backward(g):
        if terms.requires_grad:
            terms._accumulate(g * shifted / total)

    return Tensor._node(out, (terms,), backward)
