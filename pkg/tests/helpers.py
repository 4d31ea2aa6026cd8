"""Shared test utilities: loop oracles and finite-difference grad checking."""

from __future__ import annotations

import numpy as np


def conv2d_oracle(x, w, b, stride, padding):
    """Naive quadruple-loop cross-correlation, the reference for conv2d."""
    n, c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((n, c_out, oh, ow))
    for ni in range(n):
        for co in range(c_out):
            for oi in range(oh):
                for oj in range(ow):
                    acc = 0.0
                    for ci in range(c_in):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += xp[ni, ci, oi * sh + ki, oj * sw + kj] \
                                    * w[co, ci, ki, kj]
                    out[ni, co, oi, oj] = acc + (0.0 if b is None else b[co])
    return out


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return np.abs(analytic - numeric) / denom


def fd_gradient(build, tensor, h: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of build() w.r.t. one tensor's data."""
    num = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    nflat = num.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = build().item()
        flat[i] = orig - h
        lo = build().item()
        flat[i] = orig
        nflat[i] = (hi - lo) / (2.0 * h)
    return num


def fd_check(build, tensors, h: float = 1e-3, tol: float = 1e-4) -> None:
    """Assert analytic gradients of build() match central differences.

    build must recompute the scalar loss from the tensors' current values.
    """
    for t in tensors:
        t.grad = None
    loss = build()
    loss.backward()
    for t in tensors:
        assert t.grad is not None, "gradient did not reach input"
        numeric = fd_gradient(build, t, h=h)
        worst = relative_errors(t.grad, numeric).max()
        assert worst < tol, f"worst relative error {worst:.3e} (tol {tol:.0e})"
