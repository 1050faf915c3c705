"""Batched dense/conv/max-pool kernels on numpy arrays (NCHW layout)."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_size(size, kernel, stride, padding):
    span = size + 2 * padding - kernel
    if span < 0 or span % stride:
        raise ValueError(
            f"size {size}, kernel {kernel}, stride {stride}, padding {padding} "
            "does not give an integer output size")
    return span // stride + 1


def _windows(x, kh, kw, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(x, weight, stride=1, padding=0):
    """Cross-correlation of ``x`` (B,C,H,W) with ``weight`` (O,C,kh,kw)."""
    _, _, kh, kw = weight.shape
    conv_out_size(x.shape[2], kh, stride, padding)
    conv_out_size(x.shape[3], kw, stride, padding)
    win = _windows(x, kh, kw, stride, padding)  # B,C,H',W',kh,kw
    out = np.tensordot(win, weight, axes=([1, 4, 5], [1, 2, 3]))  # B,H',W',O
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_grad_input(grad_out, weight, in_hw, stride=1, padding=0):
    """Adjoint of :func:`conv2d` with respect to its input."""
    b, _, oh, ow = grad_out.shape
    _, c, kh, kw = weight.shape
    h, w = in_hw
    dx = np.zeros((b, c, h + 2 * padding, w + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(grad_out, weight[:, :, i, j], axes=([1], [0]))
            dx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += (
                contrib.transpose(0, 3, 1, 2))
    if padding:
        dx = dx[:, :, padding:-padding, padding:-padding]
    return dx


def conv2d_grad_weight(x, grad_out, kernel_hw, stride=1, padding=0):
    kh, kw = kernel_hw
    win = _windows(x, kh, kw, stride, padding)  # B,C,H',W',kh,kw
    gw = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))  # O,C,kh,kw
    return gw


def maxpool2d(x, kernel, stride):
    conv_out_size(x.shape[2], kernel, stride, 0)
    conv_out_size(x.shape[3], kernel, stride, 0)
    return _windows(x, kernel, kernel, stride, 0).max(axis=(4, 5))


def minpool2d(x, kernel, stride):
    return _windows(x, kernel, kernel, stride, 0).min(axis=(4, 5))


def maxpool2d_grad(x, grad_out, kernel, stride):
    """Route ``grad_out`` to the first maximal element of each window."""
    win = _windows(x, kernel, kernel, stride, 0)
    b, c, oh, ow = grad_out.shape
    flat = win.reshape(b, c, oh, ow, kernel * kernel)
    arg = flat.argmax(axis=-1)
    di, dj = np.divmod(arg, kernel)
    dx = np.zeros_like(x)
    bi, ci, hi, wi = np.indices((b, c, oh, ow))
    np.add.at(dx, (bi, ci, hi * stride + di, wi * stride + dj), grad_out)
    return dx


def window_counts(in_shape, kernel_hw, stride, padding):
    """How many output windows of a conv/pool cover each input position."""
    c, h, w = in_shape
    kh, kw = kernel_hw
    oh = conv_out_size(h, kh, stride, padding)
    ow = conv_out_size(w, kw, stride, padding)
    cover = conv2d_grad_input(np.ones((1, 1, oh, ow)), np.ones((1, 1, kh, kw)),
                              (h, w), stride, padding)
    return np.broadcast_to(np.rint(cover[0]), (c, h, w)).astype(np.int64)
