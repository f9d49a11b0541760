"""Dense tensor primitives: valid convolution (forward and backward), ReLU,
zero padding and center cropping.

A tensor is a plain float64 numpy array of shape (channels, height, width).
All operations are pure functions: inputs are never mutated and results are
freshly allocated, so tensors can be shared freely across threads. Batched
variants (leading sample axis) exist for the training hot path and are
element-for-element equivalent to mapping the single-tensor ops.

The convolution cores are compiled direct loops (numba) rather than im2col
GEMMs: the patch sizes this engine trains on are small enough that the
window-gather copies dominate any BLAS win. Writes are disjoint per thread,
so results are deterministic run to run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange


def as_tensor(data) -> np.ndarray:
    """Coerce to a (channels, height, width) float64 array and validate it."""
    t = np.asarray(data, dtype=np.float64)
    if t.ndim != 3:
        raise ValueError(f"tensor must be 3-d (channels, height, width), got shape {t.shape}")
    if min(t.shape) < 1:
        raise ValueError(f"tensor dimensions must all be >= 1, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor contains non-finite values")
    return t


@dataclass
class FilterBank:
    """Parameters of one convolution layer.

    weights: (num_filters, in_channels, filter_size, filter_size)
    biases:  (num_filters,)

    Filters are square with odd size. Treated as immutable once constructed.
    """

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.biases = np.ascontiguousarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 4:
            raise ValueError(f"weights must be 4-d, got shape {self.weights.shape}")
        n, c, fh, fw = self.weights.shape
        if fh != fw:
            raise ValueError(f"filters must be square, got {fh}x{fw}")
        if fh < 1 or fh % 2 == 0:
            raise ValueError(f"filter size must be odd and >= 1, got {fh}")
        if n < 1 or c < 1:
            raise ValueError(f"need >= 1 filters and input channels, got shape {self.weights.shape}")
        if self.biases.shape != (n,):
            raise ValueError(f"biases must have shape ({n},), got {self.biases.shape}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise ValueError("filter bank contains non-finite values")

    @property
    def num_filters(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def filter_size(self) -> int:
        return self.weights.shape[2]


# ---------------------------------------------------------------------------
# compiled cores (assume contiguous float64 arrays of valid shapes)
# ---------------------------------------------------------------------------

@njit(parallel=True, fastmath=True, cache=True)
def _kernel_forward(x, weights, biases, out):
    # x (n, c, H, W), weights (k, c, f, f) -> out (n, k, H-f+1, W-f+1)
    n, c, _, _ = x.shape
    k, _, f, _ = weights.shape
    ho, wo = out.shape[2], out.shape[3]
    for idx in prange(n * k):
        nn = idx // k
        kk = idx % k
        for y in range(ho):
            orow = out[nn, kk, y]
            for xx in range(wo):
                orow[xx] = biases[kk]
            for cc in range(c):
                for i in range(f):
                    xrow = x[nn, cc, y + i]
                    for j in range(f):
                        wv = weights[kk, cc, i, j]
                        for xx in range(wo):
                            orow[xx] += wv * xrow[xx + j]


@njit(parallel=True, fastmath=True, cache=True)
def _kernel_grad_weights(x, grad_out, gw):
    # gw[k, c, i, j] = sum_{n,y,x} grad_out[n, k, y, x] * x[n, c, y+i, x+j]
    n, c, _, _ = x.shape
    k, _, f, _ = gw.shape
    ho, wo = grad_out.shape[2], grad_out.shape[3]
    for idx in prange(k * c):
        kk = idx // c
        cc = idx % c
        for i in range(f):
            grow_w = gw[kk, cc, i]
            for j in range(f):
                grow_w[j] = 0.0
            for nn in range(n):
                for y in range(ho):
                    grow = grad_out[nn, kk, y]
                    xrow = x[nn, cc, y + i]
                    for xx in range(wo):
                        gv = grow[xx]
                        for j in range(f):
                            grow_w[j] += gv * xrow[xx + j]


def _conv_forward(x: np.ndarray, weights: np.ndarray, biases: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x)
    n, _, h, w = x.shape
    k, _, f, _ = weights.shape
    out = np.empty((n, k, h - f + 1, w - f + 1), dtype=np.float64)
    _kernel_forward(x, weights, biases, out)
    return out


def _conv_grad_weights(x: np.ndarray, grad_out: np.ndarray, f: int) -> np.ndarray:
    x = np.ascontiguousarray(x)
    grad_out = np.ascontiguousarray(grad_out)
    gw = np.empty((grad_out.shape[1], x.shape[1], f, f), dtype=np.float64)
    _kernel_grad_weights(x, grad_out, gw)
    return gw


def _conv_grad_input(grad_out: np.ndarray, weights: np.ndarray, h: int, w: int) -> np.ndarray:
    # full correlation of the zero-padded upstream gradient with flipped,
    # channel-transposed filters; reuses the forward kernel
    n, k, ho, wo = grad_out.shape
    _, c, f, _ = weights.shape
    gp = np.zeros((n, k, h + f - 1, w + f - 1), dtype=np.float64)
    gp[:, :, f - 1:f - 1 + ho, f - 1:f - 1 + wo] = grad_out
    wt = np.ascontiguousarray(weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    gx = np.empty((n, c, h, w), dtype=np.float64)
    _kernel_forward(gp, wt, np.zeros(c), gx)
    return gx


def _check_conv_input(x: np.ndarray, bank: FilterBank):
    c, h, w = x.shape[-3:]
    if c != bank.in_channels:
        raise ValueError(f"input has {c} channels, filter bank expects {bank.in_channels}")
    if h < bank.filter_size or w < bank.filter_size:
        raise ValueError(
            f"input {h}x{w} is smaller than the {bank.filter_size}x{bank.filter_size} filter")


# ---------------------------------------------------------------------------
# public single-tensor operations
# ---------------------------------------------------------------------------

def conv2d_valid(x: np.ndarray, bank: FilterBank) -> np.ndarray:
    """Valid cross-correlation of `x` with every filter in `bank`, plus bias.

    out[k, y, x] = b[k] + sum_{c,i,j} input[c, y+i, x+j] * w[k, c, i, j]

    Output shape is (num_filters, H-f+1, W-f+1). No activation is applied.
    """
    x = as_tensor(x)
    _check_conv_input(x, bank)
    return _conv_forward(x[None], bank.weights, bank.biases)[0]


def conv2d_backward(x: np.ndarray, bank: FilterBank, grad_output: np.ndarray):
    """Gradients of sum(grad_output * conv2d_valid(x, bank)).

    Returns (grad_input, grad_weights, grad_biases) with the shapes of
    x, bank.weights and bank.biases respectively.
    """
    x = as_tensor(x)
    _check_conv_input(x, bank)
    grad_output = np.asarray(grad_output, dtype=np.float64)
    f = bank.filter_size
    expected = (bank.num_filters, x.shape[1] - f + 1, x.shape[2] - f + 1)
    if grad_output.shape != expected:
        raise ValueError(f"grad_output shape {grad_output.shape}, expected {expected}")
    g4 = np.ascontiguousarray(grad_output[None])
    grad_input = _conv_grad_input(g4, bank.weights, x.shape[1], x.shape[2])[0]
    grad_weights = _conv_grad_weights(x[None], g4, f)
    grad_biases = grad_output.sum(axis=(1, 2))
    return grad_input, grad_weights, grad_biases


def relu(t: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(np.asarray(t, dtype=np.float64), 0.0)


def relu_backward(t: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Pass grad_out where t > 0, zero elsewhere (derivative at 0 taken as 0)."""
    t = np.asarray(t, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if t.shape != grad_out.shape:
        raise ValueError(f"shape mismatch: {t.shape} vs {grad_out.shape}")
    return np.where(t > 0.0, grad_out, 0.0)


def zero_pad(t: np.ndarray, top: int, bottom: int, left: int, right: int) -> np.ndarray:
    """Pad the spatial dimensions with zeros."""
    if min(top, bottom, left, right) < 0:
        raise ValueError("padding amounts must be >= 0")
    t = as_tensor(t)
    return np.pad(t, ((0, 0), (top, bottom), (left, right)))


def crop_center(t: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Return the centered out_h x out_w window of every channel.

    Margins must be symmetric: (H - out_h) and (W - out_w) must be even.
    """
    t = as_tensor(t)
    _, h, w = t.shape
    if out_h < 1 or out_w < 1 or out_h > h or out_w > w:
        raise ValueError(f"cannot crop {h}x{w} to {out_h}x{out_w}")
    dh, dw = h - out_h, w - out_w
    if dh % 2 or dw % 2:
        raise ValueError(f"crop margins must be even, got {dh} and {dw}")
    return t[:, dh // 2:dh // 2 + out_h, dw // 2:dw // 2 + out_w].copy()


# ---------------------------------------------------------------------------
# batched variants (leading sample axis), used by the training loop
# ---------------------------------------------------------------------------

def conv2d_valid_batch(x: np.ndarray, bank: FilterBank) -> np.ndarray:
    """conv2d_valid applied to a (N, C, H, W) batch; returns (N, K, Ho, Wo)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError(f"batch input must be 4-d, got shape {x.shape}")
    _check_conv_input(x, bank)
    return _conv_forward(x, bank.weights, bank.biases)


def conv2d_backward_batch(x: np.ndarray, bank: FilterBank, grad_output: np.ndarray,
                          need_grad_input: bool = True):
    """Batched conv2d_backward; weight and bias gradients are summed over samples.

    need_grad_input=False skips the (expensive) input gradient and returns
    None in its place; used for the first layer of a network.
    """
    x = np.asarray(x, dtype=np.float64)
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError(f"batch input must be 4-d, got shape {x.shape}")
    _check_conv_input(x, bank)
    f = bank.filter_size
    expected = (x.shape[0], bank.num_filters, x.shape[2] - f + 1, x.shape[3] - f + 1)
    if grad_output.shape != expected:
        raise ValueError(f"grad_output shape {grad_output.shape}, expected {expected}")
    grad_output = np.ascontiguousarray(grad_output)
    grad_input = None
    if need_grad_input:
        grad_input = _conv_grad_input(grad_output, bank.weights, x.shape[2], x.shape[3])
    grad_weights = _conv_grad_weights(x, grad_output, f)
    grad_biases = grad_output.sum(axis=(0, 2, 3))
    return grad_input, grad_weights, grad_biases
