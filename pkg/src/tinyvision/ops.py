"""Numeric primitives for the tiny CNN: conv, pool, dense, activations, Adam.

Tensors are plain numpy ndarrays. The training path runs in float32; the
functions themselves are dtype-preserving so tests can run them in float64
for finite-difference work. Layouts are channels-last: images are H x W x C,
conv kernels are F x 3 x 3 x C (filter-major), dense weights are N x K with
N the row-major flatten of the incoming H x W x F activation.

All functions are pure: they allocate fresh output arrays and never mutate
their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAKY_SLOPE = 0.1  # negative-branch slope used by every activation in the net


class ShapeError(ValueError):
    """An input array's shape does not satisfy an operation's contract."""


class NumericsError(ArithmeticError):
    """A non-finite value (NaN/Inf) appeared where finite math was promised."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


def require_finite(arr: np.ndarray, what: str) -> None:
    # cheap relative to the convolutions; keeps NaN/Inf from leaking into state
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values in {what}")


# ======================================================================
# convolution (3x3, valid padding, stride 1)
# ======================================================================

def conv2d_forward(image: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Correlate image (H x W x C) with kernels (F x 3 x 3 x C), add bias.

    Returns (H-2) x (W-2) x F. out[y, x, f] = bias[f] +
    sum over ky, kx, c of image[y+ky, x+kx, c] * kernels[f, ky, kx, c].
    """
    _require(image.ndim == 3, f"image must be H x W x C, got {image.shape}")
    _require(kernels.ndim == 4 and kernels.shape[1:3] == (3, 3),
             f"kernels must be F x 3 x 3 x C, got {kernels.shape}")
    H, W, C = image.shape
    F = kernels.shape[0]
    _require(kernels.shape[3] == C,
             f"kernel channels {kernels.shape[3]} != image channels {C}")
    _require(bias.shape == (F,), f"bias must have shape ({F},), got {bias.shape}")
    _require(H >= 3 and W >= 3, f"image {H}x{W} too small for a 3x3 window")

    Ho, Wo = H - 2, W - 2
    out = np.zeros((Ho, Wo, F), dtype=np.result_type(image, kernels))
    # nine shifted views, one small GEMM over channels each
    for ky in range(3):
        for kx in range(3):
            patch = image[ky:ky + Ho, kx:kx + Wo, :]
            out += patch @ kernels[:, ky, kx, :].T
    out += bias
    require_finite(out, "conv2d output")
    return out


def conv2d_backward(image: np.ndarray, kernels: np.ndarray, grad_out: np.ndarray):
    """Gradients of conv2d_forward. Returns (grad_image, grad_kernels, grad_bias)."""
    H, W, C = image.shape
    F = kernels.shape[0]
    Ho, Wo = H - 2, W - 2
    _require(grad_out.shape == (Ho, Wo, F),
             f"grad_out must be {(Ho, Wo, F)}, got {grad_out.shape}")

    grad_bias = grad_out.sum(axis=(0, 1))
    grad_kernels = np.zeros_like(kernels)
    grad_image = np.zeros_like(image)
    for ky in range(3):
        for kx in range(3):
            patch = image[ky:ky + Ho, kx:kx + Wo, :]
            # grad_kernels[f, ky, kx, c] = sum_yx grad_out[y, x, f] * patch[y, x, c]
            grad_kernels[:, ky, kx, :] = np.tensordot(grad_out, patch, axes=((0, 1), (0, 1)))
            grad_image[ky:ky + Ho, kx:kx + Wo, :] += grad_out @ kernels[:, ky, kx, :]
    return grad_image, grad_kernels, grad_bias


# ======================================================================
# activations
# ======================================================================

def leaky_relu(x: np.ndarray, alpha: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(x > 0, x, x * np.asarray(alpha, dtype=x.dtype))


def leaky_relu_backward(x: np.ndarray, grad_out: np.ndarray, alpha: float = LEAKY_SLOPE) -> np.ndarray:
    # x == 0 takes the negative branch, matching leaky_relu's x > 0 test
    slope = np.where(x > 0, x.dtype.type(1), x.dtype.type(alpha))
    return grad_out * slope


# ======================================================================
# 2x2 max pooling, stride 2
# ======================================================================

def maxpool2x2(x: np.ndarray):
    """Pool H x W x C down to floor(H/2) x floor(W/2) x C, keeping argmax.

    Odd trailing rows/columns are dropped. Returns (pooled, argmax) where
    argmax[i, j, c] in 0..3 encodes the winning corner as 2*dy + dx.
    """
    _require(x.ndim == 3, f"input must be H x W x C, got {x.shape}")
    H, W, C = x.shape
    Ho, Wo = H // 2, W // 2
    _require(Ho > 0 and Wo > 0, f"input {H}x{W} too small to pool")
    t = x[:2 * Ho, :2 * Wo, :].reshape(Ho, 2, Wo, 2, C)
    windows = t.transpose(0, 2, 4, 1, 3).reshape(Ho, Wo, C, 4)
    argmax = windows.argmax(axis=3)
    pooled = np.take_along_axis(windows, argmax[..., None], axis=3)[..., 0]
    return pooled, argmax


def maxpool2x2_backward(grad_out: np.ndarray, argmax: np.ndarray, input_shape) -> np.ndarray:
    """Scatter grad_out back to the argmax positions of the original input."""
    H, W, C = input_shape
    Ho, Wo, Cg = grad_out.shape
    _require((Ho, Wo, Cg) == (H // 2, W // 2, C),
             f"grad_out {grad_out.shape} does not match pooled shape of {input_shape}")
    grad_in = np.zeros((H, W, C), dtype=grad_out.dtype)
    iy, ix, ic = np.meshgrid(np.arange(Ho), np.arange(Wo), np.arange(C), indexing="ij")
    ry = 2 * iy + argmax // 2
    rx = 2 * ix + argmax % 2
    # windows never overlap, so each (ry, rx, ic) target is unique
    grad_in[ry, rx, ic] = grad_out
    return grad_in


# ======================================================================
# dense layer
# ======================================================================

def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """logits = x @ weights + bias for a flat x of length N, weights N x K."""
    _require(x.ndim == 1, f"dense input must be flat, got {x.shape}")
    _require(weights.ndim == 2 and weights.shape[0] == x.shape[0],
             f"weights must be ({x.shape[0]}, K), got {weights.shape}")
    _require(bias.shape == (weights.shape[1],),
             f"bias must have shape ({weights.shape[1]},), got {bias.shape}")
    out = x @ weights + bias
    require_finite(out, "dense output")
    return out


def dense_backward(x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray):
    """Returns (grad_x, grad_weights, grad_bias) for dense_forward."""
    grad_x = weights @ grad_out
    grad_weights = np.outer(x, grad_out)
    return grad_x, grad_weights, grad_out.copy()


# ======================================================================
# softmax cross-entropy
# ======================================================================

def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def softmax_cross_entropy(logits: np.ndarray, label: int):
    """Fused softmax + cross-entropy. Returns (loss, grad_logits, probs).

    Max-shifted for stability: logits of [1000, 0, 0] with label 0 give a
    finite loss of exactly 0 instead of overflowing.
    """
    _require(logits.ndim == 1, f"logits must be flat, got {logits.shape}")
    if not 0 <= label < logits.shape[0]:
        raise IndexError(f"label {label} out of range for {logits.shape[0]} classes")
    shifted = logits - logits.max()
    e = np.exp(shifted)
    total = e.sum()
    probs = e / total
    loss = float(np.log(total) - shifted[label])
    grad = probs.copy()
    grad[label] -= 1
    require_finite(grad, "cross-entropy gradient")
    return loss, grad, probs


# ======================================================================
# Adam
# ======================================================================

@dataclass
class AdamState:
    """Per-parameter Adam moments plus the shared hyperparameters."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.0003
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_param(cls, param: np.ndarray, lr: float = 0.0003) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), lr=lr)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState):
    """One Adam update. Returns (new_param, new_state); inputs untouched.

    Classic bias-corrected form with epsilon outside the square root, so the
    first step with grad g moves by lr * g / (|g| + eps), about lr for g = 1.
    A zero gradient leaves the parameter bit-identical while t still advances.
    """
    _require(param.shape == grad.shape,
             f"grad shape {grad.shape} != param shape {param.shape}")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    new_param = param - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    require_finite(new_param, "adam-updated parameter")
    new_state = AdamState(m=m, v=v, t=t, lr=state.lr, beta1=state.beta1,
                          beta2=state.beta2, epsilon=state.epsilon)
    return new_param.astype(param.dtype, copy=False), new_state
