"""NumPy implementations of the numerical kernels.

Same contracts as the compiled backend in `_kernels_c`; all arrays are
float64, batches are row-major (one sample per row).
"""

import numpy as np


def affine_forward(x, w, b):
    """y = x @ w.T + b for x (B,K), w (J,K), b (J,)."""
    return x @ w.T + b


def affine_backward(x, w, dy):
    """Gradients of an affine forward: returns (dx, dw, db)."""
    dx = dy @ w
    dw = dy.T @ x
    db = dy.sum(axis=0)
    return dx, dw, db


def tanh_forward(x):
    return np.tanh(x)


def tanh_backward(y, dy):
    """dx given y = tanh(x)."""
    return dy * (1.0 - y * y)


def softmax_xent(logits, targets):
    """Row-wise softmax cross-entropy.

    Returns (losses, dlogits) where losses[i] = -log softmax(logits[i])[targets[i]]
    and dlogits = softmax - onehot (unweighted). Stabilized by max subtraction.
    """
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    denom = ex.sum(axis=1, keepdims=True)
    rows = np.arange(logits.shape[0])
    losses = np.log(denom[:, 0]) - shifted[rows, targets]
    dlogits = ex / denom
    dlogits[rows, targets] -= 1.0
    return losses, dlogits


def pairwise_sqdist(a, b):
    """Squared Euclidean distances, out[i, j] = sum_k (a[i,k] - b[j,k])^2."""
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def sgd_update(param, grad, vel, lr, momentum, weight_decay):
    """In-place SGD with momentum and coupled weight decay.

    vel <- momentum*vel + grad + weight_decay*param; param <- param - lr*vel.
    """
    vel *= momentum
    vel += grad + weight_decay * param
    param -= lr * vel
