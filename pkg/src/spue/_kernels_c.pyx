# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the numerical kernels.

Same contracts as `_kernels_py`; inputs are coerced to C-contiguous
float64. Accumulation order is plain sequential loops, so results can
differ from the BLAS-backed NumPy versions in the last few ulps.
"""

import numpy as np

from libc.math cimport exp, log, tanh


def affine_forward(x, w, b):
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], k = xv.shape[1], j = wv.shape[0]
    if wv.shape[1] != k or bv.shape[0] != j:
        raise ValueError("affine_forward: shape mismatch")
    out = np.empty((n, j), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, p, q
    cdef double acc
    for i in range(n):
        for p in range(j):
            acc = bv[p]
            for q in range(k):
                acc += xv[i, q] * wv[p, q]
            ov[i, p] = acc
    return out


def affine_backward(x, w, dy):
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[:, ::1] dyv = np.ascontiguousarray(dy, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], k = xv.shape[1], j = wv.shape[0]
    if wv.shape[1] != k or dyv.shape[0] != n or dyv.shape[1] != j:
        raise ValueError("affine_backward: shape mismatch")
    dx = np.zeros((n, k), dtype=np.float64)
    dw = np.zeros((j, k), dtype=np.float64)
    db = np.zeros(j, dtype=np.float64)
    cdef double[:, ::1] dxv = dx
    cdef double[:, ::1] dwv = dw
    cdef double[::1] dbv = db
    cdef Py_ssize_t i, p, q
    cdef double g
    for i in range(n):
        for p in range(j):
            g = dyv[i, p]
            dbv[p] += g
            for q in range(k):
                dxv[i, q] += g * wv[p, q]
                dwv[p, q] += g * xv[i, q]
    return dx, dw, db


def tanh_forward(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    cdef const double[::1] xv = arr.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i
    for i in range(xv.shape[0]):
        ov[i] = tanh(xv[i])
    return out


def tanh_backward(y, dy):
    yarr = np.ascontiguousarray(y, dtype=np.float64)
    dyarr = np.ascontiguousarray(dy, dtype=np.float64)
    if yarr.shape != dyarr.shape:
        raise ValueError("tanh_backward: shape mismatch")
    out = np.empty_like(yarr)
    cdef const double[::1] yv = yarr.reshape(-1)
    cdef const double[::1] dyv = dyarr.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i
    for i in range(yv.shape[0]):
        ov[i] = dyv[i] * (1.0 - yv[i] * yv[i])
    return out


def softmax_xent(logits, targets):
    cdef const double[:, ::1] lv = np.ascontiguousarray(logits, dtype=np.float64)
    cdef const Py_ssize_t[::1] tv = np.ascontiguousarray(targets, dtype=np.intp)
    cdef Py_ssize_t n = lv.shape[0], k = lv.shape[1]
    if tv.shape[0] != n:
        raise ValueError("softmax_xent: targets length mismatch")
    losses = np.empty(n, dtype=np.float64)
    dlogits = np.empty((n, k), dtype=np.float64)
    cdef double[::1] lossv = losses
    cdef double[:, ::1] dv = dlogits
    cdef Py_ssize_t i, j, t
    cdef double mx, denom, e
    for i in range(n):
        t = tv[i]
        if t < 0 or t >= k:
            raise ValueError("softmax_xent: target out of range")
        mx = lv[i, 0]
        for j in range(1, k):
            if lv[i, j] > mx:
                mx = lv[i, j]
        denom = 0.0
        for j in range(k):
            e = exp(lv[i, j] - mx)
            dv[i, j] = e
            denom += e
        lossv[i] = log(denom) - (lv[i, t] - mx)
        for j in range(k):
            dv[i, j] /= denom
        dv[i, t] -= 1.0
    return losses, dlogits


def pairwise_sqdist(a, b):
    cdef const double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0], d = av.shape[1]
    if bv.shape[1] != d:
        raise ValueError("pairwise_sqdist: dimension mismatch")
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, q
    cdef double acc, diff
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for q in range(d):
                diff = av[i, q] - bv[j, q]
                acc += diff * diff
            ov[i, j] = acc
    return out


def sgd_update(param, grad, vel, double lr, double momentum, double weight_decay):
    if not (param.flags["C_CONTIGUOUS"] and vel.flags["C_CONTIGUOUS"]):
        raise ValueError("sgd_update: param and vel must be C-contiguous")
    garr = np.ascontiguousarray(grad, dtype=np.float64)
    cdef double[::1] pv = param.reshape(-1)
    cdef const double[::1] gv = garr.reshape(-1)
    cdef double[::1] vv = vel.reshape(-1)
    cdef Py_ssize_t i, n = pv.shape[0]
    if gv.shape[0] != n or vv.shape[0] != n:
        raise ValueError("sgd_update: shape mismatch")
    for i in range(n):
        vv[i] = momentum * vv[i] + (gv[i] + weight_decay * pv[i])
        pv[i] -= lr * vv[i]
