"""Differentiable layer primitives: dense, 1-d convolution, batch norm.

Convolutions run along the last axis of [batch, channels, 1, length] inputs
(the dummy axis keeps the planar-image layout the beamformer networks use);
batch norm normalizes per channel over every other axis.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Module, Tensor, _node, mish


def uniform_fan_in(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense(Module):
    def __init__(self, n_in, n_out, rng):
        super().__init__()
        self.w = Tensor(uniform_fan_in(rng, n_in, (n_in, n_out)), requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)
        self.n_in = n_in
        self.n_out = n_out

    def __call__(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"dense expects [batch, {self.n_in}], got {x.shape}")
        return x @ self.w + self.b


class Conv1d(Module):
    """Same-padded conv over the length axis, kernel 1x5 by default."""

    def __init__(self, c_in, c_out, rng, kernel=5):
        super().__init__()
        if kernel % 2 == 0:
            raise ValueError("kernel width must be odd for same padding")
        self.w = Tensor(uniform_fan_in(rng, c_in * kernel, (c_out, c_in, kernel)),
                        requires_grad=True)
        self.b = Tensor(np.zeros(c_out), requires_grad=True)
        self.c_in = c_in
        self.c_out = c_out
        self.kernel = kernel

    def __call__(self, x):
        if x.ndim != 4 or x.shape[1] != self.c_in or x.shape[2] != 1:
            raise ValueError(
                f"conv expects [batch, {self.c_in}, 1, length], got {x.shape}")
        length = x.shape[3]
        if length < 1:
            raise ValueError(f"conv input length must be >= 1, got {length}")
        w, b, k = self.w, self.b, self.kernel
        pad = k // 2
        xv = x.values[:, :, 0, :]                      # [B, C, L]
        xp = np.pad(xv, ((0, 0), (0, 0), (pad, pad)))
        # windows[b, c, t, l] = xp[b, c, l + t]
        windows = np.stack([xp[:, :, t:t + length] for t in range(k)], axis=2)
        out = np.einsum("oct,bctl->bol", w.values, windows, optimize=True)
        out = out + b.values[None, :, None]

        def bw(g):
            gv = g[:, :, 0, :]                         # [B, O, L]
            if w.requires_grad:
                w._accum(np.einsum("bol,bctl->oct", gv, windows, optimize=True))
            if b.requires_grad:
                b._accum(gv.sum(axis=(0, 2)))
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                for t in range(k):
                    gxp[:, :, t:t + length] += np.einsum(
                        "oct,bol->bcl", w.values[:, :, t:t + 1], gv, optimize=True)
                gx = gxp[:, :, pad:pad + length]
                x._accum(gx[:, :, None, :])

        return _node(out[:, :, None, :], (x, w, b), bw)


class BatchNorm(Module):
    """Batch normalization over axis 1, with running statistics for eval.

    Training uses biased batch variance for the normalization and updates the
    running variance with the unbiased estimate (the usual convention).
    """

    def __init__(self, n_features, eps=1e-5, momentum=0.1):
        super().__init__()
        self.gamma = Tensor(np.ones(n_features), requires_grad=True)
        self.beta = Tensor(np.zeros(n_features), requires_grad=True)
        self.running_mean = np.zeros(n_features)
        self.running_var = np.ones(n_features)
        self.eps = eps
        self.momentum = momentum
        self.n_features = n_features

    def __call__(self, x):
        if x.ndim < 2 or x.shape[1] != self.n_features:
            raise ValueError(
                f"batchnorm expects axis 1 of size {self.n_features}, got {x.shape}")
        axes = (0,) + tuple(range(2, x.ndim))
        shape = (1, self.n_features) + (1,) * (x.ndim - 2)
        if self.training:
            if x.shape[0] < 2:
                raise ValueError("batchnorm in training mode needs batch size >= 2")
            n = int(np.prod([x.shape[i] for i in axes]))
            mean = x.mean(axis=axes, keepdims=True)
            centered = x - mean
            var = (centered * centered).mean(axis=axes, keepdims=True)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean.values.reshape(-1)
            unbiased = var.values.reshape(-1) * n / max(n - 1, 1)
            self.running_var = (1 - m) * self.running_var + m * unbiased
            xhat = centered / (var + self.eps).sqrt()
        else:
            xhat = (x - self.running_mean.reshape(shape)) / np.sqrt(
                self.running_var.reshape(shape) + self.eps)
        return xhat * self.gamma.reshape(shape) + self.beta.reshape(shape)


class DenseBlock(Module):
    """Dense -> batch norm -> Mish, the hidden-layer pattern used throughout."""

    def __init__(self, n_in, n_out, rng):
        super().__init__()
        self.fc = Dense(n_in, n_out, rng)
        self.bn = BatchNorm(n_out)

    def __call__(self, x):
        return mish(self.bn(self.fc(x)))
