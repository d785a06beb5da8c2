"""Complex arithmetic on top of the real autodiff engine.

A complex array is carried as a (re, im) pair of Tensors; a complex matmul
costs four real matmuls. Only the operations the signal chain needs are
provided.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, astensor


class ComplexPair:
    """Complex-valued array as paired real tensors."""

    __slots__ = ("re", "im")

    def __init__(self, re, im):
        self.re = astensor(re)
        self.im = astensor(im)
        if self.re.shape != self.im.shape:
            raise ValueError(f"re/im shape mismatch: {self.re.shape} vs {self.im.shape}")

    @classmethod
    def from_complex(cls, arr, requires_grad=False):
        arr = np.asarray(arr)
        return cls(Tensor(arr.real.copy(), requires_grad), Tensor(arr.imag.copy(), requires_grad))

    def numpy(self):
        return self.re.values + 1j * self.im.values

    @property
    def shape(self):
        return self.re.shape

    def __repr__(self):
        return f"ComplexPair(shape={self.re.shape})"

    def __add__(self, other):
        return ComplexPair(self.re + other.re, self.im + other.im)

    def __sub__(self, other):
        return ComplexPair(self.re - other.re, self.im - other.im)

    def __mul__(self, other):
        # Elementwise complex product; `other` may be a real Tensor/scalar.
        if isinstance(other, ComplexPair):
            return ComplexPair(self.re * other.re - self.im * other.im,
                               self.re * other.im + self.im * other.re)
        return ComplexPair(self.re * other, self.im * other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        # (A + jB)(C + jD) = (AC - BD) + j(AD + BC)
        return ComplexPair(self.re @ other.re - self.im @ other.im,
                           self.re @ other.im + self.im @ other.re)

    def conj(self):
        return ComplexPair(self.re, -self.im)

    def swapaxes(self, ax1, ax2):
        return ComplexPair(self.re.swapaxes(ax1, ax2), self.im.swapaxes(ax1, ax2))

    def conj_t(self):
        """Hermitian transpose over the trailing two axes."""
        return ComplexPair(self.re.swapaxes(-1, -2), -self.im.swapaxes(-1, -2))

    def reshape(self, *shape):
        return ComplexPair(self.re.reshape(*shape), self.im.reshape(*shape))

    def __getitem__(self, key):
        return ComplexPair(self.re[key], self.im[key])

    def abs2(self):
        """Squared modulus as a real Tensor."""
        return self.re * self.re + self.im * self.im


def cexp(theta):
    """exp(j*theta) for a real Tensor theta: entries of unit modulus."""
    theta = astensor(theta)
    return ComplexPair(theta.cos(), theta.sin())


def as_pair(x):
    if isinstance(x, ComplexPair):
        return x
    return ComplexPair.from_complex(np.asarray(x, dtype=np.complex128))
