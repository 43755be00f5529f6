"""Iterative radix-2 FFT and the differentiable real-input 2-D transform."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, make_result


def is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def next_pow2(n: int) -> int:
    return 1 << max(n - 1, 0).bit_length()


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unnormalized forward DFT along ``axis``; length must be a power of two."""
    x = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, -1)
    n = x.shape[-1]
    if not is_pow2(n):
        raise ValueError(f"radix-2 fft needs a power-of-two length, got {n}")
    a = x[..., _bit_reverse(n)].copy()
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(a.shape[:-1] + (n // size, size))
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * tw
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        size *= 2
    return np.moveaxis(a, -1, axis)


def fft2_array(x: np.ndarray) -> np.ndarray:
    return fft(fft(x, axis=-1), axis=-2)


def fft2(x: Tensor) -> tuple[Tensor, Tensor]:
    """2-D DFT of a real tensor over its last two axes, as (real, imag) tensors.

    The pair is produced by one recorded op whose output stacks real and
    imaginary parts on a new leading axis; the two views are then sliced off.
    """
    H, W = x.shape[-2:]
    if not (is_pow2(H) and is_pow2(W)):
        raise ValueError(f"fft2 needs power-of-two sides, got {H}x{W}; pad first")
    X = fft2_array(x.data)
    stacked = np.stack([X.real, X.imag]).astype(x.dtype)

    def backward(g):
        # adjoint of a real -> (re, im) linear map: Re(F (g_re - i g_im) F)
        z = fft2_array(g[0] - 1j * g[1])
        return (z.real.astype(x.dtype),)

    both = make_result(stacked, (x,), backward, "fft2")
    return both[0], both[1]
