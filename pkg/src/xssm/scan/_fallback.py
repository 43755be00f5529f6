"""Numpy implementation of the scan kernels, used when the extension is unavailable.

Same signatures and buffer conventions as ``_kernel``; vectorized over
(batch, channel, state) and sequential in t.
"""
import numpy as np


def scan_forward(u, delta, abar, Bm, Cm, D, y, hs, h):
    keep = hs.shape[0] > 0
    h = np.zeros(abar.shape[:1] + abar.shape[2:], dtype=u.dtype)
    bu = (delta * u)[..., None] * Bm[:, :, None, :]
    for t in range(u.shape[1]):
        h = abar[:, t] * h + bu[:, t]
        if keep:
            hs[:, t] = h
        y[:, t] = np.einsum("bdn,bn->bd", h, Cm[:, t]) + D * u[:, t]


def scan_backward(g, u, delta, A, abar, Bm, Cm, D, hs, du, ddelta, dA, dB, dC, dD, carry):
    L = u.shape[1]
    carry = np.zeros(abar.shape[:1] + abar.shape[2:], dtype=u.dtype)
    dA_acc = np.zeros_like(A)
    for t in range(L - 1, -1, -1):
        gt = g[:, t]                                   # [Bt, Din]
        h_t = hs[:, t]
        hp = hs[:, t - 1] if t > 0 else np.zeros_like(h_t)
        a = abar[:, t]
        gh = gt[:, :, None] * Cm[:, t, None, :] + carry
        dC[:, t] = np.einsum("bd,bdn->bn", gt, h_t)
        dt = delta[:, t]
        ghB = np.einsum("bdn,bn->bd", gh, Bm[:, t])
        ddelta[:, t] = np.einsum("bdn,bdn->bd", gh, hp * a * A) + ghB * u[:, t]
        dA_acc += np.einsum("bdn,bd->dn", gh * hp * a, dt)
        dB[:, t] = np.einsum("bdn,bd->bn", gh, dt * u[:, t])
        du[:, t] = gt * D + ghB * dt
        carry = a * gh
    dA += dA_acc
    dD += np.einsum("bld,bld->d", g, u)
