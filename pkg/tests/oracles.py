"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports from the package: each function is written directly
from the defining formula with explicit loops.
"""
import cmath
import math

import numpy as np


def naive_scan(u, delta, A, B, C, D):
    """Per-step recurrence for one sequence.

    u, delta: [L, Din]; A: [Din, N]; B, C: [L, N]; D: [Din] -> y [L, Din].
    """
    L, Din = u.shape
    N = A.shape[1]
    h = [[0.0] * N for _ in range(Din)]
    y = np.zeros((L, Din))
    for t in range(L):
        for d in range(Din):
            acc = 0.0
            for n in range(N):
                abar = math.exp(float(delta[t, d]) * float(A[d, n]))
                bbar = float(delta[t, d]) * float(B[t, n])
                h[d][n] = abar * h[d][n] + bbar * float(u[t, d])
                acc += float(C[t, n]) * h[d][n]
            y[t, d] = acc + float(D[d]) * float(u[t, d])
    return y


def softplus(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0)


def naive_conv2d(x, k, b=None, stride=1, padding=0):
    N, Cin, H, W = x.shape
    Cout, _, kh, kw = k.shape
    xp = np.zeros((N, Cin, H + 2 * padding, W + 2 * padding))
    xp[:, :, padding:padding + H, padding:padding + W] = x
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    out = np.zeros((N, Cout, Ho, Wo))
    for n in range(N):
        for o in range(Cout):
            for i in range(Ho):
                for j in range(Wo):
                    patch = xp[n, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[n, o, i, j] = np.sum(patch * k[o]) + (0.0 if b is None else b[o])
    return out


def naive_dwconv2d(x, k, b=None, padding=1):
    """k: [C, 1, kh, kw]."""
    C = x.shape[1]
    out = np.concatenate([
        naive_conv2d(x[:, c:c + 1], k[c:c + 1], None if b is None else b[c:c + 1], 1, padding)
        for c in range(C)], axis=1)
    return out


def naive_layer_norm(x, gamma, beta, eps, axis):
    x = np.moveaxis(np.asarray(x, dtype=np.float64), axis, -1)
    out = np.empty_like(x)
    for idx in np.ndindex(x.shape[:-1]):
        v = x[idx]
        mu = sum(v) / len(v)
        var = sum((vi - mu) ** 2 for vi in v) / len(v)
        out[idx] = (v - mu) / math.sqrt(var + eps) * gamma + beta
    return np.moveaxis(out, -1, axis)


def naive_dft(x):
    n = len(x)
    return np.array([sum(x[t] * cmath.exp(-2j * math.pi * k * t / n) for t in range(n)) for k in range(n)])


def naive_dft2(x):
    H, W = x.shape
    out = np.zeros((H, W), dtype=complex)
    for u in range(H):
        for v in range(W):
            s = 0j
            for i in range(H):
                for j in range(W):
                    s += x[i, j] * cmath.exp(-2j * math.pi * (u * i / H + v * j / W))
            out[u, v] = s
    return out


def keys_cubic(x, a=-0.75):
    x = abs(x)
    if x <= 1:
        return (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1
    if x < 2:
        return a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a
    return 0.0


def naive_bicubic_up_1d(v, s):
    """Upsample a 1-D signal by integer ``s``: half-pixel centers, clamped borders."""
    n = len(v)
    out = []
    for i in range(n * s):
        src = (i + 0.5) / s - 0.5
        x0 = math.floor(src)
        acc = 0.0
        for k in range(-1, 3):
            j = min(max(x0 + k, 0), n - 1)
            acc += keys_cubic(src - (x0 + k)) * v[j]
        out.append(acc)
    return np.array(out)


def naive_bicubic_up(img, s):
    rows = np.array([naive_bicubic_up_1d(r, s) for r in img])
    return np.array([naive_bicubic_up_1d(c, s) for c in rows.T]).T


def naive_cosine(fd, fg):
    """[C, HW] x [C, HW] mean-centered cosine similarity; zero vectors score 0."""
    C = fd.shape[0]
    out = np.zeros((C, fg.shape[0]))
    for i in range(C):
        a = fd[i] - fd[i].mean()
        for j in range(fg.shape[0]):
            b = fg[j] - fg[j].mean()
            na, nb = math.sqrt(float(a @ a)), math.sqrt(float(b @ b))
            out[i, j] = 0.0 if na == 0 or nb == 0 else float(a @ b) / (na * nb)
    return out


def greedy_pairs(sim):
    """Repeatedly take the best remaining (row, col); ties go to the lowest row, then column."""
    C = sim.shape[0]
    rows, cols = set(range(C)), set(range(sim.shape[1]))
    pairs = []
    while rows:
        best = None
        for r in sorted(rows):
            for c in sorted(cols):
                if best is None or sim[r, c] > sim[best]:
                    best = (r, c)
        pairs.append(best)
        rows.discard(best[0])
        cols.discard(best[1])
    return pairs


def neg_euclid(P, A):
    C = P.shape[0]
    out = np.zeros((C, A.shape[0]))
    for i in range(C):
        for j in range(A.shape[0]):
            out[i, j] = -math.sqrt(sum((float(p) - float(a)) ** 2 for p, a in zip(P[i], A[j])))
    return out


def top1_oracle(M):
    rows = []
    for i in range(M.shape[0]):
        j = max(range(M.shape[1]), key=lambda c: (M[i, c], -c))
        rows.append((M[i, j], i, j))
    rows.sort(key=lambda r: (-r[0], r[1]))
    return np.array([j for _, _, j in rows])
