# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled selective-scan recurrence (forward and reverse sweep).

Shapes: u, delta [Bt, L, Din]; A [Din, N]; abar = exp(delta A) [Bt, L, Din, N];
Bm, Cm [Bt, L, N]; D [Din]. hs [Bt, L, Din, N] receives every hidden state
when it is non-empty (the reverse sweep needs them).
"""

ctypedef fused real:
    float
    double


def scan_forward(real[:, :, ::1] u, real[:, :, ::1] delta, real[:, :, :, ::1] abar,
                 real[:, :, ::1] Bm, real[:, :, ::1] Cm, real[::1] D,
                 real[:, :, ::1] y, real[:, :, :, ::1] hs, real[:, ::1] h):
    cdef Py_ssize_t nb = u.shape[0], L = u.shape[1], Din = u.shape[2], N = abar.shape[3]
    cdef Py_ssize_t b, t, d, n
    cdef real du_t, acc, hv
    cdef bint keep = hs.shape[0] > 0
    with nogil:
        for b in range(nb):
            for d in range(Din):
                for n in range(N):
                    h[d, n] = 0
            for t in range(L):
                for d in range(Din):
                    du_t = delta[b, t, d] * u[b, t, d]
                    acc = 0
                    for n in range(N):
                        hv = abar[b, t, d, n] * h[d, n] + du_t * Bm[b, t, n]
                        h[d, n] = hv
                        acc = acc + Cm[b, t, n] * hv
                    if keep:
                        for n in range(N):
                            hs[b, t, d, n] = h[d, n]
                    y[b, t, d] = acc + D[d] * u[b, t, d]


def scan_backward(real[:, :, ::1] g, real[:, :, ::1] u, real[:, :, ::1] delta,
                  real[:, ::1] A, real[:, :, :, ::1] abar,
                  real[:, :, ::1] Bm, real[:, :, ::1] Cm, real[::1] D,
                  real[:, :, :, ::1] hs,
                  real[:, :, ::1] du, real[:, :, ::1] ddelta, real[:, ::1] dA,
                  real[:, :, ::1] dB, real[:, :, ::1] dC, real[::1] dD,
                  real[:, ::1] carry):
    cdef Py_ssize_t nb = u.shape[0], L = u.shape[1], Din = u.shape[2], N = A.shape[1]
    cdef Py_ssize_t b, t, d, n
    cdef real gt, dt, ut, a, hp, gh, acc_u, acc_d
    with nogil:
        for b in range(nb):
            for d in range(Din):
                for n in range(N):
                    carry[d, n] = 0
            for t in range(L - 1, -1, -1):
                for d in range(Din):
                    gt = g[b, t, d]
                    dt = delta[b, t, d]
                    ut = u[b, t, d]
                    acc_u = gt * D[d]
                    acc_d = 0
                    dD[d] += gt * ut
                    for n in range(N):
                        a = abar[b, t, d, n]
                        hp = hs[b, t - 1, d, n] if t > 0 else 0
                        gh = gt * Cm[b, t, n] + carry[d, n]
                        dC[b, t, n] += gt * hs[b, t, d, n]
                        acc_d = acc_d + gh * (hp * a * A[d, n] + Bm[b, t, n] * ut)
                        dA[d, n] += gh * hp * a * dt
                        dB[b, t, n] += gh * dt * ut
                        acc_u = acc_u + gh * dt * Bm[b, t, n]
                        carry[d, n] = a * gh
                    du[b, t, d] = acc_u
                    ddelta[b, t, d] = acc_d
