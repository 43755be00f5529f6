# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled depthwise cross-correlation on pre-padded NCHW input, stride 1."""

ctypedef fused real:
    float
    double


def dw_forward(real[:, :, :, ::1] xp, real[:, :, ::1] k, real[:, :, :, ::1] out):
    cdef Py_ssize_t N = out.shape[0], C = out.shape[1], Ho = out.shape[2], Wo = out.shape[3]
    cdef Py_ssize_t kh = k.shape[1], kw = k.shape[2]
    cdef Py_ssize_t n, c, i, j, y, x
    cdef real w
    with nogil:
        for n in range(N):
            for c in range(C):
                for y in range(Ho):
                    for x in range(Wo):
                        out[n, c, y, x] = 0
                for i in range(kh):
                    for j in range(kw):
                        w = k[c, i, j]
                        for y in range(Ho):
                            for x in range(Wo):
                                out[n, c, y, x] += w * xp[n, c, y + i, x + j]


def dw_backward(real[:, :, :, ::1] g, real[:, :, :, ::1] xp, real[:, :, ::1] k,
                real[:, :, :, ::1] gxp, real[:, :, ::1] gk):
    cdef Py_ssize_t N = g.shape[0], C = g.shape[1], Ho = g.shape[2], Wo = g.shape[3]
    cdef Py_ssize_t kh = k.shape[1], kw = k.shape[2]
    cdef Py_ssize_t n, c, i, j, y, x
    cdef real w, acc
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(kh):
                    for j in range(kw):
                        w = k[c, i, j]
                        acc = 0
                        for y in range(Ho):
                            for x in range(Wo):
                                acc = acc + g[n, c, y, x] * xp[n, c, y + i, x + j]
                                gxp[n, c, y + i, x + j] += w * g[n, c, y, x]
                        gk[c, i, j] += acc
