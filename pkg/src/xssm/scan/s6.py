"""S6 parameters, discretization and the differentiable scan op."""
from __future__ import annotations

import numpy as np

from ..numerics import Module, Tensor, ops
from ..numerics.module import kaiming_uniform, param
from ..numerics.tensor import active_tape, check_finite, make_result


def discretize(delta_t: np.ndarray, A: np.ndarray, B_t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order hold on A, Euler on B.

    ``delta_t`` [Din], ``A`` [Din, N], ``B_t`` [N] -> (Abar [Din, N], Bbar [Din, N]).
    """
    delta_t = np.asarray(delta_t)
    if np.any(delta_t <= 0):
        raise ValueError("discretize: step sizes must be positive")
    abar = np.exp(delta_t[:, None] * A)
    bbar = delta_t[:, None] * np.asarray(B_t)[None, :]
    return abar, bbar


def ssm_scan(u: Tensor, delta: Tensor, A: Tensor, Bm: Tensor, Cm: Tensor, D: Tensor) -> Tensor:
    """Scan with precomputed coefficient streams.

    u, delta: [Bt, L, Din]; A: [Din, N] (negative); Bm, Cm: [Bt, L, N]; D: [Din].
    h_t = exp(delta_t A) h_{t-1} + delta_t B_t u_t,  y_t = C_t . h_t + D u_t.
    """
    from . import kernels

    nb, L, Din = u.shape
    N = A.shape[1]
    if L < 1:
        raise ValueError("ssm_scan: empty sequence")
    if delta.shape != u.shape or A.shape != (Din, N) or Bm.shape != (nb, L, N) \
            or Cm.shape != (nb, L, N) or D.shape != (Din,):
        raise ValueError(
            f"ssm_scan: inconsistent shapes u={u.shape} delta={delta.shape} A={A.shape} "
            f"B={Bm.shape} C={Cm.shape} D={D.shape}")
    dtype = np.result_type(u.data, delta.data, A.data, Bm.data, Cm.data, D.data)
    arrs = [np.ascontiguousarray(t.data, dtype=dtype) for t in (u, delta, A, Bm, Cm, D)]
    needs_grad = active_tape() is not None and any(
        t.requires_grad for t in (u, delta, A, Bm, Cm, D))
    y = np.empty((nb, L, Din), dtype=dtype)
    hs = np.empty((nb, L, Din, N) if needs_grad else (0, 1, 1, 1), dtype=dtype)
    u_, d_, A_, B_, C_, D_ = arrs
    abar = np.exp(d_[..., None] * A_)  # [Bt, L, Din, N]
    k = kernels()
    k.scan_forward(u_, d_, abar, B_, C_, D_, y, hs, np.empty((Din, N), dtype=dtype))
    if needs_grad:
        check_finite(hs, "ssm_scan hidden state")

    def backward(g):
        g = np.ascontiguousarray(g, dtype=dtype)
        du = np.zeros_like(arrs[0])
        dd = np.zeros_like(arrs[1])
        dA = np.zeros_like(arrs[2])
        dB = np.zeros_like(arrs[3])
        dC = np.zeros_like(arrs[4])
        dD = np.zeros_like(arrs[5])
        k.scan_backward(g, u_, d_, A_, abar, B_, C_, D_, hs, du, dd, dA, dB, dC, dD,
                        np.empty((Din, N), dtype=dtype))
        return du, dd, dA, dB, dC, dD

    return make_result(y, (u, delta, A, Bm, Cm, D), backward, "ssm_scan")


class S6Params(Module):
    """Input-dependent (selective) SSM parameters for tokens of width ``d_inner``."""

    def __init__(self, rng: np.random.Generator, d_inner: int, d_state: int = 16,
                 dt_min: float = 1e-3, dt_max: float = 1e-1):
        self.d_inner = d_inner
        self.d_state = d_state
        self.W_B = kaiming_uniform(rng, (d_state, d_inner), d_inner)
        self.W_C = kaiming_uniform(rng, (d_state, d_inner), d_inner)
        self.W_dt = kaiming_uniform(rng, (d_inner, d_inner), d_inner)
        dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=d_inner))
        self.b_dt = param(dt + np.log(-np.expm1(-dt)))  # inverse softplus
        self.log_A = param(np.log(np.tile(np.arange(1, d_state + 1, dtype=np.float64), (d_inner, 1))))
        self.D = param(np.ones(d_inner))

    def A(self) -> Tensor:
        return ops.mul(ops.exp(self.log_A), -1.0)

    def forward(self, u: Tensor) -> Tensor:
        return selective_scan(u, self)


def scan_coefficients(u: Tensor, params: S6Params) -> tuple[Tensor, Tensor, Tensor]:
    """Per-token (delta, B, C) from linear projections of the tokens."""
    delta = ops.softplus(ops.linear(u, params.W_dt, params.b_dt))
    Bm = ops.linear(u, params.W_B)
    Cm = ops.linear(u, params.W_C)
    return delta, Bm, Cm


def selective_scan(u: Tensor, params: S6Params) -> Tensor:
    """S6 over ``u`` of shape [L, Din] or [Bt, L, Din]; returns the same shape."""
    squeeze = u.ndim == 2
    if squeeze:
        u = ops.reshape(u, (1,) + u.shape)
    if u.shape[-1] != params.d_inner:
        raise ValueError(f"selective_scan: token width {u.shape[-1]} != d_inner {params.d_inner}")
    delta, Bm, Cm = scan_coefficients(u, params)
    y = ssm_scan(u, delta, params.A(), Bm, Cm, params.D)
    if squeeze:
        y = ops.reshape(y, y.shape[1:])
    return y
