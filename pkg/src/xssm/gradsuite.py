"""Finite-difference gradient checks for every differentiable block.

Each check builds a small float64 instance, reduces the block output to a
scalar with a fixed random projection, and compares tape gradients against
central differences. Discrete routing (channel matching, CMMT selection) is
frozen after a first forward pass.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .numerics import GradCheckResult, Tensor, gradcheck, ops, precision
from .numerics.gradcheck import random_projection
from .numerics.module import Conv2d, DWConv2d, LayerNorm

PRIMITIVE_TOL = 1e-4
COMPOSITE_TOL = 1e-3


def _t(rng: np.random.Generator, *shape, scale: float = 1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale)


def _proj(out: Tensor, seed: int = 1) -> Tensor:
    return ops.sum(out * random_projection(out.shape, seed))


def _check(name: str, fn: Callable[[], Tensor], tensors, max_coords: int | None = 24,
           seed: int = 0) -> GradCheckResult:
    return gradcheck(fn, tensors, h=1e-6, max_coords=max_coords, seed=seed, name=name)


# -- primitives ----------------------------------------------------------------

def check_primitives(seed: int = 0) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    with precision(np.float64):
        x = _t(rng, 2, 3, 5, 6)
        ln = LayerNorm(3)
        ln.weight.data = rng.uniform(0.5, 1.5, 3)
        ln.bias.data = rng.standard_normal(3)
        out.append(_check("layer_norm", lambda: _proj(ln(x, axis=1)), [x, ln.weight, ln.bias]))

        x = _t(rng, 2, 3, 7, 6)
        conv = Conv2d(rng, 3, 4, 3)
        out.append(_check("conv2d", lambda: _proj(conv(x)), [x, conv.weight, conv.bias]))
        conv_s = Conv2d(rng, 3, 4, 3, stride=2)
        out.append(_check("conv2d_stride2", lambda: _proj(conv_s(x)), [x, conv_s.weight, conv_s.bias]))
        conv1 = Conv2d(rng, 3, 5, 1)
        out.append(_check("conv2d_1x1", lambda: _proj(conv1(x)), [x, conv1.weight, conv1.bias]))
        dw = DWConv2d(rng, 3, 3)
        out.append(_check("dwconv2d", lambda: _proj(dw(x)), [x, dw.weight, dw.bias]))

        for name, op in (("silu", ops.silu), ("sigmoid", ops.sigmoid), ("gelu", ops.gelu),
                         ("softplus", ops.softplus), ("exp", ops.exp)):
            v = _t(rng, 4, 5)
            out.append(_check(name, lambda op=op, v=v: _proj(op(v)), [v]))

        a, W, b = _t(rng, 3, 4, 5), _t(rng, 6, 5), _t(rng, 6)
        out.append(_check("linear", lambda: _proj(ops.linear(a, W, b)), [a, W, b]))
        m1, m2 = _t(rng, 2, 3, 4), _t(rng, 2, 4, 5)
        out.append(_check("matmul", lambda: _proj(ops.matmul(m1, m2)), [m1, m2]))

        img = _t(rng, 1, 2, 5, 6)
        mh, mw = rng.standard_normal((8, 5)), rng.standard_normal((9, 6))
        out.append(_check("resize", lambda: _proj(ops.resize(img, mh, mw)), [img]))
        out.append(_check("pad_reflect", lambda: _proj(ops.pad_reflect(img, (2, 1), (0, 3))), [img]))
        idx = rng.integers(0, 2, (1, 3, 1, 1))
        out.append(_check("take_along", lambda: _proj(ops.take_along(img, idx, axis=1)), [img]))
        perm = rng.permutation(img.size)
        out.append(_check("permute_flat", lambda: _proj(ops.permute_flat(img, perm, (6, 10))), [img]))
        ab = _t(rng, 3, 4)
        out.append(_check("abs", lambda: _proj(ops.abs(ab)), [ab]))

        from .numerics import fft2
        sig = _t(rng, 2, 4, 8)

        def fft_fn():
            re, im = fft2(sig)
            return _proj(re, 1) + _proj(im, 2)
        out.append(_check("fft2", fft_fn, [sig]))
    return out


# -- composite blocks ------------------------------------------------------------

def check_s6(seed: int = 0) -> list[GradCheckResult]:
    from .scan import S6Params, selective_scan, ssm_scan

    rng = np.random.default_rng(seed)
    out = []
    with precision(np.float64):
        u, d = _t(rng, 2, 11, 4), Tensor(rng.uniform(0.05, 0.8, (2, 11, 4)))
        A = Tensor(-rng.uniform(0.5, 3.0, (4, 5)))
        B, C, D = _t(rng, 2, 11, 5), _t(rng, 2, 11, 5), _t(rng, 4)
        out.append(_check("ssm_scan", lambda: _proj(ssm_scan(u, d, A, B, C, D)), [u, d, A, B, C, D],
                          max_coords=None))
        params = S6Params(rng, 4, 6)
        x = _t(rng, 2, 13, 4)
        out.append(_check("selective_scan", lambda: _proj(selective_scan(x, params)),
                          [x] + params.parameters(), max_coords=None))
    return out


def check_cmls(seed: int = 0) -> list[GradCheckResult]:
    from .cmls import build_sequence, compute_matching, restore
    from .scan import S6Params, selective_scan

    rng = np.random.default_rng(seed)
    with precision(np.float64):
        fd, fg = _t(rng, 1, 3, 8, 8), _t(rng, 1, 3, 8, 8)
        m = [compute_matching(fd.data[0], fg.data[0])]
        s6 = S6Params(rng, 4, 4)

        def fn():
            seq = build_sequence(fd, fg, m, p=2)
            a, b = restore(selective_scan(seq.tokens, s6), seq)
            return _proj(a, 1) + _proj(b, 2)
        return [_check("cmls_scan_restore", fn, [fd, fg] + s6.parameters())]


def check_issm(seed: int = 0) -> list[GradCheckResult]:
    from .issm import IssmParams, issm_forward

    rng = np.random.default_rng(seed)
    with precision(np.float64):
        params = IssmParams(rng, 4, expansion=2, patch_size=2, d_state=4)
        fd, fg = _t(rng, 1, 4, 4, 4), _t(rng, 1, 4, 4, 4)
        issm_forward(fd, fg, params)
        m = params.last_matchings

        def fn():
            a, b = issm_forward(fd, fg, params, m)
            return _proj(a, 1) + _proj(b, 2)
        return [_check("issm", fn, [fd, fg] + params.parameters(), max_coords=8)]


def check_gdfn(seed: int = 0) -> list[GradCheckResult]:
    from .net import GdfnParams, gdfn_forward

    rng = np.random.default_rng(seed)
    with precision(np.float64):
        params = GdfnParams(rng, 4, 2)
        f = _t(rng, 1, 4, 6, 6)
        return [_check("gdfn", lambda: _proj(gdfn_forward(f, params)), [f] + params.parameters(),
                       max_coords=12)]


def check_cmmt(seed: int = 0) -> list[GradCheckResult]:
    from .cmmt import CmmtParams, cmmt_forward

    rng = np.random.default_rng(seed)
    with precision(np.float64):
        params = CmmtParams(rng, 4, 2)
        fp, fa = _t(rng, 2, 4, 5, 5), _t(rng, 2, 4, 5, 5)
        cmmt_forward(fp, fa, params)
        sel = params.last_selection
        return [_check("cmmt", lambda: _proj(cmmt_forward(fp, fa, params, sel)),
                       [fp, fa] + params.parameters(), max_coords=8)]


def check_mamba_block(seed: int = 0) -> list[GradCheckResult]:
    from .net import MambaBlock, ModelConfig, frozen_routing

    rng = np.random.default_rng(seed)
    with precision(np.float64):
        cfg = ModelConfig(channels=4, stages=1, patch_size=4, d_state=4)
        block = MambaBlock(rng, 4, cfg)
        fd, fg = _t(rng, 1, 4, 8, 8), _t(rng, 1, 4, 8, 8)
        block(fd, fg)

        def fn():
            a, b = block(fd, fg)
            return _proj(a, 1) + _proj(b, 2)
        with frozen_routing(block):
            return [_check("mamba_block", fn, [fd, fg] + block.parameters(), max_coords=3)]


def check_net(seed: int = 0) -> list[GradCheckResult]:
    from .net import GDSRNet, ModelConfig, frozen_routing

    rng = np.random.default_rng(seed)
    with precision(np.float64):
        net = GDSRNet(ModelConfig(channels=4, stages=2, d_state=4), seed)
        d_lr = Tensor(rng.uniform(50.0, 500.0, (1, 1, 4, 4)))
        rgb = Tensor(rng.uniform(0, 1, (1, 3, 16, 16)))
        net(d_lr, rgb)
        with frozen_routing(net):
            return [_check("net", lambda: _proj(net(d_lr, rgb)), [d_lr, rgb] + net.parameters(),
                           max_coords=2)]


def check_losses(seed: int = 0) -> list[GradCheckResult]:
    from .train import fourier_loss, l1_loss, total_loss

    rng = np.random.default_rng(seed)
    with precision(np.float64):
        pred, gt = _t(rng, 1, 1, 6, 5), rng.standard_normal((1, 1, 6, 5))
        return [
            _check("l1_loss", lambda: l1_loss(pred, gt), [pred], max_coords=None),
            _check("fourier_loss", lambda: fourier_loss(pred, gt), [pred], max_coords=None),
            _check("total_loss", lambda: total_loss(pred, gt, 0.002), [pred], max_coords=None),
        ]


GROUPS: dict[str, tuple[Callable[[int], list[GradCheckResult]], float]] = {
    "primitives": (check_primitives, PRIMITIVE_TOL),
    "s6": (check_s6, COMPOSITE_TOL),
    "cmls": (check_cmls, COMPOSITE_TOL),
    "issm": (check_issm, COMPOSITE_TOL),
    "gdfn": (check_gdfn, COMPOSITE_TOL),
    "cmmt": (check_cmmt, COMPOSITE_TOL),
    "block": (check_mamba_block, COMPOSITE_TOL),
    "net": (check_net, COMPOSITE_TOL),
    "losses": (check_losses, COMPOSITE_TOL),
}


def run(groups=None, seed: int = 0) -> list[tuple[str, GradCheckResult, float]]:
    """(group, result, tolerance) for each requested group (default: all)."""
    names = list(GROUPS) if groups is None else list(groups)
    rows = []
    for g in names:
        fn, tol = GROUPS[g]
        rows.extend((g, r, tol) for r in fn(seed))
    return rows
