"""Interactive state space model block."""
from __future__ import annotations

import numpy as np

from .cmls import ChannelMatching, build_sequence, restore
from .numerics import DWConv2d, LayerNorm, Linear, Module, Tensor, ops
from .scan import S6Params, selective_scan


class IssmBranch(Module):
    """Per-modality weights: input projection, gate projection, output projection."""

    def __init__(self, rng: np.random.Generator, channels: int, expansion: int = 2):
        inner = expansion * channels
        self.ln_in = LayerNorm(channels)
        self.lin_in = Linear(rng, channels, inner)
        self.dwconv = DWConv2d(rng, inner, 3)
        self.lin_gate = Linear(rng, channels, inner)
        self.ln_out = LayerNorm(inner)
        self.lin_out = Linear(rng, inner, channels)


def input_project(f: Tensor, branch: IssmBranch, normed: Tensor | None = None) -> Tensor:
    """SiLU(DWConv(Linear(LN(f)))) with LN and Linear over the channel axis of NCHW."""
    if f.shape[1] != branch.lin_in.weight.shape[1]:
        raise ValueError(f"input_project: {f.shape[1]} channels, branch expects {branch.lin_in.weight.shape[1]}")
    if normed is None:
        normed = branch.ln_in(f, axis=1)
    return ops.silu(branch.dwconv(branch.lin_in(normed, axis=1)))


class IssmParams(Module):
    def __init__(self, rng: np.random.Generator, channels: int, expansion: int = 2,
                 patch_size: int = 4, d_state: int = 16):
        if expansion < 1:
            raise ValueError("expansion must be >= 1")
        self.channels = channels
        self.expansion = expansion
        self.patch_size = patch_size
        self.depth = IssmBranch(rng, channels, expansion)
        self.rgb = IssmBranch(rng, channels, expansion)
        self.s6 = S6Params(rng, patch_size * patch_size, d_state)
        self.last_matchings: list[ChannelMatching] = []
        self.pinned: list[ChannelMatching] | None = None  # replaces the computed matchings when set

    def forward(self, f_depth: Tensor, f_rgb: Tensor, matchings=None) -> tuple[Tensor, Tensor]:
        return issm_forward(f_depth, f_rgb, self, matchings)


def issm_forward(f_depth: Tensor, f_rgb: Tensor, params: IssmParams,
                 matchings=None) -> tuple[Tensor, Tensor]:
    """NCHW in, NCHW out (same shape). ``matchings`` pins the channel rearrangement."""
    if f_depth.shape != f_rgb.shape:
        raise ValueError(f"issm_forward: shape mismatch {f_depth.shape} vs {f_rgb.shape}")
    nd = params.depth.ln_in(f_depth, axis=1)
    ng = params.rgb.ln_in(f_rgb, axis=1)
    hat_d = input_project(f_depth, params.depth, nd)
    hat_g = input_project(f_rgb, params.rgb, ng)
    # gate branch reads the block input, not the projected features
    w_d = params.depth.lin_gate(nd, axis=1)
    w_g = params.rgb.lin_gate(ng, axis=1)

    if matchings is None:
        matchings = params.pinned
    seq = build_sequence(hat_d, hat_g, matchings, params.patch_size)
    params.last_matchings = seq.matchings
    y = selective_scan(seq.tokens, params.s6)
    g_d, g_g = restore(y, seq)

    out_d = params.depth.lin_out(params.depth.ln_out(g_d, axis=1) * w_d, axis=1)
    out_g = params.rgb.lin_out(params.rgb.ln_out(g_g, axis=1) * w_g, axis=1)
    return out_d, out_g
