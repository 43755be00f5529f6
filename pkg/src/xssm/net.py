"""U-shaped guided depth super-resolution network."""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, fields
from functools import lru_cache

import numpy as np

from .cmmt import CmmtParams, cmmt_forward
from .issm import IssmParams, issm_forward
from .numerics import Conv2d, DWConv2d, LayerNorm, Module, Tensor, ops


@dataclass
class ModelConfig:
    channels: int = 32
    scale: int = 4
    stages: int = 3
    blocks_per_stage: int = 2
    patch_size: int = 4
    squeeze: int = 2
    d_state: int = 16
    expansion: int = 2
    ffn_expansion: int = 2
    depth_scale_cm: float = 100.0
    use_issm: bool = True
    use_cmmt_r: bool = True
    use_cmmt_d: bool = True

    def __post_init__(self):
        if self.scale < 1 or self.scale & (self.scale - 1):
            raise ValueError(f"scale must be a power of two, got {self.scale}")
        if self.stages < 1 or self.blocks_per_stage < 1:
            raise ValueError("stages and blocks_per_stage must be >= 1")
        if self.channels % self.squeeze:
            raise ValueError(f"squeeze {self.squeeze} must divide channels {self.channels}")

    @property
    def divisor(self) -> int:
        """Spatial sides of the network input must be multiples of this."""
        return 2 ** (self.stages - 1) * self.patch_size

    @classmethod
    def micro(cls, **overrides) -> "ModelConfig":
        base = dict(channels=16, stages=2)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(f.default) for f in fields(cls)}


# Table 2 rows as (use_issm, use_cmmt_r, use_cmmt_d); the FFN is always present.
ABLATIONS = {
    "ffn_only": (False, False, False),
    "issm": (True, False, False),
    "issm_cmmt_r": (True, True, False),
    "issm_cmmt_d": (True, False, True),
    "cmmt_only": (False, True, True),
    "full": (True, True, True),
}


def ablation_config(name: str, base: ModelConfig) -> ModelConfig:
    issm, cr, cd = ABLATIONS[name]
    kw = {f.name: getattr(base, f.name) for f in fields(base)}
    kw.update(use_issm=issm, use_cmmt_r=cr, use_cmmt_d=cd)
    return ModelConfig(**kw)


# -- resampling matrices ------------------------------------------------------

def _cubic(x: np.ndarray, a: float = -0.75) -> np.ndarray:
    x = np.abs(x)
    return np.where(
        x <= 1, ((a + 2) * x - (a + 3)) * x * x + 1,
        np.where(x < 2, ((a * x - 5 * a) * x + 8 * a) * x - 4 * a, 0.0))


@lru_cache(maxsize=64)
def bicubic_matrix(n_in: int, n_out: int) -> np.ndarray:
    """[n_out, n_in] bicubic resampling, half-pixel centers, replicated borders.

    Downscaling widens the kernel by the scale factor (antialiasing) and
    renormalizes weights at the borders.
    """
    M = np.zeros((n_out, n_in))
    scale = n_in / n_out
    if scale <= 1.0:
        for i in range(n_out):
            src = (i + 0.5) * scale - 0.5
            x0 = int(np.floor(src))
            t = src - x0
            for k, w in zip(range(-1, 3), _cubic(np.array([t + 1, t, 1 - t, 2 - t]))):
                M[i, min(max(x0 + k, 0), n_in - 1)] += w
    else:
        support = 2.0 * scale
        for i in range(n_out):
            center = (i + 0.5) * scale
            lo = max(int(np.floor(center - support)), 0)
            hi = min(int(np.ceil(center + support)), n_in)
            j = np.arange(lo, hi)
            w = _cubic((j + 0.5 - center) / scale)
            M[i, lo:hi] = w / w.sum()
    M.setflags(write=False)
    return M


@lru_cache(maxsize=64)
def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    M = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        x0 = min(int(np.floor(src)), n_in - 1)
        x1 = min(x0 + 1, n_in - 1)
        t = src - x0
        M[i, x0] += 1 - t
        M[i, x1] += t
    M.setflags(write=False)
    return M


def upsample(d_lr: Tensor, s: int) -> Tensor:
    """Bicubic upsampling of the last two axes by integer factor ``s``."""
    if s < 1:
        raise ValueError("upsample: scale must be >= 1")
    if s == 1:
        return d_lr
    H, W = d_lr.shape[-2:]
    return ops.resize(d_lr, bicubic_matrix(H, s * H), bicubic_matrix(W, s * W))


def resize_array(x: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bicubic resize of a numpy array's last two axes (antialiased when shrinking)."""
    H, W = x.shape[-2:]
    out = bicubic_matrix(H, h) @ x.astype(np.float64) @ bicubic_matrix(W, w).T
    return out.astype(x.dtype)


def _upsample2(x: Tensor) -> Tensor:
    H, W = x.shape[-2:]
    return ops.resize(x, bilinear_matrix(H, 2 * H), bilinear_matrix(W, 2 * W))


# -- building blocks ----------------------------------------------------------

class GdfnParams(Module):
    """Gated-Dconv feed-forward: LN, 1x1 expand, depthwise 3x3, GELU gate, 1x1 project."""

    def __init__(self, rng: np.random.Generator, channels: int, expansion: int = 2):
        hidden = expansion * channels
        self.hidden = hidden
        self.norm = LayerNorm(channels)
        self.project_in = Conv2d(rng, channels, 2 * hidden, 1)
        self.dwconv = DWConv2d(rng, 2 * hidden, 3)
        self.project_out = Conv2d(rng, hidden, channels, 1)

    def forward(self, f: Tensor) -> Tensor:
        return gdfn_forward(f, self)


def gdfn_forward(f: Tensor, params: GdfnParams) -> Tensor:
    """Shape-preserving; includes the residual add."""
    x = params.dwconv(params.project_in(params.norm(f, axis=1)))
    a, b = ops.split(x, 2, axis=1)
    return f + params.project_out(ops.gelu(a) * b)


class ResBlock(Module):
    """x + conv(SiLU(conv(x))); stands in for disabled ISSM / CMMT paths."""

    def __init__(self, rng: np.random.Generator, channels: int):
        self.conv1 = Conv2d(rng, channels, channels, 3)
        self.conv2 = Conv2d(rng, channels, channels, 3)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.conv2(ops.silu(self.conv1(x)))


class MambaBlock(Module):
    """ISSM -> per-modality GDFN -> symmetric CMMT, each with a residual connection."""

    def __init__(self, rng: np.random.Generator, channels: int, cfg: ModelConfig):
        self.use_issm = cfg.use_issm
        self.use_cmmt_d = cfg.use_cmmt_d
        self.use_cmmt_r = cfg.use_cmmt_r
        if cfg.use_issm:
            self.issm = IssmParams(rng, channels, cfg.expansion, cfg.patch_size, cfg.d_state)
        else:
            self.issm_sub_d = ResBlock(rng, channels)
            self.issm_sub_r = ResBlock(rng, channels)
        self.ffn_d = GdfnParams(rng, channels, cfg.ffn_expansion)
        self.ffn_r = GdfnParams(rng, channels, cfg.ffn_expansion)
        # cmmt_d: depth primary, RGB auxiliary; cmmt_r the reverse
        self.cmmt_d = CmmtParams(rng, channels, cfg.squeeze) if cfg.use_cmmt_d else ResBlock(rng, channels)
        self.cmmt_r = CmmtParams(rng, channels, cfg.squeeze) if cfg.use_cmmt_r else ResBlock(rng, channels)

    def forward(self, f_depth: Tensor, f_rgb: Tensor) -> tuple[Tensor, Tensor]:
        return mamba_block(f_depth, f_rgb, self)


def mamba_block(f_depth: Tensor, f_rgb: Tensor, block: MambaBlock) -> tuple[Tensor, Tensor]:
    if f_depth.shape != f_rgb.shape:
        raise ValueError(f"mamba_block: shape mismatch {f_depth.shape} vs {f_rgb.shape}")
    if block.use_issm:
        od, orgb = issm_forward(f_depth, f_rgb, block.issm)
        d, r = f_depth + od, f_rgb + orgb
    else:
        d, r = block.issm_sub_d(f_depth), block.issm_sub_r(f_rgb)
    d, r = gdfn_forward(d, block.ffn_d), gdfn_forward(r, block.ffn_r)
    # both directions read the same (post-FFN) pair
    d2 = d + cmmt_forward(d, r, block.cmmt_d) if block.use_cmmt_d else block.cmmt_d(d)
    r2 = r + cmmt_forward(r, d, block.cmmt_r) if block.use_cmmt_r else block.cmmt_r(r)
    return d2, r2


class Stage(Module):
    def __init__(self, rng, channels: int, cfg: ModelConfig):
        self.blocks = [MambaBlock(rng, channels, cfg) for _ in range(cfg.blocks_per_stage)]

    def forward(self, d: Tensor, r: Tensor) -> tuple[Tensor, Tensor]:
        for blk in self.blocks:
            d, r = blk(d, r)
        return d, r


class PairConv(Module):
    """Independent convolutions for the depth and RGB streams."""

    def __init__(self, rng, cin: int, cout: int, ksize: int = 3, stride: int = 1):
        self.depth = Conv2d(rng, cin, cout, ksize, stride)
        self.rgb = Conv2d(rng, cin, cout, ksize, stride)

    def forward(self, d: Tensor, r: Tensor) -> tuple[Tensor, Tensor]:
        return self.depth(d), self.rgb(r)


class GDSRNet(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        C = cfg.channels
        self.head_d1 = Conv2d(rng, 1, C, 3)
        self.head_d2 = Conv2d(rng, C, C, 3)
        self.head_r1 = Conv2d(rng, 3, C, 3)
        self.head_r2 = Conv2d(rng, C, C, 3)
        widths = [C * 2 ** k for k in range(cfg.stages)]
        self.encoder = [Stage(rng, w, cfg) for w in widths]
        self.down = [PairConv(rng, w, 2 * w, 3, stride=2) for w in widths[:-1]]
        # decoder lists run from the deepest skip level up to full resolution
        self.up = [PairConv(rng, 2 * w, w, 3) for w in reversed(widths[:-1])]
        self.fuse = [PairConv(rng, 2 * w, w, 1) for w in reversed(widths[:-1])]
        self.decoder = [Stage(rng, w, cfg) for w in reversed(widths[:-1])]
        self.tail = Conv2d(rng, 2 * C, C, 3)
        self.tail_out = Conv2d(rng, C, 1, 3)

    def forward(self, d_lr: Tensor, rgb: Tensor) -> Tensor:
        return forward(d_lr, rgb, self)

    def zero_residual(self) -> None:
        """Zero the final projection so the network returns the bicubic estimate."""
        self.tail_out.weight.data = np.zeros_like(self.tail_out.weight.data)
        self.tail_out.bias.data = np.zeros_like(self.tail_out.bias.data)


def _pad_amount(n: int, div: int) -> tuple[int, int]:
    extra = (-n) % div
    return extra // 2, extra - extra // 2


def forward(d_lr: Tensor, rgb: Tensor, net: GDSRNet) -> Tensor:
    """D_lr [N,1,H,W] and RGB [N,3,sH,sW] -> D_hr [N,1,sH,sW] = D_up + R."""
    cfg = net.cfg
    s = cfg.scale
    if d_lr.ndim != 4 or rgb.ndim != 4 or d_lr.shape[1] != 1 or rgb.shape[1] != 3:
        raise ValueError(f"forward: expected [N,1,H,W] and [N,3,sH,sW], got {d_lr.shape}, {rgb.shape}")
    H, W = d_lr.shape[-2:]
    if rgb.shape[-2:] != (s * H, s * W):
        raise ValueError(f"forward: RGB {rgb.shape[-2:]} is not {s}x depth {(H, W)}")
    d_up = upsample(d_lr, s)
    ph = _pad_amount(s * H, cfg.divisor)
    pw = _pad_amount(s * W, cfg.divisor)
    padded = any(ph) or any(pw)
    x_d = d_up * (1.0 / cfg.depth_scale_cm)
    x_r = rgb
    if padded:
        for pad, n in ((ph, s * H), (pw, s * W)):
            if max(pad) >= n:
                raise ValueError(f"forward: side {n} too small to reflect-pad to a multiple of {cfg.divisor}")
        x_d = ops.pad_reflect(x_d, ph, pw)
        x_r = ops.pad_reflect(x_r, ph, pw)

    d = net.head_d2(ops.silu(net.head_d1(x_d)))
    r = net.head_r2(ops.silu(net.head_r1(x_r)))
    skips = []
    for k, stage in enumerate(net.encoder):
        d, r = stage(d, r)
        if k < len(net.down):
            skips.append((d, r))
            d, r = net.down[k](d, r)
    for up, fuse, stage in zip(net.up, net.fuse, net.decoder):
        sd, sr = skips.pop()
        d, r = up(_upsample2(d), _upsample2(r))
        d, r = fuse(ops.concat([d, sd], axis=1), ops.concat([r, sr], axis=1))
        d, r = stage(d, r)
    res = net.tail_out(ops.silu(net.tail(ops.concat([d, r], axis=1))))
    if padded:
        res = ops.getitem(res, (slice(None), slice(None),
                                slice(ph[0], ph[0] + s * H), slice(pw[0], pw[0] + s * W)))
    return d_up + res * cfg.depth_scale_cm


@contextmanager
def frozen_routing(model: Module):
    """Pin every channel matching and CMMT selection to the ones used by the
    most recent forward pass, making the network a smooth function of its
    inputs and weights (finite-difference checks need this)."""
    mods = list(model.modules())
    for m in mods:
        if isinstance(m, IssmParams):
            m.pinned = m.last_matchings
        elif isinstance(m, CmmtParams):
            m.pinned = m.last_selection
    try:
        yield
    finally:
        for m in mods:
            if isinstance(m, (IssmParams, CmmtParams)):
                m.pinned = None


def stage_shapes(cfg: ModelConfig, hr_side: int) -> list[tuple[int, int]]:
    """(channels, side) entering each encoder stage, then each decoder stage."""
    side = hr_side + (-hr_side) % cfg.divisor
    enc = [(cfg.channels * 2 ** k, side // 2 ** k) for k in range(cfg.stages)]
    dec = [(cfg.channels * 2 ** k, side // 2 ** k) for k in reversed(range(cfg.stages - 1))]
    return enc + dec
