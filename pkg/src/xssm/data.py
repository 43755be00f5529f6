"""Synthetic RGB-D scenes and on-disk dataset ingestion."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .net import resize_array

DEPTH_RANGE_CM = (50.0, 500.0)


@dataclass
class DepthSample:
    """One training pair. Arrays are float32; depth in centimeters, RGB in [0, 1].

    ``labels`` is the per-pixel surface id for synthetic scenes (None for
    ingested data).
    """

    depth_lr: np.ndarray   # [1, H, W]
    rgb_hr: np.ndarray     # [3, sH, sW]
    depth_gt: np.ndarray   # [1, sH, sW]
    name: str = ""
    labels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        _, H, W = self.depth_lr.shape
        sH, sW = self.depth_gt.shape[-2:]
        if self.rgb_hr.shape != (3, sH, sW) or self.depth_gt.shape[0] != 1:
            raise ValueError(f"{self.name}: inconsistent shapes rgb {self.rgb_hr.shape}, gt {self.depth_gt.shape}")
        if sH % H or sW % W or sH // H != sW // W:
            raise ValueError(f"{self.name}: gt {sH}x{sW} is not an integer multiple of depth {H}x{W}")
        for what, arr in (("depth_lr", self.depth_lr), ("depth_gt", self.depth_gt)):
            if not np.all(np.isfinite(arr)) or arr.min() < 0:
                raise ValueError(f"{self.name}: {what} must be finite and non-negative")
        if not np.all(np.isfinite(self.rgb_hr)) or self.rgb_hr.min() < 0 or self.rgb_hr.max() > 1:
            raise ValueError(f"{self.name}: rgb must lie in [0, 1]")

    @property
    def scale(self) -> int:
        return self.depth_gt.shape[-1] // self.depth_lr.shape[-1]


def _region_mask(rng: np.random.Generator, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    cy, cx = rng.uniform(-0.7, 0.7, 2)
    kind = rng.integers(3)
    if kind == 0:  # rotated ellipse
        a, b = rng.uniform(0.2, 0.7, 2)
        th = rng.uniform(0, np.pi)
        u = (xx - cx) * np.cos(th) + (yy - cy) * np.sin(th)
        v = -(xx - cx) * np.sin(th) + (yy - cy) * np.cos(th)
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0
    if kind == 1:  # axis-aligned box
        hy, hx = rng.uniform(0.15, 0.6, 2)
        return (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)
    # convex polygon: intersection of half-planes around the center
    k = rng.integers(3, 7)
    angles = np.sort(rng.uniform(0, 2 * np.pi, k))
    radius = rng.uniform(0.2, 0.6)
    mask = np.ones_like(xx, dtype=bool)
    for ang in angles:
        nx, ny = np.cos(ang), np.sin(ang)
        mask &= (xx - cx) * nx + (yy - cy) * ny <= radius
    return mask


def _surface(rng: np.random.Generator, yy: np.ndarray, xx: np.ndarray):
    """Random plane or quadric with values in [-1, 1] and its analytic gradient."""
    a, b = rng.uniform(-1, 1, 2)
    q = rng.uniform(-1, 1, 3) if rng.random() < 0.5 else np.zeros(3)
    f = a * xx + b * yy + q[0] * xx ** 2 + q[1] * yy ** 2 + q[2] * xx * yy
    fx = a + 2 * q[0] * xx + q[2] * yy
    fy = b + 2 * q[1] * yy + q[2] * xx
    peak = np.abs(f).max()
    if peak > 0:
        f, fx, fy = f / peak, fx / peak, fy / peak
    return f, fx, fy


def render_scene(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(depth [size, size] cm, rgb [3, size, size], labels [size, size]) for one scene.

    Each surface lives in its own depth band, nearer bands for later
    layers, so min-compositing produces a jump at every region boundary and
    nowhere else.
    """
    n_layers = int(rng.integers(3, 9))
    lo, hi = DEPTH_RANGE_CM
    edges = np.linspace(hi, lo, n_layers + 1)           # band k spans [edges[k+1], edges[k]]
    coords = (np.arange(size) + 0.5) / size * 2 - 1
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    depth = np.full((size, size), np.inf)
    labels = np.zeros((size, size), dtype=np.int32)
    gx = np.zeros((size, size))
    gy = np.zeros((size, size))
    albedo = rng.uniform(0.15, 0.9, (n_layers, 3))
    for k in range(n_layers):
        mask = np.ones((size, size), bool) if k == 0 else _region_mask(rng, yy, xx)
        f, fx, fy = _surface(rng, yy, xx)
        mid = 0.5 * (edges[k] + edges[k + 1])
        half = 0.35 * (edges[k] - edges[k + 1])        # keeps a gap to the neighboring bands
        z = mid + half * f
        take = mask & (z < depth)
        depth[take] = z[take]
        labels[take] = k
        gx[take] = half * fx[take]
        gy[take] = half * fy[take]

    # Lambertian shading from the per-surface normals; the view is ~2 m wide,
    # so one unit of normalized image coordinate is 100 cm
    n = np.stack([-gx / 100.0, -gy / 100.0, np.ones_like(gx)])
    n /= np.linalg.norm(n, axis=0, keepdims=True)
    light = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 1.0])
    light /= np.linalg.norm(light)
    shade = 0.35 + 0.65 * np.clip(np.tensordot(light, n, axes=1), 0, 1)
    texture = 1.0 + 0.04 * rng.standard_normal((3, size, size))
    rgb = np.clip(albedo[labels].transpose(2, 0, 1) * shade * texture, 0.0, 1.0)
    return depth, rgb, labels


def gen_synthetic(seed: int, n: int, size: int, s: int) -> list[DepthSample]:
    """``n`` scenes of ``size``×``size`` at scale ``s``; bit-identical for a given seed."""
    if size % s:
        raise ValueError(f"size {size} must be divisible by the scale {s}")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        depth, rgb, labels = render_scene(rng, size)
        lr = np.clip(resize_array(depth, size // s, size // s), 0.0, None)
        out.append(DepthSample(
            depth_lr=lr[None].astype(np.float32),
            rgb_hr=rgb.astype(np.float32),
            depth_gt=depth[None].astype(np.float32),
            name=f"{i:04d}",
            labels=labels,
        ))
    return out


def save_dataset(root, samples: list[DepthSample]) -> None:
    root = Path(root)
    for smp in samples:
        io.write_pfm(root / f"{smp.name}_depth.pfm", smp.depth_lr)
        io.write_ppm(root / f"{smp.name}_rgb.ppm", smp.rgb_hr)
        io.write_pfm(root / f"{smp.name}_gt.pfm", smp.depth_gt)


class DatasetError(ValueError):
    """Dataset directory does not follow the ``<id>_{depth,rgb,gt}`` layout."""


def load_dataset(root) -> list[DepthSample]:
    """Read every ``<id>_depth.pfm`` / ``<id>_rgb.ppm`` / ``<id>_gt.pfm`` triple under ``root``."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"{root} is not a directory")
    ids = sorted(p.name[: -len("_depth.pfm")] for p in root.glob("*_depth.pfm"))
    if not ids:
        raise DatasetError(f"no *_depth.pfm files in {root}")
    out = []
    for sid in ids:
        paths = [root / f"{sid}{suffix}" for suffix in ("_depth.pfm", "_rgb.ppm", "_gt.pfm")]
        missing = [p.name for p in paths if not p.exists()]
        if missing:
            raise DatasetError(f"sample {sid!r}: missing {', '.join(missing)}")
        try:
            out.append(DepthSample(io.read_pfm(paths[0]), io.read_ppm(paths[1]), io.read_pfm(paths[2]), name=sid))
        except (io.FormatError, ValueError) as exc:
            raise DatasetError(f"sample {sid!r}: {exc}") from exc
    scales = {smp.scale for smp in out}
    if len(scales) != 1:
        raise DatasetError(f"mixed scale factors in {root}: {sorted(scales)}")
    return out
