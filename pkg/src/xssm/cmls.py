"""Cross-modal local scanning: channel matching, patchify and the interleaved token stream."""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .numerics import Tensor, ops


@dataclass
class ChannelMatching:
    """One-to-one pairing of depth channels with RGB channels, best pair first."""

    pairs: list[tuple[int, int]]
    scores: np.ndarray

    @property
    def depth_idx(self) -> np.ndarray:
        return np.array([d for d, _ in self.pairs], dtype=np.intp)

    @property
    def rgb_idx(self) -> np.ndarray:
        return np.array([r for _, r in self.pairs], dtype=np.intp)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("depth_idx,rgb_idx,score\n")
        for (d, r), s in zip(self.pairs, self.scores):
            buf.write(f"{d},{r},{s:.6f}\n")
        return buf.getvalue()


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def cosine_similarity_matrix(f_depth: np.ndarray, f_rgb: np.ndarray) -> np.ndarray:
    """Cosine similarity of mean-centered flattened channels; zero-norm channels score 0."""
    a = f_depth.reshape(f_depth.shape[0], -1).astype(np.float64)
    b = f_rgb.reshape(f_rgb.shape[0], -1).astype(np.float64)
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    sim = a @ b.T
    denom = np.outer(na, nb)
    out = np.zeros_like(sim)
    np.divide(sim, denom, out=out, where=denom > 0)
    return out


def greedy_matching(sim: np.ndarray) -> ChannelMatching:
    """Repeatedly take the highest-scoring pair of still-unmatched channels.

    Ties go to the lexicographically smallest (depth, rgb) index pair.
    """
    C = sim.shape[0]
    d_idx, r_idx = np.meshgrid(np.arange(C), np.arange(C), indexing="ij")
    order = np.lexsort((r_idx.ravel(), d_idx.ravel(), -sim.ravel()))
    used_d = np.zeros(C, dtype=bool)
    used_r = np.zeros(C, dtype=bool)
    pairs, scores = [], []
    for flat in order:
        d, r = divmod(int(flat), C)
        if used_d[d] or used_r[r]:
            continue
        used_d[d] = used_r[r] = True
        pairs.append((d, r))
        scores.append(sim[d, r])
        if len(pairs) == C:
            break
    return ChannelMatching(pairs, np.array(scores))


def compute_matching(f_depth, f_rgb) -> ChannelMatching:
    """Content-based channel pairing for one sample of shape [C, H, W]."""
    a, b = _as_array(f_depth), _as_array(f_rgb)
    if a.shape != b.shape:
        raise ValueError(f"compute_matching: shape mismatch {a.shape} vs {b.shape}")
    return greedy_matching(cosine_similarity_matrix(a, b))


def patchify(f: Tensor, p: int) -> Tensor:
    """[C, H, W] -> [C, (H/p)(W/p), p*p]: raster over patches, raster inside each patch."""
    C, H, W = f.shape
    if H % p or W % p:
        raise ValueError(f"patchify: patch size {p} does not divide {H}x{W}")
    x = ops.reshape(f, (C, H // p, p, W // p, p))
    x = ops.transpose(x, (0, 1, 3, 2, 4))
    return ops.reshape(x, (C, (H // p) * (W // p), p * p))


def unpatchify(tokens: Tensor, H: int, W: int) -> Tensor:
    C, _, pp = tokens.shape
    p = int(round(np.sqrt(pp)))
    x = ops.reshape(tokens, (C, H // p, W // p, p, p))
    x = ops.transpose(x, (0, 1, 3, 2, 4))
    return ops.reshape(x, (C, H, W))


def sequence_permutation(matching: ChannelMatching, C: int, H: int, W: int, p: int) -> np.ndarray:
    """Flat gather indices mapping a stacked [2, C, H, W] pair to the token stream.

    Stream order: matched pairs by descending score; within a pair, patches in
    raster order alternating depth patch k, RGB patch k; pixels raster in a patch.
    """
    gw = W // p
    n_patch = (H // p) * gw
    ch = np.stack([matching.depth_idx, C + matching.rgb_idx], axis=1)  # [C, 2]
    j = np.arange(n_patch)
    q = np.arange(p * p)
    rows = (j // gw) * p
    cols = (j % gw) * p
    qy, qx = q // p, q % p
    src = ((ch[:, None, :, None] * H
            + rows[None, :, None, None] + qy[None, None, None, :]) * W
           + cols[None, :, None, None] + qx[None, None, None, :])
    return src.reshape(-1)


@dataclass
class ScanSequence:
    tokens: Tensor                 # [N, L, p*p] (or [L, p*p] for unbatched input)
    perm: np.ndarray               # flat gather indices into the stacked [N, 2, C, H, W] input
    shape: tuple[int, int, int, int]
    patch_size: int
    matchings: list[ChannelMatching] = field(default_factory=list)
    batched: bool = True

    @property
    def inverse_map(self) -> np.ndarray:
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return inv

    @property
    def length(self) -> int:
        return self.tokens.shape[-2]


def build_sequence(f_depth: Tensor, f_rgb: Tensor, matchings=None, p: int = 4) -> ScanSequence:
    """Rearrange + patchify + interleave both modalities into one token stream.

    Accepts [C, H, W] or [N, C, H, W] inputs. ``matchings`` (one per sample)
    is computed from the features when omitted.
    """
    batched = f_depth.ndim == 4
    if f_depth.shape != f_rgb.shape:
        raise ValueError(f"build_sequence: shape mismatch {f_depth.shape} vs {f_rgb.shape}")
    if not batched:
        f_depth = ops.reshape(f_depth, (1,) + f_depth.shape)
        f_rgb = ops.reshape(f_rgb, (1,) + f_rgb.shape)
    N, C, H, W = f_depth.shape
    if H % p or W % p:
        raise ValueError(f"build_sequence: patch size {p} does not divide {H}x{W}")
    if matchings is None:
        matchings = [compute_matching(f_depth.data[n], f_rgb.data[n]) for n in range(N)]
    elif isinstance(matchings, ChannelMatching):
        matchings = [matchings]
    if len(matchings) != N:
        raise ValueError(f"build_sequence: {len(matchings)} matchings for batch of {N}")
    per = []
    for n, m in enumerate(matchings):
        _check_matching(m, C)
        per.append(sequence_permutation(m, C, H, W, p) + n * 2 * C * H * W)
    perm = np.concatenate(per)
    stacked = ops.concat([f_depth, f_rgb], axis=1)
    L = 2 * C * (H // p) * (W // p)
    tokens = ops.permute_flat(stacked, perm, (N, L, p * p))
    if not batched:
        tokens = ops.reshape(tokens, (L, p * p))
    return ScanSequence(tokens, perm, (N, C, H, W), p, list(matchings), batched)


def _check_matching(m: ChannelMatching, C: int) -> None:
    if len(m.pairs) != C:
        raise ValueError(f"invalid matching: {len(m.pairs)} pairs for {C} channels")
    if not (np.array_equal(np.sort(m.depth_idx), np.arange(C))
            and np.array_equal(np.sort(m.rgb_idx), np.arange(C))):
        raise ValueError("invalid matching: indices are not permutations")


def restore(tokens: Tensor, seq: ScanSequence) -> tuple[Tensor, Tensor]:
    """Undo the token layout of ``seq`` for ``tokens`` (e.g. the scan output)."""
    N, C, H, W = seq.shape
    if tokens.size != seq.perm.size:
        raise ValueError(f"restore: {tokens.size} values for a layout of {seq.perm.size}")
    stacked = ops.permute_flat(tokens, seq.inverse_map, (N, 2 * C, H, W))
    f_depth = ops.getitem(stacked, (slice(None), slice(0, C)))
    f_rgb = ops.getitem(stacked, (slice(None), slice(C, 2 * C)))
    if not seq.batched:
        f_depth = ops.reshape(f_depth, (C, H, W))
        f_rgb = ops.reshape(f_rgb, (C, H, W))
    return f_depth, f_rgb
