"""Cross-modal matching transform."""
from __future__ import annotations

import io

import numpy as np

from .numerics import Conv2d, Module, Tensor, ops


class CmmtParams(Module):
    def __init__(self, rng: np.random.Generator, channels: int, squeeze: int = 2):
        if squeeze < 1 or channels % squeeze:
            raise ValueError(f"squeeze factor {squeeze} must be >= 1 and divide {channels}")
        self.channels = channels
        self.squeeze = squeeze
        fused = channels + channels // squeeze
        self.pre_primary = Conv2d(rng, channels, channels, 3)
        self.pre_aux = Conv2d(rng, channels, channels, 3)
        self.gate = Conv2d(rng, fused, channels, 1)
        self.value = Conv2d(rng, fused, channels, 1)
        self.out = Conv2d(rng, channels, channels, 3)
        self.last_selection: np.ndarray | None = None
        self.pinned: np.ndarray | None = None  # replaces the computed selection when set

    def forward(self, f_primary: Tensor, f_aux: Tensor, selection=None) -> Tensor:
        return cmmt_forward(f_primary, f_aux, self, selection)


def similarity_matrix(primary: np.ndarray, aux: np.ndarray) -> np.ndarray:
    """Negative Euclidean distance between flattened channels, [C, HW] x [C, HW] -> [C, C].

    Differences are formed explicitly so that swapping the arguments gives the
    exact transpose and self-distances are exactly zero.
    """
    primary = np.asarray(primary, dtype=np.float64)
    aux = np.asarray(aux, dtype=np.float64)
    if primary.ndim != 2 or primary.shape[1] != aux.shape[1]:
        raise ValueError(f"similarity_matrix: incompatible shapes {primary.shape}, {aux.shape}")
    C = primary.shape[0]
    out = np.empty((C, aux.shape[0]))
    for i in range(C):
        diff = primary[i] - aux
        out[i] = -np.sqrt(np.einsum("jk,jk->j", diff, diff))
    return out


def top1_sort(M: np.ndarray) -> np.ndarray:
    """Best aux index per primary row, listed best match first.

    Row argmax takes the lowest index on ties; rows are ordered by descending
    match score, lowest row first on ties. Repeated aux indices are allowed.
    """
    M = np.asarray(M)
    best = np.argmax(M, axis=1)
    score = M[np.arange(M.shape[0]), best]
    order = np.lexsort((np.arange(M.shape[0]), -score))
    return best[order]


def cmmt_forward(f_primary: Tensor, f_aux: Tensor, params: CmmtParams, selection=None) -> Tensor:
    """Enhance ``f_primary`` [N, C, H, W] with its C/r best-matching ``f_aux`` channels.

    ``selection`` ([N, C/r] aux indices) freezes the routing, e.g. for gradient checks.
    """
    if f_primary.shape != f_aux.shape:
        raise ValueError(f"cmmt_forward: shape mismatch {f_primary.shape} vs {f_aux.shape}")
    N, C, H, W = f_primary.shape
    if C != params.channels:
        raise ValueError(f"cmmt_forward: {C} channels, params built for {params.channels}")
    k = C // params.squeeze
    if selection is None:
        selection = params.pinned
    hat_p = params.pre_primary(f_primary)
    hat_a = params.pre_aux(f_aux)
    if selection is None:
        selection = np.stack([
            top1_sort(similarity_matrix(hat_p.data[n].reshape(C, -1), hat_a.data[n].reshape(C, -1)))[:k]
            for n in range(N)
        ])
    selection = np.asarray(selection, dtype=np.intp).reshape(N, k)
    params.last_selection = selection
    chosen = ops.take_along(hat_a, selection[:, :, None, None], axis=1)
    fusion = ops.concat([chosen, hat_p], axis=1)
    gated = ops.sigmoid(params.gate(fusion)) * params.value(fusion)
    return params.out(gated)


def cmmt_symmetric(f_depth: Tensor, f_rgb: Tensor, params_d: CmmtParams | None,
                   params_r: CmmtParams | None) -> tuple[Tensor, Tensor]:
    """Both directions from the original inputs; a ``None`` direction passes through unchanged."""
    if f_depth.shape != f_rgb.shape:
        raise ValueError(f"cmmt_symmetric: shape mismatch {f_depth.shape} vs {f_rgb.shape}")
    out_d = cmmt_forward(f_depth, f_rgb, params_d) if params_d is not None else f_depth
    out_r = cmmt_forward(f_rgb, f_depth, params_r) if params_r is not None else f_rgb
    return out_d, out_r


def selection_to_csv(rows: list[tuple[str, int, np.ndarray]]) -> str:
    """Rows of (block name, step, [N, k] selection) as ``block,step,sample,rank,aux_idx``."""
    buf = io.StringIO()
    buf.write("block,step,sample,rank,aux_idx\n")
    for block, step, sel in rows:
        for n, row in enumerate(np.atleast_2d(sel)):
            for rank, idx in enumerate(row):
                buf.write(f"{block},{step},{n},{rank},{int(idx)}\n")
    return buf.getvalue()
