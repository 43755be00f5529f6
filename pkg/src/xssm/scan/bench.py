"""Wall-clock scaling of the scan against a quadratic attention reference."""
from __future__ import annotations

import time
from typing import Callable, Sequence

import numpy as np

from ..numerics import Tensor, no_grad


def _median_ms(fn: Callable[[], object], repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(times))


def attention_reference(x: np.ndarray, block: int = 1024) -> np.ndarray:
    """Full softmax self-attention, O(L^2); rows processed in blocks to bound memory."""
    L, d = x.shape
    out = np.empty_like(x)
    scale = 1.0 / np.sqrt(d)
    for s in range(0, L, block):
        scores = (x[s:s + block] @ x.T) * scale
        scores -= scores.max(axis=1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=1, keepdims=True)
        out[s:s + block] = scores @ x
    return out


def scan_complexity_bench(lengths: Sequence[int], d_inner: int = 16, d_state: int = 16,
                          repeats: int = 5, seed: int = 0,
                          attention: bool = True) -> list[tuple[int, float, float]]:
    """Median wall time (ms) of one S6 forward and one attention pass per length.

    Returns rows ``(L, scan_ms, attention_ms)``; attention_ms is NaN when skipped.
    """
    from .s6 import S6Params, selective_scan

    lengths = list(lengths)
    if lengths != sorted(lengths):
        raise ValueError("lengths must be sorted ascending")
    rng = np.random.default_rng(seed)
    params = S6Params(rng, d_inner, d_state)
    rows = []
    for L in lengths:
        x = rng.standard_normal((L, d_inner)).astype(np.float32)
        u = Tensor(x)

        def run_scan():
            with no_grad():
                selective_scan(u, params)

        run_scan()  # warm-up
        scan_ms = _median_ms(run_scan, repeats)
        attn_ms = float("nan")
        if attention:
            attention_reference(x[: min(L, 64)])
            attn_ms = _median_ms(lambda: attention_reference(x), repeats)
        rows.append((L, scan_ms, attn_ms))
    return rows


def doubling_ratios(rows: Sequence[tuple[int, float, float]], column: int) -> list[float]:
    """Time ratio between consecutive rows whose lengths double."""
    ratios = []
    for prev, cur in zip(rows, rows[1:]):
        if cur[0] == 2 * prev[0]:
            ratios.append(cur[column] / prev[column])
    return ratios


def rows_to_csv(rows: Sequence[tuple[int, float, float]]) -> str:
    lines = ["L,scan_ms,attention_ms"]
    lines += [f"{L},{s:.4f},{a:.4f}" for L, s, a in rows]
    return "\n".join(lines) + "\n"
