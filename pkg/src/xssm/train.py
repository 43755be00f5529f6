"""Losses, the Adam training loop and RMSE evaluation."""
from __future__ import annotations

import csv
import io as _io
import logging
import math
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .data import DepthSample
from .net import GDSRNet
from .numerics import Adam, NonFiniteError, Tape, Tensor, fft2, next_pow2, no_grad, ops

log = logging.getLogger(__name__)


# -- losses ----------------------------------------------------------------------

def _check_pair(pred: Tensor, gt, what: str) -> Tensor:
    gt = gt if isinstance(gt, Tensor) else Tensor(np.asarray(gt, dtype=pred.dtype))
    if pred.shape != gt.shape:
        raise ValueError(f"{what}: shape mismatch {pred.shape} vs {gt.shape}")
    return gt


def l1_loss(pred: Tensor, gt) -> Tensor:
    gt = _check_pair(pred, gt, "l1_loss")
    return ops.mean(ops.abs(pred - gt))


def fourier_loss(pred: Tensor, gt) -> Tensor:
    """0.5 * (mean |Re F(pred - gt)| + mean |Im F(pred - gt)|).

    F is the unnormalized 2-D DFT over the last two axes after zero-padding
    each side to the next power of two; the mean runs over every bin of the
    padded transform.
    """
    gt = _check_pair(pred, gt, "fourier_loss")
    diff = pred - gt
    H, W = diff.shape[-2:]
    ph, pw = next_pow2(H) - H, next_pow2(W) - W
    if ph or pw:
        lead = diff.ndim - 2
        zeros_w = np.zeros(diff.shape[:-1] + (pw,), dtype=diff.dtype)
        if pw:
            diff = ops.concat([diff, Tensor(zeros_w)], axis=lead + 1)
        if ph:
            zeros_h = np.zeros(diff.shape[:-2] + (ph, diff.shape[-1]), dtype=diff.dtype)
            diff = ops.concat([diff, Tensor(zeros_h)], axis=lead)
    re, im = fft2(diff)
    return (ops.mean(ops.abs(re)) + ops.mean(ops.abs(im))) * 0.5


def total_loss(pred: Tensor, gt, fourier_weight: float = 0.002) -> Tensor:
    if fourier_weight < 0:
        raise ValueError("fourier_weight must be >= 0")
    loss = l1_loss(pred, gt)
    if fourier_weight:
        loss = loss + fourier_loss(pred, gt) * fourier_weight
    return loss


def rmse_cm(pred, gt, valid_mask: np.ndarray | None = None) -> float:
    """RMSE in centimeters over pixels where ``valid_mask`` holds (default: gt > 0)."""
    p = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=np.float64)
    g = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"rmse_cm: shape mismatch {p.shape} vs {g.shape}")
    mask = g > 0 if valid_mask is None else np.asarray(valid_mask, dtype=bool)
    if not mask.any():
        raise ValueError("rmse_cm: no valid pixels")
    return float(np.sqrt(np.mean((p[mask] - g[mask]) ** 2)))


# -- training -----------------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 2e-4
    epochs: int = 30
    crop: int = 128          # high-resolution crop side; 0 trains on whole images
    fourier_weight: float = 0.002
    batch_size: int = 1
    seed: int = 0
    max_steps: int = 0       # 0 means no limit beyond ``epochs``
    eval_every: int = 1      # epochs between evaluations

    def validate(self, divisor: int, scale: int) -> None:
        if self.fourier_weight < 0:
            raise ValueError("fourier_weight must be >= 0")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("lr, epochs and batch_size must be positive")
        if self.crop and (self.crop % divisor or self.crop % scale):
            raise ValueError(f"crop {self.crop} must be a multiple of {divisor} and of the scale {scale}")

    @classmethod
    def paper(cls, **overrides) -> "TrainConfig":
        """The full-scale recipe: 200 epochs on 256x256 crops."""
        base = dict(epochs=200, crop=256)
        base.update(overrides)
        return cls(**base)


class TrainingDiverged(NonFiniteError):
    pass


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    eval_rmse_cm: float
    seconds: float


def metrics_csv(rows: Sequence[EpochLog]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f.name for f in fields(EpochLog)])
    for r in rows:
        w.writerow([r.epoch, f"{r.train_loss:.6g}", f"{r.eval_rmse_cm:.6g}", f"{r.seconds:.3f}"])
    return buf.getvalue()


def _stack(samples: Sequence[DepthSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (np.stack([s.depth_lr for s in samples]),
            np.stack([s.rgb_hr for s in samples]),
            np.stack([s.depth_gt for s in samples]))


def random_crop(rng: np.random.Generator, smp: DepthSample, crop: int):
    """Aligned crop of side ``crop`` (high resolution) from one sample."""
    s = smp.scale
    _, H, W = smp.depth_lr.shape
    c = crop // s
    if c >= H and c >= W:
        return smp.depth_lr, smp.rgb_hr, smp.depth_gt
    if c > H or c > W:
        raise ValueError(f"crop {crop} exceeds sample {smp.name!r} ({s * H}x{s * W})")
    i = int(rng.integers(H - c + 1))
    j = int(rng.integers(W - c + 1))
    return (smp.depth_lr[:, i:i + c, j:j + c],
            smp.rgb_hr[:, s * i:s * (i + c), s * j:s * (j + c)],
            smp.depth_gt[:, s * i:s * (i + c), s * j:s * (j + c)])


def predict(model: GDSRNet, samples: Sequence[DepthSample], batch: int = 8) -> list[np.ndarray]:
    """Full-image predictions [1, sH, sW], batching samples of equal size."""
    out: list[np.ndarray | None] = [None] * len(samples)
    groups: dict[tuple, list[int]] = {}
    for k, smp in enumerate(samples):
        groups.setdefault(smp.depth_lr.shape, []).append(k)
    with no_grad():
        for idx in groups.values():
            for start in range(0, len(idx), batch):
                chunk = idx[start:start + batch]
                d, r, _ = _stack([samples[k] for k in chunk])
                dt = model.parameters()[0].dtype
                pred = model(Tensor(d.astype(dt)), Tensor(r.astype(dt))).data
                for k, p in zip(chunk, pred):
                    out[k] = p
    return out  # type: ignore[return-value]


def evaluate(model: GDSRNet, samples: Sequence[DepthSample]) -> float:
    """Mean per-sample RMSE (cm) over ``samples``."""
    if not samples:
        raise ValueError("evaluate: empty sample list")
    preds = predict(model, samples)
    return float(np.mean([rmse_cm(p, s.depth_gt) for p, s in zip(preds, samples)]))


def _diagnostics(model: GDSRNet, step: int, epoch: int, last_loss: float) -> str:
    norms = sorted(((float(np.linalg.norm(p.data)), n) for n, p in model.named_parameters()), reverse=True)
    bad = [n for n, p in model.named_parameters() if not np.all(np.isfinite(p.data))]
    top = ", ".join(f"{n}={v:.3g}" for v, n in norms[:3])
    return (f"non-finite value at epoch {epoch}, step {step}; last finite loss {last_loss:.6g}; "
            f"non-finite params: {bad or 'none'}; largest param norms: {top}")


def train(cfg: TrainConfig, model: GDSRNet, data: Sequence[DepthSample],
          eval_data: Sequence[DepthSample] | None = None, out_dir=None) -> list[EpochLog]:
    """Adam on ``total_loss`` over random crops.

    Row 0 of the returned log holds the untrained model's full-image loss
    and RMSE. With ``out_dir`` set, ``metrics.csv`` and ``model.ckpt`` are
    written there after every logged epoch.
    """
    if not data:
        raise ValueError("train: empty dataset")
    s = model.cfg.scale
    if any(smp.scale != s for smp in data):
        raise ValueError(f"train: dataset scale does not match the model scale {s}")
    cfg.validate(model.cfg.divisor, s)
    eval_data = list(eval_data) if eval_data else list(data)
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    dtype = params[0].dtype
    opt = Adam(params, lr=cfg.lr)
    out = Path(out_dir) if out_dir is not None else None

    def full_image_log(epoch: int, train_loss: float | None, t0: float) -> EpochLog:
        preds = predict(model, eval_data)
        rmse = float(np.mean([rmse_cm(p, e.depth_gt) for p, e in zip(preds, eval_data)]))
        if train_loss is None:
            with no_grad():
                train_loss = float(np.mean([
                    total_loss(Tensor(p), e.depth_gt, cfg.fourier_weight).item()
                    for p, e in zip(preds, eval_data)]))
        return EpochLog(epoch, train_loss, rmse, time.perf_counter() - t0)

    def flush(rows):
        if out is not None:
            io.atomic_write(out / "metrics.csv", metrics_csv(rows).encode())
            io.save_checkpoint(out / "model.ckpt", model.state_dict())

    t_start = time.perf_counter()
    history = [full_image_log(0, None, t_start)]
    flush(history)
    log.info("epoch 0: loss %.4g rmse %.4g cm", history[0].train_loss, history[0].eval_rmse_cm)
    step, last = 0, history[0].train_loss
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(data))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            if cfg.max_steps and step >= cfg.max_steps:
                break
            crops = [random_crop(rng, data[k], cfg.crop) if cfg.crop else
                     (data[k].depth_lr, data[k].rgb_hr, data[k].depth_gt)
                     for k in order[start:start + cfg.batch_size]]
            d = Tensor(np.stack([c[0] for c in crops]).astype(dtype))
            r = Tensor(np.stack([c[1] for c in crops]).astype(dtype))
            g = np.stack([c[2] for c in crops]).astype(dtype)
            try:
                with Tape() as tape:
                    loss = total_loss(model(d, r), g, cfg.fourier_weight)
                opt.zero_grad()
                tape.backward(loss)
                opt.step()
                for p in params:
                    if not np.all(np.isfinite(p.data)):
                        raise NonFiniteError("optimizer produced a non-finite parameter")
            except NonFiniteError as exc:
                raise TrainingDiverged(f"{_diagnostics(model, step, epoch, last)} ({exc})") from exc
            last = loss.item()
            losses.append(last)
            step += 1
        if not losses:
            break
        train_loss = float(np.mean(losses))
        done = cfg.max_steps and step >= cfg.max_steps
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs or done:
            row = full_image_log(epoch, train_loss, t0)
        else:
            row = EpochLog(epoch, train_loss, math.nan, time.perf_counter() - t0)
        history.append(row)
        flush(history)
        log.info("epoch %d: loss %.4g rmse %.4g cm (%.1fs)", epoch, row.train_loss, row.eval_rmse_cm, row.seconds)
        if done:
            break
    return history
