"""Command-line entry point: ``xssm <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import io
from .data import DatasetError, gen_synthetic, load_dataset, save_dataset
from .net import GDSRNet, ModelConfig
from .numerics import NonFiniteError, Tensor, no_grad
from .train import TrainConfig, evaluate, rmse_cm, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("xssm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- config handling ------------------------------------------------------------------

def _schema() -> dict[str, type]:
    return io.dataclass_schema(ModelConfig, TrainConfig)


def load_configs(path) -> tuple[ModelConfig, TrainConfig]:
    """Read a ``key = value`` file; keys split between model and training settings."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        try:
            values = io.parse_config(text, _schema())
        except ValueError as exc:
            raise UsageError(f"{path}: {exc}") from exc
    model_keys = {f.name for f in fields(ModelConfig)}
    try:
        mcfg = ModelConfig(**{k: v for k, v in values.items() if k in model_keys})
        tcfg = TrainConfig(**{k: v for k, v in values.items() if k not in model_keys})
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    return mcfg, tcfg


def _model_from_checkpoint(ckpt: str, config: str | None, scale: int | None) -> GDSRNet:
    cfg_path = config or Path(ckpt).with_name("config.txt")
    mcfg, _ = load_configs(cfg_path if Path(cfg_path).exists() or config else None)
    if scale is not None and scale != mcfg.scale:
        mcfg = ModelConfig(**{**asdict(mcfg), "scale": scale})
    model = GDSRNet(mcfg)
    try:
        model.load_state_dict(io.load_checkpoint(ckpt))
    except (KeyError, ValueError) as exc:
        raise DatasetError(f"checkpoint {ckpt} does not fit the model config: {exc}") from exc
    return model


# -- commands ----------------------------------------------------------------------------

def cmd_train(args) -> int:
    mcfg, tcfg = load_configs(args.config)
    overrides = {k: getattr(args, k) for k in ("epochs", "crop", "lr", "max_steps") if getattr(args, k) is not None}
    tcfg = TrainConfig(**{**asdict(tcfg), **overrides, "seed": args.seed})
    if args.synthetic:
        data = gen_synthetic(args.seed, args.n, args.size, mcfg.scale)
        eval_data = gen_synthetic(args.seed + 1, args.n_eval, args.size, mcfg.scale)
    else:
        data = load_dataset(args.data)
        eval_data = load_dataset(args.eval_data) if args.eval_data else None
        if data[0].scale != mcfg.scale:
            mcfg = ModelConfig(**{**asdict(mcfg), "scale": data[0].scale})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.atomic_write(out / "config.txt", io.format_config({**asdict(mcfg), **asdict(tcfg)}).encode())
    try:
        tcfg.validate(mcfg.divisor, mcfg.scale)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    model = GDSRNet(mcfg, seed=args.seed)
    history = train(tcfg, model, data, eval_data, out_dir=out)
    last = [r for r in history if np.isfinite(r.eval_rmse_cm)][-1]
    print(f"trained {len(history) - 1} epochs; eval RMSE {last.eval_rmse_cm:.4f} cm; wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _model_from_checkpoint(args.checkpoint, args.config, args.scale)
    data = load_dataset(args.data)
    if data[0].scale != model.cfg.scale:
        raise DatasetError(f"dataset scale {data[0].scale} != --scale {model.cfg.scale}")
    print("scale,n,rmse_cm")
    print(f"{model.cfg.scale},{len(data)},{evaluate(model, data):.6f}")
    return EXIT_OK


def _routing_csvs(model: GDSRNet) -> tuple[str, str]:
    from .cmmt import CmmtParams, selection_to_csv
    from .issm import IssmParams

    match_rows = ["block,sample,rank,depth_idx,rgb_idx,score"]
    selections = []
    for name, mod in _named_modules(model):
        if isinstance(mod, IssmParams):
            for n, m in enumerate(mod.last_matchings):
                for rank, ((d, r), s) in enumerate(zip(m.pairs, m.scores)):
                    match_rows.append(f"{name},{n},{rank},{d},{r},{s:.6f}")
        elif isinstance(mod, CmmtParams) and mod.last_selection is not None:
            selections.append((name, 0, mod.last_selection))
    return "\n".join(match_rows) + "\n", selection_to_csv(selections)


def _named_modules(mod, prefix=""):
    from .numerics import Module

    yield prefix.rstrip("."), mod
    for key, val in vars(mod).items():
        items = enumerate(val) if isinstance(val, (list, tuple)) else [(None, val)]
        for i, item in items:
            if isinstance(item, Module):
                yield from _named_modules(item, f"{prefix}{key}." if i is None else f"{prefix}{key}.{i}.")


def cmd_infer(args) -> int:
    model = _model_from_checkpoint(args.checkpoint, args.config, args.scale)
    depth = io.read_pfm(args.depth)
    rgb = io.read_ppm(args.rgb)
    s = model.cfg.scale
    if rgb.shape[1:] != (s * depth.shape[1], s * depth.shape[2]):
        raise DatasetError(f"RGB {rgb.shape[1:]} is not {s}x the depth {depth.shape[1:]}")
    with no_grad():
        pred = model(Tensor(depth[None]), Tensor(rgb[None])).data[0]
    io.write_pfm(args.out, pred)
    if args.dump_matching or args.dump_selection:
        match_csv, sel_csv = _routing_csvs(model)
        if args.dump_matching:
            io.atomic_write(args.dump_matching, match_csv.encode())
        if args.dump_selection:
            io.atomic_write(args.dump_selection, sel_csv.encode())
    if args.gt:
        print(f"rmse_cm,{rmse_cm(pred, io.read_pfm(args.gt)):.6f}")
    print(f"wrote {args.out} ({pred.shape[1]}x{pred.shape[2]})")
    return EXIT_OK


def cmd_bench_scan(args) -> int:
    from . import scan
    from .scan.bench import doubling_ratios, rows_to_csv

    if args.backend:
        scan.set_backend(args.backend)
    rows = scan.scan_complexity_bench(sorted(args.lengths), d_inner=args.d_inner, d_state=args.d_state,
                                      repeats=args.repeats, seed=args.seed, attention=not args.no_attention)
    text = rows_to_csv(rows)
    if args.out:
        io.atomic_write(args.out, text.encode())
    sys.stdout.write(text)
    sr = doubling_ratios(rows, 1)
    if sr:
        msg = f"# backend={scan.get_backend()} median doubling ratio: scan {np.median(sr):.2f}"
        if not args.no_attention:
            msg += f", attention {np.median(doubling_ratios(rows, 2)):.2f}"
        print(msg)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import gradsuite

    groups = list(gradsuite.GROUPS) if args.module == "all" else [args.module]
    print("group,check,rel_error,tolerance,coords,status")
    ok = True
    for group, res, tol in gradsuite.run(groups, seed=args.seed):
        passed = res.passed(tol)
        ok &= passed
        print(f"{group},{res.name},{res.rel_error:.3e},{tol:.0e},{res.n_coords},{'pass' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_gen_data(args) -> int:
    if args.size % args.scale:
        raise UsageError(f"--size {args.size} must be divisible by --scale {args.scale}")
    samples = gen_synthetic(args.seed, args.n, args.size, args.scale)
    save_dataset(args.out, samples)
    print(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="xssm", description="Guided depth super-resolution with an interactive state space model.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--config", help="key = value file (model and training settings)")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset directory (<id>_depth.pfm, <id>_rgb.ppm, <id>_gt.pfm)")
    src.add_argument("--synthetic", action="store_true", help="train on generated scenes")
    t.add_argument("--eval-data", help="held-out dataset directory")
    t.add_argument("--n", type=int, default=64, help="synthetic training scenes (default 64)")
    t.add_argument("--n-eval", type=int, default=16, help="synthetic eval scenes (default 16)")
    t.add_argument("--size", type=int, default=128, help="synthetic scene side (default 128)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--crop", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--out", required=True, help="output directory for model.ckpt, metrics.csv, config.txt")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="RMSE of a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--config", help="model config (default: config.txt beside the checkpoint)")
    e.add_argument("--scale", type=int)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", parents=[common], help="super-resolve one depth map")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--depth", required=True, help="low-resolution depth (PFM)")
    i.add_argument("--rgb", required=True, help="high-resolution guide (PPM)")
    i.add_argument("--out", required=True, help="output depth (PFM)")
    i.add_argument("--config")
    i.add_argument("--scale", type=int)
    i.add_argument("--gt", help="optional ground truth PFM; prints the RMSE")
    i.add_argument("--dump-matching", metavar="CSV", help="write the ISSM channel matchings")
    i.add_argument("--dump-selection", metavar="CSV", help="write the CMMT channel selections")
    i.set_defaults(func=cmd_infer)

    b = sub.add_parser("bench-scan", parents=[common], help="scan vs attention wall time")
    b.add_argument("--lengths", type=int, nargs="+", default=[4096, 8192, 16384])
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--d-inner", type=int, default=16)
    b.add_argument("--d-state", type=int, default=16)
    b.add_argument("--backend", choices=["cython", "numpy"])
    b.add_argument("--no-attention", action="store_true")
    b.add_argument("--out", help="also write the CSV here")
    b.set_defaults(func=cmd_bench_scan)

    from .gradsuite import GROUPS
    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    g.add_argument("--module", default="all", choices=["all", *GROUPS])
    g.set_defaults(func=cmd_gradcheck)

    d = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    d.add_argument("--n", type=int, default=16)
    d.add_argument("--size", type=int, default=128)
    d.add_argument("--scale", type=int, default=4)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_gen_data)
    return p


def _limit_threads():
    n = os.environ.get("XSSM_THREADS")
    if not n:
        return None
    try:
        limit = int(n)
    except ValueError:
        raise UsageError(f"XSSM_THREADS must be an integer, got {n!r}")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=limit)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limiter = _limit_threads()
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except UsageError as exc:
        print(f"xssm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as exc:
        print(f"xssm: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, io.FormatError, OSError, ValueError) as exc:
        print(f"xssm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
