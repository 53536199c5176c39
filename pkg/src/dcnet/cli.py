"""Command-line entry point: ``dcnet <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .autodiff import NonFiniteError
from .network import ConfigError, NetworkConfig

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

logger = logging.getLogger("dcnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ------------------------------------------------------------------ helpers

def write_sidecar(path, cfg_hash: str, seed: int, **extra) -> Path:
    side = Path(str(path) + ".meta.json")
    side.write_text(json.dumps({"file": Path(path).name, "config_hash": cfg_hash, "seed": seed, **extra},
                               indent=2, sort_keys=True))
    return side


_OVERRIDES = {
    # flag dest -> (config field, type)
    "extent": ("extent", int),
    "width": ("width", float),
    "tau": ("tau", int),
    "pooling": ("pooling", str),
    "fusion": ("fusion", str),
    "epochs": ("epochs", int),
    "samples": ("samples", int),
    "batch_size": ("batch_size", int),
    "lr": ("lr", float),
    "difficulty": ("difficulty", str),
    "data_seed": ("data_seed", int),
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config (missing fields take defaults)")
    p.add_argument("--seed", type=int, help="model/shuffle seed")
    for dest, (_, typ) in _OVERRIDES.items():
        p.add_argument("--" + dest.replace("_", "-"), dest=dest, type=typ)
    p.add_argument("--no-coupler", action="store_true", help="drop auxiliary stream and aggregation units")
    p.add_argument("--no-dar", action="store_true", help="aggregation units without reinforcement")


def load_config(args) -> NetworkConfig:
    raw: dict = {}
    path = getattr(args, "config", None)
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be an object")
    for dest, (name, _) in _OVERRIDES.items():
        v = getattr(args, dest, None)
        if v is not None:
            raw[name] = v
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "no_coupler", False):
        raw["coupler"] = False
    if getattr(args, "no_dar", False):
        raw["dar"] = False
    return NetworkConfig.from_dict(raw)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -------------------------------------------------------------- subcommands

def cmd_train(args) -> int:
    from .train import make_dataset, train
    from .data import load_samples
    cfg = load_config(args)
    out = _out(args)
    if args.data_dir:
        samples = load_samples(args.data_dir, cfg.extent)
        n_val = max(1, int(round(cfg.val_fraction * len(samples))))
        train_set, val_set = samples[:-n_val], samples[-n_val:]
    else:
        train_set, val_set = make_dataset(cfg)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    result = train(cfg, train_set, val_set, out_dir=out, resume=args.resume,
                   callback=lambda row: print(json.dumps(row), flush=True))
    h = cfg.config_hash()
    for name in ("metrics.csv", "best.ckpt", "last.ckpt", "config.json"):
        if (out / name).exists():
            write_sidecar(out / name, h, cfg.seed)
    print(json.dumps({"best_val_dice": result.best_dice, "best_epoch": result.best_epoch,
                      "checkpoint": str(result.checkpoint), "seconds": round(result.seconds, 1)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import mean_metrics
    from .train import evaluate, load_model
    model, meta = load_model(args.checkpoint)
    cfg = model.cfg
    if args.data_dir:
        from .data import load_samples
        samples = load_samples(args.data_dir, cfg.extent)
    else:
        from .train import make_dataset
        train_set, val_set = make_dataset(cfg)
        samples = {"train": train_set, "val": val_set, "all": train_set + val_set}[args.split]
    records, loss = evaluate(model, samples, threshold=args.threshold)
    agg = mean_metrics(records)
    report = {
        "checkpoint": str(args.checkpoint),
        "samples": [dict(id=s.tag or str(i), **r.to_dict()) for i, (s, r) in enumerate(zip(samples, records))],
        "aggregate": {**agg.to_dict(), "loss": loss, "count": len(records)},
        "logged_best_val_dice": meta.get("val_dice"),
    }
    out = _out(args)
    path = out / "metrics.json"
    path.write_text(json.dumps(report, indent=2))
    write_sidecar(path, meta.get("config_hash", cfg.config_hash()), cfg.seed)
    print(json.dumps(report["aggregate"]))
    return EXIT_OK


def _synthesize(args):
    from .data import synthesize
    try:
        return synthesize(args.count, args.extent, args.seed, args.difficulty)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_synth(args) -> int:
    from .data import save_samples
    samples = _synthesize(args)
    out = _out(args)
    files = save_samples(out, samples)
    h = NetworkConfig(extent=args.extent, samples=args.count, data_seed=args.seed,
                      difficulty=args.difficulty).config_hash()
    (out / "manifest.json").write_text(json.dumps({"count": len(files), "extent": args.extent,
                                                   "seed": args.seed, "difficulty": args.difficulty}))
    write_sidecar(out / "manifest.json", h, args.seed)
    print(f"wrote {len(files)} pairs to {out}")
    return EXIT_OK


HARMONIC_GRID = [(g, s) for g in (5.0, 7.0, 9.0) for s in (1e-3, 1e-2, 1e-1)]
FOCAL_GAMMAS = (2.0, 5.0)


def curve_columns() -> list[str]:
    cols = ["p_t", "ce"] + [f"focal_g{g:g}" for g in FOCAL_GAMMAS]
    return cols + [f"harmonic_g{g:g}_s{s:g}" for g, s in HARMONIC_GRID]


def p_grid(step: float) -> np.ndarray:
    n = int(round((0.99 - 0.01) / step)) + 1
    return np.round(0.01 + step * np.arange(n), 12)


def _grid(args) -> np.ndarray:
    if not 0.0 < args.step <= 0.98:
        raise UsageError(f"--step must lie in (0, 0.98], got {args.step}")
    return p_grid(args.step)


def cmd_loss_curves(args) -> int:
    from . import losses as L
    p = _grid(args)
    cols = [p, L.cross_entropy(p)] + [L.focal_loss(p, g) for g in FOCAL_GAMMAS]
    cols += [L.harmonic_loss(p, g, s) for g, s in HARMONIC_GRID]
    return _write_curves(args, cols)


def cmd_loss_grad(args) -> int:
    from . import losses as L
    p = _grid(args)
    cols = [p, L.ce_grad(p)] + [L.focal_grad(p, g) for g in FOCAL_GAMMAS]
    cols += [L.harmonic_grad(p, g, s) for g, s in HARMONIC_GRID]
    return _write_curves(args, cols)


def _write_curves(args, cols) -> int:
    import hashlib
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(curve_columns())
        for row in zip(*cols):
            w.writerow([f"{v:.12g}" for v in row])
    h = hashlib.sha256(json.dumps({"step": args.step, "columns": curve_columns()}).encode()).hexdigest()[:16]
    write_sidecar(path, h, 0, step=args.step)
    print(f"wrote {len(cols[0])} rows to {path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .verify import SUITE, run_suite
    names = args.module or list(SUITE)
    unknown = [n for n in names if n not in SUITE]
    if unknown:
        raise UsageError(f"unknown module(s): {', '.join(unknown)}; choose from {', '.join(SUITE)}")
    ok = True
    for name, (report, secs) in run_suite(names, seed=args.seed).items():
        print(f"{name:16s} {report}  [{secs:.1f}s]")
        ok &= report.passed
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_pool_demo(args) -> int:
    from .autodiff import ops
    from .dcp import classic_pool
    if args.input:
        z2 = np.loadtxt(args.input, delimiter=",", ndmin=2)
    else:
        z2 = np.round(np.random.default_rng(args.seed).standard_normal((8, 8)), 3)
    if z2.shape[0] % 2 or z2.shape[1] % 2:
        raise UsageError(f"matrix extent {z2.shape} must be even")
    z = z2[None, :, :, None]
    const = np.full(z.shape, 0.25)
    binary = argmax_kernel(z2)[None, :, :, None]
    np.set_printoptions(precision=4, suppress=True)
    rows = [
        ("average pooling", ops.avg_pool(z, 2).data),
        ("classic pooling, constant 1/4 kernel", classic_pool(z, const).data),
        (f"context pooling, constant 1/4 kernel, tau={args.tau}", ops.context_pool_banded(z, const, args.tau).data),
        ("max pooling", ops.max_pool(z, 2).data),
        ("classic pooling, argmax-binary kernel", classic_pool(z, binary).data),
        (f"context pooling, argmax-binary kernel, tau={args.tau}", ops.context_pool_banded(z, binary, args.tau).data),
    ]
    print("input:\n", z2)
    for title, v in rows:
        print(f"{title}:\n", v[0, :, :, 0])
    return EXIT_OK


def argmax_kernel(z2: np.ndarray, r: int = 2) -> np.ndarray:
    """Binary r x r window kernels selecting each window's (first) maximum."""
    h, w = z2.shape
    win = z2.reshape(h // r, r, w // r, r).transpose(0, 2, 1, 3).reshape(h // r, w // r, r * r)
    onehot = np.eye(r * r)[win.argmax(axis=-1)]
    return onehot.reshape(h // r, w // r, r, r).transpose(0, 2, 1, 3).reshape(h, w)


def cmd_dar_attn(args) -> int:
    from PIL import Image
    from .data import min_max, synthesize
    from .network import DCNet
    if args.checkpoint:
        from .train import load_model
        model, meta = load_model(args.checkpoint)
        cfg = model.cfg
    else:
        cfg = load_config(args)
        model = DCNet(cfg)
    if not cfg.coupler or not cfg.dar:
        raise ConfigError("dar", "attention maps need the coupler with reinforcement enabled")
    sample = synthesize(1, cfg.extent, args.sample_seed, cfg.difficulty)[0]
    model.predict(sample.image[None, :, :, None])
    unit = model.agg[args.unit - 1].dar
    attn = unit.last_attention[0, :, :, 0]
    scale = cfg.extent // attn.shape[0]
    big = np.kron(min_max(attn), np.ones((scale, scale)))
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    panel = np.concatenate([sample.image, sample.mask, big], axis=1)
    Image.fromarray(np.round(panel * 255).astype(np.uint8), mode="L").save(path)
    write_sidecar(path, cfg.config_hash(), cfg.seed, unit=args.unit, sample_seed=args.sample_seed)
    print(f"wrote attention map of A{args.unit} ({attn.shape[0]}x{attn.shape[1]}) to {path}")
    return EXIT_OK


def cmd_summary(args) -> int:
    from .network import model_summary
    cfg = load_config(args)
    report = model_summary(cfg)
    text = json.dumps(report, indent=2)
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        write_sidecar(path, cfg.config_hash(), cfg.seed)
    print(text)
    return EXIT_OK


def cmd_hist(args) -> int:
    from .data import fg_bg_histogram, histogram_intersection, write_histogram_csv
    if args.bins < 2:
        raise UsageError("--bins must be >= 2")
    samples = _synthesize(args)
    h_fg = h_bg = 0
    for s in samples:
        a, b, edges = fg_bg_histogram(s, args.bins)
        h_fg, h_bg = h_fg + a, h_bg + b
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_histogram_csv(path, h_fg, h_bg, edges)
    h = NetworkConfig(extent=args.extent, samples=args.count, data_seed=args.seed,
                      difficulty=args.difficulty).config_hash()
    inter = histogram_intersection(h_fg, h_bg)
    write_sidecar(path, h, args.seed, bins=args.bins, intersection=inter)
    print(f"histogram intersection {inter:.4f} over {args.count} samples -> {path}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablation import VARIANTS, run_ablation
    cfg = load_config(args)
    out = _out(args)
    seeds = list(range(args.seeds))
    variants = args.variant or list(VARIANTS)
    result = run_ablation(cfg, variants, seeds, out_dir=out,
                          progress=lambda msg: print(msg, flush=True))
    path = out / "ablation.json"
    path.write_text(json.dumps(result, indent=2))
    write_sidecar(path, cfg.config_hash(), cfg.seed, seeds=seeds)
    print(json.dumps(result["summary"], indent=2))
    return EXIT_OK


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dcnet", description="Lesion segmentation toolkit: training, evaluation and analysis.")
    p.add_argument("--version", action="version", version=f"dcnet {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="<command>", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("train", help="train a model, write checkpoints and a metrics CSV")
    _add_config_flags(s)
    s.add_argument("--out", default="runs/train")
    s.add_argument("--data-dir", help="load PNG/PGM pairs instead of synthesizing")
    s.add_argument("--resume", type=Path, help="continue from a last.ckpt")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="per-sample and aggregate metrics of a checkpoint")
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--data-dir")
    s.add_argument("--split", choices=("train", "val", "all"), default="train")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--out", default="runs/eval")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("synth", help="write synthetic image/mask pairs")
    s.add_argument("--count", type=int, default=16)
    s.add_argument("--extent", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--difficulty", default="default")
    s.add_argument("--out", default="runs/synth")
    s.set_defaults(fn=cmd_synth)

    for name, fn, default, text in (("loss-curves", cmd_loss_curves, "runs/loss_curves.csv", "loss values on a p_t grid"),
                                    ("loss-grad", cmd_loss_grad, "runs/loss_grad.csv", "-dL/dp_t on a p_t grid")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--step", type=float, default=0.005, help="p_t grid spacing on [0.01, 0.99]")
        s.add_argument("--out", default=default)
        s.set_defaults(fn=fn)

    s = sub.add_parser("gradcheck", help="finite-difference check of every module")
    s.add_argument("--module", action="append", help="restrict to a module (repeatable)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("pool-demo", help="compare classic and context pooling on a matrix")
    s.add_argument("--input", type=Path, help="CSV matrix with even extents (random 8x8 when omitted)")
    s.add_argument("--tau", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_pool_demo)

    s = sub.add_parser("dar-attn", help="save the reinforcement attention map as PNG")
    _add_config_flags(s)
    s.add_argument("--checkpoint", type=Path)
    s.add_argument("--unit", type=int, default=9, choices=range(1, 10))
    s.add_argument("--sample-seed", type=int, default=0)
    s.add_argument("--out", default="runs/dar_attention.png")
    s.set_defaults(fn=cmd_dar_attn)

    s = sub.add_parser("summary", help="parameter and multiply-accumulate report")
    _add_config_flags(s)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_summary)

    s = sub.add_parser("hist", help="foreground/background intensity histograms as CSV")
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--extent", type=int, default=64)
    s.add_argument("--bins", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--difficulty", default="default")
    s.add_argument("--out", default="runs/hist.csv")
    s.set_defaults(fn=cmd_hist)

    s = sub.add_parser("ablate", help="train the full model and its ablations over several seeds")
    _add_config_flags(s)
    s.add_argument("--seeds", type=int, default=3)
    s.add_argument("--variant", action="append")
    s.add_argument("--out", default="runs/ablation")
    s.set_defaults(fn=cmd_ablate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"dcnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"dcnet: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"dcnet: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
