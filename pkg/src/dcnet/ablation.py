"""Multi-seed comparison of the full model against its structural ablations."""
from __future__ import annotations

import dataclasses
import json
import time
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .data import synthesize
from .metrics import mean_metrics
from .network import DCNet, NetworkConfig
from .train import evaluate, make_dataset, train

VARIANTS = {
    "full": {},
    "maxpool": {"pooling": "max"},
    "concat": {"fusion": "concat"},
    "no_coupler": {"coupler": False},
}
TEST_SEED_OFFSET = 10007


def test_set(cfg: NetworkConfig, count: int = 100):
    """Held-out samples drawn from a seed disjoint from the training data."""
    return synthesize(count, cfg.extent, cfg.data_seed + TEST_SEED_OFFSET, cfg.difficulty)


def run_ablation(cfg: NetworkConfig, variants: Sequence[str] = tuple(VARIANTS), seeds: Sequence[int] = (0, 1, 2),
                 out_dir=None, test_count: int = 100,
                 progress: Optional[Callable[[str], None]] = None) -> dict:
    """Train every variant for every seed on the same data; score best checkpoints on a fresh test draw.

    With ``out_dir`` set, each finished run leaves ``result.json`` in its
    directory and is not retrained on a later call.
    """
    start = time.perf_counter()
    train_set, val_set = make_dataset(cfg)
    test = test_set(cfg, test_count)
    runs = []
    for name in variants:
        if name not in VARIANTS:
            raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
        for seed in seeds:
            vcfg = dataclasses.replace(cfg, seed=seed, **VARIANTS[name])
            run_dir = Path(out_dir) / f"{name}_seed{seed}" if out_dir is not None else None
            done = run_dir / "result.json" if run_dir is not None else None
            if done is not None and done.exists():
                entry = json.loads(done.read_text())
                if entry.get("config_hash") == vcfg.config_hash():
                    runs.append(entry)
                    continue
            res = train(vcfg, train_set, val_set, out_dir=run_dir)
            model = DCNet(vcfg)
            model.load_state_dict(res.best_state)
            records, _ = evaluate(model, test)
            m = mean_metrics(records)
            entry = {"variant": name, "seed": seed, "best_val_dice": res.best_dice,
                     "best_epoch": res.best_epoch, "test": m.to_dict(), "seconds": res.seconds,
                     "config_hash": vcfg.config_hash()}
            runs.append(entry)
            if done is not None:
                done.write_text(json.dumps(entry, indent=2))
            if progress is not None:
                progress(f"{name} seed {seed}: test dice {m.dice:.4f} (best val {res.best_dice:.4f}, {res.seconds:.0f}s)")
    summary = {}
    for name in variants:
        d = [r["test"]["dice"] for r in runs if r["variant"] == name]
        summary[name] = {"mean_dice": float(np.mean(d)), "std_dice": float(np.std(d)), "runs": len(d)}
    return {"runs": runs, "summary": summary, "seconds": time.perf_counter() - start,
            "train_seconds": float(sum(r["seconds"] for r in runs)),
            "config": cfg.to_dict()}

