"""Training loop, validation and checkpointing."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import Adam, backward, load_archive, no_grad, save_archive, set_finite_checks
from .data import SegSample, stack, synthesize
from .losses import total_loss
from .metrics import MetricsRecord, compute_metrics, mean_metrics
from .network import DCNet, NetworkConfig

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "train_loss", "val_loss", "val_dice", "val_miou", "val_precision", "val_95hd")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, epoch: int, step: int):
        super().__init__(f"non-finite {term} loss at epoch {epoch}, step {step}")
        self.term, self.epoch, self.step = term, epoch, step


@dataclass
class TrainResult:
    best_dice: float
    best_epoch: int
    history: list = field(default_factory=list)
    checkpoint: Optional[Path] = None
    seconds: float = 0.0
    best_state: dict = field(default_factory=dict, repr=False)


def make_dataset(cfg: NetworkConfig) -> tuple[list[SegSample], list[SegSample]]:
    """Synthesize ``cfg.samples`` images and split off the held-out fraction."""
    samples = synthesize(cfg.samples, cfg.extent, cfg.data_seed, cfg.difficulty)
    n_val = max(1, int(round(cfg.val_fraction * len(samples))))
    return samples[:-n_val], samples[-n_val:]


def evaluate(model: DCNet, samples: Sequence[SegSample], threshold: float = 0.5,
             cfg=None) -> tuple[list[MetricsRecord], float]:
    """Per-sample metrics and the mean total loss in eval mode."""
    x, y = stack(samples)
    cfg = cfg or model.cfg
    records, losses = [], []
    was = model.training
    model.eval()
    try:
        with no_grad():
            for i in range(0, len(x), 8):
                tr = model(x[i:i + 8])
                loss, _ = total_loss(tr.s_f, tr.s_b, tr.y_hat, y[i:i + 8], cfg.loss)
                losses.append(loss.item() * len(tr.y_hat.data))
                for p, t in zip(tr.y_hat.data, y[i:i + 8]):
                    records.append(compute_metrics(p, t, threshold))
    finally:
        model.train(was)
    return records, float(np.sum(losses) / len(x))


def _save(path: Path, model: DCNet, opt: Adam, meta: dict) -> None:
    arrays = dict(model.state_dict())
    arrays.update(opt.state())
    save_archive(path, arrays, meta)


def load_model(path, cfg: Optional[NetworkConfig] = None) -> tuple[DCNet, dict]:
    arrays, meta = load_archive(path)
    cfg = cfg or NetworkConfig.from_dict(meta["config"])
    model = DCNet(cfg)
    model.load_state_dict(arrays)
    return model, meta


def train(cfg: NetworkConfig, train_set: Sequence[SegSample], val_set: Sequence[SegSample],
          out_dir=None, resume=None, callback: Optional[Callable[[dict], None]] = None,
          check_every_op: bool = False) -> TrainResult:
    """Adam on the joint objective; logs one CSV row per epoch and keeps the best checkpoint."""
    if not train_set or not val_set:
        raise ValueError("training and validation sets must be nonempty")
    start_time = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    model = DCNet(cfg)
    opt = Adam(list(model.named_parameters()), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    rng = np.random.default_rng(cfg.seed + 7919)
    start_epoch, best_dice, best_epoch, history = 1, -1.0, 0, []
    best_state: dict = {}

    if resume is not None:
        arrays, meta = load_archive(resume)
        model.load_state_dict(arrays)
        opt.load_state(arrays)
        rng.bit_generator.state = meta["rng_state"]
        start_epoch = int(meta["epoch"]) + 1
        best_dice, best_epoch = float(meta["best_dice"]), int(meta["best_epoch"])
        history = list(meta.get("history", []))
        if out is not None and (out / "best.ckpt").exists():
            best_state = dict(load_archive(out / "best.ckpt")[0])

    x, y = stack(train_set)
    meta_base = {"config": cfg.to_dict(), "config_hash": cfg.config_hash(), "seed": cfg.seed}
    log_path = out / "metrics.csv" if out is not None else None
    if log_path is not None and resume is None:
        with open(log_path, "w", newline="") as fh:
            csv.writer(fh).writerow(LOG_COLUMNS)

    prev_checks = set_finite_checks(check_every_op)
    try:
        for epoch in range(start_epoch, cfg.epochs + 1):
            opt.lr = cfg.lr * cfg.lr_decay ** (epoch - 1)
            order = rng.permutation(len(x))
            total, count = 0.0, 0
            for step, i in enumerate(range(0, len(order), cfg.batch_size)):
                idx = order[i:i + cfg.batch_size]
                tr = model(x[idx])
                loss, parts = total_loss(tr.s_f, tr.s_b, tr.y_hat, y[idx], cfg.loss)
                for term, v in parts.items():
                    if not np.isfinite(v):
                        raise NonFiniteLossError(term, epoch, step)
                opt.zero_grad()
                backward(loss)
                opt.step()
                total += parts["total"] * len(idx)
                count += len(idx)

            records, val_loss = evaluate(model, val_set, cfg=cfg)
            m = mean_metrics(records)
            row = {"epoch": epoch, "train_loss": total / count, "val_loss": val_loss, "val_dice": m.dice,
                   "val_miou": m.m_iou, "val_precision": m.precision, "val_95hd": m.hd95}
            history.append(row)
            logger.info("epoch %d train %.4f val %.4f dice %.4f", epoch, row["train_loss"], val_loss, m.dice)
            if log_path is not None:
                with open(log_path, "a", newline="") as fh:
                    csv.writer(fh).writerow([epoch] + [f"{row[k]:.6f}" for k in LOG_COLUMNS[1:]])
            if m.dice > best_dice:
                best_dice, best_epoch = m.dice, epoch
                best_state = {k: v.copy() for k, v in model.state_dict().items()}
                if out is not None:
                    _save(out / "best.ckpt", model, opt, {**meta_base, "epoch": epoch, "val_dice": m.dice})
            if out is not None:
                _save(out / "last.ckpt", model, opt, {
                    **meta_base, "epoch": epoch, "best_dice": best_dice, "best_epoch": best_epoch,
                    "rng_state": rng.bit_generator.state, "history": history,
                })
            if callback is not None:
                callback(row)
    finally:
        set_finite_checks(prev_checks)

    return TrainResult(best_dice, best_epoch, history,
                       out / "best.ckpt" if out is not None else None,
                       time.perf_counter() - start_time, best_state)
