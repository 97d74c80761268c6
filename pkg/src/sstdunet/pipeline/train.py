"""Seeded training loop with per-epoch JSON-lines logging and best-validation checkpoints."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from sstdunet.errors import TrainingError
from sstdunet.loss import LossConfig, combo_loss
from sstdunet.network import SstDUNet, build_model, parameter_checksum, save_checkpoint
from sstdunet.pipeline.config import RunConfig
from sstdunet.pipeline.data import Sample, SplitPlan, make_splits
from sstdunet.pipeline.optim import AdamWState, adamw_step, lr_at
from sstdunet.tensor import Tensor, no_grad
from sstdunet.volio import augment


def hard_dice(prob: np.ndarray, truth: np.ndarray, threshold: float = 0.5) -> float:
    """Dice of ``prob >= threshold`` against a binary mask; two empty masks score 1."""
    pred = prob >= threshold
    truth = truth.astype(bool)
    denom = int(pred.sum()) + int(truth.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, truth).sum()) / denom


def predict_batch(model: SstDUNet, images: Sequence[np.ndarray], batch_size: int = 2) -> list[np.ndarray]:
    """Forward pass without gradient tracking; returns one ``[D, H, W]`` probability map per image."""
    out = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            chunk = np.stack(images[start:start + batch_size])[:, None].astype(np.float32)
            prob = model(Tensor(chunk)).data
            out.extend(prob[i, 0] for i in range(prob.shape[0]))
    return out


def mean_dice(model: SstDUNet, samples: Sequence[Sample], batch_size: int = 2, threshold: float = 0.5) -> float:
    probs = predict_batch(model, [s.image for s in samples], batch_size)
    return float(np.mean([hard_dice(p, s.mask, threshold) for p, s in zip(probs, samples)]))


@dataclass
class TrainResult:
    model: SstDUNet
    history: list[dict]
    steps: int
    best_epoch: int
    best_score: float
    best_state: dict[str, np.ndarray]
    checksum: str
    checkpoint: Path | None = None
    split: SplitPlan | None = None
    extra: dict = field(default_factory=dict)


def _aug_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def train(train_set: Sequence[Sample], val_set: Sequence[Sample], cfg: RunConfig,
          out_dir: str | Path | None = None, repeat: int = 0,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train one model.

    Data order, initialisation and augmentation all derive from
    ``cfg.train.seed`` (and ``repeat``). Each epoch appends a record with the
    learning rate, mean training loss, running training Dice (of the
    forward passes made during the epoch), validation Dice and the parameter
    checksum. The best validation Dice (training Dice when there is no
    validation set) selects the checkpoint written to ``out_dir``.
    """
    tc = cfg.train
    if not train_set:
        raise TrainingError("empty training set")
    for s in list(train_set) + list(val_set):
        if s.mask is None:
            raise TrainingError(f"subject {s.subject_id} has no mask")
    model = build_model(cfg.model, seed=tc.seed)
    params = dict(model.named_parameters())
    state = AdamWState()
    sched = tc.schedule()
    loss_cfg = LossConfig(alpha=tc.alpha, gamma=tc.gamma)
    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = out_dir / f"train_log_r{repeat}.jsonl"
        log_file.write_text("")
    ckpt_path = out_dir / f"best_r{repeat}.ckpt" if out_dir is not None else None

    history: list[dict] = []
    steps = 0
    best = (-math.inf, -1)
    best_state = model.state_dict()
    done = False
    for epoch in range(tc.total_epochs):
        lr = lr_at(epoch, sched)
        order = np.random.default_rng([tc.seed, repeat, epoch]).permutation(len(train_set))
        losses, dices = [], []
        for b, start in enumerate(range(0, len(order), tc.batch_size)):
            idx = order[start:start + tc.batch_size]
            images = []
            for i in idx:
                img = train_set[i].image
                if tc.augment:
                    img = augment(img, cfg.augment, seed=_aug_seed(tc.seed, repeat, epoch, b, i))
                images.append(img)
            x = Tensor(np.stack(images)[:, None].astype(np.float32))
            y = np.stack([train_set[i].mask for i in idx])[:, None].astype(np.float32)
            model.zero_grad()
            pred = model(x)
            loss = combo_loss(pred, y, loss_cfg)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at repeat {repeat}, epoch {epoch}, batch {b} "
                                    f"(lr {lr:.3e}, subjects {[train_set[i].subject_id for i in idx]})")
            loss.backward()
            grads = {n: (p.grad if p.grad is not None else np.zeros_like(p.data)) for n, p in params.items()}
            adamw_step({n: p.data for n, p in params.items()}, grads, state, lr, tc.adamw())
            steps += 1
            losses.append(value)
            dices.extend(hard_dice(pred.data[k, 0], y[k, 0], tc.threshold) for k in range(len(idx)))
            if tc.max_steps is not None and steps >= tc.max_steps:
                done = True
                break
        train_dice = float(np.mean(dices))
        val_dice = mean_dice(model, val_set, tc.batch_size, tc.threshold) if val_set else None
        record = {
            "repeat": repeat, "epoch": epoch, "lr": lr, "steps": steps,
            "train_loss": float(np.mean(losses)), "train_dice": train_dice,
            "val_dice": val_dice, "checksum": parameter_checksum(model),
        }
        history.append(record)
        if log_file is not None:
            with log_file.open("a") as fh:
                fh.write(json.dumps(record) + "\n")
        if on_epoch is not None:
            on_epoch(record)
        score = val_dice if val_dice is not None else train_dice
        if score > best[0]:
            best = (score, epoch)
            best_state = model.state_dict()
            if ckpt_path is not None:
                save_checkpoint(model, ckpt_path, extra={"epoch": epoch, "score": score, "seed": tc.seed,
                                                         "repeat": repeat})
        if tc.target_train_dice is not None and train_dice >= tc.target_train_dice:
            done = True
        if done:
            break
    return TrainResult(model, history, steps, best[1], best[0], best_state, parameter_checksum(model), ckpt_path)


def train_repeats(samples: Sequence[Sample], cfg: RunConfig, out_dir: str | Path | None = None,
                  on_epoch: Callable[[dict], None] | None = None) -> tuple[TrainResult, list[TrainResult]]:
    """Run ``cfg.train.repeats`` split repeats and select the highest best-validation Dice."""
    by_id = {s.subject_id: s for s in samples}
    plans = make_splits(list(by_id), seed=cfg.train.seed, repeats=cfg.train.repeats)
    results = []
    for plan in plans:
        res = train([by_id[i] for i in plan.train], [by_id[i] for i in plan.val], cfg, out_dir,
                    repeat=plan.repeat, on_epoch=on_epoch)
        res.split = plan
        results.append(res)
    chosen = max(results, key=lambda r: (r.best_score, -r.split.repeat))
    chosen.model.load_state_dict(chosen.best_state)
    if out_dir is not None:
        save_checkpoint(chosen.model, Path(out_dir) / "best.ckpt",
                        extra={"repeat": chosen.split.repeat, "epoch": chosen.best_epoch,
                               "val_dice": chosen.best_score, "test": list(chosen.split.test)})
    return chosen, results
