"""Two-stage training: supervised pretraining, then quality-guided fine-tuning.

Randomness is keyed, not streamed. Pretraining draws the epoch permutation
from ``rng([seed, epoch])`` and the flips/patch of batch item ``i`` at step
``s`` from ``rng([seed, s, i])``; fine-tuning draws the whole batch from
``rng([seed, s])``. A run resumed from a checkpoint at step ``s`` therefore
sees exactly the batches of an uninterrupted run.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import logging
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
import torch

from .checkpoint import Checkpoint
from .config import FinetuneConfig, PretrainConfig, config_echo
from .errors import RangeError, ShapeError, TrainingError
from .imaging import ImagePair, as_image, extract_patch, flip
from .iqa.fullref import psnr
from .iqa.scorers import QualityScorer
from .losses import make_extractor, pearson_loss, pixel_loss, total_loss
from .network import UIRNet, enhance, init_network

log = logging.getLogger(__name__)

FINETUNE_COLUMNS = ("step", "pixel", "perceptual", "score", "total", "mean_q", "lr")
PRETRAIN_COLUMNS = ("step", "epoch", "batch_size", "patch_size", "pixel", "pearson", "total", "lr")


def cosine_lr(step: int, total: int, eta_max: float, eta_min: float = 0.0) -> float:
    if total < 1 or not 0 <= step <= total:
        raise RangeError(f"step {step} outside [0, {total}]")
    if eta_min > eta_max:
        raise RangeError("eta_min must not exceed eta_max")
    return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + math.cos(math.pi * step / total))


def make_optimizer(model: UIRNet, lr: float, weight_decay: float, betas=(0.9, 0.999)) -> torch.optim.AdamW:
    params = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.AdamW(params, lr=lr, betas=tuple(betas), weight_decay=weight_decay, foreach=False)


def _set_lr(optimizer, lr: float):
    for group in optimizer.param_groups:
        group["lr"] = lr


def _restore(model: UIRNet, ckpt: Optional[Checkpoint], optimizer) -> int:
    if ckpt is None:
        return 0
    if ckpt.optimizer_state is not None:
        optimizer.load_state_dict(ckpt.optimizer_state)
    return int(ckpt.step)


def _stack(images: Sequence[np.ndarray]) -> torch.Tensor:
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise ShapeError(f"cannot batch images of shapes {sorted(shapes)}; set a patch size")
    return torch.from_numpy(np.ascontiguousarray(np.stack(images).transpose(0, 3, 1, 2)))


# ---------------------------------------------------------------- pretraining


@dataclass(frozen=True)
class PlannedStep:
    step: int
    epoch: int
    indices: tuple
    batch_size: int
    patch_size: int


def batch_plan(n_pairs: int, config: PretrainConfig) -> list[PlannedStep]:
    """Every step of the run, epoch by epoch; the last batch of an epoch may be short."""
    if n_pairs < 1:
        raise ShapeError("pretraining needs at least one pair")
    plan = []
    for epoch in range(config.epochs):
        stage = config.stage_at(epoch)
        order = np.random.default_rng([config.seed, epoch]).permutation(n_pairs)
        for start in range(0, n_pairs, stage.batch_size):
            idx = tuple(int(i) for i in order[start : start + stage.batch_size])
            plan.append(PlannedStep(len(plan), epoch, idx, stage.batch_size, stage.patch_size))
            if config.max_steps and len(plan) == config.max_steps:
                return plan
    return plan


def _pretrain_item(pair: ImagePair, planned: PlannedStep, slot: int, config: PretrainConfig, factor: int) -> ImagePair:
    rng = np.random.default_rng([config.seed, planned.step, slot])
    if config.augment:
        h, v = (bool(b) for b in rng.integers(0, 2, size=2))
        pair = ImagePair(flip(pair.input, h, v), flip(pair.target, h, v))
    if planned.patch_size > 0:
        pair = extract_patch(pair, planned.patch_size, rng, factor)
    return pair


def pretrain_losses(pred: torch.Tensor, target: torch.Tensor, config: PretrainConfig) -> dict:
    pix = pixel_loss(pred, target)
    cor = pearson_loss(pred, target) if config.pearson_weight else torch.zeros((), dtype=pix.dtype)
    total = config.pixel_weight * pix + config.pearson_weight * cor
    return {"pixel": pix, "pearson": cor, "total": total}


def pretrain(
    pairs: Sequence[ImagePair],
    config: PretrainConfig,
    model: Optional[UIRNet] = None,
    resume: Optional[Checkpoint] = None,
    stop_after: Optional[int] = None,
    on_step: Optional[Callable[[dict], None]] = None,
) -> Checkpoint:
    """Train on ``pairs`` with ``pixel_weight * L_pix + pearson_weight * L_cor``.

    ``resume`` continues from a saved checkpoint (its model and optimizer
    state); ``stop_after`` ends the run after that global step count while
    keeping the full-run learning-rate schedule, which is how interrupted
    runs are produced. Returns the final checkpoint; ``ckpt.log`` holds one
    dict per step of this invocation.
    """
    pairs = list(pairs)
    plan = batch_plan(len(pairs), config)
    if resume is not None:
        model = resume.model
    elif model is None:
        model = init_network(config.network, seed=config.seed)
    factor = model.config.downsampling
    optimizer = make_optimizer(model, config.lr, config.weight_decay, (config.beta1, config.beta2))
    start = _restore(model, resume, optimizer)
    end = len(plan) if stop_after is None else min(len(plan), stop_after)
    model.train()

    records = []
    for planned in plan[start:end]:
        batch = [_pretrain_item(pairs[i], planned, slot, config, factor) for slot, i in enumerate(planned.indices)]
        x = _stack([p.input for p in batch])
        y = _stack([p.target for p in batch])
        lr = cosine_lr(planned.step, len(plan), config.lr, config.lr_min)
        _set_lr(optimizer, lr)
        optimizer.zero_grad(set_to_none=True)
        terms = pretrain_losses(model(x), y, config)
        if not torch.isfinite(terms["total"]):
            raise TrainingError(f"non-finite loss at step {planned.step}", step=planned.step)
        terms["total"].backward()
        optimizer.step()
        row = {
            "step": planned.step,
            "epoch": planned.epoch,
            "batch_size": planned.batch_size,
            "patch_size": planned.patch_size,
            **{k: float(v.detach()) for k, v in terms.items()},
            "lr": lr,
        }
        records.append(row)
        if on_step is not None:
            on_step(row)
    return Checkpoint(model, optimizer.state_dict(), end, config_echo(config), "pretrain", records)


def epoch_summary(step_log: Sequence[dict]) -> list[dict]:
    """Per-epoch mean losses plus the batch/patch size that epoch used."""
    out = {}
    for row in step_log:
        e = out.setdefault(row["epoch"], {"epoch": row["epoch"], "batch_size": row["batch_size"], "patch_size": row["patch_size"], "steps": 0, "total": 0.0})
        e["steps"] += 1
        e["total"] += row["total"]
    for e in out.values():
        e["total"] /= e["steps"]
    return [out[k] for k in sorted(out)]


@torch.no_grad()
def trainset_psnr(model: UIRNet, pairs: Sequence[ImagePair]) -> float:
    """Mean PSNR of full-image predictions against targets."""
    return float(np.mean([psnr(enhance(model, p.input), p.target) for p in pairs]))


# --------------------------------------------------------------- fine-tuning


@dataclass(frozen=True)
class SampleRecord:
    input: np.ndarray
    pseudo_label: np.ndarray
    q_reference: float
    source: str = "non-reference"

    def __post_init__(self):
        for arr in (self.input, self.pseudo_label):
            arr.setflags(write=False)


def _as_model(ckpt: Union[Checkpoint, UIRNet]) -> UIRNet:
    return ckpt.model if isinstance(ckpt, Checkpoint) else ckpt


def generate_pseudo_labels(
    inputs: Sequence[np.ndarray],
    ckpt: Union[Checkpoint, UIRNet],
    scorer: QualityScorer,
    sources: Optional[Sequence[str]] = None,
) -> list[SampleRecord]:
    """Enhance every input with the pretrained network and score the result."""
    model = _as_model(ckpt)
    sources = list(sources) if sources is not None else ["non-reference"] * len(inputs)
    if len(sources) != len(inputs):
        raise ShapeError("need one source tag per input")
    records = []
    for img, tag in zip(inputs, sources):
        img = as_image(img)
        pseudo = enhance(model, img)
        records.append(SampleRecord(img.copy(), pseudo, scorer.score(pseudo), tag))
    return records


def records_digest(records: Sequence[SampleRecord]) -> str:
    h = hashlib.sha256()
    for r in records:
        h.update(r.input.tobytes())
        h.update(r.pseudo_label.tobytes())
        h.update(repr(float(r.q_reference)).encode())
        h.update(r.source.encode())
    return h.hexdigest()


def should_stop(batch_mean_q, desired: float, window: int = 10) -> bool:
    """True iff the trailing ``window``-step mean of ``batch_mean_q`` reaches ``desired``.

    A scalar is taken as an already-averaged window mean. A sequence only
    counts once it holds a full window. ``desired = -inf`` disables the rule.
    """
    if desired == -math.inf:
        return False
    if np.ndim(batch_mean_q) == 0:
        return float(batch_mean_q) >= desired
    values = list(batch_mean_q)
    if len(values) < window:
        return False
    return float(np.mean(values[-window:])) >= desired


class StopRule:
    def __init__(self, desired: float = -math.inf, window: int = 10):
        self.desired = desired
        self.window = window
        self.history = deque(maxlen=window)

    def update(self, batch_mean_q: float) -> bool:
        self.history.append(float(batch_mean_q))
        return should_stop(list(self.history), self.desired, self.window)


def _finetune_batch(records, config: FinetuneConfig, step: int, factor: int):
    rng = np.random.default_rng([config.seed, step])
    n = len(records)
    idx = rng.choice(n, size=config.batch_size, replace=config.batch_size > n)
    xs, ys, qs = [], [], []
    for i in idx:
        pair = ImagePair(np.asarray(records[i].input), np.asarray(records[i].pseudo_label))
        if config.augment:
            h, v = (bool(b) for b in rng.integers(0, 2, size=2))
            pair = ImagePair(flip(pair.input, h, v), flip(pair.target, h, v))
        if config.patch_size:
            pair = extract_patch(pair, config.patch_size, rng, factor)
        xs.append(pair.input)
        ys.append(pair.target)
        qs.append(records[i].q_reference)
    return _stack(xs), _stack(ys), torch.tensor(qs, dtype=torch.float32)


def finetune(
    records: Sequence[SampleRecord],
    ckpt: Union[Checkpoint, UIRNet],
    scorer: QualityScorer,
    config: FinetuneConfig,
    extractor: Optional[torch.nn.Module] = None,
    stop_after: Optional[int] = None,
    on_step: Optional[Callable[[dict], None]] = None,
) -> Checkpoint:
    """Optimize ``l1*L_pix + l2*L_perc - l3*(Q(pred) - Q_ref)`` on pseudo labels.

    The input network is copied, never modified. When ``ckpt`` is a
    fine-tune checkpoint, training resumes from its step and optimizer state.
    Stops at ``config.steps`` or as soon as the stop rule fires.
    """
    scorer.require_differentiable()
    if not records:
        raise ShapeError("fine-tuning needs at least one record")
    records = list(records)
    scorer.freeze()
    before = scorer.digest()
    resume = isinstance(ckpt, Checkpoint) and ckpt.kind == "finetune"
    model = copy.deepcopy(_as_model(ckpt))
    model.requires_grad_(True)
    factor = model.config.downsampling
    extractor = extractor if extractor is not None else make_extractor(config.extractor)
    weights = config.weights
    optimizer = make_optimizer(model, config.lr, config.weight_decay, (config.beta1, config.beta2))
    start = _restore(model, ckpt if resume else None, optimizer)
    end = config.steps if stop_after is None else min(config.steps, stop_after)
    rule = StopRule(config.desired_q, config.stop_window)
    model.train()

    rows, step = [], start
    while step < end:
        x, y, q_ref = _finetune_batch(records, config, step, factor)
        lr = cosine_lr(step, config.steps, config.lr, config.lr_min)
        _set_lr(optimizer, lr)
        optimizer.zero_grad(set_to_none=True)
        pred = model(x)
        q_pred = scorer(pred)
        parts = total_loss(pred, y, q_pred, q_ref, weights, extractor)
        if not torch.isfinite(parts.total):
            raise TrainingError(f"non-finite loss at step {step}", step=step)
        parts.total.backward()
        optimizer.step()
        row = {"step": step, **parts.as_floats(), "mean_q": float(q_pred.detach().mean()), "lr": lr}
        rows.append(row)
        if on_step is not None:
            on_step(row)
        step += 1
        if rule.update(row["mean_q"]):
            log.info("stop rule fired at step %d (window mean >= %g)", step, config.desired_q)
            break

    if scorer.digest() != before:
        raise TrainingError("scorer parameters changed during fine-tuning", step=step)
    return Checkpoint(model, optimizer.state_dict(), step, config_echo(config), "finetune", rows)


@torch.no_grad()
def mean_quality(model: UIRNet, images: Sequence[np.ndarray], scorer: QualityScorer) -> float:
    """Mean scorer output over the network's enhancements of ``images``."""
    return float(np.mean([scorer.score(enhance(model, img)) for img in images]))


def trailing_mean(values: Sequence[float], window: int) -> np.ndarray:
    """Mean of the last ``window`` values at every position (shorter at the start)."""
    values = np.asarray(values, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(1, len(values) + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def write_loss_log(rows: Sequence[dict], path, columns=FINETUNE_COLUMNS) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return path
