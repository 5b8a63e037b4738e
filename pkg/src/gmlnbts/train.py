"""Loss, optimizer, learning-rate schedule, and the training loop."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .errors import DataError, SpecError
from .nn import Module
from .tensor import Tensor, exp, log_softmax, mul, no_grad, tmean, tsum
from .volume_io import MODALITIES, Study


@dataclass(frozen=True)
class LossConfig:
    dice_weight: float = 1.0
    ce_weight: float = 1.0
    dice_smooth: float = 1e-5

    def __post_init__(self):
        if self.dice_weight < 0 or self.ce_weight < 0:
            raise SpecError("loss weights must be non-negative")
        if self.dice_weight == 0 and self.ce_weight == 0:
            raise SpecError("at least one loss term must have positive weight")


def dice_ce_loss(logits: Tensor, labels: np.ndarray, cfg: LossConfig | None = None):
    """Equally weighted soft Dice + cross-entropy over class logits.

    logits: (B, C, D, H, W); labels: (B, D, H, W) integers in [0, C).
    Returns (scalar loss Tensor, parts dict with float summaries).
    """
    cfg = cfg or LossConfig()
    n_classes = logits.shape[1]
    if labels.shape != (logits.shape[0], *logits.shape[2:]):
        raise DataError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    bad = (labels < 0) | (labels >= n_classes)
    if bad.any():
        where = tuple(int(v) for v in np.argwhere(bad)[0])
        raise DataError(f"label {int(labels[where])} out of range at voxel {where}")

    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    np.put_along_axis(onehot, labels[:, None].astype(np.int64), 1.0, axis=1)
    onehot_t = Tensor(onehot)

    logp = log_softmax(logits, axis=1)
    probs = exp(logp)

    eps = cfg.dice_smooth
    inter = tsum(mul(probs, onehot_t), axis=(0, 2, 3, 4))
    psum = tsum(probs, axis=(0, 2, 3, 4))
    gsum = Tensor(onehot.sum(axis=(0, 2, 3, 4)))
    dice_per_class = (inter * 2.0 + eps) / (psum + gsum + eps)
    dice_term = 1.0 - tmean(dice_per_class)

    ce_term = -tmean(tsum(mul(logp, onehot_t), axis=1))

    total = dice_term * cfg.dice_weight + ce_term * cfg.ce_weight
    parts = {
        "dice": float(dice_term.data),
        "ce": float(ce_term.data),
        "per_class_dice": [float(v) for v in dice_per_class.data],
    }
    return total, parts


@dataclass(frozen=True)
class LrSchedule:
    warmup_start: float = 4e-6
    warmup_end: float = 4e-4
    warmup_steps: int = 20
    total_steps: int = 200
    power: float = 0.9

    def __post_init__(self):
        if self.warmup_start >= self.warmup_end:
            raise SpecError("warmup must increase the learning rate")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise SpecError("warmup_steps must be shorter than total_steps")


def lr_at(step: int, sched: LrSchedule) -> float:
    """Linear warmup then polynomial decay to zero; clamps beyond the end."""
    if step < 0:
        raise SpecError("step must be non-negative")
    w = sched.warmup_steps
    if step < w:
        return sched.warmup_start + (sched.warmup_end - sched.warmup_start) * step / w
    step = min(step, sched.total_steps)
    frac = (step - w) / (sched.total_steps - w)
    return sched.warmup_end * (1.0 - frac) ** sched.power


class AdamW:
    """Decoupled weight decay Adam; deterministic given state and inputs."""

    def __init__(self, model: Module, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = list(model.named_parameters())
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self, lr: float) -> bool:
        """Apply one update; returns False (no mutation) on non-finite gradients."""
        grads = {}
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                return False
            grads[name] = g
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** t
        bc2 = 1.0 - b2 ** t
        for name, p in self.params:
            g = grads[name]
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return True

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"step": np.array([self.step_count], dtype=np.float32)}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays["step"][0])
        for name in self.m:
            self.m[name] = arrays[f"m.{name}"].reshape(self.m[name].shape).astype(self.m[name].dtype)
            self.v[name] = arrays[f"v.{name}"].reshape(self.v[name].shape).astype(self.v[name].dtype)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200
    batch_size: int = 2
    seed: int = 0
    checkpoint_every: int = 50
    warmup_frac: float = 0.1
    peak_lr: float = 4e-4
    start_lr: float = 4e-6
    poly_power: float = 0.9
    constant_lr: float | None = None
    flip_augment: bool = False
    loss: LossConfig = field(default_factory=LossConfig)

    def schedule(self) -> LrSchedule:
        warmup = max(1, int(self.steps * self.warmup_frac))
        return LrSchedule(self.start_lr, self.peak_lr, warmup, self.steps, self.poly_power)


@dataclass
class TrainResult:
    history: list[dict]
    checkpoint_path: str | None
    aborted: bool
    final_step: int


def study_input(study: Study, dtype=np.float32) -> np.ndarray:
    """Stack the four modalities in canonical order into (4, D, H, W)."""
    return np.stack([study.modalities[m] for m in MODALITIES]).astype(dtype)


def batch_from_studies(studies: list[Study], indices, rng: np.random.Generator | None = None,
                       flip: bool = False, dtype=np.float32):
    xs, ys = [], []
    for i in indices:
        s = studies[i]
        vol = study_input(s, dtype)
        lab = s.gt_labels.astype(np.int64)
        if flip and rng is not None:
            for axis in range(3):
                if rng.random() < 0.5:
                    vol = np.flip(vol, axis=axis + 1)
                    lab = np.flip(lab, axis=axis)
        xs.append(np.ascontiguousarray(vol))
        ys.append(np.ascontiguousarray(lab))
    return np.stack(xs), np.stack(ys)


def segment_volume(model: Module, volume: np.ndarray) -> np.ndarray:
    """Argmax class labels for one stacked study volume (4, D, H, W)."""
    was_training = model.training
    model.eval()
    with no_grad():
        logits = model(Tensor(volume[None].astype(model.dtype)))
    if was_training:
        model.train()
    return np.argmax(logits.data[0], axis=0).astype(np.uint8)


def _step_rng(seed: int, step: int) -> np.random.Generator:
    # Counter-based streams keep resumed runs bitwise identical to
    # uninterrupted ones: the stream depends only on (seed, step).
    return np.random.default_rng(np.random.SeedSequence((seed, step)))


def train(model: Module, studies: list[Study], cfg: TrainConfig,
          out_dir: str | os.PathLike | None = None,
          optimizer: AdamW | None = None,
          start_step: int = 0,
          stop_step: int | None = None,
          log_name: str = "metrics.csv") -> TrainResult:
    """Seeded training loop with periodic checkpoints and a metrics log.

    Resuming: keep the same ``cfg`` (the schedule spans cfg.steps), pass
    the optimizer restored from the sibling state file, and the step to
    continue from; per-step RNG streams make the continuation identical
    to a run that never stopped. ``stop_step`` halts early without
    shortening the schedule.
    """
    if not studies:
        raise DataError("training requires a non-empty dataset")
    for s in studies:
        if s.gt_labels is None:
            raise DataError(f"study {s.id} has no labels to train on")

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    opt = optimizer or AdamW(model)
    sched = cfg.schedule()
    history: list[dict] = []
    log_f = open(out / log_name, "a", encoding="utf-8") if out is not None else None
    ckpt_path = None
    aborted = False
    model.train()
    end_step = cfg.steps if stop_step is None else min(stop_step, cfg.steps)
    try:
        step = start_step
        for step in range(start_step, end_step):
            rng = _step_rng(cfg.seed, step)
            idx = rng.integers(0, len(studies), size=cfg.batch_size)
            x, labels = batch_from_studies(studies, idx, rng, cfg.flip_augment, dtype=model.dtype)

            lr = cfg.constant_lr if cfg.constant_lr is not None else lr_at(step, sched)
            model.zero_grad()
            logits = model(Tensor(x))
            loss, parts = dice_ce_loss(logits, labels, cfg.loss)
            total = float(loss.data)
            if not np.isfinite(total):
                aborted = True
                break
            loss.backward()
            if not opt.step(lr):
                aborted = True
                break

            row = {"step": step, "lr": lr, "loss_total": total,
                   "loss_dice": parts["dice"], "loss_ce": parts["ce"]}
            history.append(row)
            if log_f is not None:
                log_f.write(f"{step},{lr!r},{total!r},{parts['dice']!r},{parts['ce']!r}\n")
                log_f.flush()

            done = step + 1
            if out is not None and (done % cfg.checkpoint_every == 0 or done == end_step):
                ckpt_path = str(out / f"checkpoint-{done:06d}.vckp")
                ckpt.save_model(ckpt_path, model)
                ckpt.save_arrays(ckpt_path + ".opt", opt.state_arrays(), model.version)
        final = step if aborted else end_step
    finally:
        if log_f is not None:
            log_f.close()
    return TrainResult(history, ckpt_path, aborted, final)
