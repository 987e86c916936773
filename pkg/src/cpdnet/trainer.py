"""Adam training loop with a step learning-rate schedule and checkpointing."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from itertools import islice
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt_io
from .data import Sample, sample_patches
from .evaluation import compute_curve, ods_ois
from .losses import HflConfig, get_loss
from .model import CpdNetModel
from .tensor import Parameter, Tensor, no_grad

log = logging.getLogger(__name__)

LOSS_CHOICES = ("HFL", "WCE")


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-4
    epochs: int = 25
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 5
    weight_decay: float = 5e-4
    batch: int = 8
    patch: int = 320
    seed: int = 0
    loss: str = "HFL"
    hfl: HflConfig = field(default_factory=HflConfig)
    steps_per_epoch: int | None = None
    decoupled_weight_decay: bool = True
    probe_images: int = 8
    probe_tolerance: float = 0.0075
    divergence_threshold: float = 1e4

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        for name in ("lr0", "lr_decay_factor", "batch", "patch", "lr_decay_every", "divergence_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.patch % 8:
            raise ValueError(f"patch must be divisible by 8, got {self.patch}")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")
        if self.loss.upper() not in LOSS_CHOICES:
            raise ValueError(f"loss must be one of {LOSS_CHOICES}, got {self.loss!r}")
        if self.probe_images < 0:
            raise ValueError("probe_images must be >= 0")


def lr_at(epoch: int, config: TrainConfig) -> float:
    """``lr0 * factor ** floor(epoch / every)``, computed in decimal so decades come out exact."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    k = epoch // config.lr_decay_every
    return float(Decimal(repr(config.lr0)) * Decimal(repr(config.lr_decay_factor)) ** k)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint: Path | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint


class Adam:
    """Adam with bias correction and (by default) decoupled weight decay."""

    def __init__(
        self,
        params: Sequence[Parameter],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        decoupled: bool = True,
    ):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.decoupled = decoupled
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> bool:
        """Apply one update; returns False (state untouched) on a non-finite gradient."""
        grads = []
        for p in self.params:
            if p.grad is None:
                raise ValueError(f"parameter {getattr(p, 'name', '?')} has no gradient")
            if not np.all(np.isfinite(p.grad)):
                log.warning("non-finite gradient in %s; step skipped", getattr(p, "name", "?"))
                return False
            grads.append(p.grad)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            dt = p.data.dtype.type
            if self.weight_decay and not self.decoupled:
                g = g + dt(self.weight_decay) * p.data
            m *= dt(b1)
            m += dt(1.0 - b1) * g
            v *= dt(b2)
            v += dt(1.0 - b2) * (g * g)
            data = p.data
            if self.weight_decay and self.decoupled:
                data = data - dt(lr * self.weight_decay) * data
            m_hat = m / dt(c1)
            v_hat = v / dt(c2)
            p.data = (data - dt(lr) * m_hat / (np.sqrt(v_hat) + dt(self.eps))).astype(p.data.dtype)
        return True

    def state_dict(self, names: Sequence[str]) -> dict[str, np.ndarray]:
        out = {}
        for name, m, v in zip(names, self.m, self.v):
            out[f"m.{name}"] = m
            out[f"v.{name}"] = v
        return out

    def load_state_dict(self, names: Sequence[str], state: dict[str, np.ndarray], t: int) -> None:
        for i, name in enumerate(names):
            self.m[i] = np.array(state[f"m.{name}"], dtype=self.params[i].dtype, copy=True)
            self.v[i] = np.array(state[f"v.{name}"], dtype=self.params[i].dtype, copy=True)
        self.t = int(t)


def adam_step(params: Sequence[Parameter], optimizer: Adam, lr: float) -> bool:
    return optimizer.step(lr)


def predict_full(model: CpdNetModel, image: np.ndarray) -> np.ndarray:
    """Single forward over a whole H x W x 3 image, reflect-padded to a multiple of 8."""
    h, w = image.shape[:2]
    ph, pw = (-h) % 8, (-w) % 8
    x = np.pad(image, ((0, ph), (0, pw), (0, 0)), mode="reflect") if (ph or pw) else image
    model.eval()
    with no_grad():
        out = model(Tensor(np.ascontiguousarray(x.transpose(2, 0, 1)[None], dtype=np.float32))).data
    return out[0, 0, :h, :w].astype(np.float64)


def probe_ods(model: CpdNetModel, samples: Sequence[Sample], n: int, tolerance: float) -> float:
    """S-Eval ODS of full-image predictions on the first ``n`` samples."""
    subset = list(samples[:n])
    if not subset:
        return float("nan")
    preds = [np.clip(predict_full(model, s.image), 0.0, 1.0) for s in subset]
    curve = compute_curve(preds, [s.ground_truth() for s in subset], "S", tolerance)
    return ods_ois(curve)[0]


@dataclass
class TrainResult:
    model: CpdNetModel
    losses: list[float]
    probe: list[float]
    steps: int
    epochs_done: int
    skipped_steps: int = 0
    checkpoints: list[Path] = field(default_factory=list)


def _config_record(config: TrainConfig) -> dict:
    d = asdict(config)
    d["hfl"] = asdict(config.hfl)
    return d


def checkpoint_name(epoch: int) -> str:
    return f"ckpt_epoch{epoch}"


def train(
    model: CpdNetModel,
    samples: Sequence[Sample],
    config: TrainConfig,
    out_dir=None,
    resume_from=None,
    probe: bool = True,
) -> TrainResult:
    """Run the optimization loop.

    An epoch is ``steps_per_epoch`` batches (default: one pass over the
    samples). The learning rate is ``lr_at(epoch)``. With ``out_dir`` set a
    checkpoint ``ckpt_epoch<k>`` is written after every epoch and each step
    appends ``step epoch lr loss`` to ``metrics.log``.
    """
    if not samples:
        raise ValueError("training set is empty")
    loss_fn = get_loss(config.loss)
    steps_per_epoch = config.steps_per_epoch or math.ceil(len(samples) / config.batch)
    names = [n for n, _ in model.named_parameters()]
    params = model.parameters()
    opt = Adam(params, weight_decay=config.weight_decay, decoupled=config.decoupled_weight_decay)
    start_epoch = 0
    step = 0
    best = float("nan")
    if resume_from is not None:
        state = ckpt_io.load_checkpoint(resume_from)
        model.load_state_dict({k: v for k, v in state.tensors.items() if not k.startswith("optim.")})
        opt.load_state_dict(names, {k[6:]: v for k, v in state.tensors.items() if k.startswith("optim.")}, state.extra["adam_t"])
        start_epoch = int(state.extra["epoch"]) + 1
        step = int(state.extra["step"])
        best = float(state.extra.get("best_ods", float("nan")))
    out = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_file = open(out / "metrics.log", "a" if resume_from is not None else "w")

    stream = islice(sample_patches(samples, config.patch, config.batch, config.seed), step, None)
    result = TrainResult(model, [], [], step, start_epoch)

    def save(name: str, epoch: int) -> Path:
        path = out / name
        extra = {
            "epoch": epoch,
            "step": step,
            "adam_t": opt.t,
            "lr": lr_at(min(epoch, config.epochs - 1), config),
            "best_ods": best,
            "train_config": _config_record(config),
        }
        ckpt_io.save_model(path, model, extra, opt.state_dict(names))
        return path

    try:
        for epoch in range(start_epoch, config.epochs):
            lr = lr_at(epoch, config)
            model.train()
            for _ in range(steps_per_epoch):
                images, labels = next(stream)
                model.zero_grad()
                pred = model(Tensor(images))
                loss = loss_fn(pred, labels, config.hfl)
                value = float(loss.data)
                step += 1
                if not math.isfinite(value) or value > config.divergence_threshold:
                    diag = save("ckpt_diverged", epoch) if out is not None else None
                    raise TrainingDiverged(f"loss {value!r} at step {step} (epoch {epoch}) exceeds the divergence guard", diag)
                loss.backward()
                if not opt.step(lr):
                    result.skipped_steps += 1
                    if log_file:
                        log_file.write(f"# step {step} skipped: non-finite gradient\n")
                result.losses.append(value)
                if log_file:
                    log_file.write(f"{step} {epoch} {lr!r} {value!r}\n")
            if probe and config.probe_images:
                score = probe_ods(model, samples, config.probe_images, config.probe_tolerance)
                result.probe.append(score)
                if not best >= score:
                    best = score
                if log_file:
                    log_file.write(f"# epoch {epoch} probe_ods {score!r}\n")
            result.steps = step
            result.epochs_done = epoch + 1
            if out is not None:
                result.checkpoints.append(save(checkpoint_name(epoch), epoch))
            if log_file:
                log_file.flush()
    finally:
        if log_file:
            log_file.close()
    model.eval()
    return result
