"""Training loop, learning-rate schedule, gradient clipping and the ablation runner."""

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np
import torch

from ._validation import ConfigError, NonFiniteLossError
from .backbone import VARIANTS, ModelConfig, SEFPNet
from .checkpoint import load_checkpoint, restore_rng_state, save_checkpoint
from .complexity import count_parameters
from .objectives import evaluate, si_sdr, si_sdr_loss

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 5e-4
    max_epochs: int = 120
    clip_norm: float = 1.0
    batch_size: int = 8
    seed: int = 0
    variant: str = "SEF_PNet"
    lr_decay: float = 0.98
    lr_decay_every: int = 2
    late_decay_start: int = 100
    late_lr_decay: float = 0.9
    late_decay_mode: str = "every_two"
    segment_s: float = None
    max_steps: int = None
    eval_every: int = 1

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ConfigError("base_lr must be > 0")
        if not self.clip_norm > 0:
            raise ConfigError("clip_norm must be > 0")
        if self.max_epochs <= 0 or self.batch_size <= 0 or self.lr_decay_every <= 0:
            raise ConfigError("max_epochs, batch_size and lr_decay_every must be positive")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {sorted(VARIANTS)}, got {self.variant!r}")
        if self.late_decay_mode not in ("every_two", "once"):
            raise ConfigError("late_decay_mode must be 'every_two' or 'once'")

    def to_dict(self):
        return dataclasses.asdict(self)


def lr_at_epoch(epoch, cfg=TrainConfig()):
    """Staged step decay.

    ``base * lr_decay ** (epoch // 2)`` before ``late_decay_start``; afterwards the
    value reached at ``late_decay_start - 1`` is multiplied by ``late_lr_decay``
    every two epochs (``"every_two"``) or once (``"once"``).
    """
    if not 0 <= epoch < cfg.max_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {cfg.max_epochs})")
    if epoch < cfg.late_decay_start:
        return cfg.base_lr * cfg.lr_decay ** (epoch // cfg.lr_decay_every)
    lr = lr_at_epoch(cfg.late_decay_start - 1, cfg) if cfg.late_decay_start > 0 else cfg.base_lr
    if cfg.late_decay_mode == "once":
        return lr * cfg.late_lr_decay
    return lr * cfg.late_lr_decay ** ((epoch - cfg.late_decay_start) // cfg.lr_decay_every + 1)


def global_norm(grads):
    grads = [g.double() for g in grads if g is not None and g.numel()]
    if not grads:
        return 0.0
    # scale by the largest magnitude so huge gradients do not overflow when squared
    peak = max(float(g.abs().max()) for g in grads)
    if peak == 0 or not math.isfinite(peak):
        return peak
    return peak * math.sqrt(sum(float(((g / peak) ** 2).sum()) for g in grads))


def clip_gradients(grads, max_norm=1.0):
    """Rescale ``grads`` so their joint L2 norm is at most ``max_norm``.

    Returns ``(clipped, norm_before)``; the inputs are not modified.
    """
    norm = global_norm(grads)
    if norm <= max_norm:
        return [g for g in grads], norm
    scale = max_norm / norm
    clipped = [None if g is None else g * scale for g in grads]
    # low-precision rounding can leave the result a few ulps above max_norm
    eps = max((torch.finfo(g.dtype).eps for g in grads if g is not None and g.is_floating_point()), default=0.0)
    while global_norm(clipped) > max_norm:
        scale *= 1 - 4 * eps
        clipped = [None if g is None else g * scale for g in grads]
    return clipped, norm


def clip_grad_norm_(parameters, max_norm=1.0):
    """In-place :func:`clip_gradients` over the ``.grad`` of ``parameters``."""
    params = [p for p in parameters if p.grad is not None]
    clipped, norm = clip_gradients([p.grad for p in params], max_norm)
    for p, g in zip(params, clipped):
        p.grad = g
    return norm


def collate(samples, segment=None, rng=None):
    """Stack samples into ``(mixture, enrollment, target)`` tensors.

    Mixtures and targets are cut to the shortest in the batch (or to a random
    ``segment``-sample crop when all are long enough), enrollments likewise.
    """
    n = min(len(s.mixture) for s in samples)
    start = [0] * len(samples)
    if segment is not None and n > segment:
        rng = rng or np.random.default_rng(0)
        start = [int(rng.integers(0, len(s.mixture) - segment + 1)) for s in samples]
        n = segment
    m = min(len(s.enrollment) for s in samples)
    mix = np.stack([s.mixture.samples[o:o + n] for s, o in zip(samples, start)])
    tgt = np.stack([s.target_ref.samples[o:o + n] for s, o in zip(samples, start)])
    enr = np.stack([s.enrollment.samples[:m] for s in samples])
    as_t = lambda a: torch.as_tensor(a, dtype=torch.float32)  # noqa: E731
    return as_t(mix), as_t(enr), as_t(tgt)


class Trainer:
    """Owns a model, its optimizer and the epoch loop.

    Batches are drawn in a permutation seeded by ``(seed, epoch)``, so resuming from
    an epoch checkpoint reproduces an uninterrupted run.
    """

    def __init__(self, model_config, train_config, train_set, dev_set=None, run_dir=None, effective_config=None, device="cpu"):
        self.train_config = train_config
        self.model_config = model_config.with_variant(train_config.variant)
        self.train_set = train_set
        self.dev_set = dev_set
        self.run_dir = run_dir
        self.effective_config = effective_config
        torch.manual_seed(train_config.seed)
        np.random.seed(train_config.seed % 2**32)
        self.device = torch.device(device)
        self.model = SEFPNet(self.model_config).to(self.device)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=train_config.base_lr)
        self.epoch = 0
        self.step_count = 0
        self.log = []
        if run_dir:
            os.makedirs(run_dir, exist_ok=True)

    @classmethod
    def from_checkpoint(cls, path, train_set, dev_set=None, run_dir=None, train_config=None, device="cpu"):
        payload = load_checkpoint(path)
        cfg = train_config or TrainConfig(**payload["train_config"])
        trainer = cls(ModelConfig.from_dict(payload["model_config"]), cfg, train_set, dev_set, run_dir, device=device)
        trainer.model.load_state_dict(payload["state_dict"])
        trainer.optimizer.load_state_dict(payload["optimizer"])
        trainer.epoch = payload["epoch"]
        trainer.step_count = payload["step"]
        restore_rng_state(payload["rng"])
        return trainer

    @property
    def checkpoint_path(self):
        return os.path.join(self.run_dir, "checkpoint.pt") if self.run_dir else None

    @property
    def log_path(self):
        return os.path.join(self.run_dir, "train_log.jsonl") if self.run_dir else None

    def batches(self, epoch):
        cfg = self.train_config
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(self.train_set))
        crop_rng = np.random.default_rng([cfg.seed, epoch, 1])
        segment = None if cfg.segment_s is None else int(cfg.segment_s * self.model_config.stft.sample_rate)
        for i in range(0, len(order), cfg.batch_size):
            samples = [self.train_set[j] for j in order[i:i + cfg.batch_size]]
            yield [s.id for s in samples], collate(samples, segment, crop_rng)

    def train_step(self, batch, ids=()):
        mix, enr, tgt = (t.to(self.device) for t in batch)
        self.model.train()
        self.optimizer.zero_grad()
        loss = si_sdr_loss(self.model(mix, enr), tgt)
        if not torch.isfinite(loss):
            self._dump_failure(ids, loss.item())
            raise NonFiniteLossError(f"non-finite loss {loss.item()} at step {self.step_count}", ids)
        loss.backward()
        clip_grad_norm_(self.model.parameters(), self.train_config.clip_norm)
        self.optimizer.step()
        self.step_count += 1
        return loss.item()

    def _dump_failure(self, ids, loss):
        if self.run_dir:
            with open(os.path.join(self.run_dir, "nonfinite_batch.json"), "w") as fh:
                json.dump({"step": self.step_count, "epoch": self.epoch, "loss": repr(loss), "batch_ids": list(ids)}, fh)

    def dev_si_sdr(self):
        if not self.dev_set:
            return None
        return evaluate(self.model, self.dev_set).si_sdr_mean

    def _done(self):
        cap = self.train_config.max_steps
        return cap is not None and self.step_count >= cap

    def train(self):
        """Run until ``max_epochs`` (or ``max_steps``); returns the log records."""
        cfg = self.train_config
        while self.epoch < cfg.max_epochs and not self._done():
            lr = lr_at_epoch(self.epoch, cfg)
            for group in self.optimizer.param_groups:
                group["lr"] = lr
            losses = []
            for ids, batch in self.batches(self.epoch):
                losses.append(self.train_step(batch, ids))
                if self._done():
                    break
            last = self.epoch + 1 == cfg.max_epochs or self._done()
            dev = self.dev_si_sdr() if (last or (self.epoch + 1) % cfg.eval_every == 0) else None
            record = {
                "epoch": self.epoch,
                "step": self.step_count,
                "lr": lr,
                "loss": float(np.mean(losses)),
                "dev_si_sdr": dev,
            }
            self.log.append(record)
            logger.info("epoch %(epoch)d step %(step)d lr %(lr).3g loss %(loss).3f dev %(dev_si_sdr)s", record)
            if self.log_path:
                with open(self.log_path, "a") as fh:
                    fh.write(json.dumps(record) + "\n")
            self.epoch += 1
            if self.checkpoint_path:
                self.save(self.checkpoint_path)
        return self.log

    def save(self, path):
        extra = {"effective_config": self.effective_config} if self.effective_config else None
        return save_checkpoint(
            path, self.model, self.model_config, self.optimizer, self.epoch, self.step_count, self.train_config, extra
        )


def train(model_config, train_config, train_set, dev_set=None, run_dir=None):
    """Train from scratch; returns ``(trainer, log)``."""
    trainer = Trainer(model_config, train_config, train_set, dev_set, run_dir)
    return trainer, trainer.train()


def mixture_si_sdr(dataset):
    """Mean SI-SDR of the unprocessed mixtures against their targets."""
    vals = [si_sdr(s.mixture.samples, s.target_ref.samples) for s in dataset]
    return float(np.mean(vals)) if vals else None


def run_ablation(model_config, train_config, train_set, dev_set, variants=("CI_only", "CI_IFI", "SEF_PNet")):
    """Train and evaluate each variant under identical seeds and data.

    Returns a dict keyed by variant tag with dev SI-SDR, parameter count and MACs,
    plus the shared dataset hashes and the mixture baseline under ``"_meta"``.
    """
    table = {
        "_meta": {
            "train_hash": train_set.content_hash(),
            "dev_hash": dev_set.content_hash(),
            "mixture_si_sdr": mixture_si_sdr(dev_set),
        }
    }
    for variant in variants:
        cfg = dataclasses.replace(train_config, variant=variant)
        trainer, log = train(model_config, cfg, train_set, dev_set)
        params, macs = count_parameters(trainer.model_config)
        report = evaluate(trainer.model, dev_set)
        table[variant] = {
            "si_sdr": report.si_sdr_mean,
            "params": params,
            "macs": macs,
            "final_loss": log[-1]["loss"] if log else None,
        }
    return table
