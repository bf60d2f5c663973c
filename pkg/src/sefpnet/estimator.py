"""scikit-learn style wrapper so a trained enhancer composes with the wider ecosystem."""

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import ConfigError, check_pairs
from .backbone import ModelConfig
from .data import MixtureDataset, MixtureSample
from .dsp import Waveform
from .objectives import si_sdr
from .trainer import TrainConfig, Trainer


def _to_dataset(X, y):
    if isinstance(X, MixtureDataset):
        return X
    mixtures, enrollments, targets = check_pairs(X, y)
    if targets is None:
        raise ValueError("y (clean targets) is required unless X is a MixtureDataset")
    return MixtureDataset(
        MixtureSample(f"x{i:05d}", Waveform(m), Waveform(e), Waveform(t), "two_spk")
        for i, (m, e, t) in enumerate(zip(mixtures, enrollments, targets))
    )


class SEFPNetEnhancer(TransformerMixin, BaseEstimator):
    """Personalized speech enhancer.

    ``X`` is a sequence of ``(mixture, enrollment)`` waveform pairs (8 kHz, 1-D)
    and ``y`` the matching clean targets; a :class:`~sefpnet.data.MixtureDataset`
    may be passed as ``X`` instead. ``predict``/``transform`` return the enhanced
    waveforms and ``score`` the mean SI-SDR in dB.

    Parameters
    ----------
    variant : str
        Ablation variant tag, e.g. ``"SEF_PNet"`` or ``"CI_only"``.
    preset : {"miniature", "full"}
        Network size.
    base_lr, max_epochs, batch_size, clip_norm, seed, segment_s, max_steps
        Training settings, see :class:`~sefpnet.trainer.TrainConfig`.
    """

    def __init__(self, variant="SEF_PNet", preset="miniature", base_lr=5e-4, max_epochs=10, batch_size=8,
                 clip_norm=1.0, seed=0, segment_s=None, max_steps=None, device="cpu"):
        self.variant = variant
        self.preset = preset
        self.base_lr = base_lr
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.clip_norm = clip_norm
        self.seed = seed
        self.segment_s = segment_s
        self.max_steps = max_steps
        self.device = device

    def _configs(self):
        if self.preset not in ("miniature", "full"):
            raise ConfigError(f"preset must be 'miniature' or 'full', got {self.preset!r}")
        model_cfg = ModelConfig.miniature() if self.preset == "miniature" else ModelConfig()
        train_cfg = TrainConfig(
            base_lr=self.base_lr, max_epochs=self.max_epochs, batch_size=self.batch_size, clip_norm=self.clip_norm,
            seed=self.seed, variant=self.variant, segment_s=self.segment_s, max_steps=self.max_steps,
            late_decay_start=min(100, self.max_epochs),
        )
        return model_cfg, train_cfg

    def fit(self, X, y=None):
        dataset = _to_dataset(X, y)
        trainer = Trainer(*self._configs(), dataset, device=self.device)
        self.history_ = trainer.train()
        self.model_ = trainer.model.eval()
        self.n_params_ = sum(p.numel() for p in self.model_.parameters())
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        if isinstance(X, MixtureDataset):
            X = [(s.mixture.samples, s.enrollment.samples) for s in X]
        mixtures, enrollments, _ = check_pairs(X)
        p = next(self.model_.parameters())
        out = []
        with torch.no_grad():
            for m, e in zip(mixtures, enrollments):
                est = self.model_(torch.as_tensor(m, dtype=p.dtype), torch.as_tensor(e, dtype=p.dtype))
                out.append(est.double().cpu().numpy())
        return out

    def transform(self, X):
        return self.predict(X)

    def score(self, X, y=None):
        if isinstance(X, MixtureDataset):
            y = [s.target_ref.samples for s in X]
        estimates = self.predict(X)
        return float(np.mean([si_sdr(e, t) for e, t in zip(estimates, y)]))
