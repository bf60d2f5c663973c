"""Exception types and input validation helpers shared across the package."""

import numpy as np
import torch


class SefpnetError(Exception):
    """Base class for all package errors."""


class ConfigError(SefpnetError, ValueError):
    """Invalid configuration or parameter value."""


class ShapeError(SefpnetError, ValueError):
    """Tensor or array shape does not satisfy an operation's contract."""


class SignalLengthError(ShapeError):
    """Signal is too short for the requested transform."""


class CheckpointError(SefpnetError):
    """Checkpoint file is missing, corrupt, or of an unknown format version."""


class NonFiniteLossError(SefpnetError, FloatingPointError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, message, batch_ids=()):
        super().__init__(message)
        self.batch_ids = list(batch_ids)


def as_tensor(x, dtype=None):
    """Convert array-likes to a torch tensor without copying tensors."""
    if isinstance(x, torch.Tensor):
        return x if dtype is None else x.to(dtype)
    arr = np.asarray(x)
    if dtype is None:
        dtype = torch.float64 if arr.dtype == np.float64 else torch.float32
    return torch.as_tensor(arr, dtype=dtype)


def check_finite(x, name="input"):
    t = x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x))
    if not bool(torch.isfinite(t).all()):
        raise ValueError(f"{name} contains NaN or Inf values")
    return x


def check_positive(value, name):
    if not value > 0:
        raise ConfigError(f"{name} must be > 0, got {value!r}")
    return value


def check_waveform(x, name="waveform"):
    """Validate a mono waveform (1-D) or a batch of them (2-D)."""
    t = as_tensor(x)
    if t.dim() not in (1, 2):
        raise ShapeError(f"{name} must be 1-D or 2-D (batch, samples), got shape {tuple(t.shape)}")
    check_finite(t, name)
    return t


def check_ri(x, name="feature"):
    """Validate a real/imag feature with the channel axis at dim -3."""
    if x.dim() < 3 or x.shape[-3] != 2:
        raise ShapeError(f"{name} must have 2 channels (real, imag) at dim -3, got shape {tuple(x.shape)}")
    return x


def check_pairs(X, y=None):
    """Validate ``(mixture, enrollment)`` pairs and optional targets.

    Returns lists of 1-D float64 arrays ``(mixtures, enrollments, targets)``;
    ``targets`` is None when ``y`` is None.
    """
    if len(X) == 0:
        raise ShapeError("X must contain at least one (mixture, enrollment) pair")
    mixtures, enrollments = [], []
    for i, pair in enumerate(X):
        if len(pair) != 2:
            raise ShapeError(f"X[{i}] must be a (mixture, enrollment) pair")
        mix, enr = (np.asarray(a, dtype=np.float64) for a in pair)
        if mix.ndim != 1 or enr.ndim != 1:
            raise ShapeError(f"X[{i}] signals must be 1-D")
        check_finite(mix, f"X[{i}] mixture")
        check_finite(enr, f"X[{i}] enrollment")
        mixtures.append(mix)
        enrollments.append(enr)
    if y is None:
        return mixtures, enrollments, None
    if len(y) != len(X):
        raise ShapeError(f"X has {len(X)} pairs but y has {len(y)} targets")
    targets = []
    for i, (t, m) in enumerate(zip(y, mixtures)):
        t = np.asarray(t, dtype=np.float64)
        if t.shape != m.shape:
            raise ShapeError(f"y[{i}] has shape {t.shape}, mixture has {m.shape}")
        targets.append(check_finite(t, f"y[{i}]"))
    return mixtures, enrollments, targets
