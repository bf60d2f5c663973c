"""Time-frequency front-end: STFT/iSTFT, dynamic range compression, real/imag packing.

Spectrograms are laid out time-major, ``(..., T, F)``, and real/imag features as
``(..., 2, T, F)`` with channel 0 the real part and channel 1 the imaginary part.
"""

from dataclasses import dataclass
from functools import lru_cache
from math import gcd

import numpy as np
import scipy.io.wavfile
import scipy.signal
import torch

from ._validation import (
    ConfigError,
    ShapeError,
    SignalLengthError,
    as_tensor,
    check_finite,
    check_positive,
    check_ri,
)

SAMPLE_RATE = 8000
DRC_BETA = 0.5

_WINDOWS = ("hann", "boxcar")


@dataclass(frozen=True)
class Waveform:
    """A mono signal and its sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ShapeError(f"Waveform must be mono (1-D), got shape {samples.shape}")
        check_finite(samples, "waveform")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    window_ms: float = 32.0
    hop_ms: float = 16.0
    fft_size: int = 256
    window_fn: str = "hann"
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        check_positive(self.window_ms, "window_ms")
        check_positive(self.hop_ms, "hop_ms")
        check_positive(self.fft_size, "fft_size")
        if self.window_fn not in _WINDOWS:
            raise ConfigError(f"window_fn must be one of {_WINDOWS}, got {self.window_fn!r}")
        if self.win_length > self.fft_size:
            raise ConfigError(
                f"window of {self.win_length} samples exceeds fft_size {self.fft_size}"
            )

    @property
    def win_length(self):
        return int(round(self.window_ms * self.sample_rate / 1000))

    @property
    def hop_length(self):
        return int(round(self.hop_ms * self.sample_rate / 1000))

    @property
    def n_bins(self):
        return self.fft_size // 2 + 1

    def n_frames(self, n_samples):
        """Frame count for a center-padded signal of ``n_samples``."""
        return 1 + n_samples // self.hop_length

    def check_cola(self):
        """Raise ConfigError unless the window/hop pair is constant-overlap-add."""
        _check_cola(self.window_fn, self.win_length, self.hop_length)


@lru_cache(maxsize=None)
def _check_cola(window_fn, win_length, hop_length):
    if hop_length <= 0 or win_length % hop_length:
        raise ConfigError(f"hop {hop_length} does not divide window {win_length}")
    win = scipy.signal.get_window(window_fn, win_length, fftbins=True)
    if not scipy.signal.check_COLA(win, win_length, win_length - hop_length):
        raise ConfigError(f"{window_fn} window of {win_length} with hop {hop_length} is not COLA")


def _window(cfg, dtype, device=None):
    if cfg.window_fn == "hann":
        return torch.hann_window(cfg.win_length, periodic=True, dtype=dtype, device=device)
    return torch.ones(cfg.win_length, dtype=dtype, device=device)


def stft(wave, cfg=StftConfig()):
    """Complex STFT of shape ``(..., T, F)`` with reflect center padding.

    ``wave`` may be a Waveform, array, or tensor of shape ``(..., N)``.
    """
    if isinstance(wave, Waveform):
        wave = wave.samples
    x = as_tensor(wave)
    if x.shape[-1] < cfg.win_length:
        raise SignalLengthError(
            f"signal of {x.shape[-1]} samples is shorter than one window ({cfg.win_length})"
        )
    lead = x.shape[:-1]
    flat = x.reshape(-1, x.shape[-1])
    spec = torch.stft(
        flat,
        n_fft=cfg.fft_size,
        hop_length=cfg.hop_length,
        win_length=cfg.win_length,
        window=_window(cfg, flat.dtype, flat.device),
        center=True,
        pad_mode="reflect",
        return_complex=True,
    )
    return spec.transpose(-1, -2).reshape(*lead, spec.shape[-1], spec.shape[-2])


def istft(spec, cfg=StftConfig(), length=None):
    """Inverse of :func:`stft`. Output length defaults to ``(T - 1) * hop``."""
    cfg.check_cola()
    if not torch.is_complex(spec):
        raise ShapeError("istft expects a complex spectrogram")
    if spec.shape[-1] != cfg.n_bins:
        raise ShapeError(f"expected {cfg.n_bins} frequency bins, got {spec.shape[-1]}")
    lead = spec.shape[:-2]
    n_frames = spec.shape[-2]
    if length is None:
        length = (n_frames - 1) * cfg.hop_length
    flat = spec.reshape(-1, n_frames, spec.shape[-1]).transpose(-1, -2)
    real_dtype = flat.real.dtype
    wave = torch.istft(
        flat,
        n_fft=cfg.fft_size,
        hop_length=cfg.hop_length,
        win_length=cfg.win_length,
        window=_window(cfg, real_dtype, flat.device),
        center=True,
        length=length,
    )
    return wave.reshape(*lead, length)


def _magnitude_power(spec, exponent):
    mag = spec.abs()
    nonzero = mag > 0
    safe = torch.where(nonzero, mag, torch.ones_like(mag))
    # 0 ** beta == 0 and the phase of zero is taken as 0.
    return torch.where(nonzero, spec * safe.pow(exponent - 1), torch.zeros_like(spec))


def drc_compress(spec, beta=DRC_BETA):
    """Raise magnitudes to ``beta`` while keeping the phase."""
    check_positive(beta, "beta")
    return _magnitude_power(spec, beta)


def drc_expand(spec, beta=DRC_BETA):
    """Inverse of :func:`drc_compress`."""
    check_positive(beta, "beta")
    return _magnitude_power(spec, 1.0 / beta)


def to_ri(spec):
    """Complex ``(..., T, F)`` -> real ``(..., 2, T, F)``."""
    return torch.stack((spec.real, spec.imag), dim=-3)


def from_ri(feature):
    """Real ``(..., 2, T, F)`` -> complex ``(..., T, F)``."""
    check_ri(feature)
    return torch.complex(feature.select(-3, 0), feature.select(-3, 1))


def read_wav(path, resample=False, sample_rate=SAMPLE_RATE):
    """Read a mono WAV file as a float Waveform in [-1, 1].

    Files at another rate are rejected unless ``resample`` is set.
    """
    rate, data = scipy.io.wavfile.read(path)
    if data.ndim != 1:
        raise ShapeError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max + 1)
    else:
        data = data.astype(np.float64)
    if rate != sample_rate:
        if not resample:
            raise ConfigError(f"{path}: sample rate {rate} Hz != {sample_rate} Hz (pass resample to convert)")
        g = gcd(rate, sample_rate)
        data = scipy.signal.resample_poly(data, sample_rate // g, rate // g)
    return Waveform(data, sample_rate)


def write_wav(path, wave, sample_rate=SAMPLE_RATE):
    """Write 16-bit PCM mono. Values outside [-1, 1] are clipped."""
    if isinstance(wave, Waveform):
        sample_rate = wave.sample_rate
        wave = wave.samples
    if isinstance(wave, torch.Tensor):
        wave = wave.detach().cpu().numpy()
    x = np.clip(np.asarray(wave, dtype=np.float64), -1.0, 1.0 - 1.0 / 32768)
    scipy.io.wavfile.write(path, sample_rate, np.round(x * 32768).astype(np.int16))
