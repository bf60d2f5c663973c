"""Mixture simulation and corpus ingestion.

Synthetic speakers stand in for real corpora at desk scale: each speaker is a
harmonic source with its own F0 band, formant envelope and syllable rhythm.
Mixtures follow the "minimum" convention (all components truncated to the
shortest one) and the first speaker is always the target.
"""

import csv
import hashlib
import os
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.signal

from ._validation import ConfigError, SefpnetError
from .dsp import SAMPLE_RATE, Waveform, read_wav, write_wav

CONDITIONS = ("one_spk_noise", "two_spk", "two_spk_noise")
TWO_SPEAKER = ("two_spk", "two_spk_noise")
WITH_NOISE = ("one_spk_noise", "two_spk_noise")

N_SPEAKER_SLOTS = 12
_F0_BASE = 85.0
_F0_SLOT = 15.0
_F0_WIDTH = 12.0

MANIFEST_COLUMNS = ("id", "mixture_path", "enrollment_path", "target_path", "condition")
OPTIONAL_COLUMNS = ("interferer_path", "interferer_enrollment_path")


class ManifestError(SefpnetError, ValueError):
    def __init__(self, message, row_ids=()):
        super().__init__(message)
        self.row_ids = list(row_ids)


@dataclass(frozen=True)
class SynthSpeaker:
    """Parameters of a synthetic talker.

    Speakers whose seeds fall in different slots (``seed % N_SPEAKER_SLOTS``)
    have disjoint F0 ranges.
    """

    seed: int
    f0_range: tuple
    formants: tuple
    tilt_db_per_octave: float
    syllable_rate: float

    @classmethod
    def from_seed(cls, seed):
        slot = seed % N_SPEAKER_SLOTS
        lo = _F0_BASE + _F0_SLOT * slot
        rng = np.random.default_rng([seed, 0x5EED])
        formants = (
            (rng.uniform(300, 800), rng.uniform(60, 120)),
            (rng.uniform(900, 2200), rng.uniform(80, 160)),
            (rng.uniform(2300, 3500), rng.uniform(120, 250)),
        )
        return cls(
            seed=seed,
            f0_range=(lo, lo + _F0_WIDTH),
            formants=formants,
            tilt_db_per_octave=float(rng.uniform(-9.0, -4.0)),
            syllable_rate=float(rng.uniform(3.0, 6.0)),
        )

    def envelope(self, freq):
        """Linear spectral envelope gain at ``freq`` Hz."""
        freq = np.maximum(freq, 1.0)
        gain = 10 ** (self.tilt_db_per_octave * np.log2(freq / 100.0) / 20)
        peaks = sum(np.exp(-0.5 * ((freq - fc) / bw) ** 2) for fc, bw in self.formants)
        return gain * (0.15 + peaks)


def synth_utterance(speaker, duration_s, seed, sample_rate=SAMPLE_RATE):
    """Deterministic harmonic utterance, peak-normalized to 0.5."""
    n = int(round(duration_s * sample_rate))
    if n <= 0:
        raise ConfigError(f"duration must be positive, got {duration_s}")
    rng = np.random.default_rng([speaker.seed, seed])
    t = np.arange(n) / sample_rate
    lo, hi = speaker.f0_range

    knots = np.arange(0.0, duration_s + 0.2, 0.2)
    f0 = np.interp(t, knots, rng.uniform(lo, hi, size=len(knots)))
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate

    nyquist = 0.48 * sample_rate
    wave = np.zeros(n)
    for h in range(1, int(nyquist // lo) + 1):
        fh = h * f0
        amp = np.where(fh < nyquist, speaker.envelope(fh), 0.0)
        wave += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))

    # syllable rhythm: half-wave rectified sinusoid with per-syllable gains
    rate = speaker.syllable_rate * rng.uniform(0.9, 1.1)
    syl_phase = 2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)
    gains = rng.uniform(0.4, 1.0, size=int(duration_s * rate) + 2)
    syl_index = np.floor((syl_phase - syl_phase[0]) / (2 * np.pi)).astype(int)
    am = np.maximum(np.sin(syl_phase), 0.0) ** 0.7 * gains[syl_index] + 0.05
    wave = wave * am + 0.002 * rng.standard_normal(n)
    return Waveform(0.5 * wave / np.max(np.abs(wave)), sample_rate)


def band_noise(n, seed, sample_rate=SAMPLE_RATE):
    """Band-limited white noise with a seed-dependent Butterworth band-pass."""
    rng = np.random.default_rng([seed, 0xA015E])
    lo = rng.uniform(50, 600)
    hi = rng.uniform(1500, 0.45 * sample_rate)
    sos = scipy.signal.butter(4, [lo, hi], btype="bandpass", fs=sample_rate, output="sos")
    noise = scipy.signal.sosfilt(sos, rng.standard_normal(n + 512))[512:]
    return Waveform(noise / np.max(np.abs(noise)) * 0.5, sample_rate)


@dataclass(frozen=True)
class SimConfig:
    """Simulation ranges. SNRs are in dB relative to the target; ``inf`` silences a component."""

    interferer_snr: tuple = (-5.0, 5.0)
    noise_snr: tuple = (0.0, 15.0)
    target_duration: tuple = (2.0, 3.0)
    interferer_duration: tuple = (2.0, 3.0)
    noise_duration: float = 3.5
    enrollment_duration: float = 3.0
    sample_rate: int = SAMPLE_RATE


@dataclass(frozen=True)
class MixtureSample:
    id: str
    mixture: Waveform
    enrollment: Waveform
    target_ref: Waveform
    condition: str
    interferer: Waveform = None
    noise: Waveform = None
    interferer_enrollment: Waveform = None
    meta: dict = field(default_factory=dict)


def _uniform(rng, bounds):
    lo, hi = bounds
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def _scale_to_snr(ref, comp, snr_db):
    if np.isinf(snr_db) and snr_db > 0:
        return np.zeros_like(comp)
    return comp * np.sqrt(np.sum(ref ** 2) / (np.sum(comp ** 2) * 10 ** (snr_db / 10)))


def realized_snr(ref, comp):
    """Energy ratio of ``ref`` to ``comp`` in dB."""
    return 10 * np.log10(np.sum(np.asarray(ref) ** 2) / np.sum(np.asarray(comp) ** 2))


def simulate_mixture(condition, target_spk, interferer_spk=None, noise_seed=None, snr_cfg=SimConfig(), seed=0, sample_id=None):
    """Simulate one mixture; the target is always the first speaker.

    An interferer is required exactly for two-speaker conditions and a noise seed
    exactly for noisy ones.
    """
    if condition not in CONDITIONS:
        raise ConfigError(f"unknown condition {condition!r}; expected one of {CONDITIONS}")
    if (interferer_spk is not None) != (condition in TWO_SPEAKER):
        raise ConfigError(f"condition {condition} {'requires' if condition in TWO_SPEAKER else 'forbids'} an interferer")
    if (noise_seed is not None) != (condition in WITH_NOISE):
        raise ConfigError(f"condition {condition} {'requires' if condition in WITH_NOISE else 'forbids'} a noise seed")
    cfg = snr_cfg
    sr = cfg.sample_rate
    rng = np.random.default_rng([seed, 0x3117])
    utt_seeds = rng.integers(0, 2**31, size=4)

    target = synth_utterance(target_spk, _uniform(rng, cfg.target_duration), int(utt_seeds[0]), sr).samples
    enrollment = synth_utterance(target_spk, cfg.enrollment_duration, int(utt_seeds[1]), sr)
    parts = {"target": target}
    meta = {"seed": seed, "target_speaker": target_spk.seed}
    interferer_enrollment = None
    if interferer_spk is not None:
        parts["interferer"] = synth_utterance(
            interferer_spk, _uniform(rng, cfg.interferer_duration), int(utt_seeds[2]), sr
        ).samples
        interferer_enrollment = synth_utterance(interferer_spk, cfg.enrollment_duration, int(utt_seeds[3]), sr)
        meta["interferer_speaker"] = interferer_spk.seed
    if noise_seed is not None:
        parts["noise"] = band_noise(int(round(cfg.noise_duration * sr)), noise_seed, sr).samples
        meta["noise_seed"] = noise_seed

    length = min(len(p) for p in parts.values())
    parts = {k: v[:length] for k, v in parts.items()}
    target = parts["target"]
    mixture = target.copy()
    scaled = {}
    if "interferer" in parts:
        meta["snr_interferer"] = _uniform(rng, cfg.interferer_snr)
        scaled["interferer"] = _scale_to_snr(target, parts["interferer"], meta["snr_interferer"])
        mixture = mixture + scaled["interferer"]
    if "noise" in parts:
        meta["snr_noise"] = _uniform(rng, cfg.noise_snr)
        scaled["noise"] = _scale_to_snr(target, parts["noise"], meta["snr_noise"])
        mixture = mixture + scaled["noise"]

    wrap = lambda x: None if x is None else Waveform(x, sr)  # noqa: E731
    return MixtureSample(
        id=sample_id if sample_id is not None else f"{condition}-{seed}",
        mixture=Waveform(mixture, sr),
        enrollment=enrollment,
        target_ref=Waveform(target, sr),
        condition=condition,
        interferer=wrap(scaled.get("interferer")),
        noise=wrap(scaled.get("noise")),
        interferer_enrollment=interferer_enrollment,
        meta=meta,
    )


class MixtureDataset(Sequence):
    """Ordered collection of :class:`MixtureSample`."""

    def __init__(self, samples=(), expanded=False, errors=()):
        self.samples = list(samples)
        self.expanded = expanded
        self.errors = list(errors)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return MixtureDataset(self.samples[index], self.expanded)
        return self.samples[index]

    def __len__(self):
        return len(self.samples)

    def content_hash(self):
        """SHA-256 over ids, conditions and waveform bytes, in order."""
        h = hashlib.sha256()
        for s in self.samples:
            h.update(f"{s.id}|{s.condition}|".encode())
            for w in (s.mixture, s.enrollment, s.target_ref):
                h.update(np.ascontiguousarray(w.samples).tobytes())
        return h.hexdigest()


def make_synthetic_dataset(n, condition="two_spk", seed=0, sim_cfg=SimConfig(), n_speakers=N_SPEAKER_SLOTS):
    """``n`` seeded mixtures drawn from ``n_speakers`` synthetic speakers."""
    if n_speakers < 2 and condition in TWO_SPEAKER:
        raise ConfigError("two-speaker conditions need at least two speakers")
    speakers = [SynthSpeaker.from_seed(s) for s in range(n_speakers)]
    rng = np.random.default_rng([seed, 0xDA7A])
    samples = []
    for i in range(n):
        tgt, itf = rng.choice(n_speakers, size=2, replace=False)
        mix_seed = int(rng.integers(0, 2**31))
        noise_seed = int(rng.integers(0, 2**31))
        samples.append(
            simulate_mixture(
                condition,
                speakers[tgt],
                speakers[itf] if condition in TWO_SPEAKER else None,
                noise_seed if condition in WITH_NOISE else None,
                sim_cfg,
                seed=mix_seed,
                sample_id=f"{condition}-{seed}-{i:05d}",
            )
        )
    return MixtureDataset(samples)


def expand_alternate_targets(dataset):
    """Double a two-speaker dataset by also treating each interferer as the target.

    Each sample is followed by its swapped twin. Applying this twice raises.
    """
    if getattr(dataset, "expanded", False):
        raise ConfigError("dataset has already been expanded with alternate targets")
    out = []
    for s in dataset:
        if s.condition not in TWO_SPEAKER:
            raise ConfigError(f"sample {s.id}: alternate targets need a two-speaker condition, got {s.condition}")
        if s.interferer is None or s.interferer_enrollment is None:
            raise ConfigError(f"sample {s.id}: interferer track and enrollment are required")
        meta = dict(s.meta)
        meta["target_speaker"], meta["interferer_speaker"] = s.meta.get("interferer_speaker"), s.meta.get("target_speaker")
        if "snr_interferer" in meta:
            meta["snr_interferer"] = -meta["snr_interferer"]
        meta["alternate_of"] = s.id
        swapped = replace(
            s,
            id=f"{s.id}-alt",
            target_ref=s.interferer,
            interferer=s.target_ref,
            enrollment=s.interferer_enrollment,
            interferer_enrollment=s.enrollment,
            meta=meta,
        )
        out += [s, swapped]
    return MixtureDataset(out, expanded=True)


def load_manifest(path, strict=True, resample=False):
    """Read a CSV manifest of real mixtures.

    Required columns: ``id, mixture_path, enrollment_path, target_path, condition``;
    optional ``interferer_path, interferer_enrollment_path``. Relative paths are
    resolved against the manifest's directory. With ``strict`` any bad row raises
    :class:`ManifestError`; otherwise bad rows are skipped and listed in
    ``dataset.errors`` as ``(row_id, message)``.
    """
    base = os.path.dirname(os.path.abspath(path))
    samples, errors = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ManifestError(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            row_id = row["id"] or f"line{lineno}"
            try:
                samples.append(_load_row(row, row_id, base, resample))
            except (OSError, ValueError) as exc:
                if strict:
                    raise ManifestError(f"row {row_id}: {exc}", [row_id]) from exc
                errors.append((row_id, str(exc)))
    return MixtureDataset(samples, errors=errors)


def _load_row(row, row_id, base, resample):
    if row["condition"] not in CONDITIONS:
        raise ValueError(f"unknown condition {row['condition']!r}")

    def wav(col):
        p = row.get(col) or ""
        if not p:
            return None
        full = p if os.path.isabs(p) else os.path.join(base, p)
        if not os.path.exists(full):
            raise FileNotFoundError(f"{col} file not found: {p}")
        return read_wav(full, resample=resample)

    mixture, target = wav("mixture_path"), wav("target_path")
    enrollment = wav("enrollment_path")
    if mixture is None or target is None or enrollment is None:
        raise ValueError("mixture_path, enrollment_path and target_path are required")
    n = min(len(mixture), len(target))
    return MixtureSample(
        id=row_id,
        mixture=Waveform(mixture.samples[:n], mixture.sample_rate),
        enrollment=enrollment,
        target_ref=Waveform(target.samples[:n], target.sample_rate),
        condition=row["condition"],
        interferer=wav("interferer_path"),
        interferer_enrollment=wav("interferer_enrollment_path"),
    )


def export_dataset(dataset, out_dir, manifest_name="manifest.csv"):
    """Write every sample as 16-bit WAV files plus a manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, manifest_name)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS + OPTIONAL_COLUMNS)
        writer.writeheader()
        for s in dataset:
            row = {"id": s.id, "condition": s.condition}
            for col, wave in (
                ("mixture_path", s.mixture),
                ("enrollment_path", s.enrollment),
                ("target_path", s.target_ref),
                ("interferer_path", s.interferer),
                ("interferer_enrollment_path", s.interferer_enrollment),
            ):
                if wave is None:
                    row[col] = ""
                    continue
                name = f"{s.id}_{col[:-5]}.wav"
                write_wav(os.path.join(out_dir, name), wave)
                row[col] = name
            writer.writerow(row)
    return path
