import cmath
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sefpnet._validation import ConfigError, ShapeError, SignalLengthError
from sefpnet.dsp import (
    StftConfig,
    Waveform,
    drc_compress,
    drc_expand,
    from_ri,
    istft,
    read_wav,
    stft,
    to_ri,
    write_wav,
)

CFG = StftConfig()


def test_default_config_matches_8khz_32ms():
    assert CFG.win_length == 256
    assert CFG.hop_length == 128
    assert CFG.n_bins == 129


def test_dc_signal_lands_in_bin_zero():
    spec = stft(np.ones(2048), CFG)
    mag = spec.abs()
    assert torch.all(mag.argmax(dim=-1) == 0)
    # away from the reflect-padded edges everything outside bin 0 and its
    # window-mainlobe neighbour is numerically zero
    assert float(mag[2:-2, 2:].max()) < 1e-9


def test_sine_peak_bin():
    t = np.arange(8000) / 8000
    spec = stft(np.sin(2 * np.pi * 1000 * t), CFG)
    # the first frame straddles the reflected edge, where a sine cancels itself
    assert torch.all(spec[1:].abs().argmax(dim=-1) == 32)


def test_frame_count_and_shape():
    spec = stft(np.zeros(8000), CFG)
    assert spec.shape == (1 + 8000 // 128, 129)
    assert CFG.n_frames(8000) == spec.shape[0]


def test_short_signal_rejected():
    with pytest.raises(SignalLengthError):
        stft(np.zeros(255), CFG)


def test_round_trip_random(rng):
    x = rng.standard_normal(8000)
    y = istft(stft(x, CFG), CFG, length=len(x)).numpy()
    assert np.max(np.abs(y - x)[256:-256]) < 1e-6


def test_round_trip_sine():
    t = np.arange(4000) / 8000
    x = 0.3 * np.sin(2 * np.pi * 440 * t)
    y = istft(stft(x, CFG), CFG, length=len(x)).numpy()
    assert np.max(np.abs(y - x)[256:-256]) < 1e-6


def test_istft_zero_and_default_length():
    spec = torch.zeros(10, 129, dtype=torch.complex128)
    y = istft(spec, CFG)
    assert y.shape == (9 * 128,)
    assert torch.all(y == 0)


def test_istft_rejects_non_cola():
    bad = StftConfig(window_ms=32, hop_ms=24, fft_size=256)
    with pytest.raises(ConfigError):
        istft(torch.zeros(4, 129, dtype=torch.complex128), bad)


def test_window_larger_than_fft_rejected():
    with pytest.raises(ConfigError):
        StftConfig(window_ms=64, fft_size=256)


def test_batched_stft_matches_single(rng):
    x = rng.standard_normal((3, 2000))
    batched = stft(x, CFG)
    for i in range(3):
        assert torch.equal(batched[i], stft(x[i], CFG))


def test_drc_examples():
    z = torch.tensor([4 * cmath.exp(1j * math.pi / 3)], dtype=torch.complex128)
    out = drc_compress(z, 0.5)
    assert abs(complex(out[0]) - 2 * cmath.exp(1j * math.pi / 3)) < 1e-12
    assert complex(drc_expand(torch.tensor([2 * cmath.exp(0.7j)]), 0.5)[0]) == pytest.approx(4 * cmath.exp(0.7j))
    zero = torch.zeros(3, dtype=torch.complex128)
    assert torch.equal(drc_compress(zero), zero)
    assert torch.equal(drc_expand(zero), zero)


@pytest.mark.parametrize("beta", [0, -0.5])
def test_drc_rejects_bad_beta(beta):
    with pytest.raises(ConfigError):
        drc_compress(torch.ones(2, dtype=torch.complex64), beta)
    with pytest.raises(ConfigError):
        drc_expand(torch.ones(2, dtype=torch.complex64), beta)


def test_drc_round_trip(rng):
    x = torch.tensor(rng.standard_normal((20, 129)) + 1j * rng.standard_normal((20, 129)))
    y = drc_expand(drc_compress(x, 0.5), 0.5)
    assert float(((y - x).abs() / x.abs()).max()) < 1e-6


complex_arrays = st.lists(
    st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=40
).map(lambda v: torch.tensor([complex(a, b) for a, b in v], dtype=torch.complex128))


@given(complex_arrays, st.floats(0.1, 2.0))
def test_drc_preserves_phase(x, beta):
    out = drc_compress(x, beta)
    nz = x.abs() > 1e-6
    diff = torch.angle(out[nz] * x[nz].conj())
    assert diff.numel() == 0 or float(diff.abs().max()) < 1e-9


@given(st.floats(1e-6, 1e3), st.floats(1e-6, 1e3), st.floats(0.1, 2.0))
def test_drc_monotone(a, b, beta):
    x = torch.tensor([complex(min(a, b), 0), complex(max(a, b), 0)], dtype=torch.complex128)
    m = drc_compress(x, beta).abs()
    if a != b:
        assert m[0] < m[1]


def test_ri_examples():
    f = to_ri(torch.tensor([[3 + 4j]]))
    assert f.shape == (2, 1, 1)
    assert f[0, 0, 0] == 3 and f[1, 0, 0] == 4
    imag_only = to_ri(torch.tensor([[1j, -2j]]))
    assert torch.all(imag_only[0] == 0)


def test_from_ri_rejects_wrong_channels():
    with pytest.raises(ShapeError):
        from_ri(torch.zeros(3, 4, 5))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_ri_bijection(t, f, seed):
    g = torch.Generator().manual_seed(seed)
    x = torch.complex(torch.randn(t, f, generator=g, dtype=torch.float64), torch.randn(t, f, generator=g, dtype=torch.float64))
    assert torch.equal(from_ri(to_ri(x)), x)
    r = torch.randn(2, t, f, generator=g)
    assert torch.equal(to_ri(from_ri(r)), r)


@settings(max_examples=25, deadline=None)
@given(st.integers(1024, 6000), st.integers(0, 2**31 - 1))
def test_cola_reconstruction_property(n, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, n)
    y = istft(stft(x, CFG), CFG, length=n).numpy()
    assert np.max(np.abs(y - x)[256:-256]) < 1e-6


def test_wav_round_trip(tmp_path, rng):
    x = 0.5 * rng.uniform(-1, 1, 800)
    path = tmp_path / "a.wav"
    write_wav(path, Waveform(x))
    w = read_wav(path)
    assert w.sample_rate == 8000
    assert np.max(np.abs(w.samples - x)) <= 1 / 32768


def test_wav_rate_mismatch(tmp_path):
    import scipy.io.wavfile

    path = tmp_path / "b.wav"
    scipy.io.wavfile.write(path, 16000, np.zeros(1600, dtype=np.int16))
    with pytest.raises(ConfigError):
        read_wav(path)
    assert len(read_wav(path, resample=True)) == 800


def test_waveform_rejects_nonfinite():
    with pytest.raises(ValueError):
        Waveform(np.array([0.0, np.nan]))
