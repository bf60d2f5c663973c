import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sefpnet._validation import ShapeError
from sefpnet.data import MixtureDataset, make_synthetic_dataset
from sefpnet.objectives import SI_SDR_CAP, MetricsReport, UndefinedMetricError, evaluate, si_sdr, si_sdr_loss


def _sig(n, seed):
    return np.random.default_rng(seed).standard_normal(n)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 10_000))
def test_scale_invariance(alpha, seed):
    ref, est = _sig(800, seed), _sig(800, seed + 1) * 0.3 + _sig(800, seed)
    assert abs(si_sdr(alpha * est, ref) - si_sdr(est, ref)) < 1e-6
    assert abs(si_sdr(est, alpha * ref) - si_sdr(est, ref)) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_orthogonal_equal_power_noise_is_zero_db(seed):
    ref = _sig(4000, seed)
    ref -= ref.mean()
    noise = _sig(4000, seed + 100)
    noise -= noise.mean()
    noise -= noise @ ref / (ref @ ref) * ref
    noise *= np.linalg.norm(ref) / np.linalg.norm(noise)
    assert abs(si_sdr(ref + noise, ref)) < 1e-3


def test_known_ratio():
    ref = _sig(4000, 7)
    ref -= ref.mean()
    noise = _sig(4000, 8)
    noise -= noise.mean()
    noise -= noise @ ref / (ref @ ref) * ref
    noise *= np.linalg.norm(ref) / np.linalg.norm(noise) * 10 ** (-10 / 20)
    assert abs(si_sdr(ref + noise, ref) - 10.0) < 1e-9


def test_identity_hits_cap():
    ref = _sig(1000, 3)
    assert si_sdr(ref, ref) == SI_SDR_CAP
    assert si_sdr(2 * ref, ref) == SI_SDR_CAP
    assert si_sdr(ref, ref, cap=80) == 80


def test_dc_offset_ignored():
    ref, est = _sig(1000, 4), _sig(1000, 5) + _sig(1000, 4)
    assert abs(si_sdr(est + 3.0, ref - 1.0) - si_sdr(est, ref)) < 1e-9


def test_batched_matches_loop():
    ref = np.stack([_sig(500, s) for s in range(4)])
    est = ref + 0.5 * np.stack([_sig(500, s + 10) for s in range(4)])
    out = si_sdr(est, ref)
    assert out.shape == (4,)
    np.testing.assert_allclose(out, [si_sdr(e, r) for e, r in zip(est, ref)], atol=1e-12)


def test_errors():
    with pytest.raises(UndefinedMetricError):
        si_sdr(_sig(100, 0), np.zeros(100))
    with pytest.raises(UndefinedMetricError):
        si_sdr(_sig(100, 0), np.full(100, 2.0))
    with pytest.raises(ShapeError):
        si_sdr(_sig(100, 0), _sig(101, 1))
    with pytest.raises(ValueError):
        si_sdr_loss(torch.randn(10), torch.randn(10), reduction="sum")


def test_loss_is_negative_metric_and_uncapped():
    ref = torch.as_tensor(_sig(1000, 1))
    est = ref + 0.1 * torch.as_tensor(_sig(1000, 2))
    assert abs(float(si_sdr_loss(est, ref)) + si_sdr(est, ref)) < 1e-9
    near = ref + 1e-6 * torch.as_tensor(_sig(1000, 2))
    assert float(si_sdr_loss(near, ref)) < -SI_SDR_CAP
    per = si_sdr_loss(torch.stack([est, near]), torch.stack([ref, ref]), reduction="none")
    assert per.shape == (2,)


def test_loss_decreases_towards_reference():
    ref = torch.as_tensor(_sig(1000, 5))
    noise = torch.as_tensor(_sig(1000, 6))
    losses = [float(si_sdr_loss(ref + a * noise, ref)) for a in (2.0, 1.0, 0.5, 0.1)]
    assert losses == sorted(losses, reverse=True)


def test_loss_gradient(fd_errors):
    ref = torch.as_tensor(_sig(300, 9)).reshape(3, 100)
    est = (ref + 0.7 * torch.as_tensor(_sig(300, 10)).reshape(3, 100)).requires_grad_()
    errs = fd_errors(lambda: si_sdr_loss(est, ref), [est], n_directions=6)
    assert max(errs.values()) < 1e-5, errs


class _Identity(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.w = torch.nn.Parameter(torch.ones(()))

    def forward(self, noisy, enroll):
        return noisy * self.w


def test_evaluate_identity_model_gives_mixture_si_sdr():
    ds = make_synthetic_dataset(3, "two_spk", seed=0)
    report = evaluate(_Identity(), ds)
    expected = [si_sdr(s.mixture.samples, s.target_ref.samples) for s in ds]
    assert report.n == 3
    np.testing.assert_allclose([r["si_sdr"] for r in report.rows], expected, atol=1e-5)
    assert abs(report.si_sdr_mean - np.mean([r["si_sdr"] for r in report.rows])) < 1e-12
    assert report.condition == "two_spk"


def test_evaluate_callable_and_hooks():
    ds = make_synthetic_dataset(2, "two_spk_noise", seed=1)

    def bad_hook(est, ref, sr):
        raise RuntimeError("scorer unavailable")

    report = evaluate(lambda mix, enr: mix, ds, hooks={"pesq": bad_hook, "stoi": lambda e, r, sr: 0.5})
    d = json.loads(report.to_json())
    assert all(row["pesq"] is None and row["stoi"] == 0.5 for row in d["rows"])
    assert report.column_mean("stoi") == 0.5 and report.column_mean("pesq") is None


def test_empty_report_is_valid_json():
    report = evaluate(lambda mix, enr: mix, MixtureDataset())
    d = json.loads(report.to_json())
    assert d["n"] == 0 and d["si_sdr_mean"] is None and d["rows"] == []


def test_per_condition_breakdown():
    report = MetricsReport(
        "all",
        [
            {"id": "a", "condition": "two_spk", "si_sdr": 1.0},
            {"id": "b", "condition": "two_spk", "si_sdr": 3.0},
            {"id": "c", "condition": "one_spk_noise", "si_sdr": 5.0},
        ],
    )
    d = report.to_dict()
    assert d["per_condition"]["two_spk"] == {"n": 2, "si_sdr_mean": 2.0}
    assert d["si_sdr_mean"] == 3.0
