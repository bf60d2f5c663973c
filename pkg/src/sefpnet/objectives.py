"""SI-SDR metric and loss, and evaluation reports with optional external scorers."""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from ._validation import ShapeError, SefpnetError, as_tensor

logger = logging.getLogger(__name__)

SI_SDR_CAP = 60.0


class UndefinedMetricError(SefpnetError, ValueError):
    """The reference signal is zero after mean removal."""


def _project(est, ref):
    if est.shape != ref.shape:
        raise ShapeError(f"estimate shape {tuple(est.shape)} != reference shape {tuple(ref.shape)}")
    est = est - est.mean(dim=-1, keepdim=True)
    ref = ref - ref.mean(dim=-1, keepdim=True)
    ref_energy = (ref * ref).sum(dim=-1, keepdim=True)
    if bool((ref_energy == 0).any()):
        raise UndefinedMetricError("SI-SDR is undefined for a zero (or constant) reference")
    scale = (est * ref).sum(dim=-1, keepdim=True) / ref_energy
    target = scale * ref
    return target, est - target


def si_sdr(est, ref, cap=SI_SDR_CAP):
    """Scale-invariant SDR in dB after mean removal, capped at ``cap``.

    Works on 1-D signals (returns a float) or batches ``(..., N)`` (returns an array).
    """
    est = as_tensor(est, torch.float64)
    ref = as_tensor(ref, torch.float64)
    with torch.no_grad():
        target, resid = _project(est, ref)
        t = (target * target).sum(dim=-1)
        r = (resid * resid).sum(dim=-1)
        capped = r <= t * 10 ** (-cap / 10)
        db = 10 * torch.log10(t / torch.where(capped, torch.ones_like(r), r))
        db = torch.where(capped, torch.full_like(db, cap), db)
    out = db.numpy()
    return float(out) if out.ndim == 0 else out


def si_sdr_loss(est, ref, reduction="mean"):
    """Negative SI-SDR in dB, uncapped and differentiable in ``est``."""
    target, resid = _project(est, ref)
    db = 10 * torch.log10((target * target).sum(dim=-1) / (resid * resid).sum(dim=-1))
    loss = -db
    if reduction == "mean":
        return loss.mean()
    if reduction == "none":
        return loss
    raise ValueError(f"unknown reduction {reduction!r}")


def _finite_or_none(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


@dataclass
class MetricsReport:
    """Per-utterance rows plus their mean SI-SDR."""

    condition: str = "all"
    rows: list = field(default_factory=list)

    @property
    def n(self):
        return len(self.rows)

    @property
    def si_sdr_mean(self):
        vals = [r["si_sdr"] for r in self.rows if r.get("si_sdr") is not None]
        return float(np.mean(vals)) if vals else None

    def column_mean(self, name):
        vals = [r[name] for r in self.rows if r.get(name) is not None]
        return float(np.mean(vals)) if vals else None

    def by_condition(self):
        out = {}
        for row in self.rows:
            out.setdefault(row.get("condition", self.condition), MetricsReport(row.get("condition", self.condition))).rows.append(row)
        return out

    def to_dict(self, extra=None):
        rows = []
        for r in self.rows:
            row = {"id": r["id"], "si_sdr": _finite_or_none(r.get("si_sdr"))}
            for k in ("pesq", "stoi"):
                if k in r:
                    row[k] = _finite_or_none(r[k])
            rows.append(row)
        d = {"condition": self.condition, "n": self.n, "si_sdr_mean": _finite_or_none(self.si_sdr_mean), "rows": rows}
        conditions = self.by_condition()
        if len(conditions) > 1:
            d["per_condition"] = {
                c: {"n": rep.n, "si_sdr_mean": _finite_or_none(rep.si_sdr_mean)} for c, rep in sorted(conditions.items())
            }
        if extra:
            d.update(extra)
        return d

    def to_json(self, extra=None, **kwargs):
        return json.dumps(self.to_dict(extra), **kwargs)


def _as_enhancer(model):
    if isinstance(model, torch.nn.Module):
        def run(mixture, enrollment):
            model.eval()
            p = next(model.parameters())
            as_t = lambda x: torch.as_tensor(x, dtype=p.dtype, device=p.device)  # noqa: E731
            with torch.no_grad():
                out = model(as_t(mixture), as_t(enrollment))
            return out.double().cpu().numpy()
        return run
    return model


def evaluate(model, dataset, hooks=None):
    """Score ``model`` on every sample of ``dataset`` in order.

    ``model`` is a :class:`torch.nn.Module` or any callable
    ``(mixture, enrollment) -> estimate`` on 1-D arrays. ``hooks`` maps a column
    name (e.g. ``"pesq"``) to ``fn(estimate, reference, sample_rate) -> float``;
    a failing hook leaves ``None`` in that row.
    """
    hooks = hooks or {}
    enhance = _as_enhancer(model)
    conditions = {s.condition for s in dataset}
    report = MetricsReport(conditions.pop() if len(conditions) == 1 else "all")
    for sample in dataset:
        ref = sample.target_ref.samples
        est = np.asarray(enhance(sample.mixture.samples, sample.enrollment.samples), dtype=np.float64)
        row = {"id": sample.id, "condition": sample.condition, "si_sdr": si_sdr(est, ref)}
        for name, fn in hooks.items():
            try:
                row[name] = float(fn(est, ref, sample.mixture.sample_rate))
            except Exception as exc:  # external scorers must not abort the run
                logger.warning("hook %s failed on %s: %s", name, sample.id, exc)
                row[name] = None
        report.rows.append(row)
    return report
