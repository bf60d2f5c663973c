"""Interactive speaker adaptation: context interaction plus iterative feature integration.

Inputs are DRC-compressed real/imag features of shape ``(B, 2, T, F)``. The
guidance produced here always has the noisy mixture's frame count.
"""

import torch
import torch.nn as nn

from ._validation import ConfigError, ShapeError, check_ri
from .lca import GlobalAttention, LocalAttention

ISA_K = 1 / 32


def _frames(x):
    # (B, 2, T, F) -> (B, T, 2F): real bins followed by imaginary bins
    b, c, t, f = x.shape
    return x.permute(0, 2, 1, 3).reshape(b, t, c * f)


def _unframes(v, f):
    b, t, _ = v.shape
    return v.reshape(b, t, 2, f).permute(0, 2, 1, 3)


def context_attention(noisy, enroll):
    """Row-stochastic attention ``softmax(Y E^T)`` over enrollment frames, ``(B, T_y, T_e)``."""
    check_ri(noisy, "noisy feature")
    check_ri(enroll, "enrollment feature")
    if noisy.dim() != 4 or enroll.dim() != 4:
        raise ShapeError("context interaction expects (B, 2, T, F) inputs")
    if noisy.shape[-1] != enroll.shape[-1]:
        raise ShapeError(f"frequency bins differ: {noisy.shape[-1]} vs {enroll.shape[-1]}")
    if noisy.shape[0] != enroll.shape[0]:
        raise ShapeError(f"batch sizes differ: {noisy.shape[0]} vs {enroll.shape[0]}")
    if enroll.shape[2] == 0:
        raise ShapeError("enrollment has no frames")
    scores = torch.bmm(_frames(noisy), _frames(enroll).transpose(1, 2))
    return torch.softmax(scores, dim=-1)


def context_interaction(noisy, enroll):
    """Noisy-adapted enrollment guidance ``softmax(Y E^T) E``, shaped like ``noisy``."""
    attn = context_attention(noisy, enroll)
    return _unframes(torch.bmm(attn, _frames(enroll)), enroll.shape[-1])


def broadcast_enrollment(enroll, n_frames):
    """Time-average the enrollment and tile it to ``n_frames`` frames."""
    check_ri(enroll, "enrollment feature")
    if n_frames <= 0:
        raise ConfigError(f"n_frames must be positive, got {n_frames}")
    if enroll.shape[-2] == 0:
        raise ShapeError("enrollment has no frames")
    mean = enroll.mean(dim=-2, keepdim=True)
    return mean.expand(*enroll.shape[:-2], n_frames, enroll.shape[-1])


def convex_blend(p, a, b):
    """``p * a + (1 - p) * b`` clamped to lie between ``a`` and ``b``.

    The clamp only matters at rounding level; it makes ``a == b`` return ``a``
    exactly and keeps the result inside the elementwise hull.
    """
    out = p * a + (1 - p) * b
    return torch.minimum(torch.maximum(out, torch.minimum(a, b)), torch.maximum(a, b))


class IFIRound(nn.Module):
    """One round of iterative feature integration."""

    def __init__(self, channels=2, k=ISA_K):
        super().__init__()
        self.ga = GlobalAttention(channels, k)
        self.la = LocalAttention(channels, k)

    def mask(self, x):
        return torch.sigmoid(self.ga(x) + self.la(x))

    def forward(self, e_ci, e_o, mask_input=None):
        if e_ci.shape != e_o.shape:
            raise ShapeError(f"shape mismatch {tuple(e_ci.shape)} vs {tuple(e_o.shape)}")
        if mask_input is None:
            mask_input = e_ci + e_o
        return convex_blend(self.mask(mask_input), e_ci, e_o)

    def reset_to_neutral(self):
        self.ga.reset_to_neutral()
        self.la.reset_to_neutral()


class ISA(nn.Module):
    """Context interaction followed by two untied IFI rounds.

    Round one masks ``E_ci + E_o'``; round two computes its mask from the
    round-one output and blends the original ``E_ci`` and ``E_o'`` again.
    With ``use_ifi=False`` only the context-interaction output is returned.
    """

    def __init__(self, use_ifi=True, k=ISA_K):
        super().__init__()
        self.use_ifi = use_ifi
        if use_ifi:
            self.round1 = IFIRound(2, k)
            self.round2 = IFIRound(2, k)

    def forward(self, noisy, enroll):
        e_ci = context_interaction(noisy, enroll)
        if not self.use_ifi:
            return e_ci
        e_o = broadcast_enrollment(enroll, noisy.shape[-2])
        e_mid = self.round1(e_ci, e_o)
        return self.round2(e_ci, e_o, mask_input=e_mid)
