"""Channel attention blocks: LCA (local + global context) and the SE / CBAM baselines.

All blocks take ``(B, C, T, F)`` feature maps and return a recalibrated map of the
same shape.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from ._validation import ConfigError, ShapeError

LCA_K = 4


def bottleneck_width(channels, k):
    """Hidden width of a pointwise bottleneck: ``max(1, floor(C / K))``.

    ``k < 1`` expands the channel count instead (``k=1/32`` gives ``32 * C``).
    """
    if k <= 0:
        raise ConfigError(f"reduction factor must be > 0, got {k}")
    return max(1, int(channels / k + 1e-9))


def _check_4d(x, channels):
    if x.dim() != 4 or x.shape[1] != channels:
        raise ShapeError(f"expected (B, {channels}, T, F), got {tuple(x.shape)}")


class _PointwiseStack(nn.Module):
    """PConv + BN + ReLU -> PConv + BN, no output activation."""

    def __init__(self, channels, k):
        super().__init__()
        self.channels = channels
        self.hidden = bottleneck_width(channels, k)
        self.conv1 = nn.Conv2d(channels, self.hidden, kernel_size=1, stride=1)
        self.bn1 = nn.BatchNorm2d(self.hidden)
        self.conv2 = nn.Conv2d(self.hidden, channels, kernel_size=1, stride=1)
        self.bn2 = nn.BatchNorm2d(channels)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        return self.bn2(self.conv2(x))

    def reset_to_neutral(self):
        """Zero the final affine so the stack outputs exactly zero."""
        nn.init.zeros_(self.bn2.weight)
        nn.init.zeros_(self.bn2.bias)


class GlobalAttention(_PointwiseStack):
    """Time-frequency average pool followed by the pointwise stack; returns ``(B, C, 1, 1)``."""

    def forward(self, x):
        _check_4d(x, self.channels)
        return super().forward(x.mean(dim=(2, 3), keepdim=True))


class LocalAttention(_PointwiseStack):
    """Pointwise stack at full resolution; returns ``(B, C, T, F)``."""

    def forward(self, x):
        _check_4d(x, self.channels)
        return super().forward(x)


class LCA(nn.Module):
    """Local-global context aggregation.

    The mask is ``sigmoid(LA(x) + GA(x))`` with the global term broadcast over
    time and frequency, and the output is ``x * mask``.
    """

    def __init__(self, channels, k=LCA_K):
        super().__init__()
        self.ga = GlobalAttention(channels, k)
        self.la = LocalAttention(channels, k)

    def mask(self, x):
        return torch.sigmoid(self.la(x) + self.ga(x))

    def forward(self, x):
        return x * self.mask(x)

    def reset_to_neutral(self):
        self.ga.reset_to_neutral()
        self.la.reset_to_neutral()


class SEBlock(nn.Module):
    """Squeeze-and-excitation: pooled bottleneck MLP -> sigmoid channel scale."""

    def __init__(self, channels, k=LCA_K):
        super().__init__()
        self.channels = channels
        hidden = bottleneck_width(channels, k)
        self.fc1 = nn.Conv2d(channels, hidden, kernel_size=1)
        self.fc2 = nn.Conv2d(hidden, channels, kernel_size=1)

    def mask(self, x):
        _check_4d(x, self.channels)
        s = x.mean(dim=(2, 3), keepdim=True)
        return torch.sigmoid(self.fc2(F.relu(self.fc1(s))))

    def forward(self, x):
        return x * self.mask(x)

    def reset_to_neutral(self):
        nn.init.zeros_(self.fc2.weight)
        nn.init.zeros_(self.fc2.bias)


class CBAM(nn.Module):
    """Convolutional block attention: channel attention, then spatial attention."""

    def __init__(self, channels, k=LCA_K, spatial_kernel=7):
        super().__init__()
        self.channels = channels
        hidden = bottleneck_width(channels, k)
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, kernel_size=1),
            nn.ReLU(),
            nn.Conv2d(hidden, channels, kernel_size=1),
        )
        self.spatial = nn.Conv2d(2, 1, kernel_size=spatial_kernel, padding=spatial_kernel // 2)

    def channel_mask(self, x):
        _check_4d(x, self.channels)
        avg = self.mlp(x.mean(dim=(2, 3), keepdim=True))
        mx = self.mlp(x.amax(dim=(2, 3), keepdim=True))
        return torch.sigmoid(avg + mx)

    def spatial_mask(self, x):
        pooled = torch.cat((x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)), dim=1)
        return torch.sigmoid(self.spatial(pooled))

    def forward(self, x):
        x = x * self.channel_mask(x)
        return x * self.spatial_mask(x)

    def reset_to_neutral(self):
        nn.init.zeros_(self.mlp[2].weight)
        nn.init.zeros_(self.mlp[2].bias)
        nn.init.zeros_(self.spatial.weight)
        nn.init.zeros_(self.spatial.bias)


ATTENTION_KINDS = ("none", "lca", "se", "cbam")


def make_attention(kind, channels, k=LCA_K):
    if kind == "lca":
        return LCA(channels, k)
    if kind == "se":
        return SEBlock(channels, k)
    if kind == "cbam":
        return CBAM(channels, k)
    if kind == "none":
        return nn.Identity()
    raise ConfigError(f"unknown attention kind {kind!r}; expected one of {ATTENTION_KINDS}")
