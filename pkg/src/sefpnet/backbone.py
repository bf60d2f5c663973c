"""The SEF-PNet network: ISA front-end, LCA-equipped dense encoder, TCN bottleneck,
mirrored decoder with skips, pyramid block and output deconvolution.

The model maps (noisy, enrollment) waveforms to an enhanced waveform. Internally it
works on DRC-compressed real/imag spectra, ``(B, C, T, F)`` throughout the 2-D
stages and ``(B, C * F, T)`` in the TCN.
"""

import dataclasses
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from ._validation import ConfigError, ShapeError, SignalLengthError, check_waveform
from .dsp import DRC_BETA, StftConfig, drc_compress, drc_expand, from_ri, istft, stft, to_ri
from .isa import ISA, ISA_K
from .lca import ATTENTION_KINDS, LCA_K, make_attention

VARIANTS = {
    "CI_only": {"use_ifi": False, "attention": "none"},
    "CI_IFI": {"use_ifi": True, "attention": "none"},
    "SEF_PNet": {"use_ifi": True, "attention": "lca"},
    "LCA_variant": {"use_ifi": False, "attention": "lca"},
    "SE_variant": {"use_ifi": False, "attention": "se"},
    "CBAM_variant": {"use_ifi": False, "attention": "cbam"},
}


@dataclass(frozen=True)
class ModelConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    input_channels: int = 32
    encoder_channels: tuple = (32, 32, 64, 128, 256, 256)
    dense_growth: int = 8
    dense_depth: int = 4
    tcn_layers: int = 2
    tcn_blocks_per_layer: int = 10
    tcn_hidden: int = 64
    tcn_kernel: int = 3
    pyramid_scales: tuple = (2, 4, 8, 16)
    attention: str = "lca"
    use_ifi: bool = True
    lca_k: float = LCA_K
    isa_k: float = ISA_K
    beta: float = DRC_BETA

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(self.encoder_channels))
        object.__setattr__(self, "pyramid_scales", tuple(self.pyramid_scales))
        if isinstance(self.stft, dict):
            object.__setattr__(self, "stft", StftConfig(**self.stft))
        if not self.encoder_channels:
            raise ConfigError("encoder_channels must not be empty")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"attention must be one of {ATTENTION_KINDS}, got {self.attention!r}")
        for name in ("input_channels", "dense_growth", "tcn_layers", "tcn_hidden", "tcn_kernel"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.dense_depth < 0 or self.tcn_blocks_per_layer < 0:
            raise ConfigError("dense_depth and tcn_blocks_per_layer must be >= 0")
        if self.tcn_kernel % 2 == 0:
            raise ConfigError("tcn_kernel must be odd")

    @property
    def encoder_blocks(self):
        return len(self.encoder_channels)

    @property
    def decoder_blocks(self):
        return len(self.encoder_channels)

    def freq_schedule(self):
        """Frequency size entering each encoder block, plus the bottleneck size."""
        sizes = [self.stft.n_bins]
        for _ in self.encoder_channels:
            sizes.append((sizes[-1] - 1) // 2 + 1)
        return sizes

    @property
    def tcn_channels(self):
        return self.encoder_channels[-1] * self.freq_schedule()[-1]

    def with_variant(self, variant):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
        return dataclasses.replace(self, **VARIANTS[variant])

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        d["pyramid_scales"] = list(self.pyramid_scales)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "stft" in d and isinstance(d["stft"], dict):
            d["stft"] = StftConfig(**d["stft"])
        return cls(**d)

    @classmethod
    def miniature(cls, **overrides):
        """Two-block model on 33 frequency bins, used for fast checks and smoke training."""
        base = dict(
            stft=StftConfig(window_ms=8.0, hop_ms=4.0, fft_size=64),
            input_channels=8,
            encoder_channels=(8, 16),
            dense_growth=4,
            dense_depth=2,
            tcn_layers=1,
            tcn_blocks_per_layer=4,
            tcn_hidden=32,
            pyramid_scales=(2, 4),
        )
        base.update(overrides)
        return cls(**base)


class DenseBlock(nn.Module):
    """Growth-style dense stack: each layer sees the concatenation of all earlier outputs.

    Layer ``k`` is a 3x3 convolution dilated by ``2**k`` along time, producing
    ``growth`` channels. The block returns ``in_channels + depth * growth`` channels.
    """

    def __init__(self, in_channels, growth, depth):
        super().__init__()
        self.layers = nn.ModuleList()
        for k in range(depth):
            dil = 2 ** k
            self.layers.append(
                nn.Sequential(
                    nn.Conv2d(in_channels + k * growth, growth, (3, 3), padding=(dil, 1), dilation=(dil, 1)),
                    nn.BatchNorm2d(growth),
                    nn.PReLU(growth),
                )
            )
        self.out_channels = in_channels + depth * growth

    def forward(self, x):
        for layer in self.layers:
            x = torch.cat((x, layer(x)), dim=1)
        return x


class EncoderBlock(nn.Module):
    def __init__(self, in_channels, out_channels, growth, depth, attention="lca", k=LCA_K):
        super().__init__()
        self.dense = DenseBlock(in_channels, growth, depth)
        self.down = nn.Sequential(
            nn.Conv2d(self.dense.out_channels, out_channels, (3, 3), stride=(1, 2), padding=(1, 1)),
            nn.BatchNorm2d(out_channels),
            nn.PReLU(out_channels),
        )
        self.attention = make_attention(attention, out_channels, k)

    def forward(self, x):
        return self.attention(self.down(self.dense(x)))


class DecoderBlock(nn.Module):
    """Skip concatenation, dense stack, then frequency up-sampling by a transposed conv.

    ``out_freq`` is the frequency size recorded at the mirrored encoder input; an
    output padding of one bin restores even sizes.
    """

    def __init__(self, in_channels, out_channels, growth, depth, out_freq):
        super().__init__()
        self.dense = DenseBlock(2 * in_channels, growth, depth)
        self.out_freq = out_freq
        self.up = nn.Sequential(
            nn.ConvTranspose2d(
                self.dense.out_channels,
                out_channels,
                (3, 3),
                stride=(1, 2),
                padding=(1, 1),
                output_padding=(0, 1 - out_freq % 2),
            ),
            nn.BatchNorm2d(out_channels),
            nn.PReLU(out_channels),
        )

    def forward(self, x, skip):
        if x.shape != skip.shape:
            raise ShapeError(f"decoder input {tuple(x.shape)} does not match skip {tuple(skip.shape)}")
        y = self.up(self.dense(torch.cat((x, skip), dim=1)))
        if y.shape[-1] != self.out_freq:
            raise ShapeError(f"decoder produced {y.shape[-1]} bins, expected {self.out_freq}")
        return y


class FrameLayerNorm(nn.LayerNorm):
    """LayerNorm over channels of a ``(B, C, T)`` tensor, independently per frame."""

    def forward(self, x):
        return super().forward(x.transpose(1, 2)).transpose(1, 2)


class TCNBlock(nn.Module):
    def __init__(self, channels, hidden, kernel, dilation):
        super().__init__()
        self.dilation = dilation
        self.body = nn.Sequential(
            nn.Conv1d(channels, hidden, 1),
            nn.PReLU(),
            FrameLayerNorm(hidden),
            nn.Conv1d(hidden, hidden, kernel, dilation=dilation, padding=dilation * (kernel - 1) // 2, groups=hidden),
            nn.PReLU(),
            FrameLayerNorm(hidden),
            nn.Conv1d(hidden, channels, 1),
        )

    def forward(self, x):
        return x + self.body(x)


class TCN(nn.Module):
    """Stacked layers of residual dilated blocks; dilation ``2**i`` within each layer."""

    def __init__(self, channels, hidden, layers, blocks_per_layer, kernel=3):
        super().__init__()
        self.kernel = kernel
        self.blocks = nn.ModuleList(
            TCNBlock(channels, hidden, kernel, 2 ** i) for _ in range(layers) for i in range(blocks_per_layer)
        )

    @property
    def receptive_half_width(self):
        """Frames on each side that can influence one output frame."""
        return sum(b.dilation * (self.kernel - 1) // 2 for b in self.blocks)

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x

    def zero_output_layers(self):
        for block in self.blocks:
            nn.init.zeros_(block.body[-1].weight)
            nn.init.zeros_(block.body[-1].bias)


class PyramidBlock(nn.Module):
    """Multi-scale average pooling branches, up-sampled and fused with the input."""

    def __init__(self, channels, scales=(2, 4, 8, 16)):
        super().__init__()
        self.scales = tuple(scales)
        self.branches = nn.ModuleList(nn.Conv2d(channels, channels, 1) for _ in self.scales)
        self.fuse = nn.Conv2d(channels * (len(self.scales) + 1), channels, 1)

    def forward(self, x):
        size = x.shape[-2:]
        outs = [x]
        for s, conv in zip(self.scales, self.branches):
            pooled = F.avg_pool2d(x, kernel_size=s, stride=s, ceil_mode=True)
            outs.append(F.interpolate(conv(pooled), size=size, mode="nearest"))
        return self.fuse(torch.cat(outs, dim=1))


class SEFPNet(nn.Module):
    """Speaker-encoder-free personalized enhancement network.

    ``forward(noisy, enroll)`` takes waveforms of shape ``(B, N)`` and ``(B, M)``
    (or unbatched 1-D) and returns the enhanced waveform with the noisy length.
    """

    def __init__(self, config=None):
        super().__init__()
        cfg = config or ModelConfig()
        self.config = cfg
        freqs = cfg.freq_schedule()
        chans = (cfg.input_channels,) + cfg.encoder_channels

        self.isa = ISA(use_ifi=cfg.use_ifi, k=cfg.isa_k)
        self.input_conv = nn.Conv2d(4, cfg.input_channels, 1)
        self.encoder = nn.ModuleList(
            EncoderBlock(chans[i], chans[i + 1], cfg.dense_growth, cfg.dense_depth, cfg.attention, cfg.lca_k)
            for i in range(cfg.encoder_blocks)
        )
        self.tcn = TCN(cfg.tcn_channels, cfg.tcn_hidden, cfg.tcn_layers, cfg.tcn_blocks_per_layer, cfg.tcn_kernel)
        self.decoder = nn.ModuleList(
            DecoderBlock(chans[i + 1], chans[i], cfg.dense_growth, cfg.dense_depth, freqs[i])
            for i in reversed(range(cfg.encoder_blocks))
        )
        self.pyramid = PyramidBlock(cfg.input_channels, cfg.pyramid_scales)
        self.output_conv = nn.ConvTranspose2d(cfg.input_channels, 2, (1, 3), stride=1, padding=(0, 1))

    def encode(self, x):
        """Input ``(B, 4, T, F)`` -> bottleneck and one skip per encoder block."""
        if x.dim() != 4 or x.shape[1] != 4 or x.shape[-1] != self.config.stft.n_bins:
            raise ShapeError(f"expected (B, 4, T, {self.config.stft.n_bins}), got {tuple(x.shape)}")
        x = self.input_conv(x)
        skips = []
        for block in self.encoder:
            x = block(x)
            skips.append(x)
        return x, skips

    def bottleneck(self, x):
        b, c, t, f = x.shape
        y = x.permute(0, 1, 3, 2).reshape(b, c * f, t)
        y = self.tcn(y)
        return y.reshape(b, c, f, t).permute(0, 1, 3, 2)

    def decode(self, x, skips):
        if len(skips) != len(self.decoder):
            raise ShapeError(f"expected {len(self.decoder)} skips, got {len(skips)}")
        for block, skip in zip(self.decoder, reversed(skips)):
            x = block(x, skip)
        return x

    def forward_features(self, x):
        """Mixture RI concatenated with guidance ``(B, 4, T, F)`` -> compressed RI estimate ``(B, 2, T, F)``."""
        z, skips = self.encode(x)
        y = self.decode(self.bottleneck(z), skips)
        return self.output_conv(self.pyramid(y))

    def analyze(self, wave):
        return to_ri(drc_compress(stft(wave, self.config.stft), self.config.beta))

    def guidance(self, noisy_ri, enroll_ri):
        return self.isa(noisy_ri, enroll_ri)

    def forward(self, noisy, enroll):
        noisy = check_waveform(noisy, "noisy")
        enroll = check_waveform(enroll, "enrollment")
        unbatched = noisy.dim() == 1
        if unbatched:
            noisy, enroll = noisy.unsqueeze(0), enroll.unsqueeze(0)
        if enroll.dim() == 1:
            enroll = enroll.unsqueeze(0).expand(noisy.shape[0], -1)
        p = next(self.parameters())
        noisy, enroll = noisy.to(p.device, p.dtype), enroll.to(p.device, p.dtype)
        if enroll.shape[-1] < self.config.stft.win_length:
            raise SignalLengthError(
                f"enrollment of {enroll.shape[-1]} samples is shorter than one STFT window"
            )
        n = noisy.shape[-1]
        y_ri = self.analyze(noisy)
        e_ri = self.analyze(enroll)
        est = self.forward_features(torch.cat((y_ri, self.guidance(y_ri, e_ri)), dim=1))
        wave = istft(drc_expand(from_ri(est), self.config.beta), self.config.stft, length=n)
        return wave[0] if unbatched else wave
