"""Analytic parameter and MAC accounting for :class:`~sefpnet.backbone.SEFPNet`.

Counts are derived from the configuration alone, layer by layer, without
building the network. MACs count multiply-accumulates of convolutions and the
context-interaction matrix products; normalization and activations are free.
"""

from dataclasses import dataclass

from .lca import bottleneck_width

# published size of the full network
REFERENCE_PARAMS = 6.08e6
REFERENCE_TOLERANCE = 0.15


@dataclass(frozen=True)
class Layer:
    name: str
    params: int
    macs: int


def conv_params(c_in, c_out, kernel=(1, 1), groups=1, bias=True):
    """Weights plus bias of a (transposed) convolution."""
    k = 1
    for s in kernel:
        k *= s
    return c_out * (c_in // groups) * k + (c_out if bias else 0)


def _conv(name, c_in, c_out, kernel, positions, groups=1):
    p = conv_params(c_in, c_out, kernel, groups)
    return Layer(name, p, (p - c_out) * positions)


def _norm(name, c):
    return Layer(name, 2 * c, 0)


def _prelu(name, c):
    return Layer(name, c, 0)


def _pointwise_stack(name, c, k, positions):
    h = bottleneck_width(c, k)
    return [
        _conv(f"{name}.conv1", c, h, (1,), positions),
        _norm(f"{name}.bn1", h),
        _conv(f"{name}.conv2", h, c, (1,), positions),
        _norm(f"{name}.bn2", c),
    ]


def _attention(name, kind, c, k, positions):
    if kind == "none":
        return []
    h = bottleneck_width(c, k)
    if kind == "lca":
        return _pointwise_stack(f"{name}.ga", c, k, 1) + _pointwise_stack(f"{name}.la", c, k, positions)
    if kind == "se":
        return [_conv(f"{name}.fc1", c, h, (1,), 1), _conv(f"{name}.fc2", h, c, (1,), 1)]
    if kind == "cbam":
        return [
            _conv(f"{name}.mlp1", c, h, (1,), 2),
            _conv(f"{name}.mlp2", h, c, (1,), 2),
            _conv(f"{name}.spatial", 2, 1, (7, 7), positions),
        ]
    raise ValueError(kind)


def _dense(name, c_in, growth, depth, positions):
    layers = []
    for i in range(depth):
        layers += [
            _conv(f"{name}.{i}.conv", c_in + i * growth, growth, (3, 3), positions),
            _norm(f"{name}.{i}.bn", growth),
            _prelu(f"{name}.{i}.act", growth),
        ]
    return layers, c_in + depth * growth


def layer_table(cfg, n_samples):
    """Per-layer parameter and MAC records for an input of ``n_samples`` samples."""
    t = cfg.stft.n_frames(n_samples)
    freqs = cfg.freq_schedule()
    chans = (cfg.input_channels,) + tuple(cfg.encoder_channels)
    two_f = 2 * freqs[0]
    layers = [Layer("isa.context_interaction", 0, 2 * t * t * two_f)]
    if cfg.use_ifi:
        pos = t * freqs[0]
        for r in ("round1", "round2"):
            layers += _pointwise_stack(f"isa.{r}.ga", 2, cfg.isa_k, 1)
            layers += _pointwise_stack(f"isa.{r}.la", 2, cfg.isa_k, pos)
    layers.append(_conv("input_conv", 4, cfg.input_channels, (1, 1), t * freqs[0]))
    for i in range(cfg.encoder_blocks):
        dense, c_dense = _dense(f"encoder.{i}.dense", chans[i], cfg.dense_growth, cfg.dense_depth, t * freqs[i])
        out_pos = t * freqs[i + 1]
        layers += dense + [
            _conv(f"encoder.{i}.down", c_dense, chans[i + 1], (3, 3), out_pos),
            _norm(f"encoder.{i}.bn", chans[i + 1]),
            _prelu(f"encoder.{i}.act", chans[i + 1]),
        ]
        layers += _attention(f"encoder.{i}.attention", cfg.attention, chans[i + 1], cfg.lca_k, out_pos)
    d, h = cfg.tcn_channels, cfg.tcn_hidden
    for b in range(cfg.tcn_layers * cfg.tcn_blocks_per_layer):
        layers += [
            _conv(f"tcn.{b}.in", d, h, (1,), t),
            _prelu(f"tcn.{b}.act1", 1),
            _norm(f"tcn.{b}.norm1", h),
            _conv(f"tcn.{b}.depthwise", h, h, (cfg.tcn_kernel,), t, groups=h),
            _prelu(f"tcn.{b}.act2", 1),
            _norm(f"tcn.{b}.norm2", h),
            _conv(f"tcn.{b}.out", h, d, (1,), t),
        ]
    for i in reversed(range(cfg.encoder_blocks)):
        dense, c_dense = _dense(f"decoder.{i}.dense", 2 * chans[i + 1], cfg.dense_growth, cfg.dense_depth, t * freqs[i + 1])
        # transposed conv: every input position is multiplied by the full kernel
        up = conv_params(c_dense, chans[i], (3, 3))
        layers += dense + [
            Layer(f"decoder.{i}.up", up, (up - chans[i]) * t * freqs[i + 1]),
            _norm(f"decoder.{i}.bn", chans[i]),
            _prelu(f"decoder.{i}.act", chans[i]),
        ]
    c0 = cfg.input_channels
    for s in cfg.pyramid_scales:
        pooled = -(-t // s) * -(-freqs[0] // s)
        layers.append(_conv(f"pyramid.branch{s}", c0, c0, (1, 1), pooled))
    layers.append(_conv("pyramid.fuse", c0 * (len(cfg.pyramid_scales) + 1), c0, (1, 1), t * freqs[0]))
    out = conv_params(c0, 2, (1, 3))
    layers.append(Layer("output_conv", out, (out - 2) * t * freqs[0]))
    return layers


def count_parameters(cfg, n_samples=None):
    """Return ``(param_count, macs)`` for ``cfg``.

    MACs are for an input of ``n_samples`` samples (default: four seconds).
    """
    if n_samples is None:
        n_samples = 4 * cfg.stft.sample_rate
    table = layer_table(cfg, n_samples)
    return sum(l.params for l in table), sum(l.macs for l in table)


def within_reference_budget(param_count, target=REFERENCE_PARAMS, tolerance=REFERENCE_TOLERANCE):
    return abs(param_count - target) <= tolerance * target
