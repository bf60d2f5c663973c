"""Speaker-encoder-free personalized speech enhancement (SEF-PNet)."""

from .backbone import VARIANTS, ModelConfig, SEFPNet
from .complexity import count_parameters
from .data import MixtureDataset, MixtureSample, SynthSpeaker, expand_alternate_targets, load_manifest, simulate_mixture
from .dsp import StftConfig, Waveform, drc_compress, drc_expand, from_ri, istft, stft, to_ri
from .estimator import SEFPNetEnhancer
from .isa import ISA, broadcast_enrollment, context_interaction
from .lca import CBAM, LCA, SEBlock
from .objectives import MetricsReport, evaluate, si_sdr, si_sdr_loss
from .trainer import TrainConfig, Trainer, clip_gradients, lr_at_epoch, run_ablation

__version__ = "0.1.0"
