"""Video-to-music latent diffusion with rhythm prediction, at desk scale.

Everything runs on numpy: a small reverse-mode autodiff engine, the audio and
visual feature front-ends, a causal rhythm predictor, a diffusion transformer
with hierarchical cross-attention, and the sampling/training loop.
"""
from .audio import RhythmKind, RhythmRepr, Waveform
from .autodiff import Tensor, grad_check, no_grad
from .config import RunConfig
from .generator import FusionKind, FusionStrategy, Generator, GeneratorConfig
from .predictor import PredictorConfig, RhythmPredictor
from .visual import FrameSequence

__version__ = "0.1.0"

__all__ = [
    "FrameSequence", "FusionKind", "FusionStrategy", "Generator", "GeneratorConfig",
    "PredictorConfig", "RhythmKind", "RhythmPredictor", "RhythmRepr", "RunConfig", "Tensor",
    "Waveform", "grad_check", "no_grad",
]
