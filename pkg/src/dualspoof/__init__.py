"""Dual-branch component-level audio deepfake detection."""

__version__ = "0.1.0"

from .corpus import KLASSES, AudioClip, ClassLabel, CorpusConfig, ManifestEntry, build_corpus
from .model import Detector, ModelConfig
from .training import LossWeights, TrainConfig, train

__all__ = [
    "KLASSES",
    "AudioClip",
    "ClassLabel",
    "CorpusConfig",
    "ManifestEntry",
    "build_corpus",
    "Detector",
    "ModelConfig",
    "LossWeights",
    "TrainConfig",
    "train",
    "__version__",
]
