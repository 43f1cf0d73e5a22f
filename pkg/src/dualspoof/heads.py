"""Per-component spoofing classifiers and the five-class decision rule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .corpus import ClassLabel
from .errors import ParameterError


class AttentiveScoreHead(nn.Module):
    """Attentive pooling over frames followed by a two-layer MLP to one logit.

    Pooling weights are softmax(scale * a . frame) over time, so the pooled
    vector is a convex combination of the frames. Convention: positive logit
    means the component is spoofed.
    """

    def __init__(self, model_dim: int, hidden_dim: int = 16):
        super().__init__()
        self.model_dim = model_dim
        self.attention = nn.Parameter(torch.zeros(model_dim))
        self.scale = nn.Parameter(torch.ones(()))
        self.mlp = nn.Sequential(
            nn.Linear(model_dim, hidden_dim),
            nn.Tanh(),
            nn.Linear(hidden_dim, 1),
        )
        nn.init.normal_(self.attention, std=1.0 / math.sqrt(model_dim))

    def pooling_weights(self, frames: torch.Tensor) -> torch.Tensor:
        if frames.shape[-1] != self.model_dim:
            raise ParameterError(
                f"expected feature dim {self.model_dim}, got {frames.shape[-1]}"
            )
        scores = self.scale * (frames @ self.attention)
        return torch.softmax(scores, dim=-1)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, T, D) or (T, D) -> (B,) or scalar logit."""
        weights = self.pooling_weights(frames)
        pooled = (weights.unsqueeze(-1) * frames).sum(dim=-2)
        return self.mlp(pooled).squeeze(-1)


@dataclass
class ScoreTriple:
    """The three per-clip logits and their sigmoid probabilities."""

    speech_logit: float
    env_logit: float
    original_logit: float

    @staticmethod
    def _sigmoid(x: float) -> float:
        if x >= 0:
            return 1.0 / (1.0 + math.exp(-x))
        z = math.exp(x)
        return z / (1.0 + z)

    @property
    def p_speech_spoof(self) -> float:
        return self._sigmoid(self.speech_logit)

    @property
    def p_env_spoof(self) -> float:
        return self._sigmoid(self.env_logit)

    @property
    def p_original(self) -> float:
        return self._sigmoid(self.original_logit)


def decide_from_probs(
    p_original: float,
    p_speech_spoof: float,
    p_env_spoof: float,
    tau_original: float = 0.5,
    tau_speech: float = 0.5,
    tau_env: float = 0.5,
) -> str:
    """Map the three probabilities to one of the five class tokens.

    Original wins when p_original exceeds its threshold; otherwise each
    component is called spoofed iff its probability exceeds its threshold.
    """
    for name, tau in (("tau_original", tau_original), ("tau_speech", tau_speech), ("tau_env", tau_env)):
        if not 0.0 < tau < 1.0:
            raise ParameterError(f"{name} must be in (0,1), got {tau}")
    if p_original > tau_original:
        return "original"
    speech = "spoof" if p_speech_spoof > tau_speech else "bonafide"
    env = "spoof" if p_env_spoof > tau_env else "bonafide"
    return f"{speech}_{env}"


def decide_class(
    scores: ScoreTriple,
    tau_original: float = 0.5,
    tau_speech: float = 0.5,
    tau_env: float = 0.5,
) -> ClassLabel:
    token = decide_from_probs(
        scores.p_original,
        scores.p_speech_spoof,
        scores.p_env_spoof,
        tau_original,
        tau_speech,
        tau_env,
    )
    return ClassLabel.from_token(token)
