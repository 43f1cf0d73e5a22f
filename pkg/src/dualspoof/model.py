"""Full detector: dual encoders, cross-attention fusion, three output heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from .encoders import ConvEncoder, EncoderConfig, env_default, speech_default
from .fusion import BidirectionalFusion
from .heads import AttentiveScoreHead
from .matching import MatchingHead


@dataclass
class ModelConfig:
    speech_encoder: EncoderConfig = field(default_factory=speech_default)
    env_encoder: EncoderConfig = field(default_factory=env_default)
    n_heads: int = 4
    matching_dim: int = 16
    matching_hidden: int = 64
    head_hidden: int = 16
    matching_enabled: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, record: dict) -> "ModelConfig":
        record = dict(record)
        record["speech_encoder"] = EncoderConfig(**record["speech_encoder"])
        record["env_encoder"] = EncoderConfig(**record["env_encoder"])
        return cls(**record)


class Detector(nn.Module):
    """Waveform batch in, (speech, env, original) logits out.

    The matching head consumes the raw encoder outputs, before projection and
    fusion; the component heads consume the fused representations. Output
    layers start at zero so initial logits are exactly zero and early
    optimizer steps move rankings rather than fighting random offsets.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        model_dim = config.env_encoder.out_dim
        self.speech_encoder = ConvEncoder(config.speech_encoder)
        self.env_encoder = ConvEncoder(config.env_encoder)
        self.speech_projection = nn.Linear(config.speech_encoder.out_dim, model_dim)
        self.fusion = BidirectionalFusion(model_dim, config.n_heads)
        self.speech_head = AttentiveScoreHead(model_dim, config.head_hidden)
        self.env_head = AttentiveScoreHead(model_dim, config.head_hidden)
        self.matching = MatchingHead(
            config.speech_encoder.out_dim,
            config.env_encoder.out_dim,
            config.matching_dim,
            config.matching_hidden,
        )
        for layer in (self.speech_head.mlp[-1], self.env_head.mlp[-1], self.matching.ffn[-1]):
            nn.init.zeros_(layer.weight)
            nn.init.zeros_(layer.bias)
        # the environment artifact is temporally sparse: point the env head's
        # pooling at the encoder's gated transient channels from the start
        # (the fusion residual keeps feature dims aligned at initialization)
        clicks = self.env_encoder.click_channels
        if clicks:
            with torch.no_grad():
                self.env_head.attention.zero_()
                self.env_head.attention[list(clicks)] = 1.0
        # matching projections start as channel selectors rather than random
        # mixtures, so the pooled statistics expose the encoders' band
        # energies directly and the original-class margin can grow quickly
        with torch.no_grad():
            for proj in (self.matching.speech_proj, self.matching.env_proj):
                eye = torch.zeros_like(proj.weight)
                for row in range(eye.shape[0]):
                    eye[row, row % eye.shape[1]] = 1.0
                proj.weight.mul_(0.01).add_(eye)
                proj.bias.zero_()

    def forward(self, wave: torch.Tensor):
        """(B, samples) -> (speech_logits, env_logits, original_logits), each (B,).

        original_logits is None when the matching head is disabled.
        """
        speech_frames = self.speech_encoder(wave)
        env_frames = self.env_encoder(wave)
        original_logits = None
        if self.config.matching_enabled:
            original_logits = self.matching(speech_frames, env_frames)
        projected = self.speech_projection(speech_frames)
        speech_refined, env_refined = self.fusion(projected, env_frames)
        speech_logits = self.speech_head(speech_refined)
        env_logits = self.env_head(env_refined)
        return speech_logits, env_logits, original_logits

    @torch.no_grad()
    def probabilities(self, wave: torch.Tensor):
        """Sigmoid-mapped outputs; without the matching head, the original
        probability falls back to 1 - max(component spoof probabilities)."""
        speech_logits, env_logits, original_logits = self.forward(wave)
        p_speech = torch.sigmoid(speech_logits)
        p_env = torch.sigmoid(env_logits)
        if original_logits is None:
            p_original = 1.0 - torch.maximum(p_speech, p_env)
        else:
            p_original = torch.sigmoid(original_logits)
        return p_speech, p_env, p_original
