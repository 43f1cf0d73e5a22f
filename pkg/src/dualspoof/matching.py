"""Matching head: original-class estimation from branch statistics.

Both branches' raw (pre-fusion) frame sequences are projected into one
latent space, reduced to four temporal statistics per dimension, combined
through interaction features, and scored by a small feed-forward network.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import DegenerateInputError, ParameterError
from .gradcheck import max_relative_gradient_error

STAT_NAMES = ("mean", "max", "std", "l2norm")


def stat_pool(frames: torch.Tensor) -> torch.Tensor:
    """Pool (..., T, D) to (..., 4*D): [mean | max | std | l2norm] over time.

    Std is the population standard deviation (divide by T, zero at T = 1);
    the l2 norm is taken along the temporal axis, one value per dimension.
    """
    if frames.ndim < 2:
        raise ParameterError(f"expected (..., T, D), got shape {tuple(frames.shape)}")
    if frames.shape[-2] < 1:
        raise DegenerateInputError("cannot pool an empty frame sequence")
    mean = frames.mean(dim=-2)
    peak = frames.max(dim=-2).values
    std = frames.var(dim=-2, unbiased=False).sqrt()
    norm = (frames**2).sum(dim=-2).sqrt()
    return torch.cat([mean, peak, std, norm], dim=-1)


def interaction_features(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Concatenate [a | b | |a - b| | a * b] along the last axis."""
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return torch.cat([a, b, (a - b).abs(), a * b], dim=-1)


class MatchingHead(nn.Module):
    """Projection -> statistics pooling -> interaction -> FFN -> one logit.

    Positive logit means "original" (never-separated capture). The two
    branch projections are independent; the FFN is Linear -> tanh -> Linear.
    """

    def __init__(
        self,
        speech_dim: int,
        env_dim: int,
        latent_dim: int = 16,
        hidden_dim: int | None = None,
    ):
        super().__init__()
        if hidden_dim is None:
            hidden_dim = 4 * latent_dim
        self.latent_dim = latent_dim
        self.speech_proj = nn.Linear(speech_dim, latent_dim)
        self.env_proj = nn.Linear(env_dim, latent_dim)
        self.ffn = nn.Sequential(
            nn.Linear(16 * latent_dim, hidden_dim),
            nn.Tanh(),
            nn.Linear(hidden_dim, 1),
        )

    def forward(self, speech_frames: torch.Tensor, env_frames: torch.Tensor) -> torch.Tensor:
        """(B, T_s, D_s), (B, T_e, D_e) -> (B,) original logits."""
        pooled_speech = stat_pool(self.speech_proj(speech_frames))
        pooled_env = stat_pool(self.env_proj(env_frames))
        combined = interaction_features(pooled_speech, pooled_env)
        return self.ffn(combined).squeeze(-1)


def grad_check_matching(
    head: MatchingHead,
    probe_speech: torch.Tensor,
    probe_env: torch.Tensor,
    epsilon: float = 1e-5,
) -> float:
    """Finite-difference check of the matching head's parameter gradients.

    Probe loss: the original logit itself (batch-summed). Float64 only.
    """
    speech = probe_speech.detach().double()
    env = probe_env.detach().double()
    head = head.double()

    def loss() -> torch.Tensor:
        return head(speech, env).sum()

    return max_relative_gradient_error(head, loss, epsilon)
