"""Bidirectional multi-head cross-attention between the two branches.

The speech frames are first projected to the environment width, then each
branch attends over the other; the attended output is added back through a
residual connection and layer-normalized. Query and key/value sequences may
have different lengths, no masking or positional encoding is applied.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import ParameterError
from .gradcheck import max_relative_gradient_error


class CrossAttention(nn.Module):
    """Scaled dot-product multi-head attention, queries from one sequence,
    keys/values from another. Projections carry no bias."""

    def __init__(self, model_dim: int, n_heads: int):
        super().__init__()
        if model_dim % n_heads != 0:
            raise ParameterError(f"model_dim {model_dim} not divisible by n_heads {n_heads}")
        self.model_dim = model_dim
        self.n_heads = n_heads
        self.head_dim = model_dim // n_heads
        self.q_proj = nn.Linear(model_dim, model_dim, bias=False)
        self.k_proj = nn.Linear(model_dim, model_dim, bias=False)
        self.v_proj = nn.Linear(model_dim, model_dim, bias=False)
        self.out_proj = nn.Linear(model_dim, model_dim, bias=False)

    def forward(
        self,
        queries: torch.Tensor,
        keys_values: torch.Tensor,
        return_weights: bool = False,
    ):
        if queries.shape[-1] != self.model_dim or keys_values.shape[-1] != self.model_dim:
            raise ParameterError(
                f"inputs must have feature dim {self.model_dim}, got "
                f"{queries.shape[-1]} and {keys_values.shape[-1]}"
            )
        squeeze = queries.ndim == 2
        if squeeze:
            queries = queries.unsqueeze(0)
            keys_values = keys_values.unsqueeze(0)
        b, t_q, _ = queries.shape
        t_kv = keys_values.shape[1]

        def split(x: torch.Tensor, t: int) -> torch.Tensor:
            return x.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)

        q = split(self.q_proj(queries), t_q)
        k = split(self.k_proj(keys_values), t_kv)
        v = split(self.v_proj(keys_values), t_kv)
        scores = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        weights = torch.softmax(scores, dim=-1)
        attended = torch.matmul(weights, v)
        attended = attended.transpose(1, 2).reshape(b, t_q, self.model_dim)
        out = self.out_proj(attended)
        if squeeze:
            out = out.squeeze(0)
            weights = weights.squeeze(0)
        if return_weights:
            return out, weights
        return out


class BidirectionalFusion(nn.Module):
    """Residual cross-attention refinement of both branches.

    speech_out = LayerNorm(speech + CrossAttn(speech, env))
    env_out    = LayerNorm(env + CrossAttn(env, speech))

    The two directions hold independent attention and layer-norm parameters.
    """

    def __init__(self, model_dim: int, n_heads: int = 4, ln_eps: float = 1e-6):
        super().__init__()
        self.speech_from_env = CrossAttention(model_dim, n_heads)
        self.env_from_speech = CrossAttention(model_dim, n_heads)
        self.speech_norm = nn.LayerNorm(model_dim, eps=ln_eps)
        self.env_norm = nn.LayerNorm(model_dim, eps=ln_eps)
        # attention output projections start at zero: the block begins as
        # per-branch normalization and the cross terms grow in with training
        nn.init.zeros_(self.speech_from_env.out_proj.weight)
        nn.init.zeros_(self.env_from_speech.out_proj.weight)

    def forward(self, speech: torch.Tensor, env: torch.Tensor):
        speech_out = self.speech_norm(speech + self.speech_from_env(speech, env))
        env_out = self.env_norm(env + self.env_from_speech(env, speech))
        return speech_out, env_out


def grad_check_fusion(
    fusion: BidirectionalFusion,
    probe_speech: torch.Tensor,
    probe_env: torch.Tensor,
    epsilon: float = 1e-5,
) -> float:
    """Finite-difference check of the fusion block's parameter gradients.

    Probe loss: sum of squares of both fused outputs. Returns the maximum
    relative error over all parameters; inputs and module must be float64.
    """
    speech = probe_speech.detach().double()
    env = probe_env.detach().double()
    fusion = fusion.double()

    def loss() -> torch.Tensor:
        speech_out, env_out = fusion(speech, env)
        return (speech_out**2).sum() + (env_out**2).sum()

    return max_relative_gradient_error(fusion, loss, epsilon)
