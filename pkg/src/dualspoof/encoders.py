"""Frame-level waveform encoders for the speech and environment branches.

Each branch is a small stack of strided 1-D convolutions standing in for a
large pretrained feature extractor; the stable contract is waveform in,
(T, D) frame matrix out with T = floor(samples / hop). The two default
configurations intentionally disagree in both dimension and frame rate so
downstream fusion has to handle mismatched shapes. A precomputed-feature
container provides the drop-in path for real encoder outputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .corpus import AudioClip
from .errors import DegenerateInputError, FormatError, ParameterError

KERNEL = 9
_FEAT_MAGIC = b"DSFEAT01"


def _design_highpass(
    f_stop: float = 2200.0, f_pass: float = 3500.0, fs: float = 16000.0
) -> np.ndarray:
    """Least-squares 9-tap linear-phase high-pass.

    Stopband covers every bona fide component (speech harmonics and the
    environment texture bands all sit below ~2.1 kHz), so anything this
    filter passes is an artifact: stationary quantization noise or loop
    clicks.
    """
    grid = np.linspace(0.0, fs / 2.0, 512)
    target = np.where(grid >= f_pass, 1.0, np.where(grid <= f_stop, 0.0, np.nan))
    keep = ~np.isnan(target)
    half = (KERNEL + 1) // 2
    omega = 2.0 * np.pi * grid[keep] / fs
    center = (KERNEL - 1) / 2.0
    design = np.zeros((keep.sum(), half))
    for i in range(half):
        design[:, i] = 1.0 if i == half - 1 else 2.0 * np.cos(omega * (center - i))
    weights = np.where(target[keep] == 0.0, 30.0, 1.0)
    coef, *_ = np.linalg.lstsq(design * weights[:, None], target[keep] * weights, rcond=None)
    taps = np.zeros(KERNEL)
    for i in range(half):
        taps[i] = coef[i]
        taps[KERNEL - 1 - i] = coef[i]
    return taps


@dataclass
class EncoderConfig:
    out_dim: int = 32
    hop: int = 320
    n_layers: int = 5
    trainable_layers: int = 2

    def __post_init__(self) -> None:
        if self.out_dim < 1 or self.hop < 1 or self.n_layers < 1:
            raise ParameterError("EncoderConfig values must be positive")
        if not 0 <= self.trainable_layers <= self.n_layers:
            raise ParameterError(
                f"trainable_layers must be in [0, {self.n_layers}], got {self.trainable_layers}"
            )


def speech_default() -> EncoderConfig:
    return EncoderConfig(out_dim=32, hop=320, n_layers=5, trainable_layers=2)


def env_default() -> EncoderConfig:
    return EncoderConfig(out_dim=24, hop=640, n_layers=5, trainable_layers=2)


@dataclass
class FrameSequence:
    """Time-major frame matrix (T x D) plus the hop that produced it."""

    frames: torch.Tensor
    frame_hop_samples: int

    def __post_init__(self) -> None:
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ParameterError("FrameSequence requires a (T, D) matrix with T >= 1")
        if self.frame_hop_samples < 1:
            raise ParameterError("frame_hop_samples must be positive")
        if not torch.isfinite(self.frames).all():
            raise ParameterError("FrameSequence contains non-finite entries")


def stride_plan(hop: int, n_layers: int, max_stride: int = KERNEL) -> list[int]:
    """Factor `hop` into n_layers per-block strides, each <= the kernel size.

    Deterministic: the lexicographically largest non-decreasing factorization.
    Small strides come first, keeping early blocks at high temporal
    resolution (where transient artifacts live) while staying as balanced as
    the divisor structure allows. Raises if no factorization exists (e.g. a
    prime factor above the kernel size).
    """

    def search(remaining: int, layers: int, minimum: int) -> list[int] | None:
        if layers == 1:
            if minimum <= remaining <= max_stride:
                return [remaining]
            return None
        best = None
        for factor in range(minimum, max_stride + 1):
            if remaining % factor == 0:
                rest = search(remaining // factor, layers - 1, factor)
                if rest is not None:
                    best = [factor] + rest  # keep the largest lexicographically
        return best

    plan = search(hop, n_layers, 1)
    if plan is None:
        raise ParameterError(
            f"hop {hop} cannot be split into {n_layers} strides <= {max_stride}"
        )
    return plan


class ConvEncoder(nn.Module):
    """Strided conv stack: (B, samples) -> (B, T, out_dim), T = samples // hop.

    Right padding of (kernel - stride) per block makes the frame count an
    exact floor division for every input length. ReLU between blocks
    rectifies band responses so temporal smoothing yields energy-like
    features; the output is normalized per frame across the feature
    dimension. Only the last `trainable_layers` blocks receive gradients.

    Initialization plays the role of pretraining: the first block is a fixed
    analytic filterbank (box, differencers, windowed cosines) and later
    blocks start as smoothing / onset / passthrough taps with a small random
    perturbation, so class-relevant spectral-shape features exist before any
    gradient step.
    """

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        strides = stride_plan(config.hop, config.n_layers)
        # channel ramp: narrow at the (long) early blocks, out_dim at the top
        widths = [
            max(8, config.out_dim >> (config.n_layers - 1 - i))
            for i in range(config.n_layers - 1)
        ] + [config.out_dim]
        blocks = []
        in_ch = 1
        for stride, width in zip(strides, widths):
            blocks.append(nn.Conv1d(in_ch, width, KERNEL, stride=stride))
            in_ch = width
        self.blocks = nn.ModuleList(blocks)
        self.strides = strides
        self.click_channels: tuple[int, ...] = ()
        self._filterbank_init()
        frozen = config.n_layers - config.trainable_layers
        for block in self.blocks[:frozen]:
            for param in block.parameters():
                param.requires_grad_(False)

    def _filterbank_init(self) -> None:
        """Analytic front end standing in for pretraining.

        Block 1 channels: [box low-pass, mid band ~800 Hz, mid band ~1.9 kHz,
        +HP, -HP, +2nd-diff, -2nd-diff, alternating Nyquist]. The +/- pairs
        let the next block reconstruct magnitudes through the ReLU. Block 2
        turns them into energy and gated maps: |HP| minus a small noise-gate
        bias gives stationary high-frequency activity; |HP| minus a large
        bias passes only strong transients (loop clicks), probed at four
        consecutive tap phases so no stride phase escapes the gate. Later
        blocks are box-smoothing passthroughs. Structured rows are exact
        (random perturbation would poison the stopbands); surplus channels
        get small random weights.
        """
        with torch.no_grad():
            first = self.blocks[0]
            first.weight.normal_(0.0, 0.01)
            first.bias.zero_()
            taps = torch.arange(KERNEL, dtype=torch.float32) - (KERNEL - 1) / 2
            window = 0.5 + 0.5 * torch.cos(np.pi * taps / ((KERNEL - 1) / 2))
            hp = torch.as_tensor(_design_highpass(), dtype=torch.float32)
            diff2 = torch.zeros(KERNEL)
            diff2[KERNEL // 2 - 1 : KERNEL // 2 + 2] = torch.tensor([1.0, -2.0, 1.0]) / 3.0
            mid1 = torch.cos(2.0 * np.pi * 0.05 * taps) * window
            mid2 = torch.cos(2.0 * np.pi * 0.12 * taps) * window
            bank = [
                torch.full((KERNEL,), 1.0 / KERNEL),
                mid1 / mid1.abs().sum(),
                mid2 / mid2.abs().sum(),
                hp,
                -hp,
                diff2,
                -diff2,
                torch.tensor([(-1.0) ** k for k in range(KERNEL)]) / KERNEL,
            ]
            for ch in range(first.out_channels):
                if ch < len(bank):
                    first.weight[ch] = 0.0
                first.weight[ch, 0] += bank[ch % len(bank)]

            structured = first.out_channels >= 8 and len(self.blocks) >= 2
            click_channels: set[int] = set()
            for index, block in enumerate(self.blocks[1:], start=1):
                block.weight.normal_(0.0, 0.01)
                block.bias.normal_(0.0, 0.01)
                c_in = block.in_channels
                center = KERNEL // 2
                if index == 1 and structured:
                    plans = [
                        ("box", 0, 0.0),       # rectified low-band energy
                        ("box", 1, 0.0),       # mid-band energy ~800 Hz
                        ("box", 2, 0.0),       # mid-band energy ~1.9 kHz
                        ("gate", center, -0.004),  # stationary HF activity
                        ("gate", center, -0.09),   # click gates, one per phase
                        ("gate", center + 1, -0.09),
                        ("gate", center + 2, -0.09),
                        ("gate", center + 3, -0.09),
                    ]
                    for j in range(block.out_channels):
                        kind, arg, bias = plans[j % len(plans)]
                        if j < len(plans):
                            block.weight[j] = 0.0
                            block.bias[j] = 0.0
                        block.bias[j] += bias
                        if kind == "box":
                            block.weight[j, arg] += 1.0 / KERNEL
                        else:  # |HP| probed at one tap: +HP and -HP halves
                            block.weight[j, 3, arg] += 1.0
                            block.weight[j, 4, arg] += 1.0
                            if bias <= -0.09:
                                click_channels.add(j)
                else:
                    # smoothing passthrough; gated click channels carry sparse
                    # spikes over a zero background, so they are sum-pooled
                    # (unit taps) to survive repeated smoothing undiluted
                    next_clicks: set[int] = set()
                    for j in range(block.out_channels):
                        src = j % c_in
                        if src in click_channels:
                            block.weight[j, src] += 1.0
                            next_clicks.add(j)
                        else:
                            block.weight[j, src] += 1.0 / KERNEL
                    click_channels = next_clicks
            self.click_channels = tuple(sorted(click_channels))

    def forward(self, wave: torch.Tensor) -> torch.Tensor:
        if wave.ndim != 2:
            raise ParameterError(f"expected (batch, samples), got shape {tuple(wave.shape)}")
        if wave.shape[1] < self.config.hop:
            raise DegenerateInputError(
                f"clip of {wave.shape[1]} samples is shorter than one hop ({self.config.hop})"
            )
        x = wave.unsqueeze(1)
        for i, (block, stride) in enumerate(zip(self.blocks, self.strides)):
            x = nn.functional.pad(x, (0, KERNEL - stride))
            x = block(x)
            if i < len(self.blocks) - 1:
                x = torch.relu(x)
        x = x.transpose(1, 2)  # (B, T, D)
        mean = x.mean(dim=-1, keepdim=True)
        var = x.var(dim=-1, keepdim=True, unbiased=False)
        return (x - mean) / torch.sqrt(var + 1e-8)

    @torch.no_grad()
    def encode_clip(self, clip: AudioClip) -> FrameSequence:
        wave = torch.as_tensor(clip.samples, dtype=torch.float32).unsqueeze(0)
        frames = self.forward(wave)[0]
        return FrameSequence(frames, self.config.hop)


# --- precomputed-feature container ------------------------------------------
#
# One binary file holds features for many utterances:
#   magic, u32 count, then per entry:
#   u16 id_len, id bytes, u32 T, u32 D, u32 hop, u8 dtype (0=f32, 1=f64),
#   T*D little-endian values. Round-trips bit-exactly.

_DTYPE_CODES = {0: "<f4", 1: "<f8"}


def save_features(features: dict[str, FrameSequence], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [_FEAT_MAGIC, struct.pack("<I", len(features))]
    for utt_id, seq in features.items():
        array = seq.frames.detach().cpu().numpy()
        if array.dtype == np.float32:
            code, dtype = 0, "<f4"
        else:
            code, dtype = 1, "<f8"
        payload = np.ascontiguousarray(array, dtype=dtype).tobytes()
        encoded = utt_id.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(
            struct.pack("<IIIB", array.shape[0], array.shape[1], seq.frame_hop_samples, code)
        )
        chunks.append(payload)
    path.write_bytes(b"".join(chunks))


def load_precomputed(path: str | Path, utt_id: str) -> FrameSequence:
    """Look up one utterance's stored frame matrix, verbatim."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[: len(_FEAT_MAGIC)] != _FEAT_MAGIC:
        raise FormatError(f"{path}: bad magic in field 'magic'")
    offset = len(_FEAT_MAGIC)
    if offset + 4 > len(raw):
        raise FormatError(f"{path}: truncated field 'count'")
    (count,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    for _ in range(count):
        if offset + 2 > len(raw):
            raise FormatError(f"{path}: truncated field 'id_len'")
        (id_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        if offset + id_len + 13 > len(raw):
            raise FormatError(f"{path}: truncated field 'entry header'")
        entry_id = raw[offset : offset + id_len].decode("utf-8")
        offset += id_len
        t, d, hop, code = struct.unpack_from("<IIIB", raw, offset)
        offset += 13
        if code not in _DTYPE_CODES:
            raise FormatError(f"{path}: unknown field 'dtype' = {code}")
        dtype = np.dtype(_DTYPE_CODES[code])
        nbytes = t * d * dtype.itemsize
        if offset + nbytes > len(raw):
            raise FormatError(
                f"{path}: field 'payload' shorter than header T*D = {t}*{d} for {entry_id!r}"
            )
        if entry_id == utt_id:
            array = np.frombuffer(raw, dtype=dtype, count=t * d, offset=offset)
            frames = torch.from_numpy(array.reshape(t, d).copy())
            return FrameSequence(frames, hop)
        offset += nbytes
    raise KeyError(f"utt_id {utt_id!r} not found in {path}")
