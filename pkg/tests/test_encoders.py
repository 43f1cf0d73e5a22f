"""Encoder shape law, gradient masking, feature-container round trips."""

import numpy as np
import pytest
import torch

from dualspoof.corpus import AudioClip
from dualspoof.encoders import (
    ConvEncoder,
    EncoderConfig,
    FrameSequence,
    env_default,
    load_precomputed,
    save_features,
    speech_default,
    stride_plan,
)
from dualspoof.errors import DegenerateInputError, FormatError, ParameterError


class TestStridePlan:
    def test_products(self):
        for hop, n in ((320, 5), (640, 5), (320, 4), (640, 4), (4, 4), (81, 2)):
            plan = stride_plan(hop, n)
            assert len(plan) == n
            assert np.prod(plan) == hop
            assert all(1 <= s <= 9 for s in plan)

    def test_impossible_factorization(self):
        with pytest.raises(ParameterError):
            stride_plan(11, 2)  # prime above the kernel size
        with pytest.raises(ParameterError):
            stride_plan(320, 2)  # 320 > 9*9


class TestShapes:
    def test_default_speech_shape(self):
        encoder = ConvEncoder(speech_default())
        out = encoder(torch.zeros(2, 16000))
        assert out.shape == (2, 50, 32)

    def test_default_env_shape(self):
        encoder = ConvEncoder(env_default())
        out = encoder(torch.zeros(1, 16000))
        assert out.shape == (1, 25, 24)
        assert env_default().out_dim != speech_default().out_dim

    def test_shape_law_across_lengths(self):
        encoder = ConvEncoder(EncoderConfig(out_dim=8, hop=320, n_layers=4))
        rng = np.random.default_rng(0)
        for _ in range(25):
            length = int(rng.integers(320, 20000))
            out = encoder(torch.zeros(1, length))
            assert out.shape[1] == length // 320

    def test_too_short_rejected(self):
        encoder = ConvEncoder(EncoderConfig(out_dim=8, hop=320, n_layers=4))
        with pytest.raises(DegenerateInputError):
            encoder(torch.zeros(1, 319))

    def test_encode_clip(self):
        encoder = ConvEncoder(env_default())
        seq = encoder.encode_clip(AudioClip(np.zeros(16000), 16000))
        assert isinstance(seq, FrameSequence)
        assert seq.frames.shape == (25, 24)
        assert seq.frame_hop_samples == 640


class TestEncoderBehavior:
    def test_zero_input_zero_biases_zero_output(self):
        encoder = ConvEncoder(EncoderConfig(out_dim=16, hop=320, n_layers=4))
        with torch.no_grad():
            for block in encoder.blocks:
                block.bias.zero_()
        out = encoder(torch.zeros(1, 16000))
        assert torch.all(out == 0)

    def test_not_scale_invariant(self):
        torch.manual_seed(0)
        encoder = ConvEncoder(speech_default())
        wave = torch.rand(1, 16000) - 0.5
        delta = (encoder(2.0 * wave) - encoder(wave)).abs().max()
        assert delta > 0

    def test_finite_outputs(self):
        torch.manual_seed(1)
        encoder = ConvEncoder(env_default())
        wave = torch.rand(3, 16000) * 2 - 1
        assert torch.isfinite(encoder(wave)).all()

    def test_frozen_encoder_unchanged_by_training_step(self):
        torch.manual_seed(2)
        encoder = ConvEncoder(EncoderConfig(out_dim=8, hop=320, n_layers=4, trainable_layers=0))
        assert not [p for p in encoder.parameters() if p.requires_grad]
        head = torch.nn.Linear(8, 1)
        before = {k: v.clone() for k, v in encoder.state_dict().items()}
        optimizer = torch.optim.Adam(head.parameters(), lr=1e-2)
        loss = head(encoder(torch.rand(2, 1600))).sum()
        loss.backward()
        optimizer.step()
        for key, value in encoder.state_dict().items():
            assert torch.equal(value, before[key])

    def test_gradient_masking_exact_blocks(self):
        torch.manual_seed(3)
        config = EncoderConfig(out_dim=8, hop=320, n_layers=4, trainable_layers=2)
        encoder = ConvEncoder(config)
        out = encoder(torch.rand(2, 1600))
        (out**2).sum().backward()
        for i, block in enumerate(encoder.blocks):
            trainable = i >= config.n_layers - config.trainable_layers
            for param in block.parameters():
                if trainable:
                    assert param.grad is not None and param.grad.abs().sum() > 0
                else:
                    assert param.grad is None

    def test_invalid_config(self):
        with pytest.raises(ParameterError):
            EncoderConfig(out_dim=8, hop=320, n_layers=4, trainable_layers=5)
        with pytest.raises(ParameterError):
            EncoderConfig(out_dim=0, hop=320, n_layers=4)


class TestFeatureContainer:
    def _store(self, tmp_path, dtype):
        torch.manual_seed(4)
        features = {
            "utt_a": FrameSequence(torch.randn(7, 5, dtype=dtype), 320),
            "utt_b": FrameSequence(torch.randn(3, 5, dtype=dtype), 320),
        }
        path = tmp_path / "features.bin"
        save_features(features, path)
        return features, path

    @pytest.mark.parametrize("dtype", [torch.float32, torch.float64])
    def test_bit_exact_round_trip(self, tmp_path, dtype):
        features, path = self._store(tmp_path, dtype)
        for utt_id, seq in features.items():
            loaded = load_precomputed(path, utt_id)
            assert torch.equal(loaded.frames, seq.frames)
            assert loaded.frames.dtype == dtype
            assert loaded.frame_hop_samples == 320

    def test_missing_utt_named(self, tmp_path):
        _, path = self._store(tmp_path, torch.float32)
        with pytest.raises(KeyError, match="utt_zz"):
            load_precomputed(path, "utt_zz")

    def test_truncated_payload_rejected(self, tmp_path):
        _, path = self._store(tmp_path, torch.float32)
        raw = path.read_bytes()
        path.write_bytes(raw[:-10])
        with pytest.raises(FormatError, match="payload"):
            load_precomputed(path, "utt_b")

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTAFEAT" + b"\x00" * 16)
        with pytest.raises(FormatError, match="magic"):
            load_precomputed(path, "utt_a")


class TestFrameSequence:
    def test_rejects_empty_and_nonfinite(self):
        with pytest.raises(ParameterError):
            FrameSequence(torch.zeros(0, 4), 320)
        with pytest.raises(ParameterError):
            FrameSequence(torch.tensor([[float("nan")]]), 320)
        with pytest.raises(ParameterError):
            FrameSequence(torch.zeros(4, 4), 0)
