"""Detector assembly: wiring contracts between encoders, fusion, and heads."""

import torch

from dualspoof.encoders import EncoderConfig
from dualspoof.model import Detector, ModelConfig


def tiny_config(matching_enabled=True):
    return ModelConfig(
        speech_encoder=EncoderConfig(out_dim=16, hop=320, n_layers=4, trainable_layers=2),
        env_encoder=EncoderConfig(out_dim=16, hop=640, n_layers=4, trainable_layers=2),
        n_heads=2,
        matching_dim=8,
        matching_hidden=16,
        head_hidden=8,
        matching_enabled=matching_enabled,
    )


class TestDetector:
    def test_output_shapes(self):
        torch.manual_seed(0)
        model = Detector(tiny_config())
        speech, env, original = model(torch.rand(3, 16000) - 0.5)
        assert speech.shape == env.shape == original.shape == (3,)

    def test_matching_taps_pre_fusion_features(self):
        # perturbing fusion parameters must not move the original logit
        torch.manual_seed(1)
        model = Detector(tiny_config())
        wave = torch.rand(2, 16000) - 0.5
        with torch.no_grad():
            _, _, original_before = model(wave)
            for param in model.fusion.parameters():
                param.add_(torch.randn_like(param))
            for param in model.speech_projection.parameters():
                param.add_(torch.randn_like(param))
            speech_after, _, original_after = model(wave)
        assert torch.equal(original_before, original_after)

    def test_disabled_matching_uses_component_proxy(self):
        torch.manual_seed(2)
        model = Detector(tiny_config(matching_enabled=False))
        wave = torch.rand(2, 16000) - 0.5
        speech, env, original = model(wave)
        assert original is None
        p_speech, p_env, p_original = model.probabilities(wave)
        expected = 1.0 - torch.maximum(p_speech, p_env)
        assert torch.equal(p_original, expected)

    def test_config_round_trip(self):
        config = tiny_config()
        rebuilt = ModelConfig.from_dict(config.to_dict())
        assert rebuilt == config

    def test_zero_initialized_outputs(self):
        torch.manual_seed(3)
        model = Detector(tiny_config())
        speech, env, original = model(torch.rand(2, 16000) - 0.5)
        assert torch.all(speech == 0) and torch.all(env == 0) and torch.all(original == 0)
