"""Losses, masking, ranking penalty, and the training loop contracts."""

import math

import numpy as np
import pytest
import torch

from dualspoof import corpus, training
from dualspoof.corpus import ClassLabel, CorpusConfig, build_corpus
from dualspoof.errors import NumericError, ParameterError
from dualspoof.model import Detector, ModelConfig
from dualspoof.training import (
    BatchLabels,
    LossWeights,
    TrainConfig,
    component_losses,
    load_checkpoint,
    load_training_wave,
    ranking_penalty,
    total_loss,
    train,
)

SMALL_ENCODERS = dict(
    n_heads=2, matching_dim=8, matching_hidden=16, head_hidden=8,
)


def small_model_config():
    from dualspoof.encoders import EncoderConfig

    return ModelConfig(
        speech_encoder=EncoderConfig(out_dim=16, hop=320, n_layers=4, trainable_layers=2),
        env_encoder=EncoderConfig(out_dim=16, hop=640, n_layers=4, trainable_layers=2),
        **SMALL_ENCODERS,
    )


def labels_for(tokens, original_as_bonafide=False):
    return BatchLabels([ClassLabel.from_token(t) for t in tokens], original_as_bonafide)


def logit(p):
    return math.log(p / (1.0 - p))


def bce_oracle(logits, targets):
    total = 0.0
    for z, y in zip(logits, targets):
        p = 1.0 / (1.0 + math.exp(-z))
        total += -(y * math.log(p) + (1 - y) * math.log(1 - p))
    return total / len(logits)


class TestLossWeights:
    def test_defaults(self):
        weights = LossWeights()
        assert (weights.w_speech, weights.w_env, weights.w_original, weights.w_rank) == (
            1.0, 1.0, 0.2, 0.5,
        )

    def test_negative_rejected(self):
        with pytest.raises(ParameterError):
            LossWeights(w_env=-0.1)


class TestComponentLosses:
    def test_perfect_logits_near_zero_loss(self):
        tokens = ["spoof_bonafide", "bonafide_spoof", "original"]
        labels = labels_for(tokens)
        big = 20.0
        speech = torch.tensor([big, -big, 0.0])
        env = torch.tensor([-big, big, 0.0])
        original = torch.tensor([-big, -big, big])
        l_s, l_e, l_o = component_losses(speech, env, original, labels)
        assert float(l_s) < 1e-6 and float(l_e) < 1e-6 and float(l_o) < 1e-6

    def test_all_original_batch_masks_component_losses(self):
        labels = labels_for(["original"] * 4)
        logits = torch.randn(4)
        l_s, l_e, l_o = component_losses(logits, logits, logits, labels)
        assert float(l_s) == 0.0 and float(l_e) == 0.0
        assert float(l_o) > 0.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        tokens = [corpus.KLASSES[i] for i in rng.integers(0, 5, 32)]
        labels = labels_for(tokens)
        speech = torch.tensor(rng.normal(size=32))
        env = torch.tensor(rng.normal(size=32))
        original = torch.tensor(rng.normal(size=32))
        l_s, l_e, l_o = component_losses(speech, env, original, labels)

        combo = [i for i, t in enumerate(tokens) if t != "original"]
        speech_expected = bce_oracle(
            [float(speech[i]) for i in combo],
            [1.0 if tokens[i].startswith("spoof") else 0.0 for i in combo],
        )
        env_expected = bce_oracle(
            [float(env[i]) for i in combo],
            [1.0 if tokens[i].endswith("_spoof") else 0.0 for i in combo],
        )
        original_expected = bce_oracle(
            [float(original[i]) for i in range(32)],
            [1.0 if tokens[i] == "original" else 0.0 for i in range(32)],
        )
        assert abs(float(l_s) - speech_expected) < 1e-10
        assert abs(float(l_e) - env_expected) < 1e-10
        assert abs(float(l_o) - original_expected) < 1e-10

    def test_masking_invariant_under_added_originals(self):
        rng = np.random.default_rng(1)
        tokens = ["spoof_bonafide", "bonafide_spoof", "spoof_spoof", "bonafide_bonafide"]
        speech = torch.tensor(rng.normal(size=4))
        env = torch.tensor(rng.normal(size=4))
        original = torch.tensor(rng.normal(size=4))
        base_s, base_e, _ = component_losses(speech, env, original, labels_for(tokens))

        extended = tokens + ["original", "original"]
        speech_ext = torch.cat([speech, torch.tensor(rng.normal(size=2))])
        env_ext = torch.cat([env, torch.tensor(rng.normal(size=2))])
        original_ext = torch.cat([original, torch.tensor(rng.normal(size=2))])
        ext_s, ext_e, _ = component_losses(speech_ext, env_ext, original_ext, labels_for(extended))
        assert abs(float(base_s) - float(ext_s)) < 1e-12
        assert abs(float(base_e) - float(ext_e)) < 1e-12

    def test_original_as_bonafide_unmasks(self):
        labels = labels_for(["original"] * 3, original_as_bonafide=True)
        logits = torch.zeros(3)
        l_s, l_e, _ = component_losses(logits, logits, logits, labels)
        assert float(l_s) > 0.0 and float(l_e) > 0.0

    def test_empty_batch_rejected(self):
        with pytest.raises(ParameterError):
            component_losses(torch.zeros(0), torch.zeros(0), torch.zeros(0), labels_for([]))

    def test_nonfinite_logits_rejected(self):
        labels = labels_for(["spoof_spoof"])
        bad = torch.tensor([float("nan")])
        with pytest.raises(NumericError):
            component_losses(bad, bad, bad, labels)


class TestRankingPenalty:
    def test_satisfied_hinge_is_zero(self):
        labels = labels_for(["spoof_bonafide"])
        speech = torch.tensor([logit(0.9)])
        env = torch.tensor([logit(0.1)])
        assert float(ranking_penalty(speech, env, labels, margin=0.2)) == 0.0

    def test_tied_probabilities_pay_the_margin(self):
        labels = labels_for(["spoof_bonafide"])
        zeros = torch.zeros(1)
        value = float(ranking_penalty(zeros, zeros, labels, margin=0.2))
        assert abs(value - 0.2) < 1e-7

    def test_symmetric_classes_contribute_nothing(self):
        labels = labels_for(["original", "bonafide_bonafide", "spoof_spoof"])
        logits = torch.randn(3)
        assert float(ranking_penalty(logits, logits, labels, margin=0.5)) == 0.0

    def test_direction_flips_for_env_side(self):
        labels = labels_for(["bonafide_spoof"])
        speech = torch.tensor([logit(0.1)])
        env = torch.tensor([logit(0.9)])
        assert float(ranking_penalty(speech, env, labels, margin=0.2)) == 0.0
        assert float(ranking_penalty(env, speech, labels, margin=0.2)) > 0.0

    def test_negative_margin_rejected(self):
        with pytest.raises(ParameterError):
            ranking_penalty(torch.zeros(1), torch.zeros(1), labels_for(["spoof_bonafide"]), -1.0)


class TestTotalLoss:
    def test_worked_example(self):
        value = total_loss(
            torch.tensor(0.5, dtype=torch.float64),
            torch.tensor(0.3, dtype=torch.float64),
            torch.tensor(1.0, dtype=torch.float64),
            torch.tensor(0.2, dtype=torch.float64),
            LossWeights(),
        )
        assert float(value) == pytest.approx(1.1, abs=1e-12)

    def test_zero_losses(self):
        zero = torch.tensor(0.0)
        assert float(total_loss(zero, zero, zero, zero, LossWeights())) == 0.0

    def test_zero_weights(self):
        weights = LossWeights(w_speech=0, w_env=0, w_original=0, w_rank=0)
        value = total_loss(
            torch.tensor(3.0), torch.tensor(2.0), torch.tensor(1.0), torch.tensor(9.0), weights
        )
        assert float(value) == 0.0

    def test_linear_in_each_weight(self):
        losses = [torch.tensor(v, dtype=torch.float64) for v in (0.7, 0.4, 0.9, 0.3)]
        base = float(total_loss(*losses, LossWeights(w_env=1.0)))
        doubled = float(total_loss(*losses, LossWeights(w_env=2.0)))
        assert doubled - base == pytest.approx(0.4, abs=1e-12)

    def test_nonfinite_rejected(self):
        with pytest.raises(NumericError):
            total_loss(
                torch.tensor(float("inf")), torch.tensor(0.0), torch.tensor(0.0),
                torch.tensor(0.0), LossWeights(),
            )


@pytest.fixture(scope="module")
def smoke_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke_corpus")
    config = CorpusConfig(clips_per_class={"train": 8, "val": 4}, master_seed=7)
    build_corpus(config, root)
    return root


class TestTrainLoop:
    def test_deterministic_metric_logs(self, smoke_corpus, tmp_path):
        config = TrainConfig(epochs=2, seed=3, batch_size=16)
        train(smoke_corpus, tmp_path / "a", small_model_config(), config)
        train(smoke_corpus, tmp_path / "b", small_model_config(), config)
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (
            tmp_path / "b" / "metrics.csv"
        ).read_bytes()

    def test_zero_learning_rate_is_fixed_point(self, smoke_corpus, tmp_path):
        torch.manual_seed(11)
        reference = Detector(small_model_config())
        config = TrainConfig(learning_rate=0.0, epochs=1, seed=11, batch_size=16)
        checkpoint, _ = train(smoke_corpus, tmp_path / "run", small_model_config(), config)
        trained, _ = load_checkpoint(checkpoint)
        torch.manual_seed(11)
        fresh = Detector(small_model_config())
        for key, value in trained.state_dict().items():
            assert torch.equal(value, fresh.state_dict()[key]), key

    def test_checkpoint_round_trip_reproduces_metrics(self, smoke_corpus, tmp_path):
        config = TrainConfig(epochs=2, seed=5, batch_size=16)
        checkpoint, rows = train(smoke_corpus, tmp_path / "run", small_model_config(), config)
        model, meta = load_checkpoint(checkpoint)
        entries = corpus.load_manifest(smoke_corpus / "val.jsonl")
        waves = training.load_waveforms(entries, smoke_corpus, 1.0)
        records = training.score_entries(model, entries, waves, batch_size=16)
        truth = {e.utt_id: e.klass.klass for e in entries}
        from dualspoof import evaluation

        f1 = evaluation.macro_f1([r.predicted_class for r in records],
                                 [truth[r.utt_id] for r in records])
        best_row = max(rows, key=lambda r: (r["val_f1"], r["epoch"]))
        assert f1 == best_row["val_f1"]
        assert meta["epoch"] == best_row["epoch"]

    def test_divergence_aborts_and_keeps_checkpoint(self, smoke_corpus, tmp_path, monkeypatch):
        config = TrainConfig(epochs=2, seed=1, batch_size=16)

        def poisoned_total_loss(*args, **kwargs):
            raise NumericError("non-finite total loss")

        monkeypatch.setattr(training, "total_loss", poisoned_total_loss)
        with pytest.raises(NumericError):
            train(smoke_corpus, tmp_path / "run", small_model_config(), config)
        assert (tmp_path / "run" / "checkpoint.pt").is_file()
        model, meta = load_checkpoint(tmp_path / "run" / "checkpoint.pt")
        assert meta["epoch"] == 0

    def test_metrics_csv_header(self, smoke_corpus, tmp_path):
        config = TrainConfig(epochs=1, seed=2, batch_size=16)
        train(smoke_corpus, tmp_path / "run", small_model_config(), config)
        header = (tmp_path / "run" / "metrics.csv").read_text().splitlines()[0]
        assert header == "epoch,train_loss,val_f1,val_eer_original,val_eer_speech,val_eer_env"


class TestAugmentedLoading:
    def test_duplicate_wave_differs_and_is_deterministic(self, smoke_corpus):
        entries = corpus.load_manifest(smoke_corpus / "train.jsonl")
        combo = next(e for e in entries if e.klass.klass == "spoof_spoof")
        plain = load_training_wave(combo, smoke_corpus, 1.0)
        from dataclasses import replace

        duplicate = replace(combo, utt_id=combo.utt_id + "#aug0", augment_seed=0)
        augmented_a = load_training_wave(duplicate, smoke_corpus, 1.0)
        augmented_b = load_training_wave(duplicate, smoke_corpus, 1.0)
        assert np.array_equal(augmented_a, augmented_b)
        assert not np.array_equal(augmented_a, plain)

    def test_original_duplicate_noise_only(self, smoke_corpus):
        entries = corpus.load_manifest(smoke_corpus / "train.jsonl")
        original = next(e for e in entries if e.klass.klass == "original")
        from dataclasses import replace

        plain = load_training_wave(original, smoke_corpus, 1.0)
        for seed in range(6):
            duplicate = replace(original, utt_id=f"{original.utt_id}#a{seed}", augment_seed=seed)
            augmented = load_training_wave(duplicate, smoke_corpus, 1.0)
            assert len(augmented) == len(plain)
