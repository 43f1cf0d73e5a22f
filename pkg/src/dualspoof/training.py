"""Multi-task training: weighted classification losses, ranking regularizer,
Adam loop with per-epoch validation metrics and best-checkpoint retention.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import augment, corpus, evaluation
from .corpus import ClassLabel, ManifestEntry
from .errors import NumericError, ParameterError
from .heads import decide_from_probs
from .model import Detector, ModelConfig

METRICS_HEADER = ("epoch", "train_loss", "val_f1", "val_eer_original", "val_eer_speech", "val_eer_env")
CHECKPOINT_FORMAT = "dualspoof-checkpoint-v1"


@dataclass
class LossWeights:
    w_speech: float = 1.0
    w_env: float = 1.0
    w_original: float = 0.2
    w_rank: float = 0.5
    rank_margin: float = 0.2

    def __post_init__(self) -> None:
        for name in ("w_speech", "w_env", "w_original", "w_rank", "rank_margin"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 12
    scheduler: str = "cosine"
    seed: int = 42
    threads: int = 1
    original_as_bonafide: bool = False

    def __post_init__(self) -> None:
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 1:
            raise ParameterError("TrainConfig values out of range")
        if self.scheduler not in ("none", "cosine"):
            raise ParameterError(f"unknown scheduler {self.scheduler!r}")


class BatchLabels:
    """Targets and masks for one batch of class labels.

    Speech/env targets are defined only for the four combination classes;
    original-class samples are masked out of the component losses unless
    original_as_bonafide is set, in which case they count as bona fide on
    both components. asym is +1 where only speech is spoofed, -1 where only
    the environment is spoofed, 0 elsewhere.
    """

    def __init__(self, labels: list[ClassLabel], original_as_bonafide: bool = False):
        n = len(labels)
        self.original_target = torch.zeros(n)
        self.speech_target = torch.zeros(n)
        self.env_target = torch.zeros(n)
        self.speech_mask = torch.zeros(n, dtype=torch.bool)
        self.env_mask = torch.zeros(n, dtype=torch.bool)
        self.asym = torch.zeros(n)
        for i, label in enumerate(labels):
            self.original_target[i] = float(label.original_label)
            if label.klass == "original":
                if original_as_bonafide:
                    self.speech_mask[i] = True
                    self.env_mask[i] = True
                continue
            self.speech_mask[i] = True
            self.env_mask[i] = True
            self.speech_target[i] = 1.0 if label.speech_spoofed else 0.0
            self.env_target[i] = 1.0 if label.env_spoofed else 0.0
            if label.speech_spoofed and not label.env_spoofed:
                self.asym[i] = 1.0
            elif label.env_spoofed and not label.speech_spoofed:
                self.asym[i] = -1.0

    def index(self, idx) -> "BatchLabels":
        out = object.__new__(BatchLabels)
        for name in ("original_target", "speech_target", "env_target", "speech_mask", "env_mask", "asym"):
            setattr(out, name, getattr(self, name)[idx])
        return out


def _masked_bce(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(logits).all():
        raise NumericError("non-finite logits in loss computation")
    if not bool(mask.any()):
        return logits.new_zeros(())
    return nn.functional.binary_cross_entropy_with_logits(
        logits[mask], targets[mask].to(logits.dtype)
    )


def component_losses(
    speech_logits: torch.Tensor,
    env_logits: torch.Tensor,
    original_logits: torch.Tensor | None,
    labels: BatchLabels,
):
    """Per-task mean BCE (from logits). A fully masked task contributes 0."""
    if speech_logits.numel() == 0:
        raise ParameterError("empty batch")
    loss_speech = _masked_bce(speech_logits, labels.speech_target, labels.speech_mask)
    loss_env = _masked_bce(env_logits, labels.env_target, labels.env_mask)
    if original_logits is None:
        loss_original = speech_logits.new_zeros(())
    else:
        loss_original = _masked_bce(
            original_logits,
            labels.original_target,
            torch.ones_like(labels.original_target, dtype=torch.bool),
        )
    return loss_speech, loss_env, loss_original


def ranking_penalty(
    speech_logits: torch.Tensor,
    env_logits: torch.Tensor,
    labels: BatchLabels,
    margin: float,
) -> torch.Tensor:
    """Hinge penalty pushing the spoofed component's probability above the
    genuine one's on asymmetric samples; 0 when the batch has none."""
    if margin < 0:
        raise ParameterError(f"margin must be >= 0, got {margin}")
    asym = labels.asym != 0
    if not bool(asym.any()):
        return speech_logits.new_zeros(())
    p_speech = torch.sigmoid(speech_logits[asym])
    p_env = torch.sigmoid(env_logits[asym])
    gap = labels.asym[asym] * (p_speech - p_env)
    return torch.clamp(margin - gap, min=0.0).mean()


def total_loss(
    loss_speech: torch.Tensor,
    loss_env: torch.Tensor,
    loss_original: torch.Tensor,
    loss_rank: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    value = (
        weights.w_speech * loss_speech
        + weights.w_env * loss_env
        + weights.w_original * loss_original
        + weights.w_rank * loss_rank
    )
    if not torch.isfinite(torch.as_tensor(value)).all():
        raise NumericError("non-finite total loss")
    return value


# --- data loading -----------------------------------------------------------


def load_training_wave(entry: ManifestEntry, root: Path, duration_s: float) -> np.ndarray:
    """Waveform for one manifest entry, applying the entry's augmentation
    instance when it is an oversampled duplicate.

    Combination-class duplicates are re-mixed from their stored components
    under a freshly sampled scheme; original-class duplicates (and entries
    without component files) receive at most noise injection.
    """
    if entry.augment_seed is None:
        return corpus.read_wav(root / entry.wav_path).samples
    if entry.augment_spec is not None:
        spec = augment.AugmentSpec.from_json(entry.augment_spec)
    else:
        spec = augment.sample_augment_spec(entry.klass, entry.augment_seed, duration_s)
    if entry.klass.klass != "original" and entry.speech_path and entry.env_path:
        speech = corpus.read_wav(root / entry.speech_path)
        env = corpus.read_wav(root / entry.env_path)
        clip = augment.mix(speech, env, spec)
    else:
        clip = corpus.read_wav(root / entry.wav_path)
    if spec.noise_snr_db is not None:
        clip = augment.inject_noise(clip, spec.noise_snr_db, entry.augment_seed)
    return clip.samples


def load_waveforms(entries: list[ManifestEntry], root: Path, duration_s: float) -> torch.Tensor:
    waves = [load_training_wave(entry, root, duration_s) for entry in entries]
    lengths = {len(w) for w in waves}
    if len(lengths) != 1:
        raise ParameterError(f"clips have mixed lengths {sorted(lengths)}")
    return torch.tensor(np.stack(waves), dtype=torch.float32)


# --- scoring ----------------------------------------------------------------


@torch.no_grad()
def score_entries(
    model: Detector,
    entries: list[ManifestEntry],
    waves: torch.Tensor,
    batch_size: int = 64,
    tau_original: float = 0.5,
    tau_speech: float = 0.5,
    tau_env: float = 0.5,
) -> list[evaluation.ScoreRecord]:
    model.eval()
    records: list[evaluation.ScoreRecord] = []
    for start in range(0, len(entries), batch_size):
        batch = waves[start : start + batch_size]
        p_speech, p_env, p_original = model.probabilities(batch)
        for offset, entry in enumerate(entries[start : start + batch_size]):
            ps = float(p_speech[offset])
            pe = float(p_env[offset])
            po = float(p_original[offset])
            predicted = decide_from_probs(po, ps, pe, tau_original, tau_speech, tau_env)
            records.append(evaluation.ScoreRecord(entry.utt_id, ps, pe, po, predicted))
    return records


# --- checkpointing ----------------------------------------------------------


def save_checkpoint(model: Detector, path: str | Path, epoch: int, val_f1: float | None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "model_config": model.config.to_dict(),
            "state_dict": model.state_dict(),
            "epoch": epoch,
            "val_f1": val_f1,
        },
        path,
    )


def load_checkpoint(path: str | Path) -> tuple[Detector, dict]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ParameterError(f"{path}: not a recognized checkpoint (field 'format')")
    model = Detector(ModelConfig.from_dict(payload["model_config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, {"epoch": payload["epoch"], "val_f1": payload["val_f1"]}


# --- the loop ---------------------------------------------------------------


def _epoch_lr(base: float, epoch: int, total: int, scheduler: str) -> float:
    if scheduler == "none" or total <= 1:
        return base
    # cosine decay from 1.0x to 0.5x of the base rate over the run; desk-scale
    # runs are short enough that decaying further starves calibration
    progress = epoch / (total - 1)
    return base * (0.75 + 0.25 * float(np.cos(np.pi * progress)))


def train(
    corpus_dir: str | Path,
    out_dir: str | Path,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
    weights: LossWeights | None = None,
) -> tuple[Path, list[dict]]:
    """Train on corpus_dir/train.jsonl, validating on corpus_dir/val.jsonl.

    Writes metrics.csv (one row per epoch) and checkpoint.pt (best validation
    macro F1) under out_dir; returns the checkpoint path and the metric rows.
    On a non-finite loss the loop aborts with NumericError, leaving the best
    checkpoint so far on disk.
    """
    corpus_dir = Path(corpus_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    weights = weights or LossWeights()

    torch.set_num_threads(max(1, train_config.threads))
    torch.manual_seed(train_config.seed)

    train_entries = corpus.load_manifest(corpus_dir / "train.jsonl")
    val_entries = corpus.load_manifest(corpus_dir / "val.jsonl")
    if not train_entries:
        raise ParameterError("empty training manifest")

    duration_s = corpus.read_wav(corpus_dir / train_entries[0].wav_path).duration_s
    train_entries = augment.oversample(train_entries, train_config.seed, duration_s)

    train_waves = load_waveforms(train_entries, corpus_dir, duration_s)
    val_waves = load_waveforms(val_entries, corpus_dir, duration_s)
    labels = BatchLabels(
        [e.klass for e in train_entries], train_config.original_as_bonafide
    )
    val_truth = {e.utt_id: e.klass.klass for e in val_entries}

    model = Detector(model_config)
    optimizer = torch.optim.Adam(
        [p for p in model.parameters() if p.requires_grad], lr=train_config.learning_rate
    )

    checkpoint_path = out_dir / "checkpoint.pt"
    metrics_path = out_dir / "metrics.csv"
    save_checkpoint(model, checkpoint_path, epoch=0, val_f1=None)

    rows: list[dict] = []
    best_f1 = -1.0
    n = len(train_entries)
    with metrics_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(METRICS_HEADER)
        for epoch in range(1, train_config.epochs + 1):
            lr = _epoch_lr(
                train_config.learning_rate, epoch - 1, train_config.epochs, train_config.scheduler
            )
            for group in optimizer.param_groups:
                group["lr"] = lr

            model.train()
            rng = np.random.default_rng(np.random.SeedSequence([train_config.seed, epoch]))
            order = rng.permutation(n)
            epoch_loss = 0.0
            batches = 0
            for start in range(0, n, train_config.batch_size):
                idx = torch.as_tensor(order[start : start + train_config.batch_size])
                batch_labels = labels.index(idx)
                speech_logits, env_logits, original_logits = model(train_waves[idx])
                l_s, l_e, l_o = component_losses(
                    speech_logits, env_logits, original_logits, batch_labels
                )
                l_r = ranking_penalty(
                    speech_logits, env_logits, batch_labels, weights.rank_margin
                )
                loss = total_loss(l_s, l_e, l_o, l_r, weights)
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                epoch_loss += float(loss.detach())
                batches += 1

            records = score_entries(model, val_entries, val_waves, train_config.batch_size)
            predicted = [r.predicted_class for r in records]
            truth = [val_truth[r.utt_id] for r in records]
            val_f1 = evaluation.macro_f1(predicted, truth)
            eer_original, eer_speech, eer_env = evaluation.eer_pools(records, val_truth)
            row = {
                "epoch": epoch,
                "train_loss": epoch_loss / batches,
                "val_f1": val_f1,
                "val_eer_original": eer_original,
                "val_eer_speech": eer_speech,
                "val_eer_env": eer_env,
            }
            rows.append(row)
            writer.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in METRICS_HEADER])
            handle.flush()
            if val_f1 >= best_f1:
                best_f1 = val_f1
                save_checkpoint(model, checkpoint_path, epoch=epoch, val_f1=val_f1)
    return checkpoint_path, rows
