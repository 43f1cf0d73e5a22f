"""Detection metrics and score-file I/O.

EER convention (fixed so an independent threshold-sweep oracle can match it
exactly): operating points are taken at every distinct pooled score, with
FAR(t) = fraction of negatives >= t and FRR(t) = fraction of positives < t,
plus the (FAR=0, FRR=1) endpoint. FAR - FRR is non-increasing along this
sweep; the EER is read at the first operating point where it hits zero, or
linearly interpolated inside the first segment where it changes sign. Tied
scores collapse into a single operating point, so a degenerate all-tied pool
interpolates to the midpoint value 0.5.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import KLASSES
from .errors import ParameterError

SCORE_HEADER = ("utt_id", "speech_score", "env_score", "original_score", "predicted_class")


@dataclass
class ScoreRecord:
    """Per-utterance detector outputs.

    speech_score and env_score are spoof-positive (higher = more spoof-like);
    original_score is original-positive (higher = more original-like).
    """

    utt_id: str
    speech_score: float
    env_score: float
    original_score: float
    predicted_class: str


def compute_eer(positive_scores, negative_scores) -> float:
    """Equal error rate of a two-class score pool, in [0, 1]."""
    pos = np.asarray(positive_scores, dtype=np.float64)
    neg = np.asarray(negative_scores, dtype=np.float64)
    if pos.size == 0:
        raise ParameterError("positive score pool is empty")
    if neg.size == 0:
        raise ParameterError("negative score pool is empty")

    thresholds = np.unique(np.concatenate([pos, neg]))
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    far = 1.0 - np.searchsorted(neg_sorted, thresholds, side="left") / neg.size
    frr = np.searchsorted(pos_sorted, thresholds, side="left") / pos.size
    far = np.append(far, 0.0)
    frr = np.append(frr, 1.0)

    diff = far - frr
    for k in range(len(diff)):
        if diff[k] == 0.0:
            return float(far[k])
        if diff[k] < 0.0:
            lam = diff[k - 1] / (diff[k - 1] - diff[k])
            return float(far[k - 1] + lam * (far[k] - far[k - 1]))
    raise ParameterError("no EER crossing found")  # unreachable: diff ends at -1


def eer_pools(records: list[ScoreRecord], labels: dict[str, str]):
    """Three task EERs from one record list.

    Original pool: original-class utterances (positives, by original_score)
    against everything else. Speech and environment pools cover only the four
    combination classes, split by the corresponding component label.
    """
    pools: dict[str, tuple[list[float], list[float]]] = {
        "original": ([], []),
        "speech": ([], []),
        "env": ([], []),
    }
    for record in records:
        if record.utt_id not in labels:
            raise ParameterError(f"no label for utt_id {record.utt_id!r}")
        klass = labels[record.utt_id]
        if klass not in KLASSES:
            raise ParameterError(f"unknown class token {klass!r}")
        if klass == "original":
            pools["original"][0].append(record.original_score)
            continue
        pools["original"][1].append(record.original_score)
        speech_token, env_token = klass.split("_")
        if speech_token == "spoof":
            pools["speech"][0].append(record.speech_score)
        else:
            pools["speech"][1].append(record.speech_score)
        if env_token == "spoof":
            pools["env"][0].append(record.env_score)
        else:
            pools["env"][1].append(record.env_score)
    results = {}
    for name, (positives, negatives) in pools.items():
        if not positives or not negatives:
            raise ParameterError(f"empty {name} EER pool")
        results[name] = compute_eer(positives, negatives)
    return results["original"], results["speech"], results["env"]


def macro_f1(predicted: list[str], truth: list[str], classes: tuple[str, ...] = KLASSES) -> float:
    """Unweighted mean of per-class F1 over `classes`.

    A class absent from both predictions and truth contributes 1; a class
    present on only one side contributes 0 (as does any zero-denominator
    precision/recall case).
    """
    if len(predicted) != len(truth):
        raise ParameterError(
            f"prediction/truth length mismatch: {len(predicted)} vs {len(truth)}"
        )
    if not truth:
        raise ParameterError("empty prediction/truth lists")
    scores = []
    for klass in classes:
        tp = sum(1 for p, t in zip(predicted, truth) if p == klass and t == klass)
        fp = sum(1 for p, t in zip(predicted, truth) if p == klass and t != klass)
        fn = sum(1 for p, t in zip(predicted, truth) if p != klass and t == klass)
        if tp == 0 and fp == 0 and fn == 0:
            scores.append(1.0)
        elif tp == 0:
            scores.append(0.0)
        else:
            precision = tp / (tp + fp)
            recall = tp / (tp + fn)
            scores.append(2.0 * precision * recall / (precision + recall))
    return float(np.mean(scores))


def confusion_matrix(predicted: list[str], truth: list[str]) -> np.ndarray:
    """5x5 count matrix, rows = truth, columns = predicted, class order fixed."""
    if len(predicted) != len(truth):
        raise ParameterError(
            f"prediction/truth length mismatch: {len(predicted)} vs {len(truth)}"
        )
    index = {klass: i for i, klass in enumerate(KLASSES)}
    matrix = np.zeros((len(KLASSES), len(KLASSES)), dtype=np.int64)
    for p, t in zip(predicted, truth):
        matrix[index[t], index[p]] += 1
    return matrix


def write_confusion_csv(matrix: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["truth\\predicted", *KLASSES])
        for klass, row in zip(KLASSES, matrix):
            writer.writerow([klass, *row.tolist()])


def write_scores(records: list[ScoreRecord], path: str | Path) -> None:
    """Tab-separated score file with a fixed header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(SCORE_HEADER)]
    for r in records:
        lines.append(
            f"{r.utt_id}\t{r.speech_score!r}\t{r.env_score!r}\t"
            f"{r.original_score!r}\t{r.predicted_class}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_scores(path: str | Path) -> list[ScoreRecord]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or tuple(lines[0].split("\t")) != SCORE_HEADER:
        raise ParameterError(f"{path}: bad score file header")
    records = []
    for line in lines[1:]:
        if not line.strip():
            continue
        utt_id, s, e, o, klass = line.split("\t")
        records.append(ScoreRecord(utt_id, float(s), float(e), float(o), klass))
    return records


def report(records: list[ScoreRecord], labels: dict[str, str], path: str | Path) -> dict:
    """Compute the metric bundle and write it as JSON; returns the dict.

    f1_best_thresholds is a secondary, in-set number: the macro F1 under the
    best (tau_original, tau_speech, tau_env) on a coarse grid, a ceiling for
    threshold tuning rather than a blind-test metric.
    """
    truth = []
    for record in records:
        if record.utt_id not in labels:
            raise ParameterError(f"no label for utt_id {record.utt_id!r}")
        truth.append(labels[record.utt_id])
    predicted = [r.predicted_class for r in records]
    eer_original, eer_speech, eer_env = eer_pools(records, labels)

    n_original = sum(1 for t in truth if t == "original")
    n_speech_pos = sum(1 for t in truth if t in ("spoof_bonafide", "spoof_spoof"))
    n_env_pos = sum(1 for t in truth if t in ("bonafide_spoof", "spoof_spoof"))
    n_combo = len(truth) - n_original

    metrics = {
        "f1": macro_f1(predicted, truth),
        "eer_original": eer_original,
        "eer_speech": eer_speech,
        "eer_env": eer_env,
        "f1_best_thresholds": _best_threshold_f1(records, truth),
        "pools": {
            "original": [n_original, len(truth) - n_original],
            "speech": [n_speech_pos, n_combo - n_speech_pos],
            "env": [n_env_pos, n_combo - n_env_pos],
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return metrics


def _best_threshold_f1(records: list[ScoreRecord], truth: list[str]) -> float:
    grid = np.linspace(0.1, 0.9, 9)
    best = 0.0
    for tau_o in grid:
        original = [r.original_score > tau_o for r in records]
        for tau_s in grid:
            speech = [r.speech_score > tau_s for r in records]
            for tau_e in grid:
                predicted = []
                for is_orig, is_speech, r in zip(original, speech, records):
                    if is_orig:
                        predicted.append("original")
                    else:
                        env = r.env_score > tau_e
                        predicted.append(_combo_token(is_speech, env))
                best = max(best, macro_f1(predicted, truth))
    return best


def _combo_token(speech_spoofed: bool, env_spoofed: bool) -> str:
    speech = "spoof" if speech_spoofed else "bonafide"
    env = "spoof" if env_spoofed else "bonafide"
    return f"{speech}_{env}"
