"""In-process sanity suite: oracle agreement, gradient fidelity, invariants.

A compact mirror of the heavier pytest suite, runnable from the CLI without
test dependencies. Each check prints one PASS/FAIL line; the exit code is
the number of failures.
"""

from __future__ import annotations

import numpy as np
import torch

from . import augment, corpus, evaluation
from .fusion import BidirectionalFusion, CrossAttention, grad_check_fusion
from .matching import MatchingHead, grad_check_matching, stat_pool


def _eer_oracle(pos: np.ndarray, neg: np.ndarray) -> float:
    # threshold sweep over every distinct score plus midpoints, loop-based
    scores = np.unique(np.concatenate([pos, neg]))
    thresholds = list(scores)
    for a, b in zip(scores[:-1], scores[1:]):
        thresholds.append((a + b) / 2.0)
    thresholds.append(scores[-1] + 1.0)
    thresholds.sort()
    points = []
    for t in thresholds:
        far = sum(1 for v in neg if v >= t) / len(neg)
        frr = sum(1 for v in pos if v < t) / len(pos)
        points.append((far, frr))
    prev = None
    for far, frr in points:
        d = far - frr
        if d == 0.0:
            return far
        if d < 0.0:
            pf, pr = prev
            lam = (pf - pr) / ((pf - pr) - d)
            return pf + lam * (far - pf)
        prev = (far, frr)
    raise AssertionError("no crossing")


def _check_eer() -> bool:
    rng = np.random.default_rng(7)
    for _ in range(50):
        pos = rng.normal(1.0, 1.0, size=rng.integers(1, 50))
        neg = rng.normal(0.0, 1.0, size=rng.integers(1, 50))
        if abs(evaluation.compute_eer(pos, neg) - _eer_oracle(pos, neg)) > 1e-9:
            return False
    ties = np.full(5, 0.3)
    return abs(evaluation.compute_eer(ties, ties) - 0.5) < 1e-12


def _check_pooling() -> bool:
    rng = np.random.default_rng(11)
    for _ in range(20):
        t, d = rng.integers(1, 9), rng.integers(1, 7)
        h = rng.normal(size=(t, d))
        pooled = stat_pool(torch.tensor(h)).numpy()
        expected = np.concatenate(
            [
                h.mean(axis=0),
                h.max(axis=0),
                h.std(axis=0),
                np.sqrt((h**2).sum(axis=0)),
            ]
        )
        if np.max(np.abs(pooled - expected)) > 1e-12:
            return False
    return True


def _check_snr() -> bool:
    # small amplitudes keep the sum inside unit peak, so the injected noise
    # is recoverable as the output/input difference
    rng = np.random.default_rng(3)
    for _ in range(20):
        clip = corpus.AudioClip(0.05 * rng.normal(size=8000), 16000)
        target = float(rng.uniform(5.0, 20.0))
        noisy = augment.inject_noise(clip, target, seed=int(rng.integers(1 << 30)))
        noise = noisy.samples - clip.samples
        realized = 10.0 * np.log10(np.mean(clip.samples**2) / np.mean(noise**2))
        if abs(realized - target) > 0.01:
            return False
    return True


def _check_attention() -> bool:
    torch.manual_seed(5)
    attn = CrossAttention(8, 2).double()
    q = torch.randn(3, 8, dtype=torch.float64)
    kv = torch.randn(6, 8, dtype=torch.float64)
    out, weights = attn(q, kv, return_weights=True)
    if (weights.sum(dim=-1) - 1.0).abs().max() > 1e-6:
        return False
    perm = torch.randperm(6)
    out_perm = attn(q, kv[perm])
    return (out - out_perm).abs().max() <= 1e-6


def _check_mix_identity() -> bool:
    s = corpus.synth_speech(1, 0.25, 16000)
    e = corpus.synth_env(2, 0.25, 16000)
    all_s = augment.mix(s, e, augment.AugmentSpec("weighted_sum", mix_ratio=1.0))
    all_e = augment.mix(s, e, augment.AugmentSpec("weighted_sum", mix_ratio=0.0))
    return np.array_equal(all_s.samples, s.samples) and np.array_equal(all_e.samples, e.samples)


def _check_fusion_gradients() -> bool:
    torch.manual_seed(1)
    fusion = BidirectionalFusion(model_dim=8, n_heads=2)
    err = grad_check_fusion(
        fusion, torch.randn(3, 8, dtype=torch.float64), torch.randn(4, 8, dtype=torch.float64)
    )
    return err < 1e-4


def _check_matching_gradients() -> bool:
    torch.manual_seed(2)
    head = MatchingHead(speech_dim=4, env_dim=4, latent_dim=6, hidden_dim=8)
    err = grad_check_matching(
        head,
        torch.randn(1, 3, 4, dtype=torch.float64),
        torch.randn(1, 5, 4, dtype=torch.float64),
    )
    return err < 1e-4


CHECKS = (
    ("eer matches threshold-sweep oracle", _check_eer),
    ("stat pooling matches loop oracle", _check_pooling),
    ("noise injection hits requested SNR", _check_snr),
    ("cross-attention invariants", _check_attention),
    ("weighted_sum identity cases", _check_mix_identity),
    ("fusion gradients vs finite differences", _check_fusion_gradients),
    ("matching gradients vs finite differences", _check_matching_gradients),
)


def run_selftest() -> int:
    failures = 0
    for name, check in CHECKS:
        try:
            ok = check()
        except Exception as exc:  # a crashed check is a failure, not an abort
            ok = False
            name = f"{name} ({type(exc).__name__}: {exc})"
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1
    print(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed")
    return failures
