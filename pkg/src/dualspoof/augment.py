"""Component mixing schemes, SNR-exact noise injection, class-aware oversampling.

All operations are pure given explicit seeds. Mixing always preserves length
and keeps output inside [-1, 1]; a common rescale is applied only when the
raw result exceeds unit peak, so identity cases stay bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corpus import AudioClip, ClassLabel, ManifestEntry
from .errors import DegenerateInputError, ParameterError

SCHEMES = ("plain_mix", "concat_mix", "weighted_sum", "partial_mix", "time_shift")

CROSSFADE_S = 0.010


@dataclass
class AugmentSpec:
    """Mixing scheme plus its sampled parameters.

    mix_ratio applies to weighted_sum, offset_s to time_shift, segment to
    partial_mix; noise_snr_db, when present, requests Gaussian noise
    injection after mixing.
    """

    scheme: str
    mix_ratio: float = 0.5
    offset_s: float = 0.0
    segment: tuple[float, float] = (0.0, 0.0)
    noise_snr_db: float | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "scheme": self.scheme,
                "mix_ratio": self.mix_ratio,
                "offset_s": self.offset_s,
                "segment": list(self.segment),
                "noise_snr_db": self.noise_snr_db,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "AugmentSpec":
        record = json.loads(text)
        return cls(
            scheme=record["scheme"],
            mix_ratio=record["mix_ratio"],
            offset_s=record["offset_s"],
            segment=tuple(record["segment"]),
            noise_snr_db=record["noise_snr_db"],
        )


def _rescale_if_needed(x: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(x))
    if peak > 1.0:
        return x / peak
    return x


def mix(s: AudioClip, e: AudioClip, spec: AugmentSpec) -> AudioClip:
    """Combine speech and environment components under one of five schemes.

    plain_mix     x = s + e
    weighted_sum  x = a*s + (1-a)*e, a = mix_ratio
    concat_mix    first half of the timeline from s + e, second half from s,
                  with a 10 ms linear crossfade at the boundary
    partial_mix   e added only inside [start_s, end_s), s everywhere
    time_shift    e circularly rotated by offset_s, then plain_mix

    Output length always equals input length; a shared rescale is applied
    when the raw peak exceeds 1.
    """
    if s.sample_rate != e.sample_rate:
        raise ParameterError(
            f"sample rate mismatch: {s.sample_rate} vs {e.sample_rate}"
        )
    if len(s.samples) != len(e.samples):
        raise ParameterError(
            f"length mismatch: {len(s.samples)} vs {len(e.samples)}"
        )
    if spec.scheme not in SCHEMES:
        raise ParameterError(f"unknown mix scheme {spec.scheme!r}")

    n = len(s.samples)
    rate = s.sample_rate
    duration = n / rate
    xs, xe = s.samples, e.samples

    if spec.scheme == "plain_mix":
        out = xs + xe
    elif spec.scheme == "weighted_sum":
        a = spec.mix_ratio
        if not 0.0 <= a <= 1.0:
            raise ParameterError(f"mix_ratio must be in [0,1], got {a}")
        out = a * xs + (1.0 - a) * xe
    elif spec.scheme == "concat_mix":
        out = xs + xe
        mid = n // 2
        fade = min(int(round(CROSSFADE_S * rate)), n)
        start = max(mid - fade // 2, 0)
        stop = min(start + fade, n)
        w = np.arange(1, stop - start + 1) / (stop - start + 1)
        out = out.copy()
        out[start:stop] = (1.0 - w) * out[start:stop] + w * xs[start:stop]
        out[stop:] = xs[stop:]
    elif spec.scheme == "partial_mix":
        start_s, end_s = spec.segment
        if not (0.0 <= start_s < end_s <= duration + 1e-9):
            raise ParameterError(
                f"partial_mix segment ({start_s}, {end_s}) invalid for duration {duration}"
            )
        i = int(round(start_s * rate))
        j = min(int(round(end_s * rate)), n)
        out = xs.copy()
        out[i:j] += xe[i:j]
    else:  # time_shift
        if not 0.0 <= spec.offset_s < duration:
            raise ParameterError(
                f"time_shift offset {spec.offset_s} outside clip duration {duration}"
            )
        out = xs + np.roll(xe, int(round(spec.offset_s * rate)))

    return AudioClip(_rescale_if_needed(out), rate, id=s.id)


def inject_noise(x: AudioClip, snr_db: float, seed: int) -> AudioClip:
    """Add white Gaussian noise at an exact realized SNR.

    The noise realization is scaled so 10*log10(P_signal / P_noise) equals
    snr_db using the actual mean-square powers, not the expected ones. If the
    sum exceeds unit peak, signal and noise are rescaled together, which
    leaves the realized SNR unchanged.
    """
    p_signal = np.mean(x.samples**2)
    if p_signal == 0.0:
        raise DegenerateInputError("SNR undefined for a silent input")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(len(x.samples))
    p_noise = np.mean(noise**2)
    noise *= np.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    return AudioClip(_rescale_if_needed(x.samples + noise), x.sample_rate, id=x.id)


def sample_augment_spec(
    klass: ClassLabel, rng_seed: int, duration_s: float = 1.0
) -> AugmentSpec:
    """Draw a random AugmentSpec (deterministic given rng_seed).

    Scheme is uniform over the five schemes; mix_ratio ~ U[0.3, 0.7]; offset
    ~ U[0.1, 0.9] * duration; segment is a uniform sub-interval of length at
    least 0.25 * duration; noise_snr_db is present with probability 0.5,
    uniform in [5, 20] dB. For original-class entries the caller applies only
    the noise part (originals have no separated components to re-mix).
    """
    rng = np.random.default_rng(rng_seed)
    scheme = SCHEMES[rng.integers(0, len(SCHEMES))]
    mix_ratio = rng.uniform(0.3, 0.7)
    offset_s = rng.uniform(0.1, 0.9) * duration_s
    seg_len = rng.uniform(0.25, 1.0) * duration_s
    seg_start = rng.uniform(0.0, duration_s - seg_len)
    noise_snr_db = None
    if rng.uniform() < 0.5:
        noise_snr_db = float(rng.uniform(5.0, 20.0))
    return AugmentSpec(
        scheme=scheme,
        mix_ratio=float(mix_ratio),
        offset_s=float(offset_s),
        segment=(float(seg_start), float(seg_start + seg_len)),
        noise_snr_db=noise_snr_db,
    )


def oversample(
    entries: list[ManifestEntry], seed: int, duration_s: float = 1.0
) -> list[ManifestEntry]:
    """Balance classes by duplicating minority entries up to the majority count.

    Duplicates are drawn uniformly with replacement within each class and
    appended after the originals, each carrying a distinct augment_seed and
    the serialized augmentation instance it will receive, so a repeated
    sample is trained under a different view. An already-balanced input is
    returned as an unchanged copy.
    """
    if not entries:
        raise ParameterError("cannot oversample an empty entry list")
    by_class: dict[str, list[ManifestEntry]] = {}
    for entry in entries:
        by_class.setdefault(entry.klass.klass, []).append(entry)
    majority = max(len(group) for group in by_class.values())

    rng = np.random.default_rng(seed)
    out = list(entries)
    serial = 0
    for klass in sorted(by_class):
        group = by_class[klass]
        deficit = majority - len(group)
        if deficit == 0:
            continue
        picks = rng.integers(0, len(group), size=deficit)
        for pick in picks:
            src = group[int(pick)]
            spec = sample_augment_spec(src.klass, serial, duration_s)
            out.append(
                ManifestEntry(
                    utt_id=f"{src.utt_id}#aug{serial}",
                    wav_path=src.wav_path,
                    klass=src.klass,
                    split=src.split,
                    speech_path=src.speech_path,
                    env_path=src.env_path,
                    augment_seed=serial,
                    augment_spec=spec.to_json(),
                )
            )
            serial += 1
    return out
