"""Synthetic five-class corpus: waveform synthesis, WAV and manifest I/O.

The corpus mirrors a component-level spoofing task: every clip is built from a
speech-like component and an environment-like component, each of which can be
independently genuine or manipulated. Five classes result:

  original           single-pass capture (components never separated)
  bonafide_bonafide  genuine speech + genuine environment, hard-mixed
  spoof_bonafide     manipulated speech + genuine environment
  bonafide_spoof     genuine speech + manipulated environment
  spoof_spoof        both components manipulated

Synthesis is a pure function of (seed, params): a fixed master seed yields a
byte-identical corpus on every run.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.signal import lfilter

from .errors import DegenerateInputError, FormatError, ParameterError

KLASSES = (
    "original",
    "bonafide_bonafide",
    "spoof_bonafide",
    "bonafide_spoof",
    "spoof_spoof",
)
SPLITS = ("train", "val", "eval", "test")

# Combination classes carry (speech_spoofed, env_spoofed); the first token of
# the class name is the speech component, the second the environment.
_COMPONENT_FLAGS = {
    "bonafide_bonafide": (False, False),
    "spoof_bonafide": (True, False),
    "bonafide_spoof": (False, True),
    "spoof_spoof": (True, True),
}

PEAK_TARGET = 0.9
LOOP_SEGMENT_S = 0.250
COMB_DELAY_S = 0.002
COMB_GAIN = 0.7
QUANT_BITS = 4
SMOOTH_COEFF = 0.2
# texture bands sit between the vocal fundamental region and ~2 kHz: low
# enough that band-passed noise stays smooth at the sample scale (so loop
# discontinuities stand out), high enough that every mix keeps mid-band
# energy the original-class smoothing filter visibly removes
_ENV_BANDS_HZ = ((700.0, 1300.0), (900.0, 1700.0), (1100.0, 1900.0), (1300.0, 2100.0))


@dataclass(frozen=True)
class ClassLabel:
    """Five-way class token with derived per-component binary labels."""

    klass: str
    speech_label: str | None
    env_label: str | None
    original_label: int

    @classmethod
    def from_token(cls, token: str) -> "ClassLabel":
        if token not in KLASSES:
            raise ParameterError(f"unknown class token {token!r}")
        if token == "original":
            return cls("original", None, None, 1)
        speech_spoofed, env_spoofed = _COMPONENT_FLAGS[token]
        return cls(
            token,
            "spoof" if speech_spoofed else "bonafide",
            "spoof" if env_spoofed else "bonafide",
            0,
        )

    @property
    def speech_spoofed(self) -> bool | None:
        if self.speech_label is None:
            return None
        return self.speech_label == "spoof"

    @property
    def env_spoofed(self) -> bool | None:
        if self.env_label is None:
            return None
        return self.env_label == "spoof"


@dataclass
class AudioClip:
    """Mono waveform with sample rate; samples are floats in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    id: str = ""

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ParameterError("AudioClip requires a 1-D sample array")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class ManifestEntry:
    """One corpus utterance: id, wav location, class, split.

    Combination classes also record the pre-mix component files so training
    can re-mix them when oversampling; `augment_seed` and the serialized
    `augment_spec` sidecar are set only on oversampled duplicates.
    """

    utt_id: str
    wav_path: str
    klass: ClassLabel
    split: str
    speech_path: str | None = None
    env_path: str | None = None
    augment_seed: int | None = None
    augment_spec: str | None = None


@dataclass
class CorpusConfig:
    """Per-split clips-per-class counts plus shared synthesis parameters."""

    clips_per_class: Mapping[str, int]
    duration_s: float = 1.0
    sample_rate: int = 16000
    master_seed: int = 42
    write_components: bool = True


def _validate_synth_params(duration_s: float, sample_rate: int) -> int:
    if duration_s <= 0:
        raise ParameterError(f"duration_s must be > 0, got {duration_s}")
    if sample_rate < 8000:
        raise ParameterError(f"sample_rate must be >= 8000, got {sample_rate}")
    n = int(round(duration_s * sample_rate))
    return max(n, 1)


def peak_normalize(x: np.ndarray, target: float = PEAK_TARGET) -> np.ndarray:
    peak = np.max(np.abs(x))
    if peak == 0.0:
        raise DegenerateInputError("cannot peak-normalize an all-zero signal")
    return x * (target / peak)


def synth_speech(
    seed: int,
    duration_s: float = 1.0,
    sample_rate: int = 16000,
    spoofed: bool = False,
) -> AudioClip:
    """Synthesize the speech-like component.

    Genuine clips are a 5-partial harmonic series (fundamental 90-300 Hz,
    1/k amplitude decay) with a slow linear pitch glide (up to +/-10%) and a
    4 Hz amplitude modulation. Manipulated clips apply 4-bit amplitude
    quantization followed by a feed-forward comb filter (2 ms delay, gain
    0.7) on top of the same genuine waveform, so the pitch contour is shared
    between the two variants of one seed. Output is peak-normalized to 0.9.
    """
    n = _validate_synth_params(duration_s, sample_rate)
    rng = np.random.default_rng(seed)
    f0 = rng.uniform(90.0, 300.0)
    glide = rng.uniform(-0.1, 0.1)
    am_phase = rng.uniform(0.0, 2.0 * np.pi)

    t = np.arange(n) / sample_rate
    inst_freq = f0 * (1.0 + glide * t / duration_s)
    phase = 2.0 * np.pi * np.cumsum(inst_freq) / sample_rate
    x = np.zeros(n)
    for k in range(1, 6):
        x += np.sin(k * phase) / k
    x *= 1.0 + 0.5 * np.sin(2.0 * np.pi * 4.0 * t + am_phase)
    x = peak_normalize(x)

    if spoofed:
        step = 2.0 / (2**QUANT_BITS)
        x = np.round(x / step) * step
        delay = int(round(COMB_DELAY_S * sample_rate))
        if delay >= 1:
            combed = x.copy()
            combed[delay:] += COMB_GAIN * x[:-delay]
            x = combed
        x = peak_normalize(x)

    return AudioClip(x, sample_rate)


def synth_env(
    seed: int,
    duration_s: float = 1.0,
    sample_rate: int = 16000,
    spoofed: bool = False,
) -> AudioClip:
    """Synthesize the environment-like component.

    Genuine clips are pink noise band-limited to one of four texture bands.
    Manipulated clips tile a 250 ms segment of the same texture over the full
    duration, which leaves hard loop boundaries and exact periodicity at the
    segment length. Of all candidate segments the one with the largest
    boundary discontinuity is looped, so the periodic click artifact is
    consistently strong. Output is peak-normalized to 0.9.
    """
    n = _validate_synth_params(duration_s, sample_rate)
    rng = np.random.default_rng(seed)
    band = _ENV_BANDS_HZ[rng.integers(0, len(_ENV_BANDS_HZ))]
    white = rng.standard_normal(n)

    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    spectrum[0] = 0.0
    spectrum[1:] /= np.sqrt(freqs[1:])
    lo, hi = band
    spectrum[(freqs < lo) | (freqs >= hi)] = 0.0
    x = np.fft.irfft(spectrum, n)
    x = peak_normalize(x)

    if spoofed:
        seg_len = min(int(round(LOOP_SEGMENT_S * sample_rate)), n)
        if seg_len == n:
            start = 0
        else:
            # wrap jump of candidate segment starting at p: x[p] - x[p+seg_len-1]
            start = int(np.argmax(np.abs(x[: n - seg_len + 1] - x[seg_len - 1 :])))
        segment = x[start : start + seg_len]
        reps = int(np.ceil(n / seg_len))
        x = np.tile(segment, reps)[:n]
        x = peak_normalize(x)

    return AudioClip(x, sample_rate)


def _entry_seeds(master_seed: int, split: str, klass: str, index: int) -> np.ndarray:
    ss = np.random.SeedSequence(
        [master_seed, SPLITS.index(split), KLASSES.index(klass), index]
    )
    return ss.generate_state(3)


def render_original(speech: np.ndarray, env: np.ndarray) -> np.ndarray:
    """Single-pass rendering for the original class.

    The component sum is passed through one shared one-pole low-pass
    (y[i] = c*x[i] + (1-c)*y[i-1], c = 0.2) and a single output gain, the
    analogue of a clip that was never separated into components.
    """
    raw = speech + env
    smoothed = lfilter([SMOOTH_COEFF], [1.0, -(1.0 - SMOOTH_COEFF)], raw)
    return peak_normalize(smoothed)


def mix_at_snr(speech: np.ndarray, env: np.ndarray, snr_db: float) -> np.ndarray:
    """Hard-mix components at a given speech-over-environment SNR, then
    peak-normalize to 0.9."""
    p_speech = np.mean(speech**2)
    p_env = np.mean(env**2)
    if p_speech == 0.0 or p_env == 0.0:
        raise DegenerateInputError("cannot SNR-mix a silent component")
    gain = np.sqrt(p_speech / (p_env * 10.0 ** (snr_db / 10.0)))
    return peak_normalize(speech + gain * env)


def build_corpus(config: CorpusConfig, out_dir: str | Path) -> dict[str, Path]:
    """Generate WAV files plus one JSON-lines manifest per split.

    Returns a mapping split -> manifest path. Deterministic for a fixed
    master seed: per-entry seeds derive from (master_seed, split, class,
    index) so entries are independent of generation order.
    """
    out_dir = Path(out_dir)
    for split, count in config.clips_per_class.items():
        if split not in SPLITS:
            raise ParameterError(f"unknown split {split!r}")
        if count < 1:
            raise ParameterError(f"clips_per_class for {split!r} must be >= 1, got {count}")
    if not config.clips_per_class:
        raise ParameterError("clips_per_class is empty")

    manifests: dict[str, Path] = {}
    for split in SPLITS:
        if split not in config.clips_per_class:
            continue
        count = config.clips_per_class[split]
        wav_dir = out_dir / "wav" / split
        wav_dir.mkdir(parents=True, exist_ok=True)
        entries: list[ManifestEntry] = []
        for klass in KLASSES:
            label = ClassLabel.from_token(klass)
            for i in range(count):
                seed_speech, seed_env, seed_mix = (
                    int(s) for s in _entry_seeds(config.master_seed, split, klass, i)
                )
                utt_id = f"{split}_{klass}_{i:05d}"
                if klass == "original":
                    s = synth_speech(seed_speech, config.duration_s, config.sample_rate, False)
                    e = synth_env(seed_env, config.duration_s, config.sample_rate, False)
                    wave = render_original(s.samples, e.samples)
                    speech_rel = env_rel = None
                else:
                    speech_spoofed, env_spoofed = _COMPONENT_FLAGS[klass]
                    s = synth_speech(
                        seed_speech, config.duration_s, config.sample_rate, speech_spoofed
                    )
                    e = synth_env(seed_env, config.duration_s, config.sample_rate, env_spoofed)
                    snr_db = float(np.random.default_rng(seed_mix).uniform(0.0, 10.0))
                    wave = mix_at_snr(s.samples, e.samples, snr_db)
                    speech_rel = env_rel = None
                    if config.write_components:
                        speech_rel = f"wav/{split}/{utt_id}.speech.wav"
                        env_rel = f"wav/{split}/{utt_id}.env.wav"
                        write_wav(s, out_dir / speech_rel)
                        write_wav(e, out_dir / env_rel)
                wav_rel = f"wav/{split}/{utt_id}.wav"
                write_wav(AudioClip(wave, config.sample_rate, utt_id), out_dir / wav_rel)
                entries.append(
                    ManifestEntry(utt_id, wav_rel, label, split, speech_rel, env_rel)
                )
        manifest_path = out_dir / f"{split}.jsonl"
        save_manifest(entries, manifest_path)
        manifests[split] = manifest_path
    return manifests


# --- manifest I/O ---------------------------------------------------------


def save_manifest(entries: list[ManifestEntry], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for entry in entries:
        record: dict[str, object] = {
            "utt_id": entry.utt_id,
            "wav_path": entry.wav_path,
            "klass": entry.klass.klass,
            "split": entry.split,
        }
        if entry.speech_path is not None:
            record["speech_path"] = entry.speech_path
        if entry.env_path is not None:
            record["env_path"] = entry.env_path
        if entry.augment_seed is not None:
            record["augment_seed"] = entry.augment_seed
        if entry.augment_spec is not None:
            record["augment_spec"] = entry.augment_spec
        lines.append(json.dumps(record, separators=(",", ":")))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: str | Path, check_files: bool = True) -> list[ManifestEntry]:
    """Parse a JSON-lines manifest.

    With `check_files` (the default) every referenced wav must exist and be
    readable, resolved relative to the manifest's directory.
    """
    path = Path(path)
    root = path.parent
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        for key in ("utt_id", "wav_path", "split"):
            if key not in record:
                raise FormatError(f"{path}:{lineno}: missing key {key!r}")
        token = record.get("klass")
        if token is not None and token not in KLASSES:
            raise FormatError(f"{path}:{lineno}: unknown class token {token!r}")
        if record["split"] not in SPLITS:
            raise FormatError(f"{path}:{lineno}: unknown split {record['split']!r}")
        utt_id = record["utt_id"]
        if utt_id in seen:
            raise FormatError(f"{path}:{lineno}: duplicate utt_id {utt_id!r}")
        seen.add(utt_id)
        if check_files and not (root / record["wav_path"]).is_file():
            raise FormatError(
                f"{path}:{lineno}: wav_path {record['wav_path']!r} does not resolve to a file"
            )
        entries.append(
            ManifestEntry(
                utt_id=utt_id,
                wav_path=record["wav_path"],
                klass=ClassLabel.from_token(token) if token is not None else None,
                split=record["split"],
                speech_path=record.get("speech_path"),
                env_path=record.get("env_path"),
                augment_seed=record.get("augment_seed"),
                augment_spec=record.get("augment_spec"),
            )
        )
    return entries


# --- WAV I/O ---------------------------------------------------------------
#
# 16-bit PCM mono RIFF, parsed by hand so malformed headers fail with the
# offending field named. Float samples map to int16 by round(x * 32768)
# clamped to [-32768, 32767]; reading divides by 32768, which keeps the
# write-read round trip within one quantization step of 1/32768.


def write_wav(clip: AudioClip, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    x = np.clip(clip.samples, -1.0, 1.0)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    data = pcm.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(data),
        b"WAVE",
        b"fmt ",
        16,
        1,  # PCM
        1,  # mono
        clip.sample_rate,
        clip.sample_rate * 2,
        2,
        16,
        b"data",
        len(data),
    )
    path.write_bytes(header + data)


def read_wav(path: str | Path) -> AudioClip:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[0:4] != b"RIFF":
        raise FormatError(f"{path}: bad RIFF magic in field 'chunk_id'")
    if raw[8:12] != b"WAVE":
        raise FormatError(f"{path}: bad form type in field 'format' (expected WAVE)")

    fmt = None
    data = None
    offset = 12
    while offset + 8 <= len(raw):
        chunk_id = raw[offset : offset + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, offset + 4)
        body = raw[offset + 8 : offset + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise FormatError(f"{path}: truncated field 'fmt chunk'")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            data = body
        offset += 8 + chunk_size + (chunk_size & 1)

    if fmt is None:
        raise FormatError(f"{path}: missing field 'fmt chunk'")
    if data is None:
        raise FormatError(f"{path}: missing field 'data chunk'")
    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format != 1:
        raise FormatError(f"{path}: unsupported field 'audio_format' = {audio_format} (want PCM=1)")
    if channels != 1:
        raise FormatError(f"{path}: unsupported field 'channels' = {channels} (want mono)")
    if bits != 16:
        raise FormatError(f"{path}: unsupported field 'bits_per_sample' = {bits} (want 16)")
    pcm = np.frombuffer(data, dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / 32768.0, sample_rate, id=path.stem)
