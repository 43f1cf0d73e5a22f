"""Command-line pipeline: gen-data, train, score, evaluate, selftest.

Configuration is a flat key=value file with dotted namespaces; any key can be
overridden on the command line as --key=value. Unknown keys are a hard error.
Scoring never reads labels and evaluation never reads audio, so score files
can be produced on blind test sets.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from . import corpus, evaluation, selftest, training
from .encoders import EncoderConfig
from .errors import DegenerateInputError, FormatError, NumericError, ParameterError
from .model import Detector, ModelConfig
from .training import LossWeights, TrainConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}

# key -> (type tag, default)
CONFIG_KEYS: dict[str, tuple[str, object]] = {
    "seed": ("int", 42),
    "threads": ("int", 1),
    "duration_s": ("float", 1.0),
    "sample_rate": ("int", 16000),
    "corpus.train_per_class": ("int", 400),
    "corpus.val_per_class": ("int", 100),
    "corpus.eval_per_class": ("int", 100),
    "corpus.test_per_class": ("int", 100),
    "corpus.write_components": ("bool", True),
    "lr": ("float", 1e-4),
    "batch_size": ("int", 64),
    "epochs": ("int", 12),
    "scheduler": ("str", "cosine"),
    "weights.speech": ("float", 1.0),
    "weights.env": ("float", 1.0),
    "weights.original": ("float", 0.2),
    "weights.rank": ("float", 0.5),
    "rank_margin": ("float", 0.2),
    "original_as_bonafide": ("bool", False),
    "matching.enabled": ("bool", True),
    "matching.dim": ("int", 16),
    "matching.hidden": ("int", 64),
    "fusion.n_heads": ("int", 4),
    "head.hidden": ("int", 16),
    "encoder.speech.out_dim": ("int", 32),
    "encoder.speech.hop": ("int", 320),
    "encoder.speech.n_layers": ("int", 5),
    "encoder.speech.trainable_layers": ("int", 2),
    "encoder.env.out_dim": ("int", 24),
    "encoder.env.hop": ("int", 640),
    "encoder.env.n_layers": ("int", 5),
    "encoder.env.trainable_layers": ("int", 2),
    "tau.original": ("float", 0.5),
    "tau.speech": ("float", 0.5),
    "tau.env": ("float", 0.5),
}


def _coerce(key: str, raw: str):
    kind, _ = CONFIG_KEYS[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            lowered = raw.strip().lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(raw)
        return raw
    except ValueError as exc:
        raise ParameterError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from exc


def load_config(path: str | Path | None, overrides: list[str]) -> dict:
    """Defaults, then the config file, then --key=value overrides."""
    config = {key: default for key, (_, default) in CONFIG_KEYS.items()}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ParameterError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            if key not in CONFIG_KEYS:
                raise ParameterError(f"{path}:{lineno}: unknown config key {key!r}")
            config[key] = _coerce(key, raw.strip())
    for item in overrides:
        if not item.startswith("--") or "=" not in item:
            raise ParameterError(f"unrecognized argument {item!r} (expected --key=value)")
        key, _, raw = item[2:].partition("=")
        if key not in CONFIG_KEYS:
            raise ParameterError(f"unknown config key {key!r}")
        config[key] = _coerce(key, raw)
    return config


def _model_config(config: dict) -> ModelConfig:
    return ModelConfig(
        speech_encoder=EncoderConfig(
            out_dim=config["encoder.speech.out_dim"],
            hop=config["encoder.speech.hop"],
            n_layers=config["encoder.speech.n_layers"],
            trainable_layers=config["encoder.speech.trainable_layers"],
        ),
        env_encoder=EncoderConfig(
            out_dim=config["encoder.env.out_dim"],
            hop=config["encoder.env.hop"],
            n_layers=config["encoder.env.n_layers"],
            trainable_layers=config["encoder.env.trainable_layers"],
        ),
        n_heads=config["fusion.n_heads"],
        matching_dim=config["matching.dim"],
        matching_hidden=config["matching.hidden"],
        head_hidden=config["head.hidden"],
        matching_enabled=config["matching.enabled"],
    )


def cmd_gen_data(config: dict, out_dir: Path) -> int:
    counts = {}
    for split in corpus.SPLITS:
        count = config[f"corpus.{split}_per_class"]
        if count > 0:
            counts[split] = count
    corpus_config = corpus.CorpusConfig(
        clips_per_class=counts,
        duration_s=config["duration_s"],
        sample_rate=config["sample_rate"],
        master_seed=config["seed"],
        write_components=config["corpus.write_components"],
    )
    manifests = corpus.build_corpus(corpus_config, out_dir)
    for split, path in manifests.items():
        print(f"wrote {split} manifest: {path}")
    return 0


def cmd_train(config: dict, corpus_dir: Path, out_dir: Path) -> int:
    checkpoint, rows = training.train(
        corpus_dir,
        out_dir,
        model_config=_model_config(config),
        train_config=TrainConfig(
            learning_rate=config["lr"],
            batch_size=config["batch_size"],
            epochs=config["epochs"],
            scheduler=config["scheduler"],
            seed=config["seed"],
            threads=config["threads"],
            original_as_bonafide=config["original_as_bonafide"],
        ),
        weights=LossWeights(
            w_speech=config["weights.speech"],
            w_env=config["weights.env"],
            w_original=config["weights.original"],
            w_rank=config["weights.rank"],
            rank_margin=config["rank_margin"],
        ),
    )
    last = rows[-1]
    print(
        f"trained {len(rows)} epochs; best checkpoint: {checkpoint}; "
        f"final val_f1={last['val_f1']:.4f}"
    )
    return 0


def cmd_score(config: dict, checkpoint: Path, manifest: Path, out_path: Path) -> int:
    model, _ = training.load_checkpoint(checkpoint)
    torch.set_num_threads(max(1, config["threads"]))
    entries = corpus.load_manifest(manifest)
    waves = training.load_waveforms(entries, manifest.parent, config["duration_s"])
    records = training.score_entries(
        model,
        entries,
        waves,
        batch_size=config["batch_size"],
        tau_original=config["tau.original"],
        tau_speech=config["tau.speech"],
        tau_env=config["tau.env"],
    )
    evaluation.write_scores(records, out_path)
    print(f"scored {len(records)} utterances -> {out_path}")
    return 0


def cmd_evaluate(score_file: Path, manifest: Path, out_path: Path) -> int:
    records = evaluation.read_scores(score_file)
    entries = corpus.load_manifest(manifest, check_files=False)
    labels = {}
    for entry in entries:
        if entry.klass is None:
            raise ParameterError(f"manifest entry {entry.utt_id!r} carries no class label")
        labels[entry.utt_id] = entry.klass.klass
    metrics = evaluation.report(records, labels, out_path)
    matrix = evaluation.confusion_matrix(
        [r.predicted_class for r in records], [labels[r.utt_id] for r in records]
    )
    evaluation.write_confusion_csv(matrix, out_path.with_name("confusion.csv"))
    print(json.dumps({k: metrics[k] for k in ("f1", "eer_original", "eer_speech", "eer_env")}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualspoof")
    parser.add_argument("--config", type=Path, default=None, help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="override the seed key")
    parser.add_argument("--threads", type=int, default=None, help="override the threads key")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate the synthetic corpus")
    gen.add_argument("--out", type=Path, required=True)

    train_cmd = sub.add_parser("train", help="train a detector")
    train_cmd.add_argument("--corpus", type=Path, required=True)
    train_cmd.add_argument("--out", type=Path, required=True)

    score = sub.add_parser("score", help="score a manifest with a checkpoint")
    score.add_argument("--checkpoint", type=Path, required=True)
    score.add_argument("--manifest", type=Path, required=True)
    score.add_argument("--out", type=Path, required=True)

    evaluate = sub.add_parser("evaluate", help="metrics from a score file and labels")
    evaluate.add_argument("--scores", type=Path, required=True)
    evaluate.add_argument("--manifest", type=Path, required=True)
    evaluate.add_argument("--out", type=Path, required=True)

    sub.add_parser("selftest", help="run the oracle/gradient/invariant checks")
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        config = load_config(args.config, extra)
        if args.seed is not None:
            config["seed"] = args.seed
        if args.threads is not None:
            config["threads"] = args.threads

        if args.command == "gen-data":
            return cmd_gen_data(config, args.out)
        if args.command == "train":
            return cmd_train(config, args.corpus, args.out)
        if args.command == "score":
            return cmd_score(config, args.checkpoint, args.manifest, args.out)
        if args.command == "evaluate":
            return cmd_evaluate(args.scores, args.manifest, args.out)
        if args.command == "selftest":
            return selftest.run_selftest()
        parser.error(f"unknown command {args.command!r}")
    except (ParameterError, FormatError, DegenerateInputError, NumericError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename or exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
