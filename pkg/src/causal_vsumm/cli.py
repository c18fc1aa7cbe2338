"""Command-line entry point: synth, build, train, eval, summarize, pipeline."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
import yaml

from . import dataset as ds
from . import plotting
from .config import ConfigError, RunConfig
from .evaluation import evaluate, predict_scores, select_summary, selection_scores, write_report
from .evaluation import metrics as eval_metrics
from .features import Vocabulary, make_featurizer
from .model import CausalVideoSummarizer, ModelConfig, tensorize
from .objective import TrainingDiverged, load_checkpoint, save_checkpoint, train, write_history

logger = logging.getLogger("causal_vsumm")

CORPUS_FILE = "corpus.jsonl"
CVSD_FILE = "cvsd.jsonl"
MANIFEST_FILE = "splits.json"
VOCAB_FILE = "vocab.txt"
CHECKPOINT_FILE = "checkpoint.pt"
HISTORY_FILE = "history.jsonl"
REPORT_FILE = "eval_report.jsonl"

EXIT_CODES = {ConfigError: 2, ds.SchemaError: 3, FileNotFoundError: 4, TrainingDiverged: 6, ValueError: 5, KeyError: 5}


def _echo_config(config: RunConfig, out_dir: Path, command: str):
    (out_dir / f"{command}_config.yaml").write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))


def _input_dir(config: RunConfig, out_dir: Path) -> Path:
    return Path(config.input_dir) if config.input_dir else out_dir


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"required file not found: {path}")
    return path


def _setup_torch(config: RunConfig):
    torch.set_num_threads(config.num_threads)
    torch.manual_seed(config.seed)
    return torch.float64 if config.dtype == "float64" else torch.float32


def cmd_synth(config: RunConfig, out_dir: Path) -> Path:
    corpus = ds.synth_corpus(
        config.n_pairs, seed=config.seed, vocab_size=config.vocab_size, n_score_classes=config.n_score_classes,
        n_annotators=config.n_annotators, annotator_accuracy=config.annotator_accuracy,
        frame_size=config.frame_size, min_frames=config.min_frames,
    )
    path = ds.save(corpus, out_dir / CORPUS_FILE)
    _echo_config(config, out_dir, "synth")
    logger.info("wrote %d pairs to %s", len(corpus), path)
    return path


def cmd_build(config: RunConfig, out_dir: Path) -> Path:
    corpus = ds.load(_require(_input_dir(config, out_dir) / CORPUS_FILE))
    cvsd = ds.build_cvsd(
        corpus, seed=config.seed, pair_fraction=config.pair_fraction, frame_fraction=config.frame_fraction,
        visual_treatment=config.visual_treatment, textual_k=config.textual_k,
        salt_pepper_density=config.salt_pepper_density, blur_kernel=config.blur_kernel,
    )
    media = out_dir / "media" if config.frame_storage == "ref" else None
    path = ds.save(cvsd, out_dir / CVSD_FILE, media_dir=media)
    split = ds.split_corpus(cvsd, seed=config.seed, ratios=config.split_ratios)
    ds.save_manifest(split, out_dir / MANIFEST_FILE, extra=config.to_dict())
    # Vocabulary from training queries only; test-only words fall into the OOV bucket.
    train_ids = set(split.train)
    Vocabulary.from_corpus([p for p in cvsd if p.pair_id in train_ids]).save(out_dir / VOCAB_FILE)
    _echo_config(config, out_dir, "build")
    logger.info("built CVSD: %d/%d treated pairs, split %d/%d/%d", sum(p.query_treatment for p in cvsd),
                len(cvsd), len(split.train), len(split.val), len(split.test))
    return path


def _load_built(config: RunConfig, out_dir: Path):
    src = _input_dir(config, out_dir)
    corpus = ds.load(_require(src / CVSD_FILE))
    split = ds.load_manifest(_require(src / MANIFEST_FILE))
    vocab = Vocabulary.load(_require(src / VOCAB_FILE))
    return corpus, split, vocab


def cmd_train(config: RunConfig, out_dir: Path) -> Path:
    dtype = _setup_torch(config)
    corpus, split, vocab = _load_built(config, out_dir)
    featurizer = make_featurizer(config.featurizer_config(len(vocab)))
    tensors = tensorize(corpus, vocab, featurizer, dtype)
    model = CausalVideoSummarizer(ModelConfig(
        visual_dim=config.visual_dim, query_dim=len(vocab) + 1, n_classes=config.n_score_classes,
        channels=config.channels, feature_dim=config.feature_dim, upsample=config.upsample,
        latent_dim=config.latent_dim, hidden_dim=config.hidden_dim, attention=config.attention,
        key_dim=config.key_dim,
    )).to(dtype)
    history_path = out_dir / HISTORY_FILE
    try:
        result = train(model, tensors.select(split.train), config.train_config(),
                       val=tensors.select(split.val), evaluate=eval_metrics)
    except TrainingDiverged as exc:
        write_history(exc.history, history_path, config.to_dict())
        if exc.last_good_state is not None:
            model.load_state_dict(exc.last_good_state)
            save_checkpoint(out_dir / CHECKPOINT_FILE, model, config.to_dict(), vocab.tokens)
        raise
    path = save_checkpoint(out_dir / CHECKPOINT_FILE, result.model, config.to_dict(), vocab.tokens)
    write_history(result.history, history_path, config.to_dict())
    plotting.plot_history(result.history, out_dir / "history.png")
    _echo_config(config, out_dir, "train")
    return path


def _restore(config: RunConfig, out_dir: Path, checkpoint):
    dtype = _setup_torch(config)
    model, payload = load_checkpoint(_require(Path(checkpoint)))
    trained = RunConfig.from_dict(payload["config"])
    vocab = Vocabulary(payload["vocab"])
    # Featurisation must match training, whatever the current config says.
    featurizer = make_featurizer(trained.featurizer_config(len(vocab)))
    corpus = ds.load(_require(_input_dir(config, out_dir) / CVSD_FILE))
    return model.to(dtype), tensorize(corpus, vocab, featurizer, dtype), corpus


def cmd_eval(config: RunConfig, out_dir: Path, checkpoint) -> Path:
    model, tensors, _ = _restore(config, out_dir, checkpoint)
    split = ds.load_manifest(_require(_input_dir(config, out_dir) / MANIFEST_FILE))
    data = tensors.select(getattr(split, config.eval_split))
    records, aggregate = evaluate(
        model, data, budget=config.summary_budget, observed_treatment=config.eval_observed_treatment,
        n_samples=config.inference_samples, seed=config.seed,
    )
    aggregate["split"] = config.eval_split
    path = write_report(records, aggregate, out_dir / REPORT_FILE, config.to_dict())
    plotting.plot_accuracy_hist(records, out_dir / "eval_accuracy.png")
    _echo_config(config, out_dir, "eval")
    logger.info("%s accuracy %.4f, macro-F1 %.4f over %d pairs", config.eval_split, aggregate["accuracy"],
                aggregate["f1"], aggregate["n_pairs"])
    return path


def cmd_summarize(config: RunConfig, out_dir: Path, checkpoint, pair_id: str, budget: int | None) -> Path:
    model, tensors, _ = _restore(config, out_dir, checkpoint)
    budget = config.summary_budget if budget is None else budget
    data = tensors.select([pair_id])
    pred = predict_scores(model, data, config.eval_observed_treatment, config.inference_samples, config.seed)
    key, tie = selection_scores(pred, 0)
    selection = select_summary(key, budget, tie, pair_id)
    probs = pred.probs[0]
    expected = probs @ np.arange(probs.shape[1])
    gold = data.labels[0].numpy()

    stem = f"summary_{pair_id}"
    with (out_dir / f"{stem}.tsv").open("w") as fh:
        fh.write("\t".join(["frame", "predicted", "expected"] + [f"p{c}" for c in range(probs.shape[1])]
                           + ["gold", "selected"]) + "\n")
        chosen = set(selection.indices)
        for i in range(len(probs)):
            cells = [str(i), str(int(pred.classes[0, i])), f"{expected[i]:.6f}"]
            cells += [f"{p:.6f}" for p in probs[i]] + [str(int(gold[i])), str(int(i in chosen))]
            fh.write("\t".join(cells) + "\n")
    out = out_dir / f"{stem}.json"
    out.write_text(json.dumps(
        {"pair_id": pair_id, "budget": budget, "selected_indices": selection.indices,
         "config": config.to_dict()}, sort_keys=True) + "\n")
    plotting.plot_frame_scores(expected, selection.indices, out_dir / f"{stem}.png", gold=gold, title=pair_id)
    return out


def cmd_pipeline(config: RunConfig, out_dir: Path) -> Path:
    cmd_synth(config, out_dir)
    cmd_build(config, out_dir)
    checkpoint = cmd_train(config, out_dir)
    return cmd_eval(config, out_dir, checkpoint)


def _parse_set(items) -> dict:
    overrides = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = yaml.safe_load(value)
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causal-vsumm", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file of config keys")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out-dir", default=".", help="directory for outputs (default: .)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate the planted synthetic corpus")
    sub.add_parser("build", parents=[common], help="apply treatments and split the corpus")
    sub.add_parser("train", parents=[common], help="train and write a checkpoint")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("summarize", parents=[common], help="select a budgeted summary for one pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pair-id", required=True)
    p.add_argument("--budget", type=int)
    sub.add_parser("pipeline", parents=[common], help="synth, build, train and eval in one go")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = _parse_set(args.set)
        if args.seed is not None:
            overrides["seed"] = args.seed
        config = RunConfig.load(args.config, overrides)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "eval":
            path = cmd_eval(config, out_dir, args.checkpoint)
        elif args.command == "summarize":
            path = cmd_summarize(config, out_dir, args.checkpoint, args.pair_id, args.budget)
        else:
            path = globals()[f"cmd_{args.command}"](config, out_dir)
    except tuple(EXIT_CODES) as exc:
        code = next(c for cls, c in EXIT_CODES.items() if isinstance(exc, cls))
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
