"""Command-line entry point: train, summarize, evaluate, gradcheck, synth.

Hyperparameters come from a JSON config file with documented defaults;
flags carry only paths, the seed, the parallelism bound and budgets. Every
command echoes its effective configuration to ``<out>/run.json`` so a run
can be reproduced from that file alone.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from . import dataio, diagnostics, metrics, shots
from .errors import ConfigError, DegenerateInputError, DivergenceError, NumericError, \
    ParseError, SaturationError
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .reinforce import TrainConfig, train

DEFAULT_CONFIG: dict = {
    "model": {
        "squeezed_channels": None,   # None: min(in_channels, 32)
        "levels": 2,
        "base_channels": 16,
    },
    "train": {
        "paradigm": "unsupervised",
        "target_proportion": 0.5,
        "binary_weight": 0.01,
        "episodes": 5,
        "baseline_decay": 0.9,
        "learning_rate": 0.05,
        "momentum": 0.9,
        "weight_decay": 1e-6,
        "epochs": 50,
        "lr_step_epochs": 30,
        "lr_decay": 0.5,
        "use_rep_reward": True,
        "use_div_reward": True,
    },
    "eval": {
        "budgets": [0.15],
        "mode": None,        # None: manifest default, else keyframe / keyshot
        "reduction": None,   # None: manifest default, else mean / max
        "splits": 5,
        "train_fraction": 0.8,
        "length_study": False,
    },
    "synth": {
        "videos": 20,
        "clusters": 4,
        "frames": 128,
        "feature_dim": 16,
        "noise": 0.1,
        "keyframe_fraction": 0.3,
        "users": 3,
    },
    "gradcheck": {
        "eps": 1e-5,
    },
}


def _merge_config(base: dict, override: dict, prefix: str = "") -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {path!r} must be an object")
            merged[key] = _merge_config(base[key], value, prefix=f"{path}.")
        else:
            merged[key] = value
    return merged


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a JSON object")
    return _merge_config(DEFAULT_CONFIG, raw)


def _write_run_log(out_dir: Path, command: str, config: dict, args) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "config": config,
        "manifest": args.manifest,
        "checkpoint": args.checkpoint,
        "out": str(out_dir),
        "seed": args.seed,
        "jobs": args.jobs,
        "budgets": args.budget,
    }
    (out_dir / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _require_manifest(args) -> dataio.DatasetManifest:
    if not args.manifest:
        raise ConfigError("this command requires --manifest")
    return dataio.read_manifest(args.manifest)


def _budgets(args, config, manifest) -> list:
    if args.budget:
        parsed = []
        for raw in args.budget:
            if raw == "P":
                parsed.append("P")
            else:
                try:
                    parsed.append(float(raw))
                except ValueError as exc:
                    raise ConfigError(f"invalid budget {raw!r}") from exc
        return parsed
    budgets = config["eval"]["budgets"]
    if budgets:
        return list(budgets)
    return [manifest.defaults.get("budget", 0.15)]


def _model_config(config: dict, sequences) -> ModelConfig:
    first = sequences[0]
    squeezed = config["model"]["squeezed_channels"]
    if squeezed is None:
        squeezed = min(first.channels, 32)
    return ModelConfig(in_channels=first.channels,
                       squeezed_channels=int(squeezed),
                       levels=int(config["model"]["levels"]),
                       base_channels=int(config["model"]["base_channels"]),
                       expansion=first.expansion,
                       width=first.features.shape[2],
                       height=first.features.shape[3])


def _train_config(config: dict, seed: int) -> TrainConfig:
    section = dict(config["train"])
    return TrainConfig(seed=seed, **section)


def _score_fn(params, model_config):
    def scores(seq: dataio.FeatureSequence) -> np.ndarray:
        padded, n_frames = dataio.pad_to_pow2(seq, model_config.levels)
        from .model import forward
        return forward(padded.features, params, model_config).probs.data[:n_frames]
    return scores


def cmd_train(args, config) -> int:
    manifest = _require_manifest(args)
    dataset = dataio.load_dataset(manifest)
    sequences = [seq for seq, _ in dataset]
    model_config = _model_config(config, sequences)
    train_config = _train_config(config, args.seed)

    targets = None
    if train_config.paradigm == "supervised":
        missing = [seq.video_id for seq, ann in dataset if ann is None]
        if missing:
            raise ConfigError(f"supervised training requires annotations; missing {missing}")
        targets = {seq.video_id: metrics.consensus_scores(ann) for seq, ann in dataset}

    out_dir = Path(args.out)
    _write_run_log(out_dir, "train", config, args)
    log_path = out_dir / "training_log.jsonl"
    checkpoint_path = out_dir / "checkpoint.bin"
    with open(log_path, "w") as log_file:
        def log(record):
            log_file.write(json.dumps(record, sort_keys=True) + "\n")

        try:
            result = train(sequences, model_config, train_config, targets=targets, log=log)
        except DivergenceError as exc:
            if exc.last_good is not None:
                from .autodiff import Tensor
                rescued = {name: Tensor(data, requires_grad=True, name=name)
                           for name, data in exc.last_good.items()}
                save_checkpoint(checkpoint_path, model_config, rescued)
                print(f"training diverged; last good checkpoint written to {checkpoint_path}",
                      file=sys.stderr)
            raise
    save_checkpoint(checkpoint_path, model_config, result.params)
    if result.history:
        last = result.history[-1]
        print(f"trained {len(sequences)} videos for {train_config.epochs} epochs; "
              f"final mean reward {last['mean_total_reward']:.4f}")
    print(f"checkpoint: {checkpoint_path}")
    print(f"training log: {log_path}")
    return 0


def _checkpoint_for(args, config, sequences) -> tuple[ModelConfig, dict]:
    """Load a checkpoint and verify it fits the dataset and explicit config.

    Dataset-derived fields must match the data; model fields set in the
    config file must match the checkpoint. The error names the field.
    """
    if not args.checkpoint:
        raise ConfigError("this command requires --checkpoint")
    loaded_config, params = load_checkpoint(args.checkpoint)
    if sequences:
        first = sequences[0]
        derived = {"in_channels": first.channels, "expansion": first.expansion,
                   "width": first.features.shape[2], "height": first.features.shape[3]}
        for field, want in derived.items():
            have = getattr(loaded_config, field)
            if have != want:
                raise ConfigError(f"checkpoint field {field}={have} does not match "
                                  f"the dataset's {field}={want}")
    for field in ("squeezed_channels", "levels", "base_channels"):
        configured = config["model"][field]
        if configured is None or configured == DEFAULT_CONFIG["model"][field]:
            continue
        have = getattr(loaded_config, field)
        if have != int(configured):
            raise ConfigError(f"checkpoint field {field}={have} differs from "
                              f"configured {field}={configured}")
    return loaded_config, params


def cmd_summarize(args, config) -> int:
    manifest = _require_manifest(args)
    dataset = dataio.load_dataset(manifest)
    sequences = [seq for seq, _ in dataset]
    model_config, params = _checkpoint_for(args, config, sequences)
    budgets = _budgets(args, config, manifest)
    out_dir = Path(args.out)
    _write_run_log(out_dir, "summarize", config, args)
    score_fn = _score_fn(params, model_config)
    written = []
    for seq, _ in dataset:
        scores = score_fn(seq)
        vectors = seq.frame_vectors()
        for budget in budgets:
            if budget == "P":
                raise ConfigError("budget P needs annotations; use evaluate instead")
            summary = shots.build_summary(scores, vectors, float(budget))
            path = out_dir / f"summary_{seq.video_id}_{float(budget):g}.txt"
            shots.write_summary(path, seq.video_id, summary)
            written.append(path)
    print(f"wrote {len(written)} summary files to {out_dir}")
    return 0


def cmd_evaluate(args, config) -> int:
    manifest = _require_manifest(args)
    dataset = dataio.load_dataset(manifest)
    missing = [seq.video_id for seq, ann in dataset if ann is None]
    if missing:
        raise ConfigError(f"evaluation requires annotations; missing {missing}")
    sequences = [seq for seq, _ in dataset]
    model_config, params = _checkpoint_for(args, config, sequences)
    budgets = _budgets(args, config, manifest)
    mode = config["eval"]["mode"] or manifest.defaults.get("eval", "keyframe")
    reduction = config["eval"]["reduction"] or manifest.defaults.get("reduction", "mean")

    out_dir = Path(args.out)
    _write_run_log(out_dir, "evaluate", config, args)
    score_fn = _score_fn(params, model_config)
    by_id = {seq.video_id: (seq, ann) for seq, ann in dataset}
    splits = metrics.split_dataset([seq.video_id for seq, _ in dataset],
                                   n_splits=int(config["eval"]["splits"]),
                                   train_fraction=float(config["eval"]["train_fraction"]),
                                   seed=args.seed)
    rows = []
    for index, split in enumerate(splits):
        test_videos = [by_id[vid] for vid in split.test]
        rows.extend(metrics.evaluate_videos(score_fn, test_videos, budgets=budgets,
                                            mode=mode, split=index, jobs=args.jobs))
    metrics.write_results(out_dir / "results.tsv", rows)

    pairs = []
    for budget in budgets:
        label = budget if isinstance(budget, str) else f"{float(budget):g}"
        values = [r.f1_mean if reduction == "mean" else r.f1_max
                  for r in rows if r.budget_label == label]
        pairs.append((label, float(np.mean(values))))
        print(f"budget {label}: {reduction}-reduced F1 {pairs[-1][1]:.4f} "
              f"over {len(values)} video evaluations")
    if config["eval"]["length_study"] or len(budgets) > 1:
        metrics.write_plot_data(out_dir / "plot.tsv", pairs)
    print(f"results: {out_dir / 'results.tsv'}")
    return 0


def cmd_gradcheck(args, config) -> int:
    eps = float(config["gradcheck"]["eps"])
    if not (1e-7 <= eps <= 1e-3):
        raise ConfigError(f"gradcheck eps must lie in [1e-7, 1e-3], got {eps}")
    results = diagnostics.gradient_suite(eps=eps, seed=args.seed)
    width = max(len(r.name) for r in results)
    failures = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        failures += not r.passed
        print(f"{r.name:<{width}}  max rel err {r.max_error:.3e}  {status}")
    if failures:
        print(f"{failures} gradient check(s) exceeded {diagnostics.TOLERANCE:g}",
              file=sys.stderr)
        return 3
    return 0


def cmd_synth(args, config) -> int:
    section = config["synth"]
    out_dir = Path(args.out)
    _write_run_log(out_dir, "synth", config, args)
    data = dataio.make_synthetic_dataset(
        n_videos=int(section["videos"]),
        clusters=int(section["clusters"]),
        frames=int(section["frames"]),
        feature_dim=int(section["feature_dim"]),
        noise=float(section["noise"]),
        keyframe_fraction=float(section["keyframe_fraction"]),
        users=int(section["users"]),
        seed=args.seed,
        out_dir=out_dir)
    print(data.manifest_path)
    return 0


COMMANDS = {
    "train": cmd_train,
    "summarize": cmd_summarize,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vsumrl",
        description="Video summarization: train a frame scorer with "
                    "policy-gradient RL, build key-shot summaries, evaluate F1.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("train", "train a scorer on a dataset manifest"),
            ("summarize", "write key-shot summaries for every manifest video"),
            ("evaluate", "split the dataset and report temporal-overlap F1"),
            ("gradcheck", "run the finite-difference verification suite"),
            ("synth", "generate a synthetic dataset with planted keyframes")]:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", default=None, help="JSON config file")
        cmd.add_argument("--manifest", default=None, help="dataset manifest path")
        cmd.add_argument("--checkpoint", default=None, help="model checkpoint path")
        cmd.add_argument("--out", default="vsumrl_out", help="output directory")
        cmd.add_argument("--seed", type=int, default=0, help="random seed")
        cmd.add_argument("--jobs", type=int, default=1,
                         help="parallel per-video evaluations")
        cmd.add_argument("--budget", action="append", default=None,
                         help="summary budget fraction or P (repeatable)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        return COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, DegenerateInputError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (SaturationError, NumericError, DivergenceError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
