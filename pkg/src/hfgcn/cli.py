"""Command-line pipeline: gen-data, train, eval, ablate, export-va.

Every run is seed-reproducible; an optional ``--config`` file supplies
key=value defaults that explicit flags override. Output files are written to
a temp name and renamed, so failed runs never leave partial artifacts.
Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .dataio import (
    DatasetParseError,
    DatasetValidationError,
    GeneratorConfig,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .model import (
    CheckpointError,
    HfgcnConfig,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    TrainConfig,
    TrainingDivergedError,
    evaluate,
    export_va_projection,
    run_ablation,
    train,
    write_ablation_csv,
    write_history_csv,
    write_metrics_json,
)

__all__ = ["main", "build_parser"]


class UsageError(ValueError):
    pass


def _load_config_file(path: str) -> dict[str, str]:
    """key=value lines; blank lines and #-comments ignored."""
    pairs: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path} line {lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            pairs[key.strip().replace("-", "_")] = value.strip()
    return pairs


def _cast_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


class _Settings:
    """Three-way merge: explicit flag > config file entry > built-in default."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file = _load_config_file(args.config) if getattr(args, "config", None) else {}

    def get(self, key: str, default, cast):
        flag = getattr(self.args, key, None)
        if flag is not None:
            return flag
        if key in self.file:
            try:
                return cast(self.file[key])
            except (ValueError, TypeError) as e:
                raise UsageError(f"config entry {key}: {e}") from None
        return default


def _int_pair(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected MIN,MAX, got {text!r}")
    return int(parts[0]), int(parts[1])


def _float_triple(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated floats, got {text!r}")
    return tuple(float(p) for p in parts)  # type: ignore[return-value]


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hidden", type=int, help="GRU hidden size per direction (default 32)")
    p.add_argument("--graph-dim1", type=int, help="relational conv output dim (default 2*hidden)")
    p.add_argument("--graph-dim2", type=int, help="second conv output dim (default 2*hidden)")
    p.add_argument("--attention-dim", type=int, help="query/key dim for pair attention")
    p.add_argument("--dropout", type=float, help="dropout rate (default 0.35)")
    p.add_argument("--valence-weight", type=float, help="valence loss weight (default 0.15)")
    p.add_argument("--arousal-weight", type=float, help="arousal loss weight (default 0.15)")
    p.add_argument("--window-past", type=int, help="past utterance window (default unbounded)")
    p.add_argument("--window-future", type=int, help="future utterance window (default unbounded)")
    p.add_argument("--no-first-stage", dest="use_first_stage", action="store_false", default=None)
    p.add_argument("--no-second-stage", dest="use_second_stage", action="store_false", default=None)
    p.add_argument("--no-edge-attention", dest="use_edge_attention", action="store_false", default=None)
    p.add_argument("--no-relations", dest="use_relations", action="store_false", default=None)
    p.add_argument("--no-va-heads", dest="use_va_heads", action="store_false", default=None)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, help="learning rate (default 1e-4)")
    p.add_argument("--epochs", type=int, help="max epochs (default 50)")
    p.add_argument("--patience", type=int, help="early-stopping patience (default 10)")
    p.add_argument("--no-shuffle", dest="shuffle", action="store_false", default=None)
    p.add_argument("--split", type=_float_triple, help="train,val,test fractions (default 0.8,0.1,0.1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hfgcn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset (meta.json + data.ndjson)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--config", help="key=value defaults file")
    g.add_argument("--num-conversations", type=int)
    g.add_argument("--utterances", type=_int_pair, help="MIN,MAX utterances per conversation")
    g.add_argument("--speakers", type=_int_pair, help="MIN,MAX speakers per conversation")
    g.add_argument("--num-emotions", type=int)
    g.add_argument("--d-audio", type=int)
    g.add_argument("--d-text", type=int)
    g.add_argument("--d-visual", type=int)
    g.add_argument("--cluster-separation", type=float)
    g.add_argument("--informativeness", type=_float_triple, help="audio,text,visual signal fractions")
    g.add_argument("--cross-modal", dest="cross_modal_mode", action="store_true", default=None)
    g.add_argument("--emotion-persistence", type=float)
    g.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="split, train, evaluate on test, save checkpoint")
    t.add_argument("--data", required=True, help="dataset directory (meta.json + data.ndjson)")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--config", help="key=value defaults file")
    t.add_argument("--seed", type=int)
    _add_model_flags(t)
    _add_train_flags(t)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--config", help="key=value defaults file")
    e.add_argument("--metrics-out", help="optional metrics.json path")
    e.add_argument("--threads", type=int, default=1)

    a = sub.add_parser("ablate", help="train/evaluate the stage and edge variant tables")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True, help="ablation.csv path")
    a.add_argument("--config", help="key=value defaults file")
    a.add_argument("--seeds", type=int, default=1, help="number of seeds (base --seed upward)")
    a.add_argument("--seed", type=int)
    _add_model_flags(a)
    _add_train_flags(a)

    v = sub.add_parser("export-va", help="sample utterances and export VA projections")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--out", required=True, help="va_projection.csv path")
    v.add_argument("--config", help="key=value defaults file")
    v.add_argument("--sample-size", type=int, default=1000)
    v.add_argument("--jitter-std", type=float, default=0.1)
    v.add_argument("--seed", type=int, default=0)
    return parser


def _require_dataset_dir(path: str) -> tuple[str, str]:
    meta_path = os.path.join(path, "meta.json")
    data_path = os.path.join(path, "data.ndjson")
    for p in (meta_path, data_path):
        if not os.path.isfile(p):
            raise UsageError(f"dataset file not found: {p}")
    return meta_path, data_path


def _generator_config(s: _Settings) -> GeneratorConfig:
    return GeneratorConfig(
        num_conversations=s.get("num_conversations", 100, int),
        utterances_range=s.get("utterances", (4, 10), lambda t: _int_pair(t)),
        speakers_range=s.get("speakers", (2, 2), lambda t: _int_pair(t)),
        num_emotions=s.get("num_emotions", 4, int),
        d_audio=s.get("d_audio", 12, int),
        d_text=s.get("d_text", 16, int),
        d_visual=s.get("d_visual", 10, int),
        cluster_separation=s.get("cluster_separation", 3.0, float),
        modality_informativeness=s.get("informativeness", (1.0, 1.0, 1.0), _float_triple),
        cross_modal_mode=s.get("cross_modal_mode", False, _cast_bool),
        emotion_persistence=s.get("emotion_persistence", 0.5, float),
        seed=s.get("seed", 0, int),
    )


def _model_config(s: _Settings, num_emotions: int, num_va_bins: int) -> HfgcnConfig:
    return HfgcnConfig(
        num_emotions=num_emotions,
        hidden=s.get("hidden", 32, int),
        graph_dim1=s.get("graph_dim1", None, int),
        graph_dim2=s.get("graph_dim2", None, int),
        attention_dim=s.get("attention_dim", None, int),
        num_va_bins=num_va_bins,
        valence_loss_weight=s.get("valence_weight", 0.15, float),
        arousal_loss_weight=s.get("arousal_weight", 0.15, float),
        dropout=s.get("dropout", 0.35, float),
        window_past=s.get("window_past", None, int),
        window_future=s.get("window_future", None, int),
        use_first_stage=s.get("use_first_stage", True, _cast_bool),
        use_second_stage=s.get("use_second_stage", True, _cast_bool),
        use_edge_attention=s.get("use_edge_attention", True, _cast_bool),
        use_relations=s.get("use_relations", True, _cast_bool),
        use_va_heads=s.get("use_va_heads", True, _cast_bool),
    )


def _train_config(s: _Settings, seed: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=s.get("lr", 1e-4, float),
        max_epochs=s.get("epochs", 50, int),
        patience=s.get("patience", 10, int),
        seed=seed,
        shuffle=s.get("shuffle", True, _cast_bool),
    )


def _cmd_gen_data(args: argparse.Namespace) -> int:
    s = _Settings(args)
    cfg = _generator_config(s)
    os.makedirs(args.out, exist_ok=True)
    meta, conversations = generate_synthetic(cfg)
    save_dataset(
        meta,
        conversations,
        os.path.join(args.out, "meta.json"),
        os.path.join(args.out, "data.ndjson"),
    )
    histogram = np.zeros(meta.num_emotions, dtype=np.int64)
    total = 0
    for conv in conversations:
        for u in conv.utterances:
            histogram[u.emotion] += 1
            total += 1
    print(f"wrote {len(conversations)} conversations, {total} utterances to {args.out}")
    for name, count in zip(meta.label_names, histogram):
        print(f"  {name}: {count}")
    return 0


def _split_from_settings(s: _Settings, conversations, seed: int):
    fractions = s.get("split", (0.8, 0.1, 0.1), _float_triple)
    return split_dataset(conversations, fractions, seed, require_non_empty=False)


def _cmd_train(args: argparse.Namespace) -> int:
    s = _Settings(args)
    meta_path, data_path = _require_dataset_dir(args.data)
    seed = s.get("seed", 0, int)
    meta, conversations = load_dataset(meta_path, data_path)
    model_cfg = _model_config(s, meta.num_emotions, meta.num_va_bins)
    train_cfg = _train_config(s, seed)
    train_set, val_set, test_set = _split_from_settings(s, conversations, seed)
    if not train_set:
        raise UsageError("training split is empty; adjust --split")
    os.makedirs(args.out, exist_ok=True)

    params, history = train(meta, train_set, val_set, model_cfg, train_cfg)
    report = evaluate(params, model_cfg, test_set) if test_set else evaluate(params, model_cfg, train_set)
    save_checkpoint(params, model_cfg, os.path.join(args.out, "checkpoint"))
    config_echo = {"model": model_cfg.to_dict(), "train": _train_echo(train_cfg)}
    write_metrics_json(report, config_echo, seed, os.path.join(args.out, "metrics.json"))
    write_history_csv(history, os.path.join(args.out, "history.csv"))
    print(
        f"trained {len(history)} epochs; test weighted F1 {report.weighted_f1:.4f},"
        f" accuracy {report.accuracy:.4f}"
    )
    return 0


def _train_echo(tc: TrainConfig) -> dict:
    return {
        "learning_rate": tc.learning_rate,
        "max_epochs": tc.max_epochs,
        "patience": tc.patience,
        "seed": tc.seed,
        "shuffle": tc.shuffle,
    }


def _check_dims(params, meta) -> None:
    dims = {name: p.input_dim for name, p in params.encoders.items()}
    total = meta.d_audio + meta.d_text + meta.d_visual
    if dims["fusion"] != total:
        raise UsageError(
            f"checkpoint expects fused dim {dims['fusion']}, dataset provides {total}"
        )
    for stream, want in (("audio", meta.d_audio), ("text", meta.d_text), ("visual", meta.d_visual)):
        if stream in dims and dims[stream] != want:
            raise UsageError(
                f"checkpoint expects {stream} dim {dims[stream]}, dataset provides {want}"
            )


def _cmd_eval(args: argparse.Namespace) -> int:
    meta_path, data_path = _require_dataset_dir(args.data)
    params, cfg = load_checkpoint(args.checkpoint)
    meta, conversations = load_dataset(meta_path, data_path)
    if meta.num_emotions != cfg.num_emotions:
        raise UsageError(
            f"checkpoint has {cfg.num_emotions} emotion classes, dataset has {meta.num_emotions}"
        )
    _check_dims(params, meta)
    report = evaluate(params, cfg, conversations, threads=args.threads)
    print(json.dumps(report.to_dict(), indent=2))
    if args.metrics_out:
        write_metrics_json(report, {"model": cfg.to_dict()}, 0, args.metrics_out)
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    s = _Settings(args)
    meta_path, data_path = _require_dataset_dir(args.data)
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    base_seed = s.get("seed", 0, int)
    meta, conversations = load_dataset(meta_path, data_path)
    model_cfg = _model_config(s, meta.num_emotions, meta.num_va_bins)
    train_cfg = _train_config(s, base_seed)
    train_set, val_set, test_set = _split_from_settings(s, conversations, base_seed)
    if not train_set or not test_set:
        raise UsageError("ablation needs non-empty train and test splits")
    seeds = [base_seed + i for i in range(args.seeds)]
    rows, summary = run_ablation(meta, train_set, val_set, test_set, model_cfg, train_cfg, seeds)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    write_ablation_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    for (group, fs, ss, attn, rel), (mean, std) in summary.items():
        print(
            f"  {group}: first={fs} second={ss} attention={attn} relations={rel}"
            f" -> F1 {mean:.4f} +/- {std:.4f}"
        )
    return 0


def _cmd_export_va(args: argparse.Namespace) -> int:
    meta_path, data_path = _require_dataset_dir(args.data)
    params, cfg = load_checkpoint(args.checkpoint)
    meta, conversations = load_dataset(meta_path, data_path)
    _check_dims(params, meta)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    rows = export_va_projection(
        params, cfg, conversations, args.sample_size, args.jitter_std, args.seed, args.out
    )
    print(f"wrote {rows} rows to {args.out}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "export-va": _cmd_export_va,
}

_VALIDATION_ERRORS = (
    UsageError,
    DatasetParseError,
    DatasetValidationError,
    CheckpointError,
    ValueError,
    FileNotFoundError,
    NotADirectoryError,
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return _COMMANDS[args.command](args)
    except TrainingDivergedError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except _VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # unexpected runtime failure
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
