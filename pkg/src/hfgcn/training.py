"""Training loop (Adam + early stopping), evaluation metrics, the ablation
harness mirroring the stage/edge switch tables, and VA-subspace export."""

from __future__ import annotations

import csv
import io
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataio import (
    Conversation,
    DatasetMeta,
    atomic_write_text,
    conversation_labels,
    va_bin_value,
)
from .model import (
    HfgcnConfig,
    HfgcnParams,
    ModelOutput,
    forward,
    init_params,
    multitask_loss,
    predict,
)
from .numerics import Tape, adam_step, backward, init_adam

__all__ = [
    "TrainConfig",
    "EpochStats",
    "MetricsReport",
    "TrainingDivergedError",
    "train",
    "evaluate",
    "AblationRow",
    "ABLATION_VARIANTS",
    "run_ablation",
    "write_metrics_json",
    "write_history_csv",
    "write_ablation_csv",
    "export_va_projection",
]


class TrainingDivergedError(RuntimeError):
    """Raised when the loss goes non-finite; names the epoch and conversation."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 0 <= self.patience <= self.max_epochs:
            raise ValueError("patience must lie in [0, max_epochs]")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float | None
    val_weighted_f1: float | None
    val_accuracy: float | None


@dataclass
class MetricsReport:
    accuracy: float
    weighted_f1: float
    per_class_f1: list[float]
    confusion: list[list[int]]
    loss: float
    valence_accuracy: float | None = None
    arousal_accuracy: float | None = None

    def to_dict(self) -> dict:
        d = {
            "accuracy": self.accuracy,
            "weighted_f1": self.weighted_f1,
            "per_class_f1": self.per_class_f1,
            "confusion": self.confusion,
            "loss": self.loss,
        }
        if self.valence_accuracy is not None:
            d["valence_accuracy"] = self.valence_accuracy
        if self.arousal_accuracy is not None:
            d["arousal_accuracy"] = self.arousal_accuracy
        return d


def _effective_va_weights(cfg: HfgcnConfig, has_va: bool) -> tuple[float, float]:
    if not cfg.use_va_heads or not has_va:
        return 0.0, 0.0
    return cfg.valence_loss_weight, cfg.arousal_loss_weight


def _conversation_loss(out: ModelOutput, conv: Conversation, cfg: HfgcnConfig):
    emotions, valences, arousals = conversation_labels(conv, cfg.num_va_bins)
    w_v, w_a = _effective_va_weights(cfg, valences is not None)
    return multitask_loss(out, emotions, valences, arousals, w_v, w_a)


def train(
    meta: DatasetMeta,
    train_convs: list[Conversation],
    val_convs: list[Conversation],
    model_cfg: HfgcnConfig,
    train_cfg: TrainConfig,
) -> tuple[HfgcnParams, list[EpochStats]]:
    """Per-conversation Adam updates with early stopping.

    Early stopping watches validation weighted F1 (train loss when the
    validation set is empty); the returned params are from the best epoch.
    """
    if not train_convs:
        raise ValueError("training needs at least one conversation")
    init_seq, train_seq = np.random.SeedSequence(train_cfg.seed).spawn(2)
    params = init_params(
        model_cfg, meta.d_audio, meta.d_text, meta.d_visual, seed=init_seq.generate_state(1)[0]
    )
    rng = np.random.default_rng(train_seq)
    values = params.values()
    adam = init_adam(values, learning_rate=train_cfg.learning_rate)

    history: list[EpochStats] = []
    best_metric = -np.inf
    best_snapshot = [np.array(v.data, copy=True) for v in values]
    epochs_since_improvement = 0

    for epoch in range(1, train_cfg.max_epochs + 1):
        order = rng.permutation(len(train_convs)) if train_cfg.shuffle else np.arange(len(train_convs))
        total_loss = 0.0
        total_utts = 0
        for idx in order:
            conv = train_convs[idx]
            with Tape() as tape:
                out = forward(conv, params, model_cfg, training=True, rng=rng)
                loss = _conversation_loss(out, conv, model_cfg)
                loss_val = loss.item()
                if not np.isfinite(loss_val):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, conversation {conv.id!r}"
                    )
                backward(loss, tape)
            adam_step(values, [v.grad for v in values], adam)
            n = len(conv.utterances)
            total_loss += loss_val * n
            total_utts += n
        train_loss = total_loss / total_utts

        if val_convs:
            report = evaluate(params, model_cfg, val_convs)
            metric = report.weighted_f1
            history.append(
                EpochStats(epoch, train_loss, report.loss, report.weighted_f1, report.accuracy)
            )
        else:
            metric = -train_loss
            history.append(EpochStats(epoch, train_loss, None, None, None))

        if metric > best_metric:
            best_metric = metric
            for buf, v in zip(best_snapshot, values):
                buf[...] = v.data
            epochs_since_improvement = 0
        else:
            epochs_since_improvement += 1
        if epochs_since_improvement >= train_cfg.patience:
            break

    for buf, v in zip(best_snapshot, values):
        v.data[...] = buf
    return params, history


@dataclass
class _EvalCounts:
    confusion: np.ndarray
    loss_sum: float
    utterances: int
    valence_hits: int
    arousal_hits: int
    va_total: int


def _evaluate_conversation(conv: Conversation, params: HfgcnParams, cfg: HfgcnConfig) -> _EvalCounts:
    out = forward(conv, params, cfg, training=False)
    loss_val = _conversation_loss(out, conv, cfg).item()
    pred_e, pred_v, pred_a = predict(out)
    emotions, valences, arousals = conversation_labels(conv, cfg.num_va_bins)
    confusion = np.zeros((cfg.num_emotions, cfg.num_emotions), dtype=np.int64)
    np.add.at(confusion, (emotions, pred_e), 1)
    n = len(conv.utterances)
    if valences is not None and pred_v is not None:
        return _EvalCounts(
            confusion,
            loss_val * n,
            n,
            int((pred_v == valences).sum()),
            int((pred_a == arousals).sum()),
            n,
        )
    return _EvalCounts(confusion, loss_val * n, n, 0, 0, 0)


def _f1_from_confusion(confusion: np.ndarray) -> tuple[float, float, list[float]]:
    total = confusion.sum()
    support = confusion.sum(axis=1)
    per_class = []
    for c in range(confusion.shape[0]):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = support[c] - tp
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class.append(float(f1))
    weighted = float(sum(s / total * f for s, f in zip(support, per_class))) if total else 0.0
    accuracy = float(np.trace(confusion) / total) if total else 0.0
    return accuracy, weighted, per_class


def evaluate(
    params: HfgcnParams,
    cfg: HfgcnConfig,
    conversations: list[Conversation],
    threads: int = 1,
) -> MetricsReport:
    """Eval-mode scoring; conversation order never changes any metric."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            counts = list(pool.map(lambda c: _evaluate_conversation(c, params, cfg), conversations))
    else:
        counts = [_evaluate_conversation(c, params, cfg) for c in conversations]

    confusion = np.zeros((cfg.num_emotions, cfg.num_emotions), dtype=np.int64)
    loss_sum = 0.0
    utterances = 0
    valence_hits = arousal_hits = va_total = 0
    for c in counts:
        confusion += c.confusion
        loss_sum += c.loss_sum
        utterances += c.utterances
        valence_hits += c.valence_hits
        arousal_hits += c.arousal_hits
        va_total += c.va_total
    accuracy, weighted, per_class = _f1_from_confusion(confusion)
    return MetricsReport(
        accuracy=accuracy,
        weighted_f1=weighted,
        per_class_f1=per_class,
        confusion=confusion.tolist(),
        loss=loss_sum / utterances if utterances else 0.0,
        valence_accuracy=valence_hits / va_total if va_total else None,
        arousal_accuracy=arousal_hits / va_total if va_total else None,
    )


@dataclass
class AblationRow:
    group: str
    use_first_stage: bool
    use_second_stage: bool
    use_edge_attention: bool
    use_relations: bool
    seed: int
    weighted_f1: float
    accuracy: float


# (group, flag overrides); the all-on row appears in both tables but is
# trained only once per seed
ABLATION_VARIANTS: list[tuple[str, dict]] = [
    ("stages", {"use_first_stage": False, "use_second_stage": False}),
    ("stages", {"use_first_stage": True, "use_second_stage": False}),
    ("stages", {"use_first_stage": False, "use_second_stage": True}),
    ("stages", {}),
    ("edges", {"use_edge_attention": False, "use_relations": False}),
    ("edges", {"use_edge_attention": True, "use_relations": False}),
    ("edges", {"use_edge_attention": False, "use_relations": True}),
    ("edges", {}),
]


def run_ablation(
    meta: DatasetMeta,
    train_convs: list[Conversation],
    val_convs: list[Conversation],
    test_convs: list[Conversation],
    base_cfg: HfgcnConfig,
    train_cfg: TrainConfig,
    seeds: list[int],
) -> tuple[list[AblationRow], dict[tuple, tuple[float, float]]]:
    """Train and score every variant row for every seed, on identical data.

    Returns the per-seed rows plus a summary mapping variant flags to
    (mean, std) of test weighted F1 across seeds.
    """
    if not seeds:
        raise ValueError("run_ablation needs at least one seed")
    rows: list[AblationRow] = []
    for seed in seeds:
        cache: dict[tuple, MetricsReport] = {}
        for group, overrides in ABLATION_VARIANTS:
            cfg = HfgcnConfig(**{**base_cfg.to_dict(), **overrides})
            key = (cfg.use_first_stage, cfg.use_second_stage, cfg.use_edge_attention, cfg.use_relations)
            if key not in cache:
                tc = TrainConfig(
                    learning_rate=train_cfg.learning_rate,
                    max_epochs=train_cfg.max_epochs,
                    patience=train_cfg.patience,
                    seed=seed,
                    shuffle=train_cfg.shuffle,
                )
                params, _ = train(meta, train_convs, val_convs, cfg, tc)
                cache[key] = evaluate(params, cfg, test_convs)
            report = cache[key]
            rows.append(
                AblationRow(
                    group=group,
                    use_first_stage=cfg.use_first_stage,
                    use_second_stage=cfg.use_second_stage,
                    use_edge_attention=cfg.use_edge_attention,
                    use_relations=cfg.use_relations,
                    seed=seed,
                    weighted_f1=report.weighted_f1,
                    accuracy=report.accuracy,
                )
            )
    summary: dict[tuple, tuple[float, float]] = {}
    for group, overrides in ABLATION_VARIANTS:
        cfg = HfgcnConfig(**{**base_cfg.to_dict(), **overrides})
        key = (group, cfg.use_first_stage, cfg.use_second_stage, cfg.use_edge_attention, cfg.use_relations)
        scores = [
            r.weighted_f1
            for r in rows
            if (r.group, r.use_first_stage, r.use_second_stage, r.use_edge_attention, r.use_relations)
            == key
        ]
        summary[key] = (float(np.mean(scores)), float(np.std(scores)))
    return rows, summary


def write_metrics_json(report: MetricsReport, config_echo: dict, seed: int, path) -> None:
    payload = dict(report.to_dict())
    payload["config"] = config_echo
    payload["seed"] = seed
    atomic_write_text(path, json.dumps(payload, indent=2) + "\n")


def write_history_csv(history: list[EpochStats], path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "val_loss", "val_weighted_f1", "val_accuracy"])
    for h in history:
        writer.writerow(
            [
                h.epoch,
                repr(h.train_loss),
                "" if h.val_loss is None else repr(h.val_loss),
                "" if h.val_weighted_f1 is None else repr(h.val_weighted_f1),
                "" if h.val_accuracy is None else repr(h.val_accuracy),
            ]
        )
    atomic_write_text(path, buf.getvalue())


def write_ablation_csv(rows: list[AblationRow], path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        [
            "group",
            "use_first_stage",
            "use_second_stage",
            "use_edge_attention",
            "use_relations",
            "seed",
            "weighted_f1",
            "accuracy",
        ]
    )
    for r in rows:
        writer.writerow(
            [
                r.group,
                r.use_first_stage,
                r.use_second_stage,
                r.use_edge_attention,
                r.use_relations,
                r.seed,
                repr(r.weighted_f1),
                repr(r.accuracy),
            ]
        )
    atomic_write_text(path, buf.getvalue())


def export_va_projection(
    params: HfgcnParams,
    cfg: HfgcnConfig,
    conversations: list[Conversation],
    sample_size: int,
    jitter_std: float,
    seed: int,
    path,
) -> int:
    """Write sampled utterances with true/predicted classes and jittered VA
    plot coordinates; returns the number of rows written."""
    if not cfg.use_va_heads or "valence" not in params.heads:
        raise ValueError("VA projection needs a model trained with VA heads")
    keyed = [
        (ci, ui)
        for ci, conv in enumerate(conversations)
        for ui, u in enumerate(conv.utterances)
        if u.valence is not None
    ]
    if not keyed:
        raise ValueError("VA projection needs a dataset with valence/arousal labels")
    rng = np.random.default_rng(seed)
    if sample_size > len(keyed):
        warnings.warn(
            f"sample_size {sample_size} exceeds {len(keyed)} labelled utterances; clamping"
        )
        sample_size = len(keyed)
    chosen = sorted(rng.choice(len(keyed), size=sample_size, replace=False).tolist())

    predictions: dict[int, tuple] = {}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        [
            "utterance",
            "true_emotion",
            "pred_emotion",
            "true_valence_class",
            "pred_valence_class",
            "true_arousal_class",
            "pred_arousal_class",
            "valence_coord",
            "arousal_coord",
        ]
    )
    valence_hits = arousal_hits = 0
    for pick in chosen:
        ci, ui = keyed[pick]
        if ci not in predictions:
            conv = conversations[ci]
            out = forward(conv, params, cfg, training=False)
            predictions[ci] = predict(out)
        pred_e, pred_v, pred_a = predictions[ci]
        conv = conversations[ci]
        u = conv.utterances[ui]
        emotions, valences, arousals = conversation_labels(conv, cfg.num_va_bins)
        true_v, true_a = int(valences[ui]), int(arousals[ui])
        pv, pa = int(pred_v[ui]), int(pred_a[ui])
        valence_hits += pv == true_v
        arousal_hits += pa == true_a
        v_coord = va_bin_value(pv, cfg.num_va_bins)
        a_coord = va_bin_value(pa, cfg.num_va_bins)
        if jitter_std > 0:
            v_coord += rng.normal(0.0, jitter_std)
            a_coord += rng.normal(0.0, jitter_std)
        writer.writerow(
            [
                f"{conv.id}:{ui}",
                u.emotion,
                int(pred_e[ui]),
                true_v,
                pv,
                true_a,
                pa,
                repr(v_coord),
                repr(a_coord),
            ]
        )
    if sample_size > 0:
        buf.write(
            f"# valence_accuracy={valence_hits / sample_size!r}"
            f" arousal_accuracy={arousal_hits / sample_size!r}\n"
        )
    atomic_write_text(path, buf.getvalue())
    return sample_size
