"""Dataset schema, NDJSON loading/saving, synthetic generation, VA bins, splits.

A dataset is a ``meta.json`` (feature dimensions, label space) plus a
``data.ndjson`` holding one conversation per line. The synthetic generator
produces multimodal conversations whose class signal is controllable per
modality, including a cross-modal mode where no single modality suffices.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DatasetParseError",
    "DatasetValidationError",
    "Utterance",
    "Conversation",
    "DatasetMeta",
    "GeneratorConfig",
    "EMOTION_VA_PROTOTYPES",
    "load_dataset",
    "save_dataset",
    "validate_conversation",
    "generate_synthetic",
    "discretize_va",
    "va_bin_value",
    "conversation_labels",
    "split_dataset",
    "atomic_write_text",
    "atomic_write_bytes",
]


class DatasetParseError(ValueError):
    """A data file is syntactically malformed."""


class DatasetValidationError(ValueError):
    """A parsed record violates the dataset contract."""


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path, payload: bytes) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


@dataclass
class Utterance:
    speaker: int
    audio: np.ndarray
    text: np.ndarray
    visual: np.ndarray
    emotion: int
    valence: float | None = None
    arousal: float | None = None


@dataclass
class Conversation:
    id: str
    utterances: list[Utterance]


@dataclass
class DatasetMeta:
    d_audio: int
    d_text: int
    d_visual: int
    num_emotions: int
    has_va: bool = True
    num_va_bins: int = 9
    label_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if min(self.d_audio, self.d_text, self.d_visual) < 1:
            raise DatasetValidationError("feature dimensions must be >= 1")
        if self.num_emotions < 2:
            raise DatasetValidationError("num_emotions must be >= 2")
        if self.has_va and self.num_va_bins < 2:
            raise DatasetValidationError("num_va_bins must be >= 2 when has_va")

    def to_dict(self) -> dict:
        return {
            "d_a": self.d_audio,
            "d_t": self.d_text,
            "d_v": self.d_visual,
            "num_emotions": self.num_emotions,
            "has_va": self.has_va,
            "num_va_bins": self.num_va_bins,
            "label_names": list(self.label_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetMeta":
        try:
            return cls(
                d_audio=int(d["d_a"]),
                d_text=int(d["d_t"]),
                d_visual=int(d["d_v"]),
                num_emotions=int(d["num_emotions"]),
                has_va=bool(d["has_va"]),
                num_va_bins=int(d["num_va_bins"]),
                label_names=list(d.get("label_names", [])),
            )
        except KeyError as e:
            raise DatasetParseError(f"meta.json missing key {e.args[0]!r}") from None


def validate_conversation(conv: Conversation, meta: DatasetMeta) -> None:
    if not conv.utterances:
        raise DatasetValidationError(f"conversation {conv.id!r}: needs at least one utterance")
    for k, u in enumerate(conv.utterances):
        where = f"conversation {conv.id!r} utterance {k}"
        if u.speaker < 0:
            raise DatasetValidationError(f"{where}: speaker must be >= 0")
        for name, vec, want in (
            ("audio", u.audio, meta.d_audio),
            ("text", u.text, meta.d_text),
            ("visual", u.visual, meta.d_visual),
        ):
            if vec.ndim != 1 or vec.shape[0] != want:
                key = {"audio": "d_a", "text": "d_t", "visual": "d_v"}[name]
                raise DatasetValidationError(
                    f"{where}: {name} vector has length {vec.shape[0] if vec.ndim == 1 else vec.shape},"
                    f" expected {key}={want}"
                )
        if not 0 <= u.emotion < meta.num_emotions:
            raise DatasetValidationError(
                f"{where}: emotion {u.emotion} outside [0, {meta.num_emotions})"
            )
        if (u.valence is None) != (u.arousal is None):
            raise DatasetValidationError(f"{where}: valence and arousal must both be set or both absent")
        for name, val in (("valence", u.valence), ("arousal", u.arousal)):
            if val is not None and not 1.0 <= val <= 5.0:
                raise DatasetValidationError(f"{where}: {name} {val} outside [1, 5]")


def _utterance_to_json(u: Utterance) -> dict:
    return {
        "speaker": u.speaker,
        "audio": u.audio.tolist(),
        "text": u.text.tolist(),
        "visual": u.visual.tolist(),
        "emotion": u.emotion,
        "valence": u.valence,
        "arousal": u.arousal,
    }


def save_dataset(meta: DatasetMeta, conversations: list[Conversation], meta_path, data_path) -> None:
    atomic_write_text(meta_path, json.dumps(meta.to_dict(), indent=2) + "\n")
    lines = []
    for conv in conversations:
        lines.append(
            json.dumps(
                {"id": conv.id, "utterances": [_utterance_to_json(u) for u in conv.utterances]}
            )
        )
    atomic_write_text(data_path, "\n".join(lines) + ("\n" if lines else ""))


def load_dataset(meta_path, data_path) -> tuple[DatasetMeta, list[Conversation]]:
    with open(meta_path, "r", encoding="utf-8") as fh:
        try:
            meta = DatasetMeta.from_dict(json.load(fh))
        except json.JSONDecodeError as e:
            raise DatasetParseError(f"{meta_path}: {e}") from None
    conversations = []
    with open(data_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetParseError(f"{data_path} line {lineno}: {e}") from None
            try:
                utterances = [
                    Utterance(
                        speaker=int(u["speaker"]),
                        audio=np.asarray(u["audio"], dtype=np.float64),
                        text=np.asarray(u["text"], dtype=np.float64),
                        visual=np.asarray(u["visual"], dtype=np.float64),
                        emotion=int(u["emotion"]),
                        valence=None if u["valence"] is None else float(u["valence"]),
                        arousal=None if u["arousal"] is None else float(u["arousal"]),
                    )
                    for u in rec["utterances"]
                ]
                conv = Conversation(id=str(rec["id"]), utterances=utterances)
            except (KeyError, TypeError) as e:
                raise DatasetParseError(f"{data_path} line {lineno}: bad record ({e})") from None
            validate_conversation(conv, meta)
            conversations.append(conv)
    return meta, conversations


def discretize_va(value: float, num_bins: int = 9) -> int:
    """Map a degree in [1, 5] to a bin index via round((value-1)*(K-1)/4)."""
    if not 1.0 <= value <= 5.0:
        raise DatasetValidationError(f"VA degree {value} outside [1, 5]")
    idx = int(np.rint((value - 1.0) * (num_bins - 1) / 4.0))
    return min(max(idx, 0), num_bins - 1)


def va_bin_value(index: int, num_bins: int = 9) -> float:
    """Inverse of discretize_va: the degree at the center of a bin."""
    return 1.0 + 4.0 * index / (num_bins - 1)


def conversation_labels(
    conv: Conversation, num_va_bins: int
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Per-utterance emotion indices plus VA bin indices (None if any missing)."""
    emotions = np.array([u.emotion for u in conv.utterances], dtype=np.int64)
    if any(u.valence is None for u in conv.utterances):
        return emotions, None, None
    valences = np.array(
        [discretize_va(u.valence, num_va_bins) for u in conv.utterances], dtype=np.int64
    )
    arousals = np.array(
        [discretize_va(u.arousal, num_va_bins) for u in conv.utterances], dtype=np.int64
    )
    return emotions, valences, arousals


def split_dataset(
    conversations: list[Conversation],
    fractions: tuple[float, float, float],
    seed: int,
    require_non_empty: bool = False,
) -> tuple[list[Conversation], list[Conversation], list[Conversation]]:
    """Seeded conversation-level split; fractions must sum to 1."""
    if len(fractions) != 3:
        raise DatasetValidationError("need exactly three split fractions (train, val, test)")
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise DatasetValidationError(f"split fractions must be >= 0 and sum to 1, got {fractions}")
    n = len(conversations)
    raw = [f * n for f in fractions]
    counts = [math.floor(r) for r in raw]
    # hand out the rounding remainder by largest fractional part, ties to earlier splits
    leftover = n - sum(counts)
    order = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in range(leftover):
        counts[order[i % 3]] += 1
    if require_non_empty:
        for frac, count, name in zip(fractions, counts, ("train", "val", "test")):
            if frac > 0 and count == 0:
                raise DatasetValidationError(f"{name} split is empty for fraction {frac} of {n}")
    perm = np.random.default_rng(seed).permutation(n)
    picked = [conversations[i] for i in perm]
    a, b = counts[0], counts[0] + counts[1]
    return picked[:a], picked[a:b], picked[b:]


# std of the Gaussian jitter added to prototype VA degrees
VA_JITTER_STD = 0.3

# (name, valence, arousal) prototypes on the 1..5 circumplex; cycled when E > 6
EMOTION_VA_PROTOTYPES: list[tuple[str, float, float]] = [
    ("neutral", 3.0, 3.0),
    ("happy", 4.5, 2.0),
    ("sad", 1.5, 1.5),
    ("angry", 1.5, 4.5),
    ("excited", 4.5, 4.5),
    ("frustrated", 2.0, 2.0),
]


@dataclass
class GeneratorConfig:
    num_conversations: int = 100
    utterances_range: tuple[int, int] = (4, 10)
    speakers_range: tuple[int, int] = (2, 2)
    num_emotions: int = 4
    d_audio: int = 12
    d_text: int = 16
    d_visual: int = 10
    cluster_separation: float = 3.0
    modality_informativeness: tuple[float, float, float] = (1.0, 1.0, 1.0)
    cross_modal_mode: bool = False
    emotion_persistence: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.num_conversations < 1:
            raise DatasetValidationError("num_conversations must be >= 1")
        if self.utterances_range[0] < 1 or self.utterances_range[0] > self.utterances_range[1]:
            raise DatasetValidationError(f"bad utterances_range {self.utterances_range}")
        if self.speakers_range[0] < 1 or self.speakers_range[0] > self.speakers_range[1]:
            raise DatasetValidationError(f"bad speakers_range {self.speakers_range}")
        if self.num_emotions < 2:
            raise DatasetValidationError("num_emotions must be >= 2")
        if not 0.0 <= self.emotion_persistence <= 1.0:
            raise DatasetValidationError("emotion_persistence must lie in [0, 1]")
        if any(not 0.0 <= f <= 1.0 for f in self.modality_informativeness):
            raise DatasetValidationError("modality_informativeness entries must lie in [0, 1]")
        if self.cluster_separation < 0:
            raise DatasetValidationError("cluster_separation must be >= 0")


def _class_means(cfg: GeneratorConfig) -> list[np.ndarray]:
    """Per-modality (E x d) class-mean matrices with pairwise distance = separation."""
    e = cfg.num_emotions
    amp = cfg.cluster_separation / math.sqrt(2.0)
    means = []
    for dim in (cfg.d_audio, cfg.d_text, cfg.d_visual):
        if dim < e:
            raise DatasetValidationError(
                f"modality dimension {dim} must be >= num_emotions {e} for class means"
            )
        m = np.zeros((e, dim))
        m[np.arange(e), np.arange(e)] = amp
        means.append(m)
    return means


def _cross_modal_means(cfg: GeneratorConfig) -> list[np.ndarray]:
    """Class means where audio/text carry alternating class bits and visual
    carries their parity, so no single modality identifies the class."""
    e = cfg.num_emotions
    bits = max(1, (e - 1).bit_length())
    amp = cfg.cluster_separation / 2.0
    assign: list[list[int]] = [[], []]
    for j in range(bits):
        assign[j % 2].append(j)
    dims = (cfg.d_audio, cfg.d_text, cfg.d_visual)
    for m, owned in enumerate(assign):
        if dims[m] < len(owned):
            raise DatasetValidationError(
                f"modality dimension {dims[m]} too small for {len(owned)} class bits"
            )
    if dims[2] < 1:
        raise DatasetValidationError("visual dimension must be >= 1")
    means = []
    for m in range(2):
        mat = np.zeros((e, dims[m]))
        for pos, j in enumerate(assign[m]):
            signs = 1.0 - 2.0 * ((np.arange(e) >> j) & 1)
            mat[:, pos] = amp * signs
        means.append(mat)
    parity = np.zeros(e, dtype=np.int64)
    for j in range(bits):
        parity ^= (np.arange(e) >> j) & 1
    vis = np.zeros((e, dims[2]))
    vis[:, 0] = amp * (1.0 - 2.0 * parity)
    means.append(vis)
    return means


def generate_synthetic(cfg: GeneratorConfig) -> tuple[DatasetMeta, list[Conversation]]:
    """Seeded synthetic multimodal conversations with emotion and VA labels."""
    rng = np.random.default_rng(cfg.seed)
    e = cfg.num_emotions
    means = _cross_modal_means(cfg) if cfg.cross_modal_mode else _class_means(cfg)
    names = [
        EMOTION_VA_PROTOTYPES[c % len(EMOTION_VA_PROTOTYPES)][0]
        + ("" if c < len(EMOTION_VA_PROTOTYPES) else f"_{c // len(EMOTION_VA_PROTOTYPES)}")
        for c in range(e)
    ]
    meta = DatasetMeta(
        d_audio=cfg.d_audio,
        d_text=cfg.d_text,
        d_visual=cfg.d_visual,
        num_emotions=e,
        has_va=True,
        num_va_bins=9,
        label_names=names,
    )
    dims = (cfg.d_audio, cfg.d_text, cfg.d_visual)
    conversations = []
    for c_idx in range(cfg.num_conversations):
        n_utt = int(rng.integers(cfg.utterances_range[0], cfg.utterances_range[1] + 1))
        n_spk = int(rng.integers(cfg.speakers_range[0], cfg.speakers_range[1] + 1))
        emotions = np.empty(n_utt, dtype=np.int64)
        emotions[0] = rng.integers(e)
        for t in range(1, n_utt):
            if rng.random() < cfg.emotion_persistence:
                emotions[t] = emotions[t - 1]
            else:
                pick = int(rng.integers(e - 1))
                emotions[t] = pick + (pick >= emotions[t - 1])
        utterances = []
        for t in range(n_utt):
            cls = int(emotions[t])
            vectors = []
            for m in range(3):
                noise = rng.standard_normal(dims[m])
                vectors.append(cfg.modality_informativeness[m] * means[m][cls] + noise)
            _, proto_v, proto_a = EMOTION_VA_PROTOTYPES[cls % len(EMOTION_VA_PROTOTYPES)]
            valence = float(np.clip(proto_v + rng.normal(0.0, VA_JITTER_STD), 1.0, 5.0))
            arousal = float(np.clip(proto_a + rng.normal(0.0, VA_JITTER_STD), 1.0, 5.0))
            utterances.append(
                Utterance(
                    speaker=t % n_spk,
                    audio=vectors[0],
                    text=vectors[1],
                    visual=vectors[2],
                    emotion=cls,
                    valence=valence,
                    arousal=arousal,
                )
            )
        conversations.append(Conversation(id=f"conv{c_idx:05d}", utterances=utterances))
    return meta, conversations
