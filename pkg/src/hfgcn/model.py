"""End-to-end model: encoders -> hierarchical graph fusion -> three heads.

Per-utterance representation is the encoded early-fusion feature concatenated
with the pooled graph output; emotion, valence, and arousal each get one
affine head. Ablation flags drop graph stages, edge attention, or relation
typing without changing any downstream tensor shape.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .dataio import Conversation, atomic_write_bytes, atomic_write_text
from .encoder import (
    GruParams,
    encode_conversation,
    init_gru,
)
from .graph import (
    NUM_RELATIONS,
    FusionGraph,
    build_first_stage,
    build_second_stage,
    first_stage_weights,
    fusion_only_graph,
    gcn_layer,
    nodal_pooling,
    rgcn_layer,
    second_stage_weights,
    set_edge_weights,
    uniform_edge_weights,
)
from .numerics import Value, concat, cross_entropy, dropout, matmul, mul, uniform_init

__all__ = [
    "HfgcnConfig",
    "HfgcnParams",
    "ModelOutput",
    "CheckpointError",
    "CheckpointVersionError",
    "CheckpointTruncatedError",
    "CheckpointManifestError",
    "init_params",
    "forward",
    "multitask_loss",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointManifestError(CheckpointError):
    pass


@dataclass
class HfgcnConfig:
    num_emotions: int
    hidden: int = 32
    graph_dim1: int | None = None  # None -> encoder output dim (2*hidden)
    graph_dim2: int | None = None
    attention_dim: int | None = None
    num_va_bins: int = 9
    valence_loss_weight: float = 0.15
    arousal_loss_weight: float = 0.15
    dropout: float = 0.35
    window_past: int | None = None
    window_future: int | None = None
    use_first_stage: bool = True
    use_second_stage: bool = True
    use_edge_attention: bool = True
    use_relations: bool = True
    use_va_heads: bool = True

    def __post_init__(self):
        if self.num_emotions < 2:
            raise ValueError("num_emotions must be >= 2")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        if self.num_va_bins < 2:
            raise ValueError("num_va_bins must be >= 2")
        if self.valence_loss_weight < 0 or self.arousal_loss_weight < 0:
            raise ValueError("loss weights must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if (self.window_past is None) != (self.window_future is None):
            raise ValueError("window_past and window_future must be set together")
        if self.window_past is not None and (self.window_past < 0 or self.window_future < 0):
            raise ValueError("window bounds must be >= 0")
        for name in ("graph_dim1", "graph_dim2", "attention_dim"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def encoder_dim(self) -> int:
        return 2 * self.hidden

    @property
    def g1(self) -> int:
        return self.graph_dim1 if self.graph_dim1 is not None else self.encoder_dim

    @property
    def g2(self) -> int:
        return self.graph_dim2 if self.graph_dim2 is not None else self.encoder_dim

    @property
    def attn_dim(self) -> int:
        return self.attention_dim if self.attention_dim is not None else self.encoder_dim

    @property
    def window(self) -> tuple[int, int] | None:
        if self.window_past is None:
            return None
        return (self.window_past, self.window_future)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HfgcnConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


class HfgcnParams:
    """Named registry of every learnable Value; creation order is fixed so
    seeded initialization and checkpoints are deterministic."""

    def __init__(
        self,
        encoders: dict[str, GruParams],
        intra_attn: Value | None,
        query_w: Value | None,
        query_b: Value | None,
        key_w: Value | None,
        key_b: Value | None,
        score_w: Value | None,
        rel_transforms: dict[int, Value] | Value,
        rgcn_self: Value,
        gcn_neighbor: Value,
        gcn_self: Value,
        heads: dict[str, tuple[Value, Value]],
    ):
        self.encoders = encoders
        self.intra_attn = intra_attn
        self.query_w = query_w
        self.query_b = query_b
        self.key_w = key_w
        self.key_b = key_b
        self.score_w = score_w
        self.rel_transforms = rel_transforms
        self.rgcn_self = rgcn_self
        self.gcn_neighbor = gcn_neighbor
        self.gcn_self = gcn_self
        self.heads = heads

    def named_values(self) -> list[tuple[str, Value]]:
        out: list[tuple[str, Value]] = []
        for stream in ("audio", "text", "visual", "fusion"):
            if stream in self.encoders:
                out.extend(self.encoders[stream].named_values(f"encoder.{stream}"))
        if self.intra_attn is not None:
            out.append(("graph.intra_attention.bilinear", self.intra_attn))
        if self.query_w is not None:
            out.append(("graph.pair_attention.query.w", self.query_w))
            out.append(("graph.pair_attention.query.b", self.query_b))
            out.append(("graph.pair_attention.key.w", self.key_w))
            out.append(("graph.pair_attention.key.b", self.key_b))
            out.append(("graph.pair_attention.score.w", self.score_w))
        if isinstance(self.rel_transforms, Value):
            out.append(("graph.rgcn.shared.w", self.rel_transforms))
        else:
            for r in sorted(self.rel_transforms):
                out.append((f"graph.rgcn.rel{r:02d}.w", self.rel_transforms[r]))
        out.append(("graph.rgcn.self.w", self.rgcn_self))
        out.append(("graph.gcn.neighbor.w", self.gcn_neighbor))
        out.append(("graph.gcn.self.w", self.gcn_self))
        for head in ("emotion", "valence", "arousal"):
            if head in self.heads:
                w, b = self.heads[head]
                out.append((f"head.{head}.w", w))
                out.append((f"head.{head}.b", b))
        return out

    def values(self) -> list[Value]:
        return [v for _, v in self.named_values()]

    @property
    def input_dims(self) -> dict[str, int]:
        dims = {name: p.input_dim for name, p in self.encoders.items()}
        if "audio" not in dims:
            # fusion encoder always exists; modality dims are recoverable only
            # from the stored manifest in that case
            dims = {"fusion": self.encoders["fusion"].input_dim, **dims}
        return dims


def _affine_init(in_dim: int, out_dim: int, rng: np.random.Generator) -> tuple[Value, Value]:
    bound = 1.0 / math.sqrt(in_dim)
    return uniform_init((in_dim, out_dim), bound, rng), uniform_init((1, out_dim), bound, rng)


def init_params(
    cfg: HfgcnConfig,
    d_audio: int,
    d_text: int,
    d_visual: int,
    seed: int,
) -> HfgcnParams:
    """Seeded parameter set matching the config's ablation flags."""
    rng = np.random.default_rng(seed)
    d = cfg.encoder_dim
    encoders: dict[str, GruParams] = {}
    if cfg.use_first_stage:
        encoders["audio"] = init_gru(d_audio, cfg.hidden, rng)
        encoders["text"] = init_gru(d_text, cfg.hidden, rng)
        encoders["visual"] = init_gru(d_visual, cfg.hidden, rng)
    encoders["fusion"] = init_gru(d_audio + d_text + d_visual, cfg.hidden, rng)

    intra_attn = None
    if cfg.use_first_stage and cfg.use_edge_attention:
        intra_attn = uniform_init((d, d), 1.0 / math.sqrt(d), rng)

    query_w = query_b = key_w = key_b = score_w = None
    if cfg.use_second_stage and cfg.use_edge_attention:
        query_w, query_b = _affine_init(d, cfg.attn_dim, rng)
        key_w, key_b = _affine_init(d, cfg.attn_dim, rng)
        score_w = uniform_init((2 * cfg.attn_dim, 1), 1.0 / math.sqrt(2 * cfg.attn_dim), rng)

    bound = 1.0 / math.sqrt(d)
    if cfg.use_relations:
        rel_transforms: dict[int, Value] | Value = {
            r: uniform_init((d, cfg.g1), bound, rng) for r in range(1, NUM_RELATIONS + 1)
        }
    else:
        rel_transforms = uniform_init((d, cfg.g1), bound, rng)
    rgcn_self = uniform_init((d, cfg.g1), bound, rng)
    g1_bound = 1.0 / math.sqrt(cfg.g1)
    gcn_neighbor = uniform_init((cfg.g1, cfg.g2), g1_bound, rng)
    gcn_self = uniform_init((cfg.g1, cfg.g2), g1_bound, rng)

    rep_dim = d + cfg.g2
    heads = {"emotion": _affine_init(rep_dim, cfg.num_emotions, rng)}
    if cfg.use_va_heads:
        heads["valence"] = _affine_init(rep_dim, cfg.num_va_bins, rng)
        heads["arousal"] = _affine_init(rep_dim, cfg.num_va_bins, rng)

    return HfgcnParams(
        encoders=encoders,
        intra_attn=intra_attn,
        query_w=query_w,
        query_b=query_b,
        key_w=key_w,
        key_b=key_b,
        score_w=score_w,
        rel_transforms=rel_transforms,
        rgcn_self=rgcn_self,
        gcn_neighbor=gcn_neighbor,
        gcn_self=gcn_self,
        heads=heads,
    )


@dataclass
class ModelOutput:
    utterance_repr: Value  # (N x (D + G2))
    emotion_logits: Value  # (N x E)
    valence_logits: Value | None  # (N x K)
    arousal_logits: Value | None


def _head(u: Value, params: HfgcnParams, name: str) -> Value:
    w, b = params.heads[name]
    return matmul(u, w) + b


def forward(
    conv: Conversation,
    params: HfgcnParams,
    cfg: HfgcnConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> ModelOutput:
    """Full pass over one conversation; train mode applies dropout (needs rng)."""
    if training and cfg.dropout > 0.0 and rng is None:
        raise ValueError("training forward needs a generator for dropout")
    enc = encode_conversation(conv, params.encoders)
    if training and cfg.dropout > 0.0:
        for stream in ("audio", "text", "visual", "fusion"):
            feats = getattr(enc, stream)
            if feats is not None:
                setattr(enc, stream, dropout(feats, cfg.dropout, True, rng))

    speakers = [u.speaker for u in conv.utterances]
    if cfg.use_first_stage:
        graph = build_first_stage(enc, speakers)
    else:
        graph = fusion_only_graph(enc, speakers)
    if cfg.use_second_stage:
        build_second_stage(graph, cfg.window)

    weight_parts: list[Value] = []
    if graph.first_stage_count:
        if cfg.use_edge_attention:
            weight_parts.append(first_stage_weights(graph, params.intra_attn))
        else:
            weight_parts.append(uniform_edge_weights(graph, "first"))
    if len(graph.edges) > graph.first_stage_count:
        if cfg.use_edge_attention:
            weight_parts.append(
                second_stage_weights(
                    graph, params.query_w, params.query_b, params.key_w, params.key_b, params.score_w
                )
            )
        else:
            weight_parts.append(uniform_edge_weights(graph, "second"))
    if weight_parts:
        set_edge_weights(graph, weight_parts[0] if len(weight_parts) == 1 else concat(weight_parts, axis=0))
    else:
        set_edge_weights(graph, Value(np.empty((0, 1))))

    fused = rgcn_layer(graph, params.rel_transforms, params.rgcn_self)
    fused = gcn_layer(graph, fused, params.gcn_neighbor, params.gcn_self)
    pooled = nodal_pooling(fused) if graph.has_modality_nodes else fused

    u = concat([enc.fusion, pooled], axis=1)
    if training and cfg.dropout > 0.0:
        u = dropout(u, cfg.dropout, True, rng)

    return ModelOutput(
        utterance_repr=u,
        emotion_logits=_head(u, params, "emotion"),
        valence_logits=_head(u, params, "valence") if cfg.use_va_heads else None,
        arousal_logits=_head(u, params, "arousal") if cfg.use_va_heads else None,
    )


def multitask_loss(
    out: ModelOutput,
    emotions: np.ndarray,
    valences: np.ndarray | None,
    arousals: np.ndarray | None,
    valence_weight: float,
    arousal_weight: float,
) -> Value:
    """Emotion cross-entropy plus weighted valence/arousal cross-entropies.

    With both weights zero this returns the emotion term itself, bit for bit.
    """
    loss = cross_entropy(out.emotion_logits, emotions)
    if valence_weight > 0.0:
        if valences is None or out.valence_logits is None:
            raise ValueError("valence loss weight > 0 needs valence labels and an active head")
        loss = loss + mul(Value(np.array([[valence_weight]])), cross_entropy(out.valence_logits, valences))
    if arousal_weight > 0.0:
        if arousals is None or out.arousal_logits is None:
            raise ValueError("arousal loss weight > 0 needs arousal labels and an active head")
        loss = loss + mul(Value(np.array([[arousal_weight]])), cross_entropy(out.arousal_logits, arousals))
    return loss


def predict(out: ModelOutput) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Argmax per head; ties resolve to the lowest class index."""
    emotions = np.argmax(out.emotion_logits.data, axis=1)
    valences = None if out.valence_logits is None else np.argmax(out.valence_logits.data, axis=1)
    arousals = None if out.arousal_logits is None else np.argmax(out.arousal_logits.data, axis=1)
    return emotions, valences, arousals


def save_checkpoint(params: HfgcnParams, cfg: HfgcnConfig, path) -> None:
    """Write manifest.json plus weights.bin (little-endian float64 blob)."""
    os.makedirs(path, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, value in params.named_values():
        raw = np.ascontiguousarray(value.data, dtype="<f8").tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(value.data.shape),
                "dtype": "f64",
                "byte_offset": offset,
                "byte_length": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    dims = {name: p.input_dim for name, p in params.encoders.items()}
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": cfg.to_dict(),
        "input_dims": dims,
        "params": entries,
    }
    atomic_write_bytes(os.path.join(path, "weights.bin"), b"".join(chunks))
    atomic_write_text(os.path.join(path, "manifest.json"), json.dumps(manifest, indent=2) + "\n")


def _checkpoint_input_dims(manifest: dict) -> tuple[int, int, int]:
    dims = manifest["input_dims"]
    if "audio" in dims:
        return dims["audio"], dims["text"], dims["visual"]
    # fusion-only model: modality split is not recoverable, but any split with
    # the right total rebuilds identical parameter shapes
    total = dims["fusion"]
    return total - 2, 1, 1


def load_checkpoint(path) -> tuple[HfgcnParams, HfgcnConfig]:
    """Rebuild params and config; raises distinct errors per failure mode."""
    manifest_path = os.path.join(path, "manifest.json")
    weights_path = os.path.join(path, "weights.bin")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as e:
            raise CheckpointManifestError(f"manifest.json is not valid JSON: {e}") from None
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version!r}, expected {CHECKPOINT_FORMAT_VERSION}"
        )
    try:
        cfg = HfgcnConfig.from_dict(manifest["config"])
        entries = manifest["params"]
        d_audio, d_text, d_visual = _checkpoint_input_dims(manifest)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointManifestError(f"bad manifest contents: {e}") from None

    with open(weights_path, "rb") as fh:
        blob = fh.read()
    expected = 0
    for entry in entries:
        if entry.get("dtype") != "f64":
            raise CheckpointManifestError(f"unsupported dtype {entry.get('dtype')!r}")
        if entry["byte_offset"] != expected:
            raise CheckpointManifestError(
                f"parameter {entry['name']!r} offset {entry['byte_offset']} != running total {expected}"
            )
        want = 8 * int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 8
        if entry["byte_length"] != want:
            raise CheckpointManifestError(
                f"parameter {entry['name']!r} byte length {entry['byte_length']} != shape implies {want}"
            )
        expected += entry["byte_length"]
    if len(blob) != expected:
        raise CheckpointTruncatedError(
            f"weights.bin holds {len(blob)} bytes, manifest expects {expected}"
        )

    params = init_params(cfg, d_audio, d_text, d_visual, seed=0)
    named = params.named_values()
    if [n for n, _ in named] != [e["name"] for e in entries]:
        raise CheckpointManifestError(
            "manifest parameter names do not match the config's parameter registry"
        )
    for (name, value), entry in zip(named, entries):
        if list(value.data.shape) != list(entry["shape"]):
            raise CheckpointManifestError(
                f"parameter {name!r} shape {entry['shape']} != expected {list(value.data.shape)}"
            )
        start = entry["byte_offset"]
        stop = start + entry["byte_length"]
        value.data[...] = np.frombuffer(blob[start:stop], dtype="<f8").reshape(value.data.shape)
    return params, cfg
