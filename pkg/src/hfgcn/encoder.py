"""Sequential context encoding: bidirectional GRUs over the four streams.

Each utterance contributes an audio, text, visual, and early-fusion vector;
every stream runs through its own bidirectional GRU so all four come out with
the same dimension 2*hidden, which the fusion graph relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import Conversation, Utterance
from .numerics import Value, concat, matmul, mul, sigmoid, slice_rows, tanh, uniform_init

STREAMS = ("audio", "text", "visual", "fusion")

__all__ = [
    "STREAMS",
    "GruDirection",
    "GruParams",
    "EncodedConversation",
    "init_gru",
    "gru_cell",
    "bigru_encode",
    "early_fuse",
    "stream_matrix",
    "encode_conversation",
]


@dataclass
class GruDirection:
    """Update/reset/candidate gate weights for one scan direction."""

    w_z: Value
    u_z: Value
    b_z: Value
    w_r: Value
    u_r: Value
    b_r: Value
    w_h: Value
    u_h: Value
    b_h: Value

    def named_values(self, prefix: str):
        for gate in ("z", "r", "h"):
            yield f"{prefix}.w_{gate}", getattr(self, f"w_{gate}")
            yield f"{prefix}.u_{gate}", getattr(self, f"u_{gate}")
            yield f"{prefix}.b_{gate}", getattr(self, f"b_{gate}")


@dataclass
class GruParams:
    input_dim: int
    hidden_dim: int
    fwd: GruDirection
    bwd: GruDirection

    def named_values(self, prefix: str):
        yield from self.fwd.named_values(f"{prefix}.fwd")
        yield from self.bwd.named_values(f"{prefix}.bwd")


def _init_direction(input_dim: int, hidden_dim: int, rng: np.random.Generator) -> GruDirection:
    bound = 1.0 / math.sqrt(hidden_dim)
    kw = {}
    for gate in ("z", "r", "h"):
        kw[f"w_{gate}"] = uniform_init((input_dim, hidden_dim), bound, rng)
        kw[f"u_{gate}"] = uniform_init((hidden_dim, hidden_dim), bound, rng)
        kw[f"b_{gate}"] = uniform_init((1, hidden_dim), bound, rng)
    return GruDirection(**kw)


def init_gru(input_dim: int, hidden_dim: int, rng: np.random.Generator) -> GruParams:
    return GruParams(
        input_dim=input_dim,
        hidden_dim=hidden_dim,
        fwd=_init_direction(input_dim, hidden_dim, rng),
        bwd=_init_direction(input_dim, hidden_dim, rng),
    )


def gru_cell(x: Value, h_prev: Value, p: GruDirection) -> Value:
    """One GRU step: h' = (1-z)*h_prev + z*candidate."""
    z = sigmoid(matmul(x, p.w_z) + matmul(h_prev, p.u_z) + p.b_z)
    r = sigmoid(matmul(x, p.w_r) + matmul(h_prev, p.u_r) + p.b_r)
    cand = tanh(matmul(x, p.w_h) + matmul(mul(r, h_prev), p.u_h) + p.b_h)
    return h_prev + mul(z, cand - h_prev)


def bigru_encode(xs: Value, p: GruParams) -> Value:
    """Encode an (N x input_dim) sequence to (N x 2*hidden).

    Both directions start from zero states; output row t is the forward state
    after step t concatenated with the backward state after step t.
    """
    n = xs.data.shape[0]
    if n < 1:
        raise ValueError("bigru_encode needs a non-empty sequence")
    if xs.data.shape[1] != p.input_dim:
        raise ValueError(f"encoder input dim {xs.data.shape[1]} != expected {p.input_dim}")
    steps = [slice_rows(xs, t, t + 1) for t in range(n)]
    h = Value(np.zeros((1, p.hidden_dim)))
    fwd = []
    for t in range(n):
        h = gru_cell(steps[t], h, p.fwd)
        fwd.append(h)
    h = Value(np.zeros((1, p.hidden_dim)))
    bwd: list[Value | None] = [None] * n
    for t in reversed(range(n)):
        h = gru_cell(steps[t], h, p.bwd)
        bwd[t] = h
    rows = [concat([f, b], axis=1) for f, b in zip(fwd, bwd)]
    return rows[0] if n == 1 else concat(rows, axis=0)


def early_fuse(u: Utterance) -> np.ndarray:
    """Concatenate audio, text, visual feature vectors, in that fixed order."""
    return np.concatenate([u.audio, u.text, u.visual])


def stream_matrix(conv: Conversation, stream: str) -> np.ndarray:
    """Stack a conversation's per-utterance vectors for one stream, (N x d)."""
    if stream == "fusion":
        return np.stack([early_fuse(u) for u in conv.utterances])
    if stream not in STREAMS:
        raise ValueError(f"unknown stream {stream!r}")
    return np.stack([getattr(u, stream) for u in conv.utterances])


@dataclass
class EncodedConversation:
    """Context-aware (N x D) features per stream; D = 2*hidden everywhere."""

    n: int
    fusion: Value
    audio: Value | None = None
    text: Value | None = None
    visual: Value | None = None

    @property
    def dim(self) -> int:
        return self.fusion.data.shape[1]

    @property
    def has_modalities(self) -> bool:
        return self.audio is not None


def encode_conversation(conv: Conversation, encoders: dict[str, GruParams]) -> EncodedConversation:
    """Run each configured stream through its bidirectional GRU.

    ``encoders`` must contain "fusion" and may contain the three modality
    streams; all must share the same hidden size.
    """
    if "fusion" not in encoders:
        raise ValueError("encoder stage: a fusion-stream GRU is required")
    hidden = {p.hidden_dim for p in encoders.values()}
    if len(hidden) != 1:
        raise ValueError(f"encoder stage: streams disagree on hidden size: {sorted(hidden)}")
    encoded = {}
    for name, params in encoders.items():
        xs = stream_matrix(conv, name)
        if xs.shape[1] != params.input_dim:
            raise ValueError(
                f"encoder stage: {name} features have dim {xs.shape[1]},"
                f" encoder expects {params.input_dim}"
            )
        encoded[name] = bigru_encode(Value(xs), params)
    return EncodedConversation(
        n=len(conv.utterances),
        fusion=encoded["fusion"],
        audio=encoded.get("audio"),
        text=encoded.get("text"),
        visual=encoded.get("visual"),
    )
