"""Two-stage fusion graph: typed nodes, 10 edge relations, attention weights,
and the graph transformation stack (relational conv, plain conv, nodal pooling).

Stage one builds, per utterance, the complete directed graph on its four nodes
(audio, text, visual, fusion) with relations 1-6 keyed by the modality pair.
Stage two links fusion nodes across utterances with relations 7-10 keyed by
speaker identity and temporal order. Canonical node id is 4*utterance + kind
ordinal (audio=0, text=1, visual=2, fusion=3).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .encoder import EncodedConversation
from .numerics import (
    Value,
    concat,
    gather_rows,
    matmul,
    mul,
    relu,
    scatter_rows,
    softmax_segments,
    sum_rows,
    tanh,
)

KINDS = ("audio", "text", "visual", "fusion")
KIND_ORDINAL = {k: i for i, k in enumerate(KINDS)}

# unordered modality pair -> first-stage relation id
INTRA_RELATIONS = {
    frozenset(("audio", "text")): 1,
    frozenset(("audio", "visual")): 2,
    frozenset(("audio", "fusion")): 3,
    frozenset(("text", "visual")): 4,
    frozenset(("text", "fusion")): 5,
    frozenset(("visual", "fusion")): 6,
}

NUM_RELATIONS = 10

__all__ = [
    "KINDS",
    "KIND_ORDINAL",
    "INTRA_RELATIONS",
    "NUM_RELATIONS",
    "NodeRef",
    "Edge",
    "FusionGraph",
    "assign_relation",
    "build_first_stage",
    "fusion_only_graph",
    "build_second_stage",
    "first_stage_weights",
    "second_stage_weights",
    "uniform_edge_weights",
    "set_edge_weights",
    "rgcn_layer",
    "gcn_layer",
    "nodal_pooling",
    "dump_graph",
]


@dataclass(frozen=True)
class NodeRef:
    utt: int
    kind: str

    def canonical_id(self) -> int:
        return 4 * self.utt + KIND_ORDINAL[self.kind]


@dataclass
class Edge:
    src: NodeRef
    dst: NodeRef
    relation: int
    weight: float | None = None


class FusionGraph:
    """Typed node features plus the directed, relation-labelled edge list.

    Edges are kept in canonical order: first-stage edges grouped by receiving
    node (utterance-major, then kind), then second-stage edges grouped by
    source utterance. Attention code relies on this grouping.
    """

    def __init__(
        self,
        n_utterances: int,
        node_features: Value,
        speakers: Sequence[int],
        has_modality_nodes: bool,
    ):
        if len(speakers) != n_utterances:
            raise ValueError(f"{n_utterances} utterances but {len(speakers)} speaker ids")
        self.n_utterances = n_utterances
        self.node_features = node_features
        self.speakers = list(speakers)
        self.has_modality_nodes = has_modality_nodes
        self.edges: list[Edge] = []
        self.first_stage_count = 0
        self.window: tuple[int, int] | None = None
        self.edge_weights: Value | None = None

    @property
    def num_nodes(self) -> int:
        return self.node_features.data.shape[0]

    def node_index(self, ref: NodeRef) -> int:
        """Row of a node in node_features (and in layer outputs)."""
        if self.has_modality_nodes:
            return ref.canonical_id()
        if ref.kind != "fusion":
            raise ValueError(f"graph holds only fusion nodes, got kind {ref.kind!r}")
        return ref.utt

    def first_stage_edges(self) -> list[Edge]:
        return self.edges[: self.first_stage_count]

    def second_stage_edges(self) -> list[Edge]:
        return self.edges[self.first_stage_count :]


def assign_relation(src: NodeRef, dst: NodeRef, speakers: Sequence[int]) -> int:
    """Relation id 1-10 for a legal edge; raises on illegal node pairs."""
    if src.utt == dst.utt:
        if src.kind == dst.kind:
            raise ValueError(f"illegal edge: {src} -> {dst} (same node kind within an utterance)")
        return INTRA_RELATIONS[frozenset((src.kind, dst.kind))]
    if src.kind != "fusion" or dst.kind != "fusion":
        raise ValueError(f"illegal edge: {src} -> {dst} (cross-utterance edges join fusion nodes only)")
    same_speaker = speakers[src.utt] == speakers[dst.utt]
    if same_speaker:
        return 7 if src.utt < dst.utt else 8
    return 9 if src.utt < dst.utt else 10


def _assemble_node_features(enc: EncodedConversation) -> Value:
    """Interleave the four stream matrices into canonical node order."""
    stacked = concat([enc.audio, enc.text, enc.visual, enc.fusion], axis=0)
    n = enc.n
    perm = np.empty(4 * n, dtype=np.int64)
    for i in range(n):
        for k in range(4):
            perm[4 * i + k] = k * n + i
    return gather_rows(stacked, perm)


def build_first_stage(enc: EncodedConversation, speakers: Sequence[int]) -> FusionGraph:
    """Complete directed graph on each utterance's four nodes, relations 1-6."""
    if not enc.has_modalities:
        raise ValueError("first stage needs all four encoded streams")
    graph = FusionGraph(enc.n, _assemble_node_features(enc), speakers, has_modality_nodes=True)
    for i in range(enc.n):
        for dst_kind in KINDS:
            dst = NodeRef(i, dst_kind)
            for src_kind in KINDS:
                if src_kind == dst_kind:
                    continue
                src = NodeRef(i, src_kind)
                graph.edges.append(Edge(src, dst, assign_relation(src, dst, speakers)))
    graph.first_stage_count = len(graph.edges)
    return graph


def fusion_only_graph(enc: EncodedConversation, speakers: Sequence[int]) -> FusionGraph:
    """Graph variant holding only the early-fusion node of each utterance."""
    return FusionGraph(enc.n, enc.fusion, speakers, has_modality_nodes=False)


def build_second_stage(graph: FusionGraph, window: tuple[int, int] | None = None) -> FusionGraph:
    """Append directed fusion-fusion edges for utterance pairs inside the window.

    ``window=(P, Q)`` keeps pairs with -P <= j - i <= Q; None connects all pairs.
    """
    if graph.first_stage_count != len(graph.edges):
        raise ValueError("second stage must be built exactly once, after the first")
    n = graph.n_utterances
    graph.window = window
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            if window is not None and not (-window[0] <= j - i <= window[1]):
                continue
            src, dst = NodeRef(i, "fusion"), NodeRef(j, "fusion")
            graph.edges.append(Edge(src, dst, assign_relation(src, dst, graph.speakers)))
    return graph


def first_stage_weights(graph: FusionGraph, bilinear: Value) -> Value:
    """Similarity attention on intra-utterance edges, normalized over each
    node's three incoming neighbours: w = softmax(dst' @ bilinear @ src)."""
    edges = graph.first_stage_edges()
    if not edges:
        return Value(np.empty((0, 1)))
    src_idx = [graph.node_index(e.src) for e in edges]
    dst_idx = [graph.node_index(e.dst) for e in edges]
    src_feats = gather_rows(graph.node_features, src_idx)
    dst_feats = gather_rows(graph.node_features, dst_idx)
    scores = sum_rows(mul(matmul(dst_feats, bilinear), src_feats))
    return softmax_segments(scores, dst_idx)


def second_stage_weights(
    graph: FusionGraph,
    query_w: Value,
    query_b: Value,
    key_w: Value,
    key_b: Value,
    score_w: Value,
) -> Value:
    """Perceptron attention on fusion-fusion edges, normalized over each
    source's targets: w = softmax(tanh(concat(query_i, key_j) @ score_w))."""
    edges = graph.second_stage_edges()
    if not edges:
        return Value(np.empty((0, 1)))
    f_idx = [graph.node_index(NodeRef(i, "fusion")) for i in range(graph.n_utterances)]
    fusion_feats = gather_rows(graph.node_features, f_idx)
    queries = matmul(fusion_feats, query_w) + query_b
    keys = matmul(fusion_feats, key_w) + key_b
    src_utt = [e.src.utt for e in edges]
    dst_utt = [e.dst.utt for e in edges]
    pair = concat([gather_rows(queries, src_utt), gather_rows(keys, dst_utt)], axis=1)
    scores = tanh(matmul(pair, score_w))
    return softmax_segments(scores, src_utt)


def uniform_edge_weights(graph: FusionGraph, stage: str) -> Value:
    """Weight 1 on every edge of a stage (the unweighted ablation)."""
    count = {
        "first": graph.first_stage_count,
        "second": len(graph.edges) - graph.first_stage_count,
    }[stage]
    return Value(np.ones((count, 1)))


def set_edge_weights(graph: FusionGraph, weights: Value) -> None:
    """Attach the (E x 1) weight vector and mirror floats onto Edge records."""
    if weights.data.shape != (len(graph.edges), 1):
        raise ValueError(
            f"edge weights shape {weights.data.shape} != ({len(graph.edges)}, 1)"
        )
    graph.edge_weights = weights
    flat = weights.data.reshape(-1)
    for e, w in zip(graph.edges, flat):
        e.weight = float(w)


def _relation_groups(graph: FusionGraph, collapse: bool) -> list[tuple[int | None, list[int]]]:
    if collapse:
        return [(None, list(range(len(graph.edges))))] if graph.edges else []
    groups: dict[int, list[int]] = {}
    for k, e in enumerate(graph.edges):
        groups.setdefault(e.relation, []).append(k)
    return sorted(groups.items())


def rgcn_layer(
    graph: FusionGraph,
    rel_transforms: Mapping[int, Value] | Value,
    self_transform: Value,
) -> Value:
    """Relational convolution: per relation r, mean of weighted, transformed
    in-neighbours (w_ij / |N_i^r|) plus an untransformed-weight self term.

    Passing a single Value for ``rel_transforms`` collapses all relations into
    one shared transform (the no-relations ablation).
    """
    if graph.edge_weights is None:
        raise ValueError("rgcn_layer needs edge weights; compute attention first")
    num_nodes = graph.num_nodes
    shared = isinstance(rel_transforms, Value)
    acc = matmul(graph.node_features, self_transform)
    for relation, edge_idx in _relation_groups(graph, collapse=shared):
        transform = rel_transforms if shared else rel_transforms[relation]
        src = np.array([graph.node_index(graph.edges[k].src) for k in edge_idx])
        dst = np.array([graph.node_index(graph.edges[k].dst) for k in edge_idx])
        in_degree = np.bincount(dst, minlength=num_nodes)
        coef = Value((1.0 / in_degree[dst]).reshape(-1, 1))
        weights = mul(gather_rows(graph.edge_weights, edge_idx), coef)
        messages = mul(matmul(gather_rows(graph.node_features, src), transform), weights)
        acc = acc + scatter_rows(messages, dst, num_nodes)
    return relu(acc)


def gcn_layer(graph: FusionGraph, inputs: Value, neighbor_w: Value, self_w: Value) -> Value:
    """Plain convolution over the same structure: in-degree-normalized sum of
    transformed neighbours plus a transformed self term. Ignores relations
    and attention weights."""
    acc = matmul(inputs, self_w)
    if graph.edges:
        num_nodes = graph.num_nodes
        src = np.array([graph.node_index(e.src) for e in graph.edges])
        dst = np.array([graph.node_index(e.dst) for e in graph.edges])
        in_degree = np.bincount(dst, minlength=num_nodes)
        coef = Value((1.0 / in_degree[dst]).reshape(-1, 1))
        messages = mul(matmul(gather_rows(inputs, src), neighbor_w), coef)
        acc = acc + scatter_rows(messages, dst, num_nodes)
    return relu(acc)


def nodal_pooling(node_outputs: Value) -> Value:
    """Average each utterance's four node vectors: (4N x G) -> (N x G)."""
    m = node_outputs.data.shape[0]
    if m % 4 != 0:
        raise ValueError(f"nodal pooling needs a node count divisible by 4, got {m}")
    n = m // 4
    pool = np.kron(np.eye(n), np.full((1, 4), 0.25))
    return matmul(Value(pool), node_outputs)


def dump_graph(graph: FusionGraph, fh) -> None:
    """Debug export: one edge per line, "src dst relation weight" with
    canonical node ids."""
    for e in graph.edges:
        weight = e.weight if e.weight is not None else float("nan")
        fh.write(f"{e.src.canonical_id()} {e.dst.canonical_id()} {e.relation} {weight!r}\n")
