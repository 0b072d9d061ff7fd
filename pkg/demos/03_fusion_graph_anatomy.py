"""Anatomy of the two-stage fusion graph on a three-utterance conversation.

Run: python3 demos/03_fusion_graph_anatomy.py
"""

import io
from collections import Counter

import numpy as np

from hfgcn.encoder import EncodedConversation
from hfgcn.graph import (
    build_first_stage,
    build_second_stage,
    dump_graph,
    first_stage_weights,
    gcn_layer,
    nodal_pooling,
    rgcn_layer,
    second_stage_weights,
    set_edge_weights,
)
from hfgcn.numerics import Value, concat

rng = np.random.default_rng(3)
n, dim = 3, 6
enc = EncodedConversation(
    n=n,
    fusion=Value(rng.standard_normal((n, dim))),
    audio=Value(rng.standard_normal((n, dim))),
    text=Value(rng.standard_normal((n, dim))),
    visual=Value(rng.standard_normal((n, dim))),
)
speakers = [0, 1, 0]

graph = build_first_stage(enc, speakers)
print(f"first stage: {len(graph.edges)} intra-utterance edges (12 per utterance)")
build_second_stage(graph, window=None)
print(f"second stage adds {len(graph.second_stage_edges())} fusion-to-fusion edges")
print("relation histogram:", dict(sorted(Counter(e.relation for e in graph.edges).items())))

# Relations 7/8 join same-speaker utterances, 9/10 different speakers;
# utterances 0 and 2 share speaker 0 here.
for e in graph.second_stage_edges():
    print(f"  F{e.src.utt} -> F{e.dst.utt}  relation {e.relation}")

w1 = first_stage_weights(graph, Value(rng.standard_normal((dim, dim))))
w2 = second_stage_weights(
    graph,
    Value(rng.standard_normal((dim, 4))),
    Value(rng.standard_normal((1, 4))),
    Value(rng.standard_normal((dim, 4))),
    Value(rng.standard_normal((1, 4))),
    Value(rng.standard_normal((8, 1))),
)
set_edge_weights(graph, concat([w1, w2], axis=0))

incoming = {}
for k, e in enumerate(graph.first_stage_edges()):
    incoming.setdefault(e.dst.canonical_id(), 0.0)
    incoming[e.dst.canonical_id()] += e.weight
print("\nincoming first-stage weight totals (all 1.0):",
      sorted(round(v, 12) for v in incoming.values())[:4], "...")

rel = {r: Value(rng.standard_normal((dim, dim))) for r in range(1, 11)}
o1 = rgcn_layer(graph, rel, Value(rng.standard_normal((dim, dim))))
o2 = gcn_layer(graph, o1, Value(rng.standard_normal((dim, dim))), Value(rng.standard_normal((dim, dim))))
pooled = nodal_pooling(o2)
print(f"\nlayer shapes: relational {o1.data.shape} -> conv {o2.data.shape} -> pooled {pooled.data.shape}")

buf = io.StringIO()
dump_graph(graph, buf)
print("\ndebug dump (src dst relation weight), first 6 lines:")
for line in buf.getvalue().split("\n")[:6]:
    print(" ", line)
