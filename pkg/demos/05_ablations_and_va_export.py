"""Mini ablation table plus a valence-arousal projection export.

Run: python3 demos/05_ablations_and_va_export.py   (a few minutes)
"""

import tempfile
from pathlib import Path

from hfgcn.dataio import GeneratorConfig, generate_synthetic
from hfgcn.model import HfgcnConfig
from hfgcn.training import (
    TrainConfig,
    export_va_projection,
    run_ablation,
    train,
    write_ablation_csv,
)

gen = GeneratorConfig(
    num_conversations=40,
    utterances_range=(4, 6),
    num_emotions=4,
    cluster_separation=2.5,
    cross_modal_mode=True,
    emotion_persistence=0.8,
    seed=5,
)
meta, conversations = generate_synthetic(gen)
train_set, test_set = conversations[:28], conversations[28:]

base_cfg = HfgcnConfig(
    num_emotions=4, hidden=6, dropout=0.1,
    use_va_heads=False, valence_loss_weight=0.0, arousal_loss_weight=0.0,
)
train_cfg = TrainConfig(learning_rate=2e-3, max_epochs=8, patience=8)

rows, summary = run_ablation(meta, train_set, [], test_set, base_cfg, train_cfg, seeds=[0])
print("group    first  second  attn   rel    F1")
for r in rows:
    print(
        f"{r.group:7s}  {str(r.use_first_stage):5s}  {str(r.use_second_stage):6s}"
        f"  {str(r.use_edge_attention):5s}  {str(r.use_relations):5s}  {r.weighted_f1:.4f}"
    )

with tempfile.TemporaryDirectory() as tmp:
    csv_path = Path(tmp) / "ablation.csv"
    write_ablation_csv(rows, csv_path)
    print(f"\nwrote {csv_path.name}: {len(csv_path.read_text().splitlines())} lines")

    # VA export needs a model trained with the valence/arousal heads
    va_cfg = HfgcnConfig(num_emotions=4, hidden=6, dropout=0.1)
    params, _ = train(meta, train_set, [], va_cfg, TrainConfig(learning_rate=2e-3, max_epochs=8, patience=8))
    va_path = Path(tmp) / "va_projection.csv"
    rows_written = export_va_projection(
        params, va_cfg, test_set, sample_size=30, jitter_std=0.05, seed=0, path=va_path
    )
    lines = va_path.read_text().splitlines()
    print(f"VA projection: {rows_written} rows; footer: {lines[-1]}")
    print("sample rows:")
    for line in lines[1:4]:
        print(" ", line)
