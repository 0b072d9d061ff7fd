"""Small end-to-end run: generate, train with early stopping, evaluate,
checkpoint, reload, verify identical predictions.

Run: python3 demos/04_train_and_evaluate.py   (about a minute)
"""

import tempfile

import numpy as np

from hfgcn.dataio import GeneratorConfig, generate_synthetic, split_dataset
from hfgcn.model import HfgcnConfig, forward, load_checkpoint, predict, save_checkpoint
from hfgcn.training import TrainConfig, evaluate, train

gen = GeneratorConfig(
    num_conversations=60,
    utterances_range=(4, 7),
    num_emotions=4,
    cluster_separation=3.0,
    modality_informativeness=(0.8, 0.8, 0.8),
    emotion_persistence=0.6,
    seed=12,
)
meta, conversations = generate_synthetic(gen)
train_set, val_set, test_set = split_dataset(conversations, (0.7, 0.15, 0.15), seed=0)

model_cfg = HfgcnConfig(num_emotions=4, hidden=12, dropout=0.35)
train_cfg = TrainConfig(learning_rate=1e-3, max_epochs=15, patience=5, seed=0)

params, history = train(meta, train_set, val_set, model_cfg, train_cfg)
print("epoch  train_loss  val_f1")
for h in history:
    print(f"{h.epoch:5d}  {h.train_loss:10.4f}  {h.val_weighted_f1:.4f}")

report = evaluate(params, model_cfg, test_set)
print(f"\ntest: accuracy={report.accuracy:.3f} weighted_f1={report.weighted_f1:.3f}")
print(f"per-class F1: {[round(f, 3) for f in report.per_class_f1]}")
print(f"VA accuracies: valence={report.valence_accuracy:.3f} arousal={report.arousal_accuracy:.3f}")

with tempfile.TemporaryDirectory() as tmp:
    save_checkpoint(params, model_cfg, tmp)
    reloaded, cfg2 = load_checkpoint(tmp)
    before = predict(forward(test_set[0], params, model_cfg))[0]
    after = predict(forward(test_set[0], reloaded, cfg2))[0]
    print("\ncheckpoint round-trip predictions identical:", np.array_equal(before, after))
