"""Train each fusion variant under identical settings and compare metrics.

Usage: python scripts/compare_fusion_heads.py [n_samples] [epochs]
"""

import sys

from modalign import (
    AlignmentModel,
    ModelConfig,
    SentimentLexicon,
    SyntheticTeacher,
    TrainConfig,
    evaluate,
    generate_synthetic,
    train,
)

n = int(sys.argv[1]) if len(sys.argv) > 1 else 400
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 12

train_ds = generate_synthetic(n, seed=3)
held = generate_synthetic(128, seed=100_010, split="eval")
teacher = SyntheticTeacher(seed=3)
# a simple polarity lexicon over the synthetic token ids: low bins negative
lexicon = SentimentLexicon({str(t): -1.0 + 2.0 * ((t % 8) / 7.0) for t in range(64)})

for variant in ("concat", "co_attention", "cross_attention", "knowledge_cross_attention"):
    model = AlignmentModel(ModelConfig(seed=3, fusion_variant=variant))
    train(model, teacher, train_ds, TrainConfig(epochs=epochs, seed=3),
          eval_dataset=held, lexicon=lexicon)
    report = evaluate(model, held, lexicon=lexicon)
    print(f"{variant:28s} acc {report.accuracy:.3f} macro_F1 {report.macro_f1:.3f}")
