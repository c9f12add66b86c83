#!/usr/bin/env python3
"""Train both compact detectors end to end on a small corpus.

Takes a few minutes on a laptop CPU. The spectral detector (LFCC plane in,
max-feature-map CNN) and the raw-waveform detector (strided 1-D CNN) are
trained with AdamW, validated per epoch, and scored by accuracy and EER on
the held-out test split.
"""

import tempfile
from pathlib import Path

from advdf.audio_io import (SynthSpec, load_split_waves, split_records,
                            synthesize_dataset)
from advdf.models import build_detector
from advdf.training import TrainConfig, evaluate_split, train

out = Path(tempfile.mkdtemp(prefix="advdf_train_"))
records = synthesize_dataset(SynthSpec(n_train=150, n_valid=50, n_test=100, seed=3), out)
print(f"corpus: {out}")

test_waves, test_labels = load_split_waves(split_records(records, "test"))

for kind in ("specnet-lfcc", "rawnet"):
    det = build_detector(kind, seed=3)
    cfg = TrainConfig(learning_rate=3e-3, batch_size=32, epochs=8, seed=3)
    result = train(det, records, cfg)
    print(f"\n{kind} ({det.model.n_params} parameters)")
    for h in result.history:
        print(f"  epoch {h.epoch}: loss {h.train_loss:.4f}  "
              f"valid acc {h.valid_accuracy:.3f}  valid EER {h.valid_eer:.3f}")
    acc, eer, _ = evaluate_split(det, det.prepare(test_waves), test_labels)
    print(f"  best epoch {result.best_epoch} -> test acc {acc:.3f}, test EER {eer:.4f}")
