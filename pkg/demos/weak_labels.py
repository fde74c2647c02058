"""
Training WALNet from recording-level labels
===========================================

Each synthetic recording holds one to three tone bursts.  Only the set of
classes present is known, not where they occur.  The network predicts
per segment and the mean over segments is trained against the labels.
"""

import numpy as np

from tripleqa.data.synthetic import weak_label_corpus
from tripleqa.walnet import (
    WalnetConfig,
    WeakLabelOptions,
    extract_segment_features,
    mean_average_precision,
    recording_scores,
    train_weak_labels,
)

train = weak_label_corpus(200, n_classes=10, seed=0)
held_out = weak_label_corpus(100, n_classes=10, seed=1)
print("recordings:", len(train), "label vector of the first:", train[0].labels.astype(int))

net, losses = train_weak_labels(train, WalnetConfig(n_classes=10), WeakLabelOptions(epochs=30, target_map=0.995))
for epoch, loss in enumerate(losses):
    print(f"epoch {epoch}: BCE {loss:.4f}")

labels = np.stack([ex.labels for ex in held_out])
print("held-out mAP:", round(mean_average_precision(recording_scores(net, held_out), labels), 3))

# per-segment outputs: the strongest class in each 128-frame window
seg = extract_segment_features(held_out[0].spectrogram, net).features
print("classes present:", np.flatnonzero(held_out[0].labels))
print("per-segment argmax:", seg.argmax(axis=1))
