"""
WALNet geometry: from a waveform to segment-level features
==========================================================

Renders a short tone recording, turns it into a 128-band log-mel
spectrogram, and follows it through the WALNet stack.  Every 64 input
frames add one 128-frame segment at the output.
"""

import numpy as np

from tripleqa.audio import Waveform, logmel, segment_count
from tripleqa.data.synthetic import render_clip
from tripleqa.walnet import WALNet, WalnetConfig, extract_segment_features, receptive_field

# a 5 s recording at 44.1 kHz with two tone bursts (class, onset, length)
rng = np.random.default_rng(0)
wave = render_clip(rng, 5 * 44100, [(1, 20000, 40000), (3, 120000, 60000)], n_classes=5)
spec = logmel(Waveform(wave), source_id="demo")
print("log-mel frames x bands:", spec.frames.shape)

# block-by-block shapes for one 128-frame window
net = WALNet(WalnetConfig(n_classes=128), seed=0)
for name, shape in net.trace(spec.frames[:128]):
    print(f"  {name}: {'x'.join(map(str, shape))}")

# the full recording: one output row per 128-frame window, hop 64
feats = extract_segment_features(spec, net)
size, hop, start = receptive_field()
print(f"segments: {feats.features.shape[0]} (128-frame windows at hop 64: {segment_count(spec.n_frames)})")
# padding lets each output see beyond its nominal window
print(f"receptive field {size} frames, hop {hop}, first one starts at frame {start}")
