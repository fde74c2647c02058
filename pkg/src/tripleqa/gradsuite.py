"""Finite-difference verification of every layer and the full QA pipeline.

Each case builds fresh random inputs and parameters, then hands
``gradient_check`` a closure that rebuilds the graph.  Inputs are listed as
parameters too, so input gradients are verified along with weight
gradients.  Losses are random-weighted sums, which keeps gradients well
away from zero (a plain sum gives exactly zero input gradient through batch
norm, for example).
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import numerics as nx
from .numerics import Parameter, Tensor

# Suites run in 64-bit, with the 32-bit analytic path checked separately.
TOLERANCE = {np.float64: 1e-4, np.float32: 1e-2}


def _weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    return (out * weights.astype(out.dtype)).sum()


def _param(rng, *shape, scale=1.0, name="p") -> Parameter:
    return Parameter(scale * rng.standard_normal(shape), name=name)


def _away_from_zero(rng, *shape, margin=0.2) -> np.ndarray:
    # Values bounded away from ReLU/max-pool kinks so central differences stay on one side.
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _case_conv2d(rng):
    x = _param(rng, 2, 3, 6, 5, name="x")
    w = _param(rng, 4, 3, 3, 3, scale=0.5, name="w")
    b = _param(rng, 4, name="b")
    r = rng.standard_normal((2, 4, 3, 3))
    return (lambda: _weighted(nx.conv2d(x, w, b, stride=2, padding=1), r)), [x, w, b]


def _case_conv1d(rng):
    x = _param(rng, 2, 7, 3, name="x")
    w = _param(rng, 4, 3, 3, scale=0.5, name="w")
    b = _param(rng, 4, name="b")
    r = rng.standard_normal((2, 4, 4))
    return (lambda: _weighted(nx.conv1d(x, w, b, stride=2, padding=1), r)), [x, w, b]


def _case_maxpool(rng):
    # Distinct values with gaps much wider than eps keep the argmax fixed.
    vals = rng.permutation(2 * 3 * 4 * 6).astype(np.float64) * 0.01
    x = Parameter(vals.reshape(2, 3, 4, 6), name="x")
    r = rng.standard_normal((2, 3, 2, 3))
    return (lambda: _weighted(nx.maxpool2d(x, 2), r)), [x]


def _case_batchnorm(rng):
    x = _param(rng, 3, 2, 3, 3, name="x")
    gamma = Parameter(rng.uniform(0.5, 1.5, 2), name="gamma")
    beta = _param(rng, 2, name="beta")
    r = rng.standard_normal((3, 2, 3, 3))

    def loss():
        out = nx.batchnorm2d(x, gamma, beta, np.zeros(2), np.ones(2), training=True)
        return _weighted(out, r)

    return loss, [x, gamma, beta]


def _case_pointwise(rng):
    x = Parameter(_away_from_zero(rng, 4, 5), name="x")
    r = rng.standard_normal((4, 5))
    return (lambda: _weighted(nx.relu(x) + nx.tanh(x) * nx.sigmoid(x) + (x * 0.5).exp() + (x * x + 1.0).log() / (x * x + 2.0), r)), [x]


def _case_linear(rng):
    layer = nx.Linear(5, 3, rng)
    layer.bias.data = rng.standard_normal(3)
    x = _param(rng, 4, 5, name="x")
    r = rng.standard_normal((4, 3))
    return (lambda: _weighted(layer(x), r)), [x, layer.weight, layer.bias]


def _case_softmax_ce(rng):
    logits = _param(rng, 4, 5, name="logits")
    target = rng.integers(0, 5, size=4)
    return (lambda: nx.softmax_cross_entropy(logits, target)[0]), [logits]


def _case_masked_softmax(rng):
    x = _param(rng, 3, 6, name="x")
    mask = np.ones((3, 6), dtype=bool)
    mask[0, 4:] = False
    mask[2, 1:] = False
    r = rng.standard_normal((3, 6))
    return (lambda: _weighted(nx.softmax(x, axis=1, mask=mask), r)), [x]


def _case_bce(rng):
    z = _param(rng, 3, 4, name="z")
    y = (rng.random((3, 4)) > 0.5).astype(np.float64)
    return (lambda: nx.binary_cross_entropy(nx.sigmoid(z), y)), [z]


def _case_dropout(rng):
    x = _param(rng, 4, 6, name="x")
    r = rng.standard_normal((4, 6))
    seed = int(rng.integers(1 << 30))
    # Same mask on every call: the generator is re-created from a fixed seed.
    return (lambda: _weighted(nx.dropout(x, 0.5, True, np.random.default_rng(seed)), r)), [x]


def _case_lstm(rng):
    lstm = nx.LSTM(3, 4, rng, bidirectional=True)
    for p in lstm.parameters():
        if p.ndim == 1:
            p.data = 0.1 * rng.standard_normal(p.shape)
    x = _param(rng, 2, 5, 3, name="x")
    mask = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]], dtype=bool)
    r = rng.standard_normal((2, 5, 8))
    rf = rng.standard_normal((2, 8))

    def loss():
        out, final = lstm(x, mask=mask)
        return _weighted(out, r) + _weighted(final, rf)

    return loss, [x] + lstm.parameters()


def _case_embedding(rng):
    emb = nx.Embedding(7, 3, rng)
    idx = np.array([[1, 4, 4], [6, 0, 2]])
    r = rng.standard_normal((2, 3, 3))
    return (lambda: _weighted(emb(idx), r)), [emb.table]


def _case_walnet_block(rng):
    from .walnet import _Block

    block = _Block(2, 3, 3, rng)
    for p in block.parameters():
        if p.ndim == 1:
            p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    x = _param(rng, 2, 2, 6, 4, name="x")
    r = rng.standard_normal((2, 3, 3, 2))
    # Conv biases feeding batch norm cancel against the batch mean, so their
    # true gradient is exactly zero; they are left out of the check.
    params = [p for p in block.parameters() if p is not block.conv1.bias and p is not block.conv2.bias]
    return (lambda: _weighted(block(x), r)), [x] + params


def _case_walnet_head(rng):
    from .walnet import recording_pool

    l7 = nx.Conv2d(3, 5, 2, rng)
    l8 = nx.Conv2d(5, 4, 1, rng)
    x = _param(rng, 2, 3, 5, 2, name="x")
    y = (rng.random((2, 4)) > 0.5).astype(np.float64)

    def loss():
        h = nx.relu(l7(x))  # B × 5 × 4 × 1
        seg = l8(h).reshape(2, 4, 4).transpose(0, 2, 1)  # B × S × C
        return nx.binary_cross_entropy(recording_pool(nx.sigmoid(seg)), y)

    return loss, [x] + l7.parameters() + l8.parameters()


def _tiny_qa(rng, lambdas=(1.0, 1.0, 1.0), hops=2, hidden=4):
    from .data.dataset import QAItem
    from .model import ModelConfig, TripleAttentionQA, collate

    cfg = ModelConfig(
        vocab_size=12, lambdas=lambdas, hops=hops, embed_dim=4, hidden_dim=hidden,
        video_in_dim=5, audio_in_dim=4, dropout=0.0, zero_init_scorer=False,
    )
    model = TripleAttentionQA(cfg, seed=int(rng.integers(1 << 30)))
    # Moderate random weights: large enough to carry gradient, small enough to keep tanh unsaturated.
    for p in model.parameters():
        p.data = 0.45 * rng.standard_normal(p.shape)

    def tokens(n):
        return rng.integers(2, 12, size=n)

    # Streams long enough that every modality keeps at least two encoded
    # positions; with one position attention is constant and untested.
    items = [
        QAItem(
            f"g{i}",
            tokens(4),
            [tokens(int(rng.integers(1, 4))) for _ in range(5)],
            int(rng.integers(5)),
            tokens(8),
            rng.standard_normal((9, 5)),
            rng.standard_normal((6, 4)),
        )
        for i in range(2)
    ]
    return model, collate(items, cfg)


# Central differences at eps=1e-5 carry roughly 1e-10 of roundoff on this
# loss, so a coordinate whose true gradient is, say, 1e-8 cannot be resolved
# to 1e-4 relative error.  Instances with such coordinates are redrawn; the
# test uses only the analytic gradient, never the finite differences.
GRADIENT_FLOOR = 1e-6
MAX_DRAWS = 200


def _case_qa_pipeline(rng):
    for _ in range(MAX_DRAWS):
        model, batch = _tiny_qa(rng, hidden=4)
        model.train()
        r = rng.standard_normal((len(batch), 5))

        # Softmax cross-entropy is blind to a shift shared by all five logits,
        # which would leave the output bias with an exactly zero gradient; the
        # weighted readout keeps every parameter in play.
        def loss(model=model, batch=batch, r=r):
            logits, _ = model(batch)
            return nx.softmax_cross_entropy(logits, batch.correct)[0] + _weighted(logits, r)

        params = model.parameters()
        for p in params:
            p.grad = None
        loss().backward()
        grads = np.concatenate([np.abs(p.grad).ravel() for p in params if p.grad is not None])
        for p in params:
            p.grad = None
        if not np.any((grads > 0) & (grads < GRADIENT_FLOOR)):
            return loss, params
    raise RuntimeError(f"no well-conditioned QA instance in {MAX_DRAWS} draws")


CASES: dict[str, Callable] = {
    "conv2d": _case_conv2d,
    "conv1d": _case_conv1d,
    "maxpool2d": _case_maxpool,
    "batchnorm2d": _case_batchnorm,
    "pointwise": _case_pointwise,
    "linear": _case_linear,
    "softmax_cross_entropy": _case_softmax_ce,
    "masked_softmax": _case_masked_softmax,
    "binary_cross_entropy": _case_bce,
    "dropout": _case_dropout,
    "lstm": _case_lstm,
    "embedding": _case_embedding,
    "walnet_block": _case_walnet_block,
    "walnet_head": _case_walnet_head,
    "qa_pipeline": _case_qa_pipeline,
}


def run_gradient_suite(seed: int = 0, dtype=np.float64, max_coords: int = 200, cases=None) -> dict[str, float]:
    """Max relative error per case; analytic gradients computed in ``dtype``."""
    results = {}
    for name in cases or CASES:
        rng = np.random.default_rng([seed, len(name)] + [ord(c) for c in name])
        with nx.default_dtype(np.float64):
            loss_fn, params = CASES[name](rng)
            for p in params:
                p.data = p.data.astype(np.float64)
        results[name] = nx.gradient_check(
            loss_fn, params, max_coords=max_coords, rng=rng, analytic_dtype=dtype
        )
    return results
