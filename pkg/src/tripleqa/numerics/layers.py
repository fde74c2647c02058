"""Parameter containers and the layers the models are assembled from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, concat, get_default_dtype, matmul


class Parameter(Tensor):
    """A named leaf tensor owned by a :class:`Module`."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name: str = "", trainable: bool = True):
        super().__init__(np.array(data, dtype=get_default_dtype()), requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    @property
    def tensor(self) -> Tensor:
        return self


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """Base class; parameters and sub-modules are discovered from attributes.

    Parameter names are dotted attribute paths, e.g. ``blocks.0.conv1.weight``.
    """

    training = True

    def children(self) -> Iterator[tuple[str, Module]]:
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
        for key, child in self.children():
            yield from child.named_parameters(prefix + key + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key in getattr(self, "_buffers", ()):
            yield prefix + key, getattr(self, key)
        for key, child in self.children():
            yield from child.named_buffers(prefix + key + ".")

    def assign_names(self) -> None:
        for name, p in self.named_parameters():
            p.name = name

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = sorted((set(own) | set(buffers)) - set(state))
        if missing:
            raise KeyError(f"state is missing entries: {', '.join(missing)}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"parameter {name}: shape {value.shape} does not match model shape {p.shape}")
            p.data = value.astype(p.dtype, copy=True)
        for name, buf in buffers.items():
            buf[...] = state[name]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> Module:
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> Module:
        return self.train(False)

    def astype(self, dtype) -> Module:
        """Cast all parameters in place (used to switch to 64-bit verification)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim))
        self.bias = Parameter(np.zeros(out_dim)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        y = matmul(x.reshape(-1, x.shape[-1]), self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y.reshape(*lead, self.weight.shape[1])


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator, stride: int = 1, padding: int = 0):
        fan_in, fan_out = in_ch * kernel * kernel, out_ch * kernel * kernel
        self.weight = Parameter(glorot_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in, fan_out))
        self.bias = Parameter(np.zeros(out_ch))
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Conv1d(Module):
    """Convolution along the sequence axis of B×L×D inputs."""

    def __init__(self, in_dim: int, out_dim: int, kernel: int, rng: np.random.Generator, stride: int = 1, padding: int = 0):
        fan_in, fan_out = in_dim * kernel, out_dim * kernel
        self.weight = Parameter(glorot_uniform(rng, (out_dim, in_dim, kernel), fan_in, fan_out))
        self.bias = Parameter(np.zeros(out_dim))
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return F.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return F.batchnorm2d(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.training, self.momentum, self.eps
        )


class Embedding(Module):
    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator, scale: float = 0.08):
        self.table = Parameter(rng.uniform(-scale, scale, size=(vocab_size, dim)))

    def forward(self, indices) -> Tensor:
        return F.embedding(self.table, indices)


class LSTM(Module):
    """Single-layer LSTM, optionally bidirectional (outputs concatenated)."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator, bidirectional: bool = False):
        self.hidden = hidden
        self.bidirectional = bidirectional
        self.fwd = _LSTMWeights(in_dim, hidden, rng)
        self.bwd = _LSTMWeights(in_dim, hidden, rng) if bidirectional else None

    def forward(self, x, mask=None) -> tuple[Tensor, Tensor]:
        """Return ``(outputs, final_state)``.

        Outputs are B×T×H (B×T×2H when bidirectional).  The final state is the
        forward direction's last hidden state, or for bidirectional runs the
        concatenation of the forward final state with the backward state at
        the first position.
        """
        out, h, _ = F.lstm_sequence(x, *self.fwd.triple(), mask=mask)
        if not self.bidirectional:
            return out, h
        out_b, h_b, _ = F.lstm_sequence(x, *self.bwd.triple(), mask=mask, reverse=True)
        return concat([out, out_b], axis=-1), concat([h, h_b], axis=-1)


class _LSTMWeights(Module):
    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.w_ih = Parameter(glorot_uniform(rng, (in_dim, 4 * hidden), in_dim, 4 * hidden))
        self.w_hh = Parameter(glorot_uniform(rng, (hidden, 4 * hidden), hidden, 4 * hidden))
        self.b = Parameter(np.zeros(4 * hidden))

    def triple(self):
        return self.w_ih, self.w_hh, self.b
