"""Layers built on :mod:`duriano.nn.tensor`: FC, embedding, conv bank, highway, GRU, CBHG."""
from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def parameter(data, name: str = "") -> Tensor:
    # values live on the float32 grid so checkpoints round-trip exactly
    return Tensor(np.asarray(data, dtype=np.float32).astype(np.float64), requires_grad=True, name=name)


class Module:
    """Holds parameters, buffers and submodules as attributes."""

    def __init__(self):
        self.training = True

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if isinstance(value, (Tensor, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and all(
                isinstance(v, (Tensor, Module)) for v in value
            ):
                for i, v in enumerate(value):
                    yield f"{key}.{i}", v

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    out[name] = value
            else:
                out.update(value.named_parameters(name + "."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {f"{prefix}{k}": v for k, v in getattr(self, "buffers", {}).items()}
        for key, value in self._children():
            if isinstance(value, Module):
                out.update(value.named_buffers(f"{prefix}{key}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def train(self, mode: bool = True):
        self.training = mode
        for _, value in self._children():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


# ---------------------------------------------------------------- functional forms


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None, activation=None) -> Tensor:
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"fully_connected: input dim {x.shape[-1]} != weight rows {weight.shape[0]}")
    y = T.matmul(x, weight)
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeError("fully_connected: bias shape mismatch")
        y = y + bias
    return T.ACTIVATIONS[activation](y)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.shape[0]})")
    return T.take_rows(table, ids)


def gru_cell(x_proj: Tensor, h_prev: Tensor, w_hzr: Tensor, w_hn: Tensor) -> Tensor:
    """One GRU update from a precomputed input projection ``x W_x + b`` (``[3H]``).

    ``z`` is the update gate, ``r`` the reset gate; ``h = z*h_prev + (1-z)*n``
    so a saturated update gate carries the previous state through.
    """
    h = h_prev.shape[-1]
    zr = T.sigmoid(x_proj[: 2 * h] + T.matmul(h_prev, w_hzr))
    z, r = zr[:h], zr[h:]
    n = T.tanh(x_proj[2 * h :] + T.matmul(r * h_prev, w_hn))
    return z * h_prev + (1.0 - z) * n


# ---------------------------------------------------------------- modules


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, activation=None, bias=True):
        super().__init__()
        self.weight = parameter(uniform_fan_in(rng, (d_in, d_out), d_in))
        self.bias = parameter(np.zeros(d_out)) if bias else None
        self.activation = activation

    def forward(self, x: Tensor) -> Tensor:
        return fully_connected(x, self.weight, self.bias, self.activation)


class Embedding(Module):
    def __init__(self, vocab: int, dim: int, rng: np.random.Generator, std: float = 0.01):
        super().__init__()
        self.table = parameter(rng.normal(0.0, std, size=(vocab, dim)))

    @property
    def vocab(self) -> int:
        return self.table.shape[0]

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def forward(self, ids) -> Tensor:
        return embedding_lookup(self.table, ids)


class Prenet(Module):
    """Stack of ReLU fully-connected layers with dropout.

    Dropout masks are drawn row by row (all layers of row 0, then row 1, ...)
    so a step-by-step caller and a whole-sequence caller consume the random
    stream identically.
    """

    def __init__(self, d_in: int, dims: Sequence[int], rng: np.random.Generator, dropout: float = 0.5):
        super().__init__()
        sizes = [d_in, *dims]
        self.layers = [Linear(a, b, rng, "relu") for a, b in zip(sizes[:-1], sizes[1:])]
        self.dropout = dropout

    def sample_masks(self, rng: np.random.Generator | None, n_rows: int) -> list[np.ndarray] | None:
        if rng is None or self.dropout <= 0:
            return None
        dims = [layer.weight.shape[1] for layer in self.layers]
        draws = rng.random((n_rows, sum(dims)))
        masks, off = [], 0
        for d in dims:
            masks.append((draws[:, off : off + d] >= self.dropout) / (1.0 - self.dropout))
            off += d
        return masks

    def forward(self, x: Tensor, masks: list[np.ndarray] | None = None) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if masks is not None:
                m = masks[i]
                x = x * (m.reshape(x.shape))
        return x


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))
        self.buffers = {"running_mean": np.zeros(channels), "running_var": np.ones(channels)}
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        if self.training:
            out = T.batch_norm(x, self.gamma, self.beta, None, None, self.eps)
            m = self.momentum
            b = self.buffers
            b["running_mean"] = _f32((1 - m) * b["running_mean"] + m * x.data.mean(axis=0))
            b["running_var"] = _f32((1 - m) * b["running_var"] + m * x.data.var(axis=0))
            return out
        return T.batch_norm(
            x, self.gamma, self.beta, self.buffers["running_mean"], self.buffers["running_var"], self.eps
        )


def _f32(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


class Conv1d(Module):
    """Same-length conv over time with optional batch norm and activation."""

    def __init__(self, c_in, c_out, kernel, rng, activation=None, batch_norm=True):
        super().__init__()
        self.weight = parameter(uniform_fan_in(rng, (kernel, c_in, c_out), kernel * c_in))
        self.bias = None if batch_norm else parameter(np.zeros(c_out))
        self.norm = BatchNorm(c_out) if batch_norm else None
        self.activation = activation

    def forward(self, x: Tensor) -> Tensor:
        y = T.conv1d(x, self.weight, self.bias)
        if self.norm is not None:
            y = self.norm(y)
        return T.ACTIVATIONS[self.activation](y)


class Conv1dBank(Module):
    """Kernels of width 1..K, each conv -> batch norm -> ReLU, concatenated on channels."""

    def __init__(self, c_in: int, K: int, channels: int, rng: np.random.Generator, batch_norm=True):
        super().__init__()
        if K < 1:
            raise ValueError("conv bank needs K >= 1")
        self.convs = [Conv1d(c_in, channels, k, rng, "relu", batch_norm) for k in range(1, K + 1)]

    @property
    def out_channels(self) -> int:
        return sum(c.weight.shape[2] for c in self.convs)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[0] < 1:
            raise ShapeError("conv bank needs T >= 1")
        return T.concat([conv(x) for conv in self.convs], axis=1)


class Highway(Module):
    def __init__(self, dim: int, layers: int, rng: np.random.Generator, gate_bias: float = -1.0):
        super().__init__()
        self.transform = [Linear(dim, dim, rng, "relu") for _ in range(layers)]
        self.gate = [Linear(dim, dim, rng, "sigmoid") for _ in range(layers)]
        for g in self.gate:
            g.bias.data[:] = gate_bias

    def forward(self, x: Tensor) -> Tensor:
        if self.transform and x.shape[-1] != self.transform[0].weight.shape[0]:
            raise ShapeError("highway input dim mismatch")
        for h, t in zip(self.transform, self.gate):
            gate = t(x)
            x = gate * h(x) + (1.0 - gate) * x
        return x


class GRU(Module):
    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.w_x = parameter(uniform_fan_in(rng, (d_in, 3 * hidden), hidden))
        self.w_h = parameter(uniform_fan_in(rng, (hidden, 3 * hidden), hidden))
        self.b = parameter(np.zeros(3 * hidden))

    @property
    def hidden(self) -> int:
        return self.w_h.shape[0]

    def initial_state(self) -> Tensor:
        return Tensor(np.zeros(self.hidden))

    def step(self, x_t: Tensor, h_prev: Tensor) -> Tensor:
        h = self.hidden
        x_proj = T.matmul(x_t, self.w_x) + self.b
        return gru_cell(x_proj, h_prev, self.w_h[:, : 2 * h], self.w_h[:, 2 * h :])

    def forward(self, x: Tensor, h0: Tensor | None = None) -> Tensor:
        hsz = self.hidden
        x_proj = T.matmul(x, self.w_x) + self.b
        w_hzr, w_hn = self.w_h[:, : 2 * hsz], self.w_h[:, 2 * hsz :]
        h = self.initial_state() if h0 is None else h0
        states = []
        for t in range(x.shape[0]):
            h = gru_cell(x_proj[t], h, w_hzr, w_hn)
            states.append(h)
        return T.stack(states)


class BiGRU(Module):
    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.fwd = GRU(d_in, hidden, rng)
        self.bwd = GRU(d_in, hidden, rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[0] < 1:
            raise ShapeError("bidirectional GRU needs T >= 1")
        forward = self.fwd(x)
        backward = T.reverse_rows(self.bwd(T.reverse_rows(x)))
        return T.concat([forward, backward], axis=1)


class CBHG(Module):
    """Conv bank -> max-pool -> conv projections -> residual -> highway -> bi-GRU.

    ``projections[-1]`` must equal ``in_dim`` for the residual connection.
    When ``highway_dim`` differs from ``in_dim`` a linear layer adapts the
    residual output before the highway stack.
    """

    def __init__(
        self,
        in_dim: int,
        K: int,
        bank_channels: int,
        projections: Sequence[int],
        highway_layers: int,
        gru_units: int,
        rng: np.random.Generator,
        highway_dim: int | None = None,
    ):
        super().__init__()
        if not projections or projections[-1] != in_dim:
            raise ShapeError(
                f"CBHG projection output {projections[-1] if projections else None} != input dim {in_dim}"
            )
        self.in_dim = in_dim
        self.bank = Conv1dBank(in_dim, K, bank_channels, rng)
        sizes = [self.bank.out_channels, *projections]
        acts = ["relu"] * (len(projections) - 1) + [None]
        self.projections = [
            Conv1d(a, b, 3, rng, act) for a, b, act in zip(sizes[:-1], sizes[1:], acts)
        ]
        highway_dim = highway_dim or in_dim
        self.pre_highway = Linear(in_dim, highway_dim, rng, bias=False) if highway_dim != in_dim else None
        self.highway = Highway(highway_dim, highway_layers, rng)
        self.gru = BiGRU(highway_dim, gru_units, rng)

    @property
    def out_dim(self) -> int:
        return 2 * self.gru.fwd.hidden

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_dim:
            raise ShapeError(f"CBHG expects {self.in_dim} input channels, got {x.shape[1]}")
        y = self.bank(x)
        y = T.max_pool_time(y, 2)
        for proj in self.projections:
            y = proj(y)
        y = y + x
        if self.pre_highway is not None:
            y = self.pre_highway(y)
        y = self.highway(y)
        return self.gru(y)
