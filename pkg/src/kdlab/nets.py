"""Small MLP classifiers: a shared trunk emitting penultimate features,
linear softmax heads (one per task), and the trainable linear transform that
maps student features into the teacher's feature space during distillation.

Weights are stored [fan_in, fan_out] so forward is a plain `x @ W + b`.
The penultimate layer has no nonlinearity, so features live in a signed
space and can be matched directly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def _init_weight(rng: np.random.Generator, n_in: int, n_out: int, relu_gain: bool) -> np.ndarray:
    # He scaling for layers feeding a relu; 1/sqrt(fan_in) otherwise.
    std = np.sqrt((2.0 if relu_gain else 1.0) / n_in)
    return rng.normal(0.0, std, size=(n_in, n_out))


@dataclass
class MlpTrunk:
    """Stack of affine layers, relu between all but the last (identity output)."""

    widths: list[int]  # [input_dim, hidden..., feature_dim]
    weights: list[Tensor] = field(default_factory=list)
    biases: list[Tensor] = field(default_factory=list)

    @classmethod
    def create(cls, widths: list[int], rng: np.random.Generator) -> "MlpTrunk":
        if len(widths) < 2:
            raise ValueError(f"trunk needs at least [input, feature] widths, got {widths}")
        trunk = cls(widths=list(widths))
        n_layers = len(widths) - 1
        for i in range(n_layers):
            relu_gain = i < n_layers - 1  # last layer output is the identity feature map
            w = _init_weight(rng, widths[i], widths[i + 1], relu_gain)
            trunk.weights.append(Tensor(w, requires_grad=True))
            trunk.biases.append(Tensor(np.zeros(widths[i + 1]), requires_grad=True))
        return trunk

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]

    def forward(self, x: Tensor) -> Tensor:
        h = ad.as_tensor(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add(ad.matmul(h, w), b)
            if i < last:
                h = ad.relu(h)
        return h

    def forward_numpy(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i < last:
                h = np.maximum(h, 0.0)
        return h

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


@dataclass
class LinearHead:
    """Linear softmax head: logits = z @ weight + bias, one per task."""

    weight: Tensor  # [feature_dim, n_classes]
    bias: Tensor  # [n_classes]

    @classmethod
    def create(cls, feature_dim: int, n_classes: int, rng: np.random.Generator) -> "LinearHead":
        w = _init_weight(rng, feature_dim, n_classes, relu_gain=False)
        return cls(weight=Tensor(w, requires_grad=True),
                   bias=Tensor(np.zeros(n_classes), requires_grad=True))

    @property
    def n_classes(self) -> int:
        return self.weight.shape[1]

    def forward(self, z: Tensor) -> Tensor:
        return ad.add(ad.matmul(z, self.weight), self.bias)

    def forward_numpy(self, z: np.ndarray) -> np.ndarray:
        return z @ self.weight.data + self.bias.data

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class MultiHeadNet:
    """Trunk plus an ordered list of heads sharing its penultimate features."""

    def __init__(self, trunk: MlpTrunk, heads: list[LinearHead], rng: np.random.Generator):
        self.trunk = trunk
        self.heads = heads
        self._rng = rng

    @classmethod
    def create(cls, widths: list[int], head_sizes: list[int], seed: int) -> "MultiHeadNet":
        """Deterministically initialize a net from layer widths and a seed."""
        rng = np.random.default_rng(seed)
        trunk = MlpTrunk.create(widths, rng)
        net = cls(trunk, [], rng)
        for k in head_sizes:
            net.add_head(k)
        return net

    @property
    def feature_dim(self) -> int:
        return self.trunk.feature_dim

    @property
    def input_dim(self) -> int:
        return self.trunk.widths[0]

    def add_head(self, k: int) -> int:
        """Append a new k-way head; existing heads are untouched."""
        if k < 2:
            raise ValueError(f"a head needs at least 2 classes, got {k}")
        self.heads.append(LinearHead.create(self.feature_dim, k, self._rng))
        return len(self.heads) - 1

    def _check_input(self, x_shape: tuple[int, ...], head_index: int) -> None:
        if not 0 <= head_index < len(self.heads):
            raise IndexError(f"head index {head_index} out of range (have {len(self.heads)})")
        if len(x_shape) != 2 or x_shape[1] != self.input_dim:
            raise ValueError(f"input shape {x_shape} does not match input dim {self.input_dim}")

    def forward(self, x, head_index: int = 0) -> tuple[Tensor, Tensor]:
        """Return (penultimate features z, logits l) for one head, on the tape."""
        x = ad.as_tensor(x)
        self._check_input(x.shape, head_index)
        z = self.trunk.forward(x)
        return z, self.heads[head_index].forward(z)

    def forward_numpy(self, x: np.ndarray, head_index: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Tape-free forward for evaluation and frozen-teacher signals."""
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x.shape, head_index)
        z = self.trunk.forward_numpy(x)
        return z, self.heads[head_index].forward_numpy(z)

    def predict(self, x: np.ndarray, head_index: int = 0) -> np.ndarray:
        """Argmax class per row (ties resolve to the lowest class index)."""
        _, logits = self.forward_numpy(x, head_index)
        return np.argmax(logits, axis=1)

    def parameters(self) -> list[Tensor]:
        out = self.trunk.parameters()
        for head in self.heads:
            out.extend(head.parameters())
        return out

    def param_vector(self) -> np.ndarray:
        """All parameters flattened into one vector (trunk, then heads in order)."""
        return np.concatenate([p.data.ravel() for p in self.parameters()])

    def copy(self) -> "MultiHeadNet":
        """Deep value copy; used for frozen teacher snapshots."""
        trunk = MlpTrunk(widths=list(self.trunk.widths))
        for w, b in zip(self.trunk.weights, self.trunk.biases):
            trunk.weights.append(Tensor(w.data.copy(), requires_grad=True))
            trunk.biases.append(Tensor(b.data.copy(), requires_grad=True))
        heads = [LinearHead(Tensor(h.weight.data.copy(), requires_grad=True),
                            Tensor(h.bias.data.copy(), requires_grad=True))
                 for h in self.heads]
        rng = np.random.default_rng()
        rng.bit_generator.state = self._rng.bit_generator.state
        return MultiHeadNet(trunk, heads, rng)

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False


class LinearTransform:
    """Trainable affine map from student features to teacher feature space.

    Participates in training only; evaluation never routes through it.
    """

    def __init__(self, student_dim: int, teacher_dim: int, rng: np.random.Generator):
        w = _init_weight(rng, student_dim, teacher_dim, relu_gain=False)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(teacher_dim), requires_grad=True)

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def forward(self, z: Tensor) -> Tensor:
        return ad.add(ad.matmul(z, self.weight), self.bias)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


CHECKPOINT_VERSION = 1


def save_checkpoint(net: MultiHeadNet, path: str) -> None:
    """Write a JSON checkpoint; floats are serialized via repr so the
    round trip is bit-exact."""
    record = {
        "version": CHECKPOINT_VERSION,
        "widths": net.trunk.widths,
        "head_sizes": [h.n_classes for h in net.heads],
        "params": [p.data.ravel().tolist() for p in net.parameters()],
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(record, f)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> MultiHeadNet:
    with open(path) as f:
        record = json.load(f)
    if record.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {record.get('version')!r}")
    net = MultiHeadNet.create(record["widths"], record["head_sizes"], seed=0)
    params = net.parameters()
    if len(params) != len(record["params"]):
        raise ValueError("checkpoint parameter count does not match architecture")
    for p, flat in zip(params, record["params"]):
        arr = np.asarray(flat, dtype=np.float64)
        if arr.size != p.data.size:
            raise ValueError("checkpoint parameter size mismatch")
        p.data = arr.reshape(p.data.shape)
    return net
