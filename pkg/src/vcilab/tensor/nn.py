"""Multilayer perceptrons on top of the autodiff tensors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import NonFiniteError, Tensor, no_grad_copy

ACTIVATIONS = ("identity", "relu", "leaky_relu", "sigmoid", "tanh")


def _activate(h: Tensor, kind: str) -> Tensor:
    if kind == "identity":
        return h
    if kind == "relu":
        return h.relu()
    if kind == "leaky_relu":
        return h.leaky_relu(0.2)
    if kind == "sigmoid":
        return h.sigmoid()
    if kind == "tanh":
        return h.tanh()
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


@dataclass
class MlpParams:
    """Weights, biases and per-layer activation of a dense network.

    ``weights[i]`` has shape (fan_in, fan_out); inputs are row vectors.
    """

    weights: list[Tensor]
    biases: list[Tensor]
    activations: list[str]
    name: str = "mlp"
    layer_sizes: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must have equal length")
        for i in range(1, len(self.weights)):
            if self.weights[i - 1].shape[1] != self.weights[i].shape[0]:
                raise ValueError(
                    f"layer {i}: input width {self.weights[i].shape[0]} != previous output "
                    f"width {self.weights[i - 1].shape[1]}"
                )
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise ValueError(f"bias shape {b.shape} does not match weight {w.shape}")
            if not (np.all(np.isfinite(w.data)) and np.all(np.isfinite(b.data))):
                raise NonFiniteError(f"non-finite parameter in {self.name}")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.layer_sizes = [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def spec(self) -> dict:
        return {"name": self.name, "sizes": self.layer_sizes, "activations": list(self.activations)}

    def frozen_copy(self) -> "MlpParams":
        return MlpParams(
            [no_grad_copy(w) for w in self.weights],
            [no_grad_copy(b) for b in self.biases],
            list(self.activations),
            name=self.name,
        )

    def __call__(self, x: Tensor) -> Tensor:
        return forward_mlp(self, x)


def init_mlp(
    sizes: list[int],
    activations: list[str] | str,
    rng: np.random.Generator,
    name: str = "mlp",
    dtype=np.float32,
) -> MlpParams:
    """Glorot-uniform weights, zero biases.

    ``activations`` may be a single string applied to hidden layers (the
    output layer is then linear) or one entry per layer.
    """
    if len(sizes) < 2:
        raise ValueError("need at least input and output size")
    n_layers = len(sizes) - 1
    if isinstance(activations, str):
        activations = [activations] * (n_layers - 1) + ["identity"]
    if len(activations) != n_layers:
        raise ValueError("one activation per layer required")
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
        weights.append(Tensor(w, requires_grad=True, name=f"{name}.{i}.weight"))
        biases.append(Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True, name=f"{name}.{i}.bias"))
    return MlpParams(weights, biases, list(activations), name=name)


def forward_mlp(params: MlpParams, x: Tensor) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=params.weights[0].dtype))
    if x.shape[-1] != params.in_dim:
        raise ValueError(f"{params.name}: input width {x.shape[-1]} != expected {params.in_dim}")
    h = x
    for w, b, act in zip(params.weights, params.biases, params.activations):
        h = _activate(h @ w + b, act)
    return h
