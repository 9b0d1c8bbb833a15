"""
Fully connected network with hand-derived reverse-mode gradients.

Weights are stored output-major (shape ``(out, in)``). Inputs may be a single
vector or a batch with one sample per row; batched gradients are summed over
the batch.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import DimensionError
from src.core.rng import make_rng

ACTIVATIONS: Tuple[str, ...] = ("tanh", "relu", "identity")


def _apply(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(pre)
    if name == "relu":
        return np.maximum(pre, 0.0)
    return pre


def _derivative(name: str, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - post * post
    if name == "relu":
        return (pre > 0.0).astype(np.float64)
    return np.ones_like(pre)


@dataclass(frozen=True)
class MlpParams:
    """Layer sizes, per-layer weights/biases and activation names."""

    layer_sizes: Tuple[int, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    activations: Tuple[str, ...]

    def __post_init__(self) -> None:
        n_layers = len(self.layer_sizes) - 1
        if n_layers < 1:
            raise DimensionError("an MLP needs at least an input and an output size")
        if not (len(self.weights) == len(self.biases) == len(self.activations) == n_layers):
            raise DimensionError(
                f"{n_layers} layers but {len(self.weights)} weights, "
                f"{len(self.biases)} biases, {len(self.activations)} activations"
            )
        for i in range(n_layers):
            expected = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if self.weights[i].shape != expected:
                raise DimensionError(f"layer{i}.weight: expected {expected}, got {self.weights[i].shape}")
            if self.biases[i].shape != (self.layer_sizes[i + 1],):
                raise DimensionError(
                    f"layer{i}.bias: expected ({self.layer_sizes[i + 1]},), got {self.biases[i].shape}"
                )
            if self.activations[i] not in ACTIVATIONS:
                raise DimensionError(f"layer{i}: unknown activation '{self.activations[i]}'")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    def arrays(self) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def names(self) -> List[str]:
        out: List[str] = []
        for i in range(self.n_layers):
            out.extend([f"layer{i}.weight", f"layer{i}.bias"])
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        if len(arrays) != 2 * self.n_layers:
            raise DimensionError(f"expected {2 * self.n_layers} arrays, got {len(arrays)}")
        weights = tuple(np.asarray(arrays[2 * i], dtype=np.float64) for i in range(self.n_layers))
        biases = tuple(np.asarray(arrays[2 * i + 1], dtype=np.float64) for i in range(self.n_layers))
        return MlpParams(self.layer_sizes, weights, biases, self.activations)


@dataclass(frozen=True)
class MlpTape:
    """Activation record of one forward pass."""

    layer_sizes: Tuple[int, ...]
    inputs: Tuple[np.ndarray, ...]
    pre_activations: Tuple[np.ndarray, ...]
    outputs: Tuple[np.ndarray, ...]


def init_mlp(
    layer_sizes: Sequence[int],
    activations: Sequence[str],
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> MlpParams:
    """
    Glorot-uniform weights and zero biases.

    Args:
        layer_sizes: Sizes from input to output.
        activations: One activation name per layer.
        seed: Seed used when ``rng`` is not given.
        rng: Generator to draw from (takes precedence over ``seed``).
    """
    if rng is None:
        rng = make_rng(0 if seed is None else seed)
    sizes = tuple(int(s) for s in layer_sizes)
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(sizes, tuple(weights), tuple(biases), tuple(activations))


def mlp_forward(params: MlpParams, x: np.ndarray) -> Tuple[np.ndarray, MlpTape]:
    """
    Run the network on one input vector or a batch of rows.

    Returns:
        Tuple of (output, tape). The tape is required by mlp_backward.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != params.input_size:
        raise DimensionError(f"input shape {x.shape} does not match input size {params.input_size}")
    inputs = []
    pres = []
    outs = []
    h = x
    for w, b, act in zip(params.weights, params.biases, params.activations):
        inputs.append(h)
        pre = h @ w.T + b
        h = _apply(act, pre)
        pres.append(pre)
        outs.append(h)
    tape = MlpTape(params.layer_sizes, tuple(inputs), tuple(pres), tuple(outs))
    return h, tape


def mlp_backward(
    params: MlpParams, tape: MlpTape, output_gradient: np.ndarray
) -> Tuple[MlpParams, np.ndarray]:
    """
    Reverse pass through a recorded forward pass.

    Args:
        params: The parameters the tape was recorded with.
        tape: Tape from mlp_forward.
        output_gradient: dLoss/dOutput, shaped like the forward output.

    Returns:
        Tuple of (parameter gradients shaped like ``params``, input gradient).
    """
    if tape.layer_sizes != params.layer_sizes or len(tape.inputs) != params.n_layers:
        raise DimensionError("stale tape: recorded layer sizes differ from the parameters")
    delta = np.asarray(output_gradient, dtype=np.float64)
    if delta.shape != tape.outputs[-1].shape:
        raise DimensionError(
            f"output gradient shape {delta.shape} does not match output {tape.outputs[-1].shape}"
        )
    grad_w: List[np.ndarray] = [np.empty(0)] * params.n_layers
    grad_b: List[np.ndarray] = [np.empty(0)] * params.n_layers
    for i in reversed(range(params.n_layers)):
        if tape.inputs[i].shape[-1] != params.weights[i].shape[1]:
            raise DimensionError(f"stale tape at layer{i}")
        delta = delta * _derivative(params.activations[i], tape.pre_activations[i], tape.outputs[i])
        h_in = tape.inputs[i]
        if delta.ndim == 1:
            grad_w[i] = np.outer(delta, h_in)
            grad_b[i] = delta.copy()
        else:
            grad_w[i] = delta.T @ h_in
            grad_b[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i]
    grads = MlpParams(params.layer_sizes, tuple(grad_w), tuple(grad_b), params.activations)
    return grads, delta
