"""Minimal dense-tensor computation graph with reverse-mode differentiation.

All buffers are float64. A graph is built once (node creation order is the
topological order), then executed repeatedly with named feeds. Forward
evaluation touches only the ancestors of the requested outputs, computes each
node exactly once, and raises as soon as any op produces a non-finite value.
Backward accumulates gradients for every numeric node reachable from the
loss, so inputs can be gradient-checked as well as parameters.

Conventions fixed here and relied on by tests:

* the ReLU subgradient at 0 is 0;
* dropout is inverted (activations scaled by 1/(1-p) at train time, identity
  in eval mode) and draws its mask from the generator passed to ``forward``;
* batch normalization uses biased batch variance and updates running
  statistics with momentum 0.9 only in training mode;
* the weighted squared-error loss divides by the total weight, so masked
  entries contribute exactly zero loss and zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EngineError",
    "ShapeError",
    "NonFiniteError",
    "Node",
    "Placeholder",
    "ObjectInput",
    "Parameter",
    "Graph",
    "Adam",
    "AdamState",
]


class EngineError(RuntimeError):
    pass


class ShapeError(EngineError):
    pass


class NonFiniteError(EngineError):
    pass


class _Context:
    __slots__ = ("feeds", "training", "rng")

    def __init__(self, feeds, training, rng):
        self.feeds = feeds
        self.training = training
        self.rng = rng


class Node:
    """One operation in the graph; holds its last output and gradient."""

    def __init__(self, op: str, inputs: tuple["Node", ...]):
        self.op = op
        self.inputs = inputs
        self.name = op  # made unique when added to a Graph
        self.value: np.ndarray | None = None
        self.grad: np.ndarray | None = None

    def compute(self, ctx: _Context) -> np.ndarray:
        raise NotImplementedError

    def backprop(self) -> None:
        """Accumulate ``self.grad`` into the gradients of the inputs."""

    def _accumulate(self, node: "Node", contribution: np.ndarray) -> None:
        if node.grad is not None:
            node.grad += contribution

    def shape_error(self, detail: str) -> ShapeError:
        return ShapeError(f"{self.name} ({self.op}): {detail}")


class Placeholder(Node):
    def __init__(self, name: str):
        super().__init__("input", ())
        self.name = name

    def compute(self, ctx):
        try:
            fed = ctx.feeds[self.name]
        except KeyError:
            raise EngineError(f"no value fed for input '{self.name}'") from None
        return np.asarray(fed, dtype=np.float64)


class ObjectInput(Node):
    """Non-numeric side input (e.g. a packed molecular-graph structure)."""

    def __init__(self, name: str):
        super().__init__("object", ())
        self.name = name

    def compute(self, ctx):
        try:
            return ctx.feeds[self.name]
        except KeyError:
            raise EngineError(f"no value fed for input '{self.name}'") from None


class Parameter(Node):
    def __init__(self, name: str, value: np.ndarray):
        super().__init__("parameter", ())
        self.name = name
        self.array = np.array(value, dtype=np.float64)

    def compute(self, ctx):
        return self.array


class _MatMul(Node):
    def __init__(self, a, b):
        super().__init__("matmul", (a, b))

    def compute(self, ctx):
        a, b = self.inputs[0].value, self.inputs[1].value
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise self.shape_error(f"cannot multiply {a.shape} by {b.shape}")
        return a @ b

    def backprop(self):
        a, b = self.inputs
        self._accumulate(a, self.grad @ b.value.T)
        self._accumulate(b, a.value.T @ self.grad)


class _AddBias(Node):
    def __init__(self, x, bias):
        super().__init__("add_bias", (x, bias))

    def compute(self, ctx):
        x, bias = self.inputs[0].value, self.inputs[1].value
        if bias.ndim != 1 or x.ndim != 2 or x.shape[1] != bias.shape[0]:
            raise self.shape_error(f"bias {bias.shape} does not fit {x.shape}")
        return x + bias

    def backprop(self):
        self._accumulate(self.inputs[0], self.grad)
        self._accumulate(self.inputs[1], self.grad.sum(axis=0))


class _Relu(Node):
    def __init__(self, x):
        super().__init__("relu", (x,))
        self._mask = None

    def compute(self, ctx):
        x = self.inputs[0].value
        self._mask = x > 0.0
        return np.where(self._mask, x, 0.0)

    def backprop(self):
        self._accumulate(self.inputs[0], self.grad * self._mask)


class _Concat(Node):
    def __init__(self, parts):
        super().__init__("concat", tuple(parts))

    def compute(self, ctx):
        values = [node.value for node in self.inputs]
        rows = {v.shape[0] for v in values}
        if any(v.ndim != 2 for v in values) or len(rows) != 1:
            raise self.shape_error(
                f"expected 2-d blocks with equal row counts, got "
                f"{[v.shape for v in values]}")
        self._widths = [v.shape[1] for v in values]
        return np.concatenate(values, axis=1)

    def backprop(self):
        offset = 0
        for node, width in zip(self.inputs, self._widths):
            self._accumulate(node, self.grad[:, offset:offset + width])
            offset += width


class _Dropout(Node):
    def __init__(self, x, rate: float):
        super().__init__("dropout", (x,))
        if not 0.0 <= rate < 1.0:
            raise EngineError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def compute(self, ctx):
        x = self.inputs[0].value
        if not ctx.training or self.rate == 0.0:
            self._mask = None
            return x
        if ctx.rng is None:
            raise EngineError(f"{self.name}: training-mode dropout needs an rng")
        keep = ctx.rng.random(x.shape) >= self.rate
        self._mask = keep / (1.0 - self.rate)
        return x * self._mask

    def backprop(self):
        if self._mask is None:
            self._accumulate(self.inputs[0], self.grad)
        else:
            self._accumulate(self.inputs[0], self.grad * self._mask)


class _BatchNorm(Node):
    """Per-feature normalization with running statistics for eval mode."""

    def __init__(self, x, gamma, beta, momentum=0.9, eps=1e-5):
        super().__init__("batchnorm", (x, gamma, beta))
        self.momentum = momentum
        self.eps = eps
        self.running_mean: np.ndarray | None = None
        self.running_var: np.ndarray | None = None

    def _ensure_state(self, width: int) -> None:
        if self.running_mean is None:
            self.running_mean = np.zeros(width)
            self.running_var = np.ones(width)

    def compute(self, ctx):
        x, gamma, beta = (node.value for node in self.inputs)
        if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != gamma.shape:
            raise self.shape_error(
                f"x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
        self._ensure_state(x.shape[1])
        self._training = ctx.training
        if ctx.training:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = (self.momentum * self.running_mean
                                 + (1.0 - self.momentum) * mean)
            self.running_var = (self.momentum * self.running_var
                                + (1.0 - self.momentum) * var)
        else:
            mean = self.running_mean
            var = self.running_var
        self._inv_std = 1.0 / np.sqrt(var + self.eps)
        self._centered = x - mean
        self._xhat = self._centered * self._inv_std
        return gamma * self._xhat + beta

    def backprop(self):
        x_node, gamma_node, beta_node = self.inputs
        gamma = gamma_node.value
        self._accumulate(gamma_node, (self.grad * self._xhat).sum(axis=0))
        self._accumulate(beta_node, self.grad.sum(axis=0))
        dxhat = self.grad * gamma
        if not self._training:
            self._accumulate(x_node, dxhat * self._inv_std)
            return
        n = self.grad.shape[0]
        dvar = (dxhat * self._centered).sum(axis=0) * (-0.5) * self._inv_std ** 3
        dmean = (-(dxhat * self._inv_std).sum(axis=0)
                 + dvar * (-2.0 / n) * self._centered.sum(axis=0))
        dx = dxhat * self._inv_std + dvar * 2.0 * self._centered / n + dmean / n
        self._accumulate(x_node, dx)


class _WeightedMse(Node):
    def __init__(self, pred, target, weight):
        super().__init__("weighted_mse", (pred, target, weight))

    def compute(self, ctx):
        pred, target, weight = (node.value for node in self.inputs)
        if pred.shape != target.shape or pred.shape != weight.shape:
            raise self.shape_error(
                f"pred {pred.shape}, target {target.shape}, weight {weight.shape}")
        self._diff = pred - target
        total = weight.sum()
        self._denom = total if total > 0.0 else 1.0
        return np.asarray((weight * self._diff ** 2).sum() / self._denom)

    def backprop(self):
        pred, target, weight = self.inputs
        scale = float(self.grad)
        dpred = scale * 2.0 * weight.value * self._diff / self._denom
        self._accumulate(pred, dpred)
        self._accumulate(target, -dpred)
        self._accumulate(
            weight,
            scale * (self._diff ** 2 - self.value) / self._denom,
        )


class Graph:
    """Container and executor for a static computation graph."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._names: set[str] = set()
        self._op_counts: dict[str, int] = {}
        self._forward_ready: set[int] = set()
        self.last_executed: list[str] = []

    # -- construction ----------------------------------------------------

    def add(self, node: Node) -> Node:
        """Register an externally built node (used by the graph-conv layers)."""
        return self._register(node, node.name if node.name != node.op else None)

    def _register(self, node: Node, name: str | None) -> Node:
        if name is None:
            count = self._op_counts.get(node.op, 0)
            self._op_counts[node.op] = count + 1
            name = f"{node.op}{count}"
        if name in self._names:
            raise EngineError(f"duplicate node name '{name}'")
        for inp in node.inputs:
            if inp not in self.nodes:
                raise EngineError(
                    f"node '{name}' uses an input that is not in this graph")
        node.name = name
        self._names.add(name)
        self.nodes.append(node)
        return node

    def placeholder(self, name: str) -> Placeholder:
        return self._register(Placeholder(name), name)

    def object_input(self, name: str) -> ObjectInput:
        return self._register(ObjectInput(name), name)

    def parameter(self, name: str, value: np.ndarray) -> Parameter:
        return self._register(Parameter(name, value), name)

    def matmul(self, a, b, name=None):
        return self._register(_MatMul(a, b), name)

    def add_bias(self, x, bias, name=None):
        return self._register(_AddBias(x, bias), name)

    def relu(self, x, name=None):
        return self._register(_Relu(x), name)

    def concat(self, parts, name=None):
        return self._register(_Concat(parts), name)

    def dropout(self, x, rate, name=None):
        return self._register(_Dropout(x, rate), name)

    def batch_norm(self, x, gamma, beta, momentum=0.9, eps=1e-5, name=None):
        return self._register(_BatchNorm(x, gamma, beta, momentum, eps), name)

    def weighted_mse(self, pred, target, weight, name=None):
        return self._register(_WeightedMse(pred, target, weight), name)

    # -- execution ---------------------------------------------------------

    def _ancestors(self, outputs: list[Node]) -> set[int]:
        needed: set[int] = set()
        stack = list(outputs)
        while stack:
            node = stack.pop()
            if id(node) in needed:
                continue
            needed.add(id(node))
            stack.extend(node.inputs)
        return needed

    def forward(self, feeds: dict, outputs: list[Node],
                training: bool = False,
                rng: np.random.Generator | None = None) -> list[np.ndarray]:
        """Evaluate ``outputs`` given named ``feeds``; each needed node runs once."""
        ctx = _Context(feeds, training, rng)
        needed = self._ancestors(outputs)
        self.last_executed = []
        for node in self.nodes:
            if id(node) not in needed:
                continue
            node.value = node.compute(ctx)
            self.last_executed.append(node.name)
            if not isinstance(node, ObjectInput) and not np.all(np.isfinite(node.value)):
                raise NonFiniteError(
                    f"non-finite values produced by node '{node.name}' ({node.op})")
        self._forward_ready = needed
        return [node.value for node in outputs]

    def backward(self, loss: Node) -> None:
        """Reverse-mode accumulation of d(loss)/d(node) for reachable nodes."""
        if id(loss) not in self._forward_ready or loss.value is None:
            raise EngineError("backward called before forward")
        if np.size(loss.value) != 1:
            raise EngineError(
                f"loss node '{loss.name}' is not scalar: shape {loss.value.shape}")
        reachable = self._ancestors([loss])
        for node in self.nodes:
            if id(node) in reachable and not isinstance(node, ObjectInput):
                node.grad = np.zeros_like(node.value)
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if id(node) in reachable:
                node.backprop()

    def zero_grad(self) -> None:
        for node in self.nodes:
            node.grad = None

    # -- state -------------------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return [node for node in self.nodes if isinstance(node, Parameter)]

    def state_dict(self) -> dict[str, np.ndarray]:
        """All trainable parameters plus batch-norm running statistics."""
        state = {p.name: p.array.copy() for p in self.parameters()}
        for node in self.nodes:
            if isinstance(node, _BatchNorm) and node.running_mean is not None:
                state[f"{node.name}.running_mean"] = node.running_mean.copy()
                state[f"{node.name}.running_var"] = node.running_var.copy()
        return state

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        by_name = {p.name: p for p in self.parameters()}
        bn_nodes = {n.name: n for n in self.nodes if isinstance(n, _BatchNorm)}
        for key, value in state.items():
            if key in by_name:
                param = by_name[key]
                if param.array.shape != value.shape:
                    raise ShapeError(
                        f"parameter '{key}': stored shape {value.shape} != "
                        f"expected {param.array.shape}")
                param.array[...] = value
            elif key.endswith(".running_mean"):
                bn_nodes[key[:-len(".running_mean")]].running_mean = value.copy()
            elif key.endswith(".running_var"):
                bn_nodes[key[:-len(".running_var")]].running_var = value.copy()
            else:
                raise EngineError(f"unknown state entry '{key}'")


@dataclass
class AdamState:
    """Per-parameter moment estimates plus the shared step counter."""

    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam with bias correction; defaults lr=1e-3, betas=(0.9, 0.999), eps=1e-8."""

    def __init__(self, parameters: list[Parameter], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.parameters = list(parameters)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()
        for p in self.parameters:
            self.state.m[p.name] = np.zeros_like(p.array)
            self.state.v[p.name] = np.zeros_like(p.array)

    def step(self) -> None:
        self.state.step += 1
        t = self.state.step
        for p in self.parameters:
            if p.grad is None:
                raise EngineError(f"parameter '{p.name}' has no gradient")
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter '{p.name}'")
            m = self.state.m[p.name]
            v = self.state.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.array -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.state.m:
            out[f"adam.m.{name}"] = self.state.m[name].copy()
            out[f"adam.v.{name}"] = self.state.v[name].copy()
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step: int) -> None:
        self.state.step = step
        for name in self.state.m:
            self.state.m[name][...] = arrays[f"adam.m.{name}"]
            self.state.v[name][...] = arrays[f"adam.v.{name}"]
