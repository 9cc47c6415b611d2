# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Dense float64 tensors with define-by-run reverse-mode differentiation.

The graph is rebuilt on every forward pass: each operation returns a new Tensor
holding references to its inputs and a backward rule mapping the upstream
gradient to one gradient per input. Graphs and their tensors belong to the
thread that built them.
"""

import contextlib
import logging
import math
import threading
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from exceptions import (
    ConfigurationError,
    ContractError,
    DimensionError,
    InputError,
    NumericalError,
    OracleError,
)

logger = logging.getLogger(__name__)

Operand = Union["Tensor", float, int, np.ndarray]
BackwardRule = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_state = threading.local()
_finite_checks = False


def set_finite_checks(enabled: bool) -> None:
    """Turn on or off the non-finite check applied to every forward value.

    Args:
        enabled: whether to raise NumericalError on NaN/Inf forward values.
    """
    global _finite_checks  # pylint: disable=global-statement
    _finite_checks = enabled


def _grad_enabled() -> bool:
    """Tell whether operations on this thread currently record a graph.

    Returns:
        False inside a no_grad block.
    """
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread.

    Yields:
        Nothing; operations inside the block produce constant tensors.
    """
    previous = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """A dense float64 array participating in a differentiable computation.

    Attrs:
        data: row-major float64 payload.
        requires_grad: whether gradients flow to this tensor.
        grad: accumulated gradient, same shape as data, for leaves that require it.
        op: name of the operation that produced the tensor ("leaf" for inputs).
    """

    __array_priority__ = 100

    def __init__(self, values, requires_grad: bool = False):
        """Create a leaf tensor holding a copy of values.

        Args:
            values: array-like payload.
            requires_grad: whether gradients should be accumulated for this tensor.
        """
        self.data: np.ndarray = np.array(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.op = "leaf"
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardRule] = None

    @classmethod
    def _from_op(
        cls,
        data: np.ndarray,
        parents: Tuple["Tensor", ...],
        backward: BackwardRule,
        op: str,
    ) -> "Tensor":
        """Wrap the output of an operation, linking it into the graph when needed.

        Args:
            data: computed forward value.
            parents: operand tensors.
            backward: rule mapping the upstream gradient to one gradient per parent.
            op: operation name.

        Returns:
            The output tensor.

        Raises:
            NumericalError: if finite checks are on and data is not finite.
        """
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.grad = None
        out.op = op
        if _finite_checks and not np.all(np.isfinite(out.data)):
            raise NumericalError(f"non-finite output from {op}")
        track = _grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = parents if track else ()
        out._backward = backward if track else None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        """Shape of the payload."""
        return self.data.shape

    @property
    def size(self) -> int:
        """Number of stored values."""
        return int(self.data.size)

    @property
    def T(self) -> "Tensor":  # noqa: N802 pylint: disable=invalid-name
        """Transpose of a matrix."""
        return transpose(self)

    @property
    def is_leaf(self) -> bool:
        """Whether the tensor was created directly rather than by an operation."""
        return self.op == "leaf"

    def item(self) -> float:
        """Return the value of a single-element tensor.

        Returns:
            The scalar value.

        Raises:
            ContractError: if the tensor holds more than one value.
        """
        if self.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Return a copy of the payload."""
        return self.data.copy()

    def detach(self) -> "Tensor":
        """Return a constant leaf sharing no graph with this tensor."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        """Reset the accumulated gradient."""
        self.grad = None

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        """Sum over one axis or all of them.

        Args:
            axis: axis to reduce, None for all.
            keepdims: keep the reduced axis with size one.

        Returns:
            The reduced tensor.
        """
        shape = self.shape

        def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._from_op(
            np.sum(self.data, axis=axis, keepdims=keepdims), (self,), backward, "sum"
        )

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        """Arithmetic mean over one axis or all of them.

        Args:
            axis: axis to reduce, None for all.
            keepdims: keep the reduced axis with size one.

        Returns:
            The reduced tensor.
        """
        count = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / count

    def __add__(self, other: Operand) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Operand) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Operand) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: float) -> "Tensor":
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a constant")
        denominator = float(other)

        def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
            return (g / denominator,)

        return Tensor._from_op(self.data / denominator, (self,), backward, "div")

    def __neg__(self) -> "Tensor":
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, exponent: float) -> "Tensor":
        power = float(exponent)
        base = self.data

        def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
            return (g * power * np.power(base, power - 1.0),)

        return Tensor._from_op(np.power(base, power), (self,), backward, "pow")

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"


def as_tensor(value: Operand) -> Tensor:
    """Wrap a constant into a Tensor, passing tensors through.

    Args:
        value: tensor or array-like.

    Returns:
        A tensor.
    """
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to an operand shape.

    Args:
        grad: gradient with the broadcast output shape.
        shape: operand shape.

    Returns:
        The gradient reduced to shape.
    """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    """Check that two operands broadcast together.

    Args:
        a: first operand.
        b: second operand.
        op: operation name for the error message.

    Raises:
        DimensionError: if the shapes do not broadcast.
    """
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


def add(a: Operand, b: Operand) -> Tensor:
    """Element-wise sum with broadcasting.

    Args:
        a: first operand.
        b: second operand.

    Returns:
        a + b.
    """
    x, y = as_tensor(a), as_tensor(b)
    _broadcast_shape(x, y, "add")

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)

    return Tensor._from_op(x.data + y.data, (x, y), backward, "add")


def sub(a: Operand, b: Operand) -> Tensor:
    """Element-wise difference with broadcasting.

    Args:
        a: first operand.
        b: second operand.

    Returns:
        a - b.
    """
    x, y = as_tensor(a), as_tensor(b)
    _broadcast_shape(x, y, "sub")

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return _unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)

    return Tensor._from_op(x.data - y.data, (x, y), backward, "sub")


def mul(a: Operand, b: Operand) -> Tensor:
    """Element-wise product with broadcasting.

    Args:
        a: first operand.
        b: second operand.

    Returns:
        a * b.
    """
    x, y = as_tensor(a), as_tensor(b)
    _broadcast_shape(x, y, "mul")

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return _unbroadcast(g * y.data, x.shape), _unbroadcast(g * x.data, y.shape)

    return Tensor._from_op(x.data * y.data, (x, y), backward, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors.

    Args:
        a: matrix n×k.
        b: matrix k×m.

    Returns:
        The n×m product.

    Raises:
        DimensionError: if the operands are not conforming matrices.
    """
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: axis 1 of {a.shape} does not match axis 0 of {b.shape}")

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return g @ b.data.T, a.data.T @ g

    return Tensor._from_op(a.data @ b.data, (a, b), backward, "matmul")


def transpose(x: Tensor) -> Tensor:
    """Transpose a matrix.

    Args:
        x: 2-D tensor.

    Returns:
        The transposed tensor.
    """
    return Tensor._from_op(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Fully connected layer: x @ weight + bias.

    Args:
        x: batch n×d_in.
        weight: matrix d_in×d_out.
        bias: vector d_out.

    Returns:
        The n×d_out output.

    Raises:
        DimensionError: naming the mismatched axes.
    """
    if x.data.ndim != 2:
        raise DimensionError(f"affine: input must be a matrix, got shape {x.shape}")
    if weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(
            f"affine: input axis 1 ({x.shape[1]}) does not match weight axis 0 "
            f"({weight.shape[0] if weight.data.ndim else '-'})"
        )
    if bias.shape != (weight.shape[1],):
        raise DimensionError(
            f"affine: bias axis 0 ({bias.shape}) does not match weight axis 1 ({weight.shape[1]})"
        )

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return g @ weight.data.T, x.data.T @ g, g.sum(axis=0)

    return Tensor._from_op(x.data @ weight.data + bias.data, (x, weight, bias), backward, "affine")


def relu(x: Tensor) -> Tensor:
    """Rectified linear unit; the subgradient at zero is zero.

    Args:
        x: input tensor.

    Returns:
        max(0, x) element-wise.
    """
    positive = x.data > 0

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (g * positive,)

    return Tensor._from_op(np.where(positive, x.data, 0.0), (x,), backward, "relu")


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function.

    Args:
        x: input tensor.

    Returns:
        1 / (1 + exp(-x)) element-wise.
    """
    out = _stable_sigmoid(x.data)

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (g * out * (1.0 - out),)

    return Tensor._from_op(out, (x,), backward, "sigmoid")


def _stable_sigmoid(values: np.ndarray) -> np.ndarray:
    """Evaluate the logistic function without overflow.

    Args:
        values: input array.

    Returns:
        The logistic function of values.
    """
    exp_neg_abs = np.exp(-np.abs(values))
    return np.where(values >= 0, 1.0 / (1.0 + exp_neg_abs), exp_neg_abs / (1.0 + exp_neg_abs))


def exp(x: Tensor) -> Tensor:
    """Element-wise exponential.

    Args:
        x: input tensor.

    Returns:
        exp(x).
    """
    out = np.exp(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    """Element-wise natural logarithm.

    Args:
        x: positive input tensor.

    Returns:
        log(x).
    """
    values = x.data
    return Tensor._from_op(np.log(values), (x,), lambda g: (g / values,), "log")


def sqrt(x: Tensor) -> Tensor:
    """Element-wise square root.

    Args:
        x: nonnegative input tensor.

    Returns:
        sqrt(x).
    """
    out = np.sqrt(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def log_softmax(logits: Tensor) -> Tensor:
    """Row-wise log-softmax, stabilized by subtracting the row maximum.

    Args:
        logits: matrix n×C.

    Returns:
        log softmax of each row.
    """
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(out)

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return Tensor._from_op(out, (logits,), backward, "log_softmax")


def _cross_entropy(logits: Tensor, targets: np.ndarray, op: str) -> Tensor:
    """Mean over rows of -sum_c targets_c * log softmax(logits)_c.

    Args:
        logits: matrix n×C.
        targets: rows of class probabilities summing to one.
        op: operation name recorded in the graph.

    Returns:
        The scalar loss.
    """
    rows = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -np.sum(targets * log_probs) / rows

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (g * (np.exp(log_probs) - targets) / rows,)

    return Tensor._from_op(np.asarray(loss), (logits,), backward, op)


def _check_logits(logits: Tensor, labels: np.ndarray) -> None:
    """Validate logits against a label matrix.

    Args:
        logits: matrix n×C.
        labels: matrix n×C.

    Raises:
        ConfigurationError: if C < 2.
        DimensionError: if the shapes differ.
        ContractError: if the batch is empty.
    """
    if logits.data.ndim != 2 or labels.shape != logits.shape:
        raise DimensionError(f"cross entropy: logits {logits.shape} vs labels {labels.shape}")
    if logits.shape[1] < 2:
        raise ConfigurationError(f"cross entropy needs at least 2 classes, got {logits.shape[1]}")
    if logits.shape[0] == 0:
        raise ContractError("cross entropy of an empty batch")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy against one-hot labels.

    Args:
        logits: matrix n×C.
        labels: one-hot matrix n×C.

    Returns:
        The scalar loss.

    Raises:
        InputError: if a label row is not one-hot.
    """
    targets = np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=np.float64)
    _check_logits(logits, targets)
    if not (np.all((targets == 0.0) | (targets == 1.0)) and np.all(targets.sum(axis=1) == 1.0)):
        raise InputError("labels must be one-hot rows")
    return _cross_entropy(logits, targets, "softmax_cross_entropy")


def soft_cross_entropy(logits: Tensor, soft_labels, tolerance: float = 1e-9) -> Tensor:
    """Mean cross-entropy against soft targets.

    Args:
        logits: matrix n×C.
        soft_labels: nonnegative rows summing to one.
        tolerance: accepted deviation of each row sum from one.

    Returns:
        The scalar loss.

    Raises:
        InputError: if a target row does not sum to one or has negative entries.
    """
    targets = np.asarray(
        soft_labels.data if isinstance(soft_labels, Tensor) else soft_labels, dtype=np.float64
    )
    _check_logits(logits, targets)
    if np.any(np.abs(targets.sum(axis=1) - 1.0) > tolerance) or np.any(targets < 0):
        raise InputError("soft label rows must be nonnegative and sum to 1")
    return _cross_entropy(logits, targets, "soft_cross_entropy")


def grad_reverse(x: Tensor, lam: float) -> Tensor:
    """Identity on the forward pass, multiplies the gradient by -lam on the way back.

    Args:
        x: input tensor.
        lam: nonnegative reversal scale.

    Returns:
        A tensor equal to x.

    Raises:
        ConfigurationError: if lam is negative.
    """
    if lam < 0:
        raise ConfigurationError(f"gradient reversal scale must be nonnegative, got {lam}")
    scale = -float(lam)
    return Tensor._from_op(x.data.copy(), (x,), lambda g: (g * scale,), "grad_reverse")


def mask_elements(z: Tensor, mask) -> Tensor:
    """Element-wise product with a binary mask.

    Args:
        z: input tensor.
        mask: array of zeros and ones with the shape of z.

    Returns:
        z with masked positions zeroed; gradients only reach unmasked positions.

    Raises:
        DimensionError: if the shapes differ.
        InputError: if the mask holds values other than 0 and 1.
    """
    keep = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    if keep.shape != z.shape:
        raise DimensionError(f"mask_elements: mask {keep.shape} vs input {z.shape}")
    if not np.all((keep == 0.0) | (keep == 1.0)):
        raise InputError("mask entries must be 0 or 1")
    return Tensor._from_op(z.data * keep, (z,), lambda g: (g * keep,), "mask_elements")


def take_rows(x: Tensor, index: Sequence[int]) -> Tensor:
    """Select rows of a matrix.

    Args:
        x: matrix n×d.
        index: row indices.

    Returns:
        The selected rows, in index order.
    """
    rows = np.asarray(index, dtype=np.int64)
    n = x.shape[0]

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        out = np.zeros((n,) + g.shape[1:])
        np.add.at(out, rows, g)
        return (out,)

    return Tensor._from_op(x.data[rows], (x,), backward, "take_rows")


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack matrices vertically.

    Args:
        parts: matrices sharing their column count.

    Returns:
        The concatenation.

    Raises:
        DimensionError: if the column counts differ.
    """
    widths = {p.shape[1:] for p in parts}
    if len(widths) != 1:
        raise DimensionError(f"concat_rows: trailing shapes differ: {sorted(widths)}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return Tensor._from_op(
        np.concatenate([p.data for p in parts], axis=0), tuple(parts), backward, "concat_rows"
    )


@dataclass
class Graph:
    """Topologically ordered record of the operations leading to an output.

    Attrs:
        nodes: tensors in topological order, the output last.
    """

    nodes: List[Tensor]

    @classmethod
    def trace(cls, output: Tensor) -> "Graph":
        """Collect the graph behind output.

        Args:
            output: final tensor of the computation.

        Returns:
            The graph in topological order.
        """
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:  # pylint: disable=protected-access
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def propagate(self, output: Tensor) -> dict:
        """Run the backward rules in reverse topological order.

        Args:
            output: the scalar output the graph was traced from.

        Returns:
            Mapping from id(tensor) to its accumulated gradient.
        """
        grads = {id(output): np.ones_like(output.data)}
        for node in reversed(self.nodes):
            upstream = grads.get(id(node))
            backward_rule = node._backward  # pylint: disable=protected-access
            if upstream is None or backward_rule is None:
                continue
            for parent, contribution in zip(
                node._parents, backward_rule(upstream)  # pylint: disable=protected-access
            ):
                if contribution is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + contribution if key in grads else contribution
        return grads


def _check_scalar(output: Tensor) -> None:
    """Reject non-scalar backward roots.

    Args:
        output: candidate root.

    Raises:
        ContractError: if output holds more than one value.
    """
    if output.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")


def backward(output: Tensor, graph: Optional[Graph] = None) -> Graph:
    """Accumulate d(output)/d(leaf) into the grad field of every leaf requiring it.

    Repeated calls without zero_grad add to the existing gradients.

    Args:
        output: scalar tensor.
        graph: graph traced from output; traced here when omitted.

    Returns:
        The graph that was traversed.
    """
    _check_scalar(output)
    graph = graph or Graph.trace(output)
    grads = graph.propagate(output)
    for node in graph.nodes:
        if node.is_leaf and node.requires_grad and id(node) in grads:
            contribution = grads[id(node)].reshape(node.shape)
            node.grad = contribution.copy() if node.grad is None else node.grad + contribution
    return graph


def grad(output: Tensor, inputs: Sequence[Tensor]) -> List[np.ndarray]:
    """Gradients of a scalar output with respect to arbitrary tensors.

    No grad field is modified.

    Args:
        output: scalar tensor.
        inputs: tensors (leaves or intermediates) of the graph.

    Returns:
        One gradient array per input, zeros when the input does not influence output.
    """
    _check_scalar(output)
    grads = Graph.trace(output).propagate(output)
    return [
        grads[id(t)].reshape(t.shape).copy() if id(t) in grads else np.zeros_like(t.data)
        for t in inputs
    ]


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Compare the analytic gradient of f at x with central differences.

    f is evaluated with x.data perturbed in place, so f may close over a model
    that owns x. Gradients of other leaves touched by f are accumulated as a
    side effect.

    Args:
        f: scalar function of x.
        x: point of evaluation.
        eps: finite-difference step.

    Returns:
        max_i |analytic_i - numeric_i| / max(1, |numeric_i|).

    Raises:
        OracleError: if f evaluates to a non-finite value.
    """
    x.requires_grad = True
    x.zero_grad()
    backward(f(x))
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    worst = 0.0
    for index in np.ndindex(*x.shape):
        original = x.data[index]
        x.data[index] = original + eps
        upper = f(x).item()
        x.data[index] = original - eps
        lower = f(x).item()
        x.data[index] = original
        if not (math.isfinite(upper) and math.isfinite(lower)):
            raise OracleError(f"non-finite function value around index {index}")
        numeric = (upper - lower) / (2.0 * eps)
        worst = max(worst, abs(analytic[index] - numeric) / max(1.0, abs(numeric)))
    logger.debug("Finite-difference check over %s values: max error %.3e", x.size, worst)
    return worst
