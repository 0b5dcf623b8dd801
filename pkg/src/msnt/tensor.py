"""Dense float64 tensors with reverse-mode automatic differentiation.

The differentiation tape is define-by-run: a ``Tape`` is opened as a context
manager around a forward pass, every operation that touches a gradient-bearing
tensor appends one node, and ``backward`` walks the node list in reverse.
Recording order is topological by construction.  Arrays are numpy ``float64``
throughout; numpy supplies the arithmetic kernels, the tape and all backward
rules live here.

Matrix operands may carry stacked leading dimensions: ``matmul`` contracts the
last two axes and broadcasts the rest, elementwise ops broadcast numpy-style,
and backward rules sum gradients back over broadcast axes.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError, ShapeError

_TAPES: list["Tape"] = []
_CHECK_FINITE = False


def set_finite_checks(enabled: bool) -> None:
    """Toggle NaN/Inf screening of every op output (debug aid, off by default)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class Tensor:
    """N-dimensional float64 array, optionally tracked on the active tape.

    ``grad`` is populated by ``backward`` and accumulates across calls until
    reset.  ``node`` identifies this tensor on the tape it was last recorded
    on; it is meaningless once that tape is discarded.
    """

    __slots__ = ("data", "requires_grad", "grad", "node", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: int | None = None
        self._tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def reset_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # arithmetic sugar; all routed through the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    """One recorded operation: parallel input ids and a backward rule."""

    __slots__ = ("input_ids", "rule", "op")

    def __init__(self, input_ids, rule, op):
        self.input_ids = input_ids
        self.rule = rule
        self.op = op


class Tape:
    """Ordered record of operations for one forward pass.

    Node ``i``'s inputs always carry ids ``< i`` (topological order), and a
    backward traversal visits each node exactly once.  Leaf tensors are
    registered lazily the first time an op consumes them.
    """

    def __init__(self):
        self.nodes: list[_Node | None] = []  # None marks a leaf registration
        self._tensors: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _TAPES.pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise ContractError("tapes closed out of order")
        return False

    def _register(self, tensor: Tensor, node: _Node | None) -> int:
        node_id = len(self.nodes)
        self.nodes.append(node)
        self._tensors.append(tensor)
        tensor.node = node_id
        tensor._tape = self
        return node_id

    def _id_for(self, tensor: Tensor) -> int | None:
        if not tensor.requires_grad:
            return None
        if tensor._tape is self and tensor.node is not None:
            return tensor.node
        return self._register(tensor, None)


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(data: np.ndarray, inputs: tuple[Tensor, ...], rule, op: str) -> Tensor:
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise ContractError(f"{op} produced non-finite values")
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        input_ids = tuple(tape._id_for(t) for t in inputs)
        tape._register(out, _Node(input_ids, rule, op))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every gradient-bearing tensor reachable from ``loss``.

    ``loss`` must be a scalar recorded on a live tape.  Repeated calls without
    resetting gradients accumulate.
    """
    if not isinstance(loss, Tensor) or loss.data.ndim != 0:
        raise ContractError("backward expects a scalar tensor")
    tape = loss._tape
    if tape is None or loss.node is None:
        raise ContractError("backward expects a tensor recorded on a tape")
    grads: dict[int, np.ndarray] = {loss.node: np.ones((), dtype=np.float64)}
    for node_id in range(loss.node, -1, -1):
        grad = grads.pop(node_id, None)
        if grad is None:
            continue
        tensor = tape._tensors[node_id]
        tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
        node = tape.nodes[node_id]
        if node is None:
            continue  # leaf
        for input_id, input_grad in zip(node.input_ids, node.rule(grad)):
            if input_id is None or input_grad is None:
                continue
            if input_id in grads:
                grads[input_id] = grads[input_id] + input_grad
            else:
                grads[input_id] = input_grad


def reset_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over axes that were broadcast up from ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    squeezed = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if squeezed:
        grad = grad.sum(axis=squeezed, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and linear algebra


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def rule(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(data, (a, b), rule, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def rule(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(data, (a, b), rule, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data
    a_data, b_data = a.data, b.data

    def rule(g):
        return (
            _unbroadcast(g * b_data, a_data.shape),
            _unbroadcast(g * a_data, b_data.shape),
        )

    return _record(data, (a, b), rule, "mul")


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def rule(g):
        return (-g,)

    return _record(-a.data, (a,), rule, "neg")


def matmul(a, b) -> Tensor:
    """Matrix product contracting the last two axes; leading axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    data = a.data @ b.data
    a_data, b_data = a.data, b.data

    def rule(g):
        ga = _unbroadcast(g @ np.swapaxes(b_data, -1, -2), a_data.shape)
        gb = _unbroadcast(np.swapaxes(a_data, -1, -2) @ g, b_data.shape)
        return ga, gb

    return _record(data, (a, b), rule, "matmul")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old_shape = a.data.shape

    def rule(g):
        return (g.reshape(old_shape),)

    return _record(a.data.reshape(shape), (a,), rule, "reshape")


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inverse = tuple(np.argsort(axes))

    def rule(g):
        return (g.transpose(inverse),)

    return _record(a.data.transpose(axes), (a,), rule, "transpose")


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shape = a.data.shape
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(data, (a,), rule, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def rule(g):
        return (g * (1.0 - out * out),)

    return _record(out, (a,), rule, "tanh")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """Gaussian error linear unit, tanh approximation (not the erf form)."""
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def rule(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
        return (g * local,)

    return _record(out, (a,), rule, "gelu")


def _validate_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"{op}: axis {axis} invalid for {ndim}-d input")
    return axis % ndim


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along ``axis``, computed with max-subtraction for stability."""
    a = _as_tensor(a)
    axis = _validate_axis(axis, a.data.ndim, "softmax")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _record(out, (a,), rule, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    axis = _validate_axis(axis, a.data.ndim, "log_softmax")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - log_z
    probs = np.exp(out)

    def rule(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _record(out, (a,), rule, "log_softmax")


def layernorm(a, gain, bias, epsilon: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    width = a.data.shape[-1]
    if gain.data.shape != (width,) or bias.data.shape != (width,):
        raise ShapeError(
            f"layernorm gain/bias must have shape ({width},), "
            f"got {gain.shape} and {bias.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    normed = (a.data - mu) * inv_std
    out = normed * gain.data + bias.data
    gain_data = gain.data

    def rule(g):
        reduce_axes = tuple(range(g.ndim - 1))
        d_gain = (g * normed).sum(axis=reduce_axes)
        d_bias = g.sum(axis=reduce_axes)
        d_normed = g * gain_data
        d_a = inv_std * (
            d_normed
            - d_normed.mean(axis=-1, keepdims=True)
            - normed * (d_normed * normed).mean(axis=-1, keepdims=True)
        )
        return d_a, d_gain, d_bias

    return _record(out, (a, gain, bias), rule, "layernorm")


def cross_entropy(logits, targets) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under softmax(logits).

    Accepts a single row of logits with an integer class, or a ``(n, classes)``
    batch with ``n`` integer classes (mean reduction).
    """
    logits = _as_tensor(logits)
    if logits.data.ndim == 1:
        rows = logits.data[None, :]
        target_ids = np.asarray([targets], dtype=np.int64)
    elif logits.data.ndim == 2:
        rows = logits.data
        target_ids = np.asarray(targets, dtype=np.int64)
        if target_ids.ndim != 1 or len(target_ids) != rows.shape[0]:
            raise ShapeError(
                f"cross_entropy: {rows.shape[0]} logit rows but targets shape "
                f"{target_ids.shape}"
            )
    else:
        raise ShapeError(f"cross_entropy expects 1-d or 2-d logits, got {logits.shape}")
    n, classes = rows.shape
    if np.any(target_ids < 0) or np.any(target_ids >= classes):
        bad = target_ids[(target_ids < 0) | (target_ids >= classes)][0]
        raise IndexError(f"cross_entropy: target class {bad} outside 0..{classes - 1}")
    shifted = rows - rows.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_z
    loss = -log_probs[np.arange(n), target_ids].mean()
    probs = np.exp(log_probs)

    def rule(g):
        d = probs.copy()
        d[np.arange(n), target_ids] -= 1.0
        d *= g / n
        return (d.reshape(logits.data.shape),)

    return _record(np.float64(loss), (logits,), rule, "cross_entropy")


def embedding_lookup(table, ids) -> Tensor:
    """Gather rows of ``table`` by integer ``ids`` (any id array shape)."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    rows = table.data.shape[0]
    if np.any(ids < 0) or np.any(ids >= rows):
        bad = ids[(ids < 0) | (ids >= rows)].ravel()[0]
        raise IndexError(f"embedding_lookup: id {bad} outside 0..{rows - 1}")
    data = table.data[ids]
    width = table.data.shape[1]
    shape = table.data.shape

    def rule(g):
        d_table = np.zeros(shape, dtype=np.float64)
        np.add.at(d_table, ids.ravel(), g.reshape(-1, width))
        return (d_table,)

    return _record(data, (table,), rule, "embedding_lookup")


def index_rows(a, row_ids) -> Tensor:
    """Select rows of a 2-d tensor; backward scatter-adds into the source."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"index_rows expects a 2-d tensor, got {a.shape}")
    row_ids = np.asarray(row_ids, dtype=np.int64)
    n = a.data.shape[0]
    if np.any(row_ids < 0) or np.any(row_ids >= n):
        bad = row_ids[(row_ids < 0) | (row_ids >= n)][0]
        raise IndexError(f"index_rows: row {bad} outside 0..{n - 1}")
    shape = a.data.shape

    def rule(g):
        d = np.zeros(shape, dtype=np.float64)
        np.add.at(d, row_ids, g)
        return (d,)

    return _record(a.data[row_ids], (a,), rule, "index_rows")


def dropout(a, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate); identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    a = _as_tensor(a)
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ContractError("dropout in training mode needs an explicit rng")
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)

    def rule(g):
        return (g * keep,)

    return _record(a.data * keep, (a,), rule, "dropout")


# ---------------------------------------------------------------------------
# Adam


class AdamState:
    """Optimizer state for one flat parameter list (standard Adam with bias
    correction)."""

    def __init__(self, params, learning_rate: float, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        if not 0.0 < beta1 < 1.0 or not 0.0 < beta2 < 1.0:
            raise ConfigError(f"Adam betas must lie in (0, 1), got {beta1}, {beta2}")
        self.step = 0
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.first_moment = [np.zeros_like(p.data) for p in params]
        self.second_moment = [np.zeros_like(p.data) for p in params]


def adam_step(params, grads, state: AdamState) -> None:
    """Apply one Adam update in place; ``None`` grads are treated as zero."""
    if not (len(params) == len(grads) == len(state.first_moment)):
        raise ContractError(
            f"adam_step length mismatch: {len(params)} params, {len(grads)} grads, "
            f"state for {len(state.first_moment)}"
        )
    state.step += 1
    t = state.step
    scale1 = 1.0 - state.beta1**t
    scale2 = 1.0 - state.beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ContractError(
                f"adam_step gradient shape {g.shape} != parameter shape {p.data.shape}"
            )
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.learning_rate * (m / scale1) / (np.sqrt(v / scale2) + state.epsilon)
