"""Dense float64 tensors with reverse-mode differentiation on an explicit tape.

Every trainable quantity in this package is a :class:`Tensor`. Operations
executed while a :class:`Tape` is active record their backward closures on
that tape; :func:`backward` replays the tape in reverse and materializes the
adjoint of every participating tensor. All arithmetic is 64-bit.
"""

import threading

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "record_op",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "matmul",
    "relu",
    "exp",
    "log",
    "sqrt",
    "clamp",
    "sum_all",
    "sum_axis",
    "reduce_max_axis",
    "concat",
    "slice_axis",
    "pad_width",
]


class Tensor:
    """Shape-carrying n-dimensional real array, optionally tracked for gradients.

    `grad` is absent (None) until a backward pass assigns it; it then has the
    same shape as `data`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, shape=None, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if shape is not None:
            shape = tuple(int(d) for d in shape)
            if any(d <= 0 for d in shape):
                raise ValueError(f"dimensions must be positive, got {shape}")
            if arr.size != int(np.prod(shape)):
                raise ValueError(
                    f"shape {shape} needs {int(np.prod(shape))} values, got {arr.size}"
                )
            arr = arr.reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor data must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    @classmethod
    def _wrap(cls, data):
        """Internal fast path for op outputs: no validation, no copies."""
        t = object.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t._tape = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def backward(self):
        """Run the backward pass of the tape this tensor was recorded on."""
        return backward(self)

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; scalars are wrapped as constant tensors.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)


class _Node:
    __slots__ = ("name", "inputs", "output", "backward_fn")

    def __init__(self, name, inputs, output, backward_fn):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


_STATE = threading.local()


def _tape_stack():
    stack = getattr(_STATE, "stack", None)
    if stack is None:
        stack = []
        _STATE.stack = stack
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of differentiable operations, topological by construction.

    Use as a context manager around the forward pass; operations involving a
    tensor with `requires_grad` are appended in execution order. A tape can be
    differentiated exactly once.
    """

    def __init__(self):
        self._nodes = []
        self._done = False

    def __len__(self):
        return len(self._nodes)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def backward(self, output):
        """Seed `output` (a scalar) with gradient 1 and sweep the tape in reverse.

        Returns a map from every tensor that received an adjoint to its
        gradient array. Adjoints accumulate additively across fan-out.
        """
        if self._done:
            raise RuntimeError("tape has already been differentiated")
        if not self._nodes:
            raise RuntimeError("tape is empty; nothing was recorded")
        if not isinstance(output, Tensor) or output.size != 1:
            raise ValueError("backward requires a scalar output tensor")
        self._done = True
        output.grad = np.ones_like(output.data)
        touched = {id(output): output}
        for node in reversed(self._nodes):
            g = node.output.grad
            if g is None:
                continue
            grads = node.backward_fn(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    inp.grad = np.asarray(gi, dtype=np.float64).reshape(inp.shape)
                else:
                    inp.grad = inp.grad + np.asarray(gi, dtype=np.float64).reshape(inp.shape)
                touched[id(inp)] = inp
        # Nodes hold tensor<->tape reference cycles; a consumed tape releases
        # its graph so per-step memory is reclaimed by refcounting alone.
        self._nodes.clear()
        return {t: t.grad for t in touched.values()}


def backward(output):
    """Differentiate the tape that produced `output`. See :meth:`Tape.backward`."""
    if not isinstance(output, Tensor) or output._tape is None:
        raise RuntimeError("output was not recorded on a tape")
    return output._tape.backward(output)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def record_op(name, inputs, out_data, backward_fn):
    """Wrap `out_data` in a Tensor and record the op if a tape is listening.

    `backward_fn(g)` must return one gradient array (or None) per input, each
    matching that input's shape. This is the extension point used by the layer
    and loss modules to register fused operations with hand-written adjoints.
    """
    out = Tensor._wrap(np.asarray(out_data, dtype=np.float64))
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape._nodes.append(_Node(name, tuple(inputs), out, backward_fn))
    return out


def _binary_shapes(a, b):
    """Enforce the elementwise contract: identical shapes or scalar right operand."""
    if a.shape == b.shape:
        return False
    if b.size == 1:
        return True
    raise ValueError(f"incompatible shapes {a.shape} and {b.shape}")


def _contract_scalar(g, scalar_shape):
    return np.sum(g).reshape(scalar_shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    b_scalar = _binary_shapes(a, b)
    out = a.data + b.data

    def bwd(g):
        return g, (_contract_scalar(g, b.shape) if b_scalar else g)

    return record_op("add", (a, b), out, bwd)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    b_scalar = _binary_shapes(a, b)
    out = a.data - b.data

    def bwd(g):
        return g, (_contract_scalar(-g, b.shape) if b_scalar else -g)

    return record_op("sub", (a, b), out, bwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    b_scalar = _binary_shapes(a, b)
    out = a.data * b.data

    def bwd(g):
        ga = g * b.data
        gb = g * a.data
        return ga, (_contract_scalar(gb, b.shape) if b_scalar else gb)

    return record_op("mul", (a, b), out, bwd)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects rank-2 tensors")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return record_op("matmul", (a, b), out, bwd)


def relu(a):
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    # Derivative at exactly 0 is defined as 0.
    def bwd(g):
        return (np.where(a.data > 0.0, g, 0.0),)

    return record_op("relu", (a,), out, bwd)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def bwd(g):
        return (g * out,)

    return record_op("exp", (a,), out, bwd)


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log requires strictly positive inputs")
    out = np.log(a.data)

    def bwd(g):
        return (g / a.data,)

    return record_op("log", (a,), out, bwd)


def sqrt(a):
    a = as_tensor(a)
    if np.any(a.data < 0.0):
        raise ValueError("sqrt requires non-negative inputs")
    out = np.sqrt(a.data)

    # Subgradient 0 at the origin keeps backward passes NaN-free when two
    # embeddings coincide.
    def bwd(g):
        return (np.where(a.data > 0.0, g * 0.5 / np.where(out > 0.0, out, 1.0), 0.0),)

    return record_op("sqrt", (a,), out, bwd)


def clamp(a, lo, hi):
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)

    def bwd(g):
        return (np.where((a.data >= lo) & (a.data <= hi), g, 0.0),)

    return record_op("clamp", (a,), out, bwd)


def sum_all(a):
    a = as_tensor(a)
    out = np.sum(a.data).reshape(())

    def bwd(g):
        return (np.full(a.shape, float(g)),)

    return record_op("sum_all", (a,), out, bwd)


def sum_axis(a, axis):
    a = as_tensor(a)
    if not 0 <= axis < a.data.ndim:
        raise ValueError(f"axis {axis} out of range for rank {a.data.ndim}")
    out = np.sum(a.data, axis=axis)

    def bwd(g):
        return (np.repeat(np.expand_dims(g, axis), a.shape[axis], axis=axis),)

    return record_op("sum_axis", (a,), out, bwd)


def reduce_max_axis(a, axis):
    """Max and winning index along `axis`; ties break to the lowest index.

    Backward routes the incoming gradient only to the argmax positions.
    Returns (values: Tensor, argmax: int ndarray).
    """
    a = as_tensor(a)
    if not 0 <= axis < a.data.ndim:
        raise ValueError(f"axis {axis} out of range for rank {a.data.ndim}")
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(
            ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis
        )
        return (ga,)

    values = record_op("reduce_max_axis", (a,), out, bwd)
    return values, idx


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    rank = tensors[0].data.ndim
    if not 0 <= axis < rank:
        raise ValueError(f"axis {axis} out of range for rank {rank}")
    for t in tensors[1:]:
        if t.data.ndim != rank:
            raise ValueError("concat inputs must share rank")
        for ax in range(rank):
            if ax != axis and t.shape[ax] != tensors[0].shape[ax]:
                raise ValueError(
                    f"shapes {tensors[0].shape} and {t.shape} differ off axis {axis}"
                )
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        pieces = []
        for i in range(len(sizes)):
            sl = [slice(None)] * rank
            sl[axis] = slice(bounds[i], bounds[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return record_op("concat", tuple(tensors), out, bwd)


def slice_axis(a, axis, start, length):
    a = as_tensor(a)
    rank = a.data.ndim
    if not 0 <= axis < rank:
        raise ValueError(f"axis {axis} out of range for rank {rank}")
    if start < 0 or length <= 0 or start + length > a.shape[axis]:
        raise ValueError(
            f"slice [{start}:{start + length}) out of bounds for axis size {a.shape[axis]}"
        )
    sl = [slice(None)] * rank
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = a.data[sl].copy()

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[sl] = g
        return (ga,)

    return record_op("slice_axis", (a,), out, bwd)


def pad_width(a, left, right, value=0.0):
    """Pad the last axis with `left`/`right` copies of `value`."""
    a = as_tensor(a)
    if left < 0 or right < 0:
        raise ValueError("pad counts must be non-negative")
    pads = [(0, 0)] * (a.data.ndim - 1) + [(left, right)]
    out = np.pad(a.data, pads, constant_values=value)
    w = a.shape[-1]

    def bwd(g):
        sl = [slice(None)] * (a.data.ndim - 1) + [slice(left, left + w)]
        return (g[tuple(sl)],)

    return record_op("pad_width", (a,), out, bwd)
