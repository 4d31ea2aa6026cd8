"""Core Tensor type and elementwise / reduction / structural operations.

A Tensor wraps a numpy array plus an optional gradient.  Operations build a
graph by storing parent tensors and a backward closure on the result;
``backward()`` topologically sorts the graph and accumulates gradients.
Gradients always have the same shape and dtype as the data they belong to.

Broadcasting follows numpy semantics.  When a broadcast input receives a
gradient of the broadcast (larger) shape, the gradient is summed back down
to the input's own shape before accumulation.
"""

from __future__ import annotations

import numpy as np

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording.

    Forward values are computed as usual but results carry no parents, so
    memory for intermediate activations is released eagerly.  Used for
    validation/test forward passes.
    """

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (the shape of the pre-broadcast input)."""
    if grad.shape == shape:
        return grad
    # Sum away leading axes that were added by broadcasting.
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # Sum axes that were size 1 in the input but expanded in the output.
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _as_array(value, like: np.ndarray | None = None) -> np.ndarray:
    if isinstance(value, np.ndarray):
        if not np.issubdtype(value.dtype, np.floating):
            return value.astype(np.float64)
        return value
    dtype = like.dtype if like is not None else np.float64
    return np.asarray(value, dtype=dtype)


class Tensor:
    """A numpy array with an autodiff tape entry.

    Attributes:
        data: the numpy array holding the value.
        grad: accumulated gradient (same shape/dtype as data) or None.
        requires_grad: whether backward should flow into this tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    # -- construction of graph nodes -------------------------------------

    @staticmethod
    def _node(data: np.ndarray, parents: tuple, backward) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        grad = _unbroadcast(grad, self.data.shape)
        if self.grad is None:
            self.grad = grad.astype(self.data.dtype, copy=True)
        else:
            self.grad += grad

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- backward ---------------------------------------------------------

    def backward(self) -> None:
        """Run reverse-mode accumulation from this scalar tensor.

        Raises ValueError when called on a non-scalar: upstream seeds other
        than d(out)/d(out) = 1 are not part of the contract.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar output, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic -------------------------------------------

    @staticmethod
    def _coerce(other, like: "Tensor") -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(_as_array(other, like.data))

    def __add__(self, other):
        other = Tensor._coerce(other, self)
        out_data = self.data + other.data

        def backward(g):
            self._accumulate(g)
            other._accumulate(g)

        return Tensor._node(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self._accumulate(-g)

        return Tensor._node(-self.data, (self,), backward)

    def __sub__(self, other):
        other = Tensor._coerce(other, self)
        out_data = self.data - other.data

        def backward(g):
            self._accumulate(g)
            other._accumulate(-g)

        return Tensor._node(out_data, (self, other), backward)

    def __rsub__(self, other):
        return Tensor._coerce(other, self).__sub__(self)

    def __mul__(self, other):
        other = Tensor._coerce(other, self)
        out_data = self.data * other.data

        def backward(g):
            self._accumulate(g * other.data)
            other._accumulate(g * self.data)

        return Tensor._node(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._coerce(other, self)
        out_data = self.data / other.data

        def backward(g):
            self._accumulate(g / other.data)
            other._accumulate(-g * self.data / (other.data * other.data))

        return Tensor._node(out_data, (self, other), backward)

    def __rtruediv__(self, other):
        return Tensor._coerce(other, self).__truediv__(self)

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data ** exponent

        def backward(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1))

        return Tensor._node(out_data, (self,), backward)

    # -- elementwise functions ----------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            self._accumulate(g * out_data)

        return Tensor._node(out_data, (self,), backward)

    def log(self):
        out_data = np.log(self.data)

        def backward(g):
            self._accumulate(g / self.data)

        return Tensor._node(out_data, (self,), backward)

    def relu(self):
        mask = self.data > 0
        out_data = np.where(mask, self.data, 0.0)

        def backward(g):
            self._accumulate(g * mask)

        return Tensor._node(out_data, (self,), backward)

    def sigmoid(self):
        # Stable on both tails: exp of a non-positive argument only.
        x = self.data
        out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                            np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

        def backward(g):
            self._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._node(out_data, (self,), backward)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.data.shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.data.shape).copy())

        return Tensor._node(out_data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = 1
            for a in axes:
                count *= self.data.shape[a]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self):
        """Maximum over all elements; ties resolve to the lowest flat index."""
        idx = int(np.argmax(self.data))
        out_data = self.data.reshape(-1)[idx]

        def backward(g):
            grad = np.zeros_like(self.data)
            grad.reshape(-1)[idx] = g
            self._accumulate(grad)

        return Tensor._node(np.asarray(out_data), (self,), backward)

    def min(self):
        """Minimum over all elements; ties resolve to the lowest flat index."""
        idx = int(np.argmin(self.data))
        out_data = self.data.reshape(-1)[idx]

        def backward(g):
            grad = np.zeros_like(self.data)
            grad.reshape(-1)[idx] = g
            self._accumulate(grad)

        return Tensor._node(np.asarray(out_data), (self,), backward)

    # -- structure ----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)
        in_shape = self.data.shape

        def backward(g):
            self._accumulate(g.reshape(in_shape))

        return Tensor._node(out_data, (self,), backward)

    def __getitem__(self, key):
        if isinstance(key, list):
            key = np.asarray(key)
        out_data = self.data[key]

        def backward(g):
            grad = np.zeros_like(self.data)
            np.add.at(grad, key, g)
            self._accumulate(grad)

        return Tensor._node(out_data, (self,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate tensors along an axis; backward splits the gradient."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, a, b in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(int(a), int(b))
            t._accumulate(g[tuple(sl)])

    return Tensor._node(out_data, tuple(tensors), backward)
