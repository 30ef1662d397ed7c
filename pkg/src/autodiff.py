"""
Минимальное обратное автодифференцирование поверх numpy (float64).

Каждый Tensor хранит значение, накопленный градиент и замыкание, которое
раздаёт градиент родителям. backward() обходит граф в обратном топологическом порядке.
"""

from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]


class Tensor:
    """Значение в вычислительном графе."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data: ArrayLike,
        parents: Tuple["Tensor", ...] = (),
        backward: Optional[Callable[[np.ndarray], None]] = None,
        requires_grad: bool = False,
    ) -> None:
        self.data: np.ndarray = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad += grad

    def backward(self, seed: Optional[np.ndarray] = None) -> None:
        """Распространить градиент от этого узла (по умолчанию seed = единицы)."""
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self._accumulate(np.ones_like(self.data) if seed is None else seed)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        return add(self, lift(other))

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(lift(other), self)

    def __sub__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        return add(self, neg(lift(other)))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return add(lift(other), neg(self))

    def __mul__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        return mul(self, lift(other))

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(lift(other), self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, key: object) -> "Tensor":
        return index(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def lift(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data: ArrayLike) -> Tensor:
    """Обучаемый лист графа."""
    return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return Tensor(a.data + b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, (a,), lambda g: a._accumulate(-g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor(a.data * b.data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Произведение двумерных матриц."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul ожидает матрицы, получено {a.shape} и {b.shape}")

    def backward(g: np.ndarray) -> None:
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return Tensor(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    return Tensor(a.data.T, (a,), lambda g: a._accumulate(g.T))


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return Tensor(a.data.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(a.shape)))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor(out, (a,), lambda g: a._accumulate(g * (1.0 - out * out)))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor(out, (a,), lambda g: a._accumulate(g * out * (1.0 - out)))


def index(a: Tensor, key: object) -> Tensor:
    """Индексация numpy (срезы и массивы индексов); градиент складывается через np.add.at."""

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        a._accumulate(full)

    return Tensor(a.data[key], (a,), backward)


def take(table: Tensor, ids: ArrayLike) -> Tensor:
    """Строки таблицы по индексам: результат имеет форму ids.shape + (d,)."""
    rows = np.asarray(ids, dtype=np.int64)

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(table.data)
        np.add.at(full, rows, g)
        table._accumulate(full)

    return Tensor(table.data[rows], (table,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray) -> None:
        for t, part in zip(tensors, np.split(g, cuts, axis=axis)):
            t._accumulate(part)

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    def backward(g: np.ndarray) -> None:
        moved = np.moveaxis(g, axis, 0)
        for t, part in zip(tensors, moved):
            t._accumulate(part)

    return Tensor(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def sum_(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    def backward(g: np.ndarray) -> None:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g: np.ndarray) -> None:
        a._accumulate(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return Tensor(out, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    out = shifted / shifted.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> None:
        a._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return Tensor(out, (a,), backward)


def relative_error(analytic: float, numeric: float) -> float:
    """|a − n| / max(|a|, |n|, 1e-3)."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3)


def check_gradients(
    fn: Callable[[], Tensor],
    tensors: Dict[str, Tensor],
    *,
    epsilon: float = 1e-4,
    samples: int = 200,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Сравнить аналитический градиент скалярной функции с центральными разностями.

    :param fn: функция без аргументов, строящая скаляр из tensors
    :param tensors: проверяемые листья по именам
    :param samples: число случайных координат (все координаты, если их меньше)
    :return: максимальная относительная ошибка
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors.values():
        t.zero_grad()
    fn().backward()
    analytic = {name: (t.grad if t.grad is not None else np.zeros_like(t.data)) for name, t in tensors.items()}
    coords: List[Tuple[str, int]] = [(name, i) for name, t in tensors.items() for i in range(t.data.size)]
    if len(coords) > samples:
        picked = rng.choice(len(coords), size=samples, replace=False)
        coords = [coords[i] for i in sorted(picked)]
    worst = 0.0
    for name, flat in coords:
        view = tensors[name].data.reshape(-1)
        saved = view[flat]
        view[flat] = saved + epsilon
        plus = float(fn().data)
        view[flat] = saved - epsilon
        minus = float(fn().data)
        view[flat] = saved
        numeric = (plus - minus) / (2.0 * epsilon)
        worst = max(worst, relative_error(float(analytic[name].reshape(-1)[flat]), numeric))
    return worst


def global_norm(arrays: Iterable[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in arrays)))
