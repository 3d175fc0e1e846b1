"""Small reverse-mode differentiation kernel over float64 numpy arrays.

A :class:`Tape` records every primitive op in forward order; ``backward`` replays
the adjoints in exact reverse order and can only be run once per tape. Leaves are
either constants or :class:`Parameter` objects, whose ``grad`` is accumulated.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772
# saturation value of SELU for x -> -inf
ALPHA_PRIME = -SELU_LAMBDA * SELU_ALPHA

ACTIVATIONS = ("identity", "relu", "selu", "tanh", "sigmoid")


class DimensionError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


class OracleError(RuntimeError):
    pass


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]
    trainable: bool = True

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise DimensionError(f"grad shape {self.grad.shape} != value shape {self.value.shape}")

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


class Var:
    """A value recorded on a tape."""

    __array_priority__ = 100

    def __init__(self, tape: "Tape", value, name: str = "const", param: Parameter | None = None):
        self.tape = tape
        self.value = np.asarray(value, dtype=np.float64)
        self.name = name
        self.param = param
        self.grad: np.ndarray | None = None
        self._parents: tuple[Var, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var({self.name}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


class Tape:
    def __init__(self):
        self.history: list[Var] = []
        self.visited: list[str] = []
        self._leaves: list[Var] = []
        self._done = False

    def constant(self, value, name: str = "const") -> Var:
        return Var(self, value, name)

    def param(self, p: Parameter, name: str = "param") -> Var:
        v = Var(self, p.value, name, param=p)
        self._leaves.append(v)
        return v

    def lift(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise TapeError("operands belong to different tapes")
            return x
        return self.constant(x)

    def record(self, name: str, value, parents: Sequence[Var], backward: Callable) -> Var:
        """Append an op; ``backward(g)`` must return one adjoint (or None) per parent."""
        if self._done:
            raise TapeError("tape already consumed by backward(); run a new forward pass")
        out = Var(self, value, name)
        out._parents = tuple(parents)
        out._backward = backward
        self.history.append(out)
        return out

    def backward(self, out: Var, seed=None):
        if self._done:
            raise TapeError("backward() called twice on the same tape")
        if out.tape is not self:
            raise TapeError("output does not belong to this tape")
        self._done = True
        out.grad = np.ones_like(out.value) if seed is None else np.asarray(seed, dtype=np.float64)
        for node in reversed(self.history):
            self.visited.append(node.name)
            if node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None:
                    continue
                g = _unbroadcast(g, parent.shape)
                parent.grad = g if parent.grad is None else parent.grad + g
        for leaf in self._leaves:
            if leaf.grad is not None and leaf.param.trainable:
                leaf.param.grad = leaf.param.grad + leaf.grad


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TapeError("at least one operand must be a Var")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = t.lift(a), t.lift(b)
    return t.record("add", a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = t.lift(a), t.lift(b)
    return t.record("sub", a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = t.lift(a), t.lift(b)
    av, bv = a.value, b.value
    return t.record("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = t.lift(a), t.lift(b)
    av, bv = a.value, b.value
    return t.record("div", av / bv, (a, b), lambda g: (g / bv, -g * av / bv**2))


def log(x: Var) -> Var:
    xv = x.value
    return x.tape.record("log", np.log(xv), (x,), lambda g: (g / xv,))


def exp(x: Var) -> Var:
    y = np.exp(x.value)
    return x.tape.record("exp", y, (x,), lambda g: (g * y,))


def _selu_np(x: np.ndarray) -> np.ndarray:
    return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # two-branch form avoids overflow in exp for large |x|
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def selu(x: Var) -> Var:
    xv = x.value
    slope = SELU_LAMBDA * np.where(xv > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(xv, 0.0)))
    return x.tape.record("selu", _selu_np(xv), (x,), lambda g: (g * slope,))


def relu(x: Var) -> Var:
    mask = x.value > 0
    return x.tape.record("relu", np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def tanh(x: Var) -> Var:
    y = np.tanh(x.value)
    return x.tape.record("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Var) -> Var:
    y = _sigmoid_np(x.value)
    return x.tape.record("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def identity(x: Var) -> Var:
    return x


def activation(name: str) -> Callable[[Var], Var]:
    try:
        return {"identity": identity, "relu": relu, "selu": selu, "tanh": tanh, "sigmoid": sigmoid}[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}") from None


# ---------------------------------------------------------------- structural


def sum(x: Var, axis=None, keepdims: bool = False) -> Var:  # noqa: A001
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return x.tape.record("sum", x.value.sum(axis=axis, keepdims=keepdims), (x,), back)


def mean(x: Var, axis=None) -> Var:
    count = x.value.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / count)


def reshape(x: Var, shape) -> Var:
    old = x.shape
    return x.tape.record("reshape", x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def getitem(x: Var, index) -> Var:
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return x.tape.record("getitem", x.value[index], (x,), back)


def concat(xs: Sequence[Var], axis: int = -1) -> Var:
    t = _tape_of(*xs)
    xs = [t.lift(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return t.record(
        "concat",
        np.concatenate([x.value for x in xs], axis=axis),
        xs,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def stack(xs: Sequence[Var], axis: int = 0) -> Var:
    t = _tape_of(*xs)
    xs = [t.lift(x) for x in xs]
    n = len(xs)
    return t.record(
        "stack",
        np.stack([x.value for x in xs], axis=axis),
        xs,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
    )


# ---------------------------------------------------------------- contractions


def matmul(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = t.lift(a), t.lift(b)
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    av, bv = a.value, b.value

    def back(g):
        ga = g @ bv.T
        gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return t.record("matmul", av @ bv, (a, b), back)


def einsum(spec: str, a, b) -> Var:
    """Two-operand einsum with explicit subscripts (no ellipsis)."""
    t = _tape_of(a, b)
    a, b = t.lift(a), t.lift(b)
    ins, out = spec.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for s, other, name in ((sa, sb, "first"), (sb, sa, "second")):
        lonely = set(s) - set(out) - set(other)
        if lonely:
            raise DimensionError(f"einsum {spec!r}: {name} operand sums {sorted(lonely)} internally")
    try:
        value = np.einsum(spec, a.value, b.value)
    except ValueError as exc:
        raise DimensionError(f"einsum {spec!r} shape mismatch: {a.shape}, {b.shape}") from exc
    av, bv = a.value, b.value

    def back(g):
        return np.einsum(f"{out},{sb}->{sa}", g, bv), np.einsum(f"{out},{sa}->{sb}", g, av)

    return t.record("einsum", value, (a, b), back)


# ---------------------------------------------------------------- layers


def dense(x: Var, W: Var, b: Var | None = None, act: str = "identity") -> Var:
    if x.shape[-1] != W.shape[0]:
        raise DimensionError(f"dense: input last dim {x.shape[-1]} != weight rows {W.shape[0]} ({x.shape} x {W.shape})")
    y = matmul(x, W)
    if b is not None:
        y = add(y, b)
    return activation(act)(y)


def alpha_dropout_params(rate: float) -> tuple[float, float]:
    """Affine correction (a, b) keeping zero mean / unit variance after dropping to alpha'."""
    q = 1.0 - rate
    a = (q + ALPHA_PRIME**2 * q * (1.0 - q)) ** -0.5
    return a, -a * ALPHA_PRIME * (1.0 - q)


def alpha_dropout(x: Var, rate: float, training: bool, rng: np.random.Generator | None = None) -> Var:
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("alpha_dropout in training mode needs an rng")
    keep = rng.random(x.shape) >= rate
    a, b = alpha_dropout_params(rate)
    value = a * np.where(keep, x.value, ALPHA_PRIME) + b
    return x.tape.record("alpha_dropout", value, (x,), lambda g: (g * a * keep,))


def lecun_normal(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)


# ---------------------------------------------------------------- gradient oracle


@dataclass
class GradCheckReport:
    max_rel_err: dict[str, float]
    tolerance: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def check_gradients(
    closure: Callable[[], Var],
    params: Mapping[str, Parameter],
    tolerance: float = 1e-5,
    h: float = 1e-5,
) -> GradCheckReport:
    """Compare tape gradients against central differences.

    ``closure`` must build a fresh tape and return a scalar loss ``Var``; it is
    called once for analytic gradients and twice per parameter entry after that.
    """
    for p in params.values():
        p.zero_grad()
    loss = closure()
    base = float(loss.value)
    loss.tape.backward(loss)
    if float(closure().value) != base:
        raise OracleError("closure is not deterministic: two forward passes disagree")
    analytic = {k: p.grad.copy() for k, p in params.items()}
    report = {}
    for name, p in params.items():
        numeric = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = float(closure().value)
            flat[i] = old - h
            down = float(closure().value)
            flat[i] = old
            numeric.reshape(-1)[i] = (up - down) / (2 * h)
        report[name] = float(relative_error(analytic[name], numeric).max()) if numeric.size else 0.0
    for p in params.values():
        p.zero_grad()
    return GradCheckReport(report, tolerance)
