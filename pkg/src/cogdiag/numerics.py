"""Parameter storage, initialization, Adam, and gradient checking.

Everything here is deliberately small and explicit: a dict of named
float64 arrays with matching gradient and moment buffers, an Adam step
with bias correction, and a central-difference gradient checker used
throughout the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tape import Node, backprop, value_of


class NonFiniteGradientError(RuntimeError):
    """Raised by adam_step when a gradient contains nan or inf."""


class GradCheckError(RuntimeError):
    """Raised by grad_check when the objective evaluates non-finite."""


def stable_sigmoid(x):
    """Numerically stable logistic function.

    Branches on sign so no exp of a large positive number is ever taken;
    safe for arguments far beyond +-1000.  Scalar in, float out; array
    in, array out.  Non-finite input is a contract violation and raises.
    """
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("stable_sigmoid requires finite input")
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    expx = np.exp(arr[~pos])
    out[~pos] = expx / (1.0 + expx)
    if out.shape == ():
        return float(out)
    return out


def xavier_init(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """(fan_in, fan_out) matrix, uniform on +-sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"xavier_init needs positive fan sizes, got ({fan_in}, {fan_out})")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class AdamConfig:
    learning_rate: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (self.learning_rate > 0):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1):
            raise ValueError(f"beta1 must be in [0, 1), got {self.beta1}")
        if not (0 <= self.beta2 < 1):
            raise ValueError(f"beta2 must be in [0, 1), got {self.beta2}")
        if not (self.epsilon > 0):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


class ParameterStore:
    """Named float64 parameter arrays with grad and Adam moment buffers.

    Embedding-style matrices can be registered ``row_sparse``: their
    gradients are tracked per touched row, letting :func:`adam_step`
    update only those rows when the caller opts into lazy mode.  Dense
    mode ignores the bookkeeping and is bit-exact textbook Adam.
    """

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count: int = 0
        self._row_sparse: set[str] = set()
        # name -> None (untouched), "dense", or list of row-index arrays
        self._touched: dict[str, object] = {}

    def add(self, name: str, value: np.ndarray, row_sparse: bool = False) -> None:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered")
        arr = np.array(value, dtype=np.float64)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        self._touched[name] = None
        if row_sparse:
            if arr.ndim != 2:
                raise ValueError(f"row_sparse parameter {name!r} must be 2-d")
            self._row_sparse.add(name)

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def is_row_sparse(self, name: str) -> bool:
        return name in self._row_sparse

    def leaf(self, name: str) -> Node:
        """Graph leaf holding the whole parameter array."""
        return Node(self.params[name], param_ref=(self, name, None))

    def row_leaf(self, name: str, rows) -> Node:
        """Graph leaf holding a row gather ``params[name][rows]``.

        Duplicate rows are fine: the fancy-index copy keeps them separate
        on the way forward, and accumulate_grad scatter-adds them back.
        """
        rows = np.asarray(rows, dtype=np.int64)
        return Node(self.params[name][rows], param_ref=(self, name, rows))

    def accumulate_grad(self, name: str, rows, grad: np.ndarray) -> None:
        if rows is None:
            self.grads[name] += grad
            self._touched[name] = "dense"
            return
        np.add.at(self.grads[name], rows, grad)
        entry = self._touched[name]
        if entry is None:
            self._touched[name] = [rows]
        elif entry == "dense":
            pass
        else:
            entry.append(rows)

    def touched_rows(self, name: str):
        """Sorted unique row indices touched since the last step, or "dense"/None."""
        entry = self._touched[name]
        if entry is None or entry == "dense":
            return entry
        return np.unique(np.concatenate(entry))

    def zero_grads(self) -> None:
        for name, g in self.grads.items():
            g[:] = 0.0
            self._touched[name] = None

    def reset_moments(self) -> None:
        """Clear Adam state: both moment buffers and the step counter."""
        for name in self.params:
            self.m[name][:] = 0.0
            self.v[name][:] = 0.0
        self.step_count = 0

    def copy_params(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.params.items()}

    def load_params(self, snapshot: dict[str, np.ndarray]) -> None:
        for name, arr in snapshot.items():
            self.params[name][:] = arr


def adam_step(store: ParameterStore, cfg: AdamConfig, lazy: bool = False) -> None:
    """One Adam update over every parameter in the store.

    Validates all gradients first so a non-finite gradient aborts the
    step before anything mutates.  With ``lazy=True``, row_sparse
    parameters update only the rows touched since the last step
    (SparseAdam-style); untouched rows keep stale moments, which is the
    standard trade for not sweeping a huge embedding matrix every step.
    Afterwards all gradient accumulators are zeroed and the shared step
    counter advances by one.
    """
    plans: list[tuple[str, object]] = []
    for name in store.params:
        rows = None
        if lazy and name in store._row_sparse:
            touched = store.touched_rows(name)
            if touched is None:
                continue
            if not isinstance(touched, str):
                rows = touched
        grad = store.grads[name] if rows is None else store.grads[name][rows]
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
        plans.append((name, rows))

    t = store.step_count + 1
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, rows in plans:
        if rows is None:
            g = store.grads[name]
            m = store.m[name]
            v = store.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            store.params[name] -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)
            g[:] = 0.0
        else:
            g = store.grads[name][rows]
            m = cfg.beta1 * store.m[name][rows] + (1.0 - cfg.beta1) * g
            v = cfg.beta2 * store.v[name][rows] + (1.0 - cfg.beta2) * g * g
            store.m[name][rows] = m
            store.v[name][rows] = v
            store.params[name][rows] -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)
            store.grads[name][rows] = 0.0
        store._touched[name] = None
    store.step_count = t


def grad_check(f, store: ParameterStore, h: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``f(store)`` must rebuild its graph from the store's current values
    and return a scalar Node.  Every parameter entry is perturbed by
    +-h in turn.  Relative error is |a - n| / max(|a|, |n|, 1e-6); the
    floor keeps zero-gradient entries from reporting pure rounding noise
    as 100% error.
    """
    if not (1e-6 <= h <= 1e-3):
        raise ValueError(f"step size h must be in [1e-6, 1e-3], got {h}")

    store.zero_grads()
    out = f(store)
    if not isinstance(out, Node):
        raise TypeError("f must return a Node so the analytic gradient exists")
    if not np.isfinite(out.value):
        raise GradCheckError("objective evaluated non-finite at the base point")
    backprop(out)
    analytic = {name: store.grads[name].copy() for name in store.params}
    store.zero_grads()

    worst = 0.0
    for name, param in store.params.items():
        flat = param.reshape(-1)
        aflat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(value_of(f(store)))
            flat[i] = orig - h
            f_minus = float(value_of(f(store)))
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise GradCheckError(f"objective non-finite while perturbing {name!r}[{i}]")
            numeric = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(aflat[i]), abs(numeric), 1e-6)
            err = abs(aflat[i] - numeric) / denom
            if err > worst:
                worst = err
    store.zero_grads()
    return worst
