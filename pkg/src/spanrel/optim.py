"""Named parameter store, Adam updates, and finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from . import autodiff as ad


class KeyMismatch(KeyError):
    pass


class Parameters:
    """Flat name -> float64 array store with per-name Adam state.

    `subset` returns a view sharing the underlying dicts, restricted to a key
    prefix set; optimizer steps through a view leave every other entry
    bitwise untouched.
    """

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}
        self._keys: list[str] | None = None  # None = all

    def add(self, name: str, array) -> np.ndarray:
        if name in self.values:
            raise ValueError(f"duplicate parameter '{name}'")
        arr = np.asarray(array, dtype=np.float64)
        self.values[name] = arr
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        self.t[name] = 0
        self._keys = None if self._keys is None else self._keys + [name]
        return arr

    def get(self, name: str) -> np.ndarray:
        return self.values[name]

    def set(self, name: str, array) -> None:
        arr = np.asarray(array, dtype=np.float64)
        if arr.shape != self.values[name].shape:
            raise ValueError(f"shape mismatch for '{name}'")
        self.values[name] = arr

    def names(self) -> list[str]:
        if self._keys is None:
            return list(self.values)
        return list(self._keys)

    def __contains__(self, name: str) -> bool:
        return name in self.values and (self._keys is None or name in self._keys)

    def subset(self, prefixes: Iterable[str]) -> "Parameters":
        prefixes = tuple(prefixes)
        return self.restrict([n for n in self.names() if n.startswith(prefixes)])

    def restrict(self, names: Iterable[str]) -> "Parameters":
        view = Parameters.__new__(Parameters)
        view.values = self.values
        view.m = self.m
        view.v = self.v
        view.t = self.t
        view._keys = list(names)
        return view

    def clone(self) -> "Parameters":
        out = Parameters()
        for name in self.names():
            out.values[name] = self.values[name].copy()
            out.m[name] = self.m[name].copy()
            out.v[name] = self.v[name].copy()
            out.t[name] = self.t[name]
        return out

    def reset_optimizer_state(self) -> None:
        for name in self.names():
            self.m[name][...] = 0.0
            self.v[name][...] = 0.0
            self.t[name] = 0

    def num_entries(self) -> int:
        return sum(self.values[n].size for n in self.names())


def adam_step(params: Parameters, grads: dict[str, np.ndarray], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0) -> None:
    """One Adam update with bias correction and decoupled L2 weight decay."""
    names = set(params.names())
    if set(grads) != names:
        raise KeyMismatch(f"grad keys != param keys: {sorted(set(grads) ^ names)}")
    for name in params.names():
        g = grads[name]
        theta = params.values[name]
        if g.shape != theta.shape:
            raise KeyMismatch(f"grad shape mismatch for '{name}'")
        t = params.t[name] + 1
        params.t[name] = t
        m = params.m[name]
        v = params.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        theta -= lr * m_hat / (np.sqrt(v_hat) + eps)
        if weight_decay:
            theta -= lr * weight_decay * theta


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most max_norm."""
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


def grad_check(loss_fn: Callable[[Parameters], ad.Value], params: Parameters,
               eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss_fn` must build a fresh graph on every call, bind parameters as
    named leaves, be deterministic, and run with dropout disabled.
    """
    loss = loss_fn(params)
    analytic = ad.parameter_gradients(loss.graph, loss, params.names(), params)

    worst = 0.0
    for name in params.names():
        theta = params.values[name]
        flat = theta.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = loss_fn(params).item()
            flat[i] = orig - eps
            f_minus = loss_fn(params).item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = a_flat[i]
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if rel > worst:
                worst = rel
    return worst


# ---------------------------------------------------------------------------
# initialization


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Uniform(-r, r) with r = sqrt(6 / (fan_in + fan_out)) for 2-D weights."""
    if len(shape) == 2:
        fan_in, fan_out = shape[1], shape[0]
    else:
        fan_in = fan_out = int(np.prod(shape))
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=shape)


def embedding_init(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    return rng.normal(0.0, 1.0, size=shape) / np.sqrt(shape[-1])
