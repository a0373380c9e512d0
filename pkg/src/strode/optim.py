"""Gradient-descent optimizers with post-step weight projection."""

from __future__ import annotations

import numpy as np

from .nn import ConstrainedMLP, project_weights


class TrainingError(RuntimeError):
    """Raised when training hits a non-finite value or diverges."""


def _check_finite(params) -> None:
    for p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient in {p.name or '<unnamed parameter>'}")


class _Optimizer:
    def __init__(self, nets, lr: float):
        if isinstance(nets, ConstrainedMLP):
            nets = [nets]
        self.nets = list(nets)
        self.lr = lr
        self.params = [p for net in self.nets for p in net.parameters()]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        _check_finite(self.params)
        for i, p in enumerate(self.params):
            if p.grad is not None:
                self._update(i, p)
        for net in self.nets:
            project_weights(net)

    def _update(self, i, p):
        raise NotImplementedError

    def state_dict(self) -> dict:
        return {}


class SGD(_Optimizer):
    def _update(self, i, p):
        p.data = p.data - self.lr * p.grad


class Adam(_Optimizer):
    def __init__(self, nets, lr: float = 4e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(nets, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        super().step()

    def _update(self, i, p):
        g = p.grad
        self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
        self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
        m_hat = self.m[i] / (1 - self.beta1 ** self.t)
        v_hat = self.v[i] / (1 - self.beta2 ** self.t)
        p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def sgd_step(nets, lr: float, state: SGD | None = None) -> SGD:
    """One projected SGD step; returns the optimizer so callers can reuse it."""
    state = state or SGD(nets, lr)
    state.lr = lr
    state.step()
    return state


def adam_step(nets, lr: float, state: Adam | None = None) -> Adam:
    """One projected Adam step; ``state`` carries the moment estimates."""
    state = state or Adam(nets, lr)
    state.lr = lr
    state.step()
    return state


def make_optimizer(name: str, nets, lr: float):
    name = name.lower()
    if name == "adam":
        return Adam(nets, lr)
    if name == "sgd":
        return SGD(nets, lr)
    raise ValueError(f"unknown optimizer {name!r}")
