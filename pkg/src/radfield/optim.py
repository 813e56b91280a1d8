"""First-order optimizers over dicts of named numpy arrays."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, lr, betas=(0.9, 0.999), eps=1e-8):
        # lr: float, or dict of per-name learning rates
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def _lr(self, name):
        return self.lr[name] if isinstance(self.lr, dict) else self.lr

    def step(self, params: dict, grads: dict, scale: float = 1.0) -> None:
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
                self.t[name] = 0
            self.t[name] += 1
            t = self.t[name]
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1**t)
            vhat = v / (1 - self.b2**t)
            p -= scale * self._lr(name) * mhat / (np.sqrt(vhat) + self.eps)

    def remap(self, name: str, source: np.ndarray) -> None:
        """Reindex state rows after the parameter array was resampled; rows with source -1 restart at zero."""
        if name not in self.m:
            return
        for store in (self.m, self.v):
            old = store[name]
            new = np.zeros((len(source),) + old.shape[1:], dtype=old.dtype)
            ok = source >= 0
            new[ok] = old[source[ok]]
            store[name] = new


class SGD:
    def __init__(self, lr, momentum=0.0):
        self.lr = lr
        self.momentum = momentum
        self.buf: dict[str, np.ndarray] = {}

    def _lr(self, name):
        return self.lr[name] if isinstance(self.lr, dict) else self.lr

    def step(self, params: dict, grads: dict, scale: float = 1.0) -> None:
        for name, g in grads.items():
            if self.momentum:
                b = self.buf.get(name)
                if b is None:
                    b = self.buf[name] = np.zeros_like(g)
                b *= self.momentum
                b += g
                g = b
            params[name] -= scale * self._lr(name) * g

    def remap(self, name: str, source: np.ndarray) -> None:
        if name not in self.buf:
            return
        old = self.buf[name]
        new = np.zeros((len(source),) + old.shape[1:], dtype=old.dtype)
        ok = source >= 0
        new[ok] = old[source[ok]]
        self.buf[name] = new


def make_optimizer(kind: str, lr, momentum: float = 0.9, eps: float = 1e-8):
    if kind == "adam":
        return Adam(lr, eps=eps)
    if kind == "sgd":
        return SGD(lr, momentum)
    raise ValueError(f"unknown optimizer {kind!r}")
