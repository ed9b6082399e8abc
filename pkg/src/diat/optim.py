"""ADAM optimizer and gradient plumbing."""

import math

import numpy as np

from .errors import DivergenceError


class Adam:
    """Per-parameter moment estimates keyed by parameter name.

    ``params`` is a name -> Tensor mapping (e.g. ``Network.params``) so the
    optimizer state serializes alongside the network checkpoint.
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8,
                 on_nonfinite="abort"):
        if on_nonfinite not in ("abort", "skip"):
            raise ValueError("on_nonfinite must be 'abort' or 'skip'")
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.on_nonfinite = on_nonfinite
        self.t = 0
        self.m = {k: np.zeros(p.shape, dtype=np.float32) for k, p in self.params.items()}
        self.v = {k: np.zeros(p.shape, dtype=np.float32) for k, p in self.params.items()}

    def step(self):
        """Apply one ADAM update from the accumulated gradients.

        Returns True if the update was applied, False if it was skipped
        because of non-finite gradients (on_nonfinite='skip').
        """
        grads = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros(p.shape, dtype=p.data.dtype)
            if not np.all(np.isfinite(g)):
                if self.on_nonfinite == "abort":
                    raise DivergenceError(f"non-finite gradient in {name!r}")
                return False
            grads[name] = g
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name].astype(np.float32)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return True

    def zero_grads(self):
        zero_grads(self.params.values())

    def state_dict(self):
        return {"t": self.t,
                "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}

    def load_state_dict(self, state):
        self.t = int(state["t"])
        for k in self.m:
            self.m[k] = np.asarray(state["m"][k], dtype=np.float32).reshape(self.m[k].shape).copy()
            self.v[k] = np.asarray(state["v"][k], dtype=np.float32).reshape(self.v[k].shape).copy()


def zero_grads(params):
    for p in params:
        p.grad = None


def clip_grad_norm(params, max_norm):
    """Rescale gradients so the global L2 norm is <= max_norm; returns the
    applied scale factor."""
    params = [p for p in params if p.grad is not None]
    total = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params))
    if total <= max_norm or total == 0.0:
        return 1.0
    scale = max_norm / total
    for p in params:
        p.grad = p.grad * np.float32(scale) if p.grad.dtype == np.float32 else p.grad * scale
    return scale
