"""Adam optimizer over named parameters.

Moments are kept per parameter name so optimizer state can be checkpointed
and restored against a freshly built network.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError
from .tensor import Parameter

__all__ = ["Adam"]


class Adam:
    def __init__(
        self,
        named_params: list[tuple[str, Parameter]],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        if lr <= 0:
            raise ConfigError(f"lr must be positive, got {lr}")
        if not 0 <= beta1 < 1 or not 0 <= beta2 < 1:
            raise ConfigError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        if eps <= 0:
            raise ConfigError(f"eps must be positive, got {eps}")
        self.items = list(named_params)
        if len({name for name, _ in self.items}) != len(self.items):
            raise ConfigError("duplicate parameter names passed to Adam")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.items}
        self.v = {name: np.zeros_like(p.data) for name, p in self.items}

    def zero_grad(self) -> None:
        for _, param in self.items:
            param.grad = None

    def step(self) -> None:
        """Apply one update from the accumulated gradients."""
        self.step_count += 1
        t = self.step_count
        for name, param in self.items:
            grad = param.grad
            if grad is None:
                continue
            if not np.all(np.isfinite(grad)):
                raise ContractError(f"non-finite gradient for parameter '{name}'")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            param.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {
            "step": self.step_count,
            "hyper": {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps},
            "moments": {name: (self.m[name].copy(), self.v[name].copy()) for name, _ in self.items},
        }

    def load_state_dict(self, state: dict) -> None:
        moments = state["moments"]
        if set(moments) != {name for name, _ in self.items}:
            raise ContractError("optimizer state does not match the parameter set")
        self.step_count = int(state["step"])
        hyper = state.get("hyper", {})
        self.lr = float(hyper.get("lr", self.lr))
        self.beta1 = float(hyper.get("beta1", self.beta1))
        self.beta2 = float(hyper.get("beta2", self.beta2))
        self.eps = float(hyper.get("eps", self.eps))
        for name, param in self.items:
            m, v = moments[name]
            for blob, store in ((m, self.m), (v, self.v)):
                arr = np.ascontiguousarray(blob, dtype=np.float64)
                if arr.shape != param.data.shape:
                    raise ContractError(f"moment shape mismatch for parameter '{name}'")
                store[name] = arr.copy()
