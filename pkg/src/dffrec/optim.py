"""Named parameter registry and the AdamW optimizer."""

from __future__ import annotations

import numpy as np

from . import kernels
from .autodiff import NumericsError, Tensor


class ParameterSet:
    """Ordered name -> Tensor registry for everything the optimizer updates."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name, data):
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(data, dtype=np.float32), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def zero_grad(self):
        for p in self._params.values():
            p.grad[...] = 0.0

    def state_dict(self):
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ValueError(f"parameter set mismatch: missing={sorted(missing)}, extra={sorted(extra)}")
        for name, p in self._params.items():
            arr = np.asarray(state[name], dtype=np.float32)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data[...] = arr


class AdamW:
    """Adam with decoupled weight decay.

    Decay multiplies each parameter by (1 - lr*weight_decay) before the
    moment update, so with zero gradients a step is a pure decay, and with
    weight_decay == 0 it is the identity. lr == 0 never changes parameters.
    """

    def __init__(self, params: ParameterSet, learning_rate,
                 weight_decay=0.0, beta1=0.9, beta2=0.999, epsilon=1e-8,
                 decay_matrices_only=False):
        if learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {learning_rate}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError(f"betas must be in [0, 1), got {beta1}, {beta2}")
        self.params = params
        self.learning_rate = float(learning_rate)
        self.weight_decay = float(weight_decay)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        # Biases, norm gains and the aggregation logits are 1-D; decaying
        # them buys nothing and drags the logits back toward uniform.
        self.decay_matrices_only = bool(decay_matrices_only)
        self.step_count = 0
        self.first_moment = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.second_moment = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self):
        self.step_count += 1
        for name, p in self.params.items():
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NumericsError(f"adamw: non-finite gradient for parameter '{name}'")
            wd = self.weight_decay
            if self.decay_matrices_only and p.data.ndim < 2:
                wd = 0.0
            kernels.adamw_update(
                p.data, g,
                self.first_moment[name], self.second_moment[name],
                self.step_count, self.learning_rate,
                self.beta1, self.beta2, self.epsilon, wd)

    def zero_grad(self):
        self.params.zero_grad()
