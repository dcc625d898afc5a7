"""Parameter update rules: bias-corrected Adam and heavy-ball SGD.

An Optimizer owns per-parameter state keyed by the Param object and replaces
param.value functionally (arrays bound to a tape are frozen, never mutated).
"""

from __future__ import annotations

import numpy as np


class NonFiniteGradientError(RuntimeError):
    def __init__(self, name):
        self.param_name = name
        super().__init__(f"non-finite gradient for parameter {name!r}")


class Optimizer:
    """rule 'adam' ({lr, beta1, beta2, eps}) or 'sgd-momentum'
    ({lr, momentum}). halve_at: step counts at which lr halves."""

    def __init__(self, params, rule="adam", lr=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8, momentum=0.9, halve_at=()):
        if rule not in ("adam", "sgd-momentum"):
            raise ValueError(f"unknown rule {rule!r}")
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.rule = rule
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.halve_at = set(int(s) for s in halve_at)
        self.step_count = 0
        self.params = list(params)
        self._state = {}
        for p in self.params:
            if rule == "adam":
                self._state[id(p)] = (np.zeros_like(p.value), np.zeros_like(p.value))
            else:
                self._state[id(p)] = np.zeros_like(p.value)

    def current_lr(self):
        # a halving listed at step s takes effect on step s+1
        halvings = sum(1 for s in self.halve_at if s < self.step_count)
        return self.lr * (0.5 ** halvings)

    def step(self, grads):
        """grads: dict keyed by Param object -> gradient array (params with
        no entry see a zero gradient this step). Returns the step count."""
        self.step_count += 1
        lr = self.current_lr()
        for p in self.params:
            g = grads.get(p)
            if g is None:
                continue
            g = np.asarray(g, dtype=np.float64)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(p.name)
            if self.rule == "adam":
                m, v = self._state[id(p)]
                m = self.beta1 * m + (1 - self.beta1) * g
                v = self.beta2 * v + (1 - self.beta2) * g * g
                self._state[id(p)] = (m, v)
                mhat = m / (1 - self.beta1 ** self.step_count)
                vhat = v / (1 - self.beta2 ** self.step_count)
                p.value = p.value - lr * mhat / (np.sqrt(vhat) + self.eps)
            else:
                vel = self.momentum * self._state[id(p)] - lr * g
                self._state[id(p)] = vel
                p.value = p.value + vel
        return self.step_count
