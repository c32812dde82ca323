"""Nesterov-accelerated Adam updates over named parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    """First/second moment accumulators mirroring the parameter tensors."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        state = cls(learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon)
        for name, tensor in params.tensors().items():
            state.m[name] = np.zeros_like(tensor)
            state.v[name] = np.zeros_like(tensor)
        return state


def nadam_step(params, grads, state: OptimizerState):
    """One Nesterov-Adam update; returns fresh (params, state).

    Applies bias-corrected first/second moments with the Nesterov lookahead
    on the first moment: the update direction blends the corrected momentum
    with the corrected current gradient.
    """
    tensors = params.tensors()
    if set(grads) != set(tensors):
        raise ValueError("gradient names do not match parameter names")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    new_m, new_v, new_tensors = {}, {}, {}
    for name, w in tensors.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** (t + 1))
        v_hat = v / (1.0 - b2**t)
        lookahead = b1 * m_hat + (1.0 - b1) * g / (1.0 - b1**t)
        new_tensors[name] = w - state.learning_rate * lookahead / (np.sqrt(v_hat) + state.epsilon)
        new_m[name] = m
        new_v[name] = v
    new_state = OptimizerState(
        learning_rate=state.learning_rate,
        beta1=b1,
        beta2=b2,
        epsilon=state.epsilon,
        step_count=t,
        m=new_m,
        v=new_v,
    )
    return params.with_tensors(new_tensors), new_state
