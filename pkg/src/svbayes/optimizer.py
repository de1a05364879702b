"""Adam optimizer over a flat hyper-parameter vector.

Standard first-order Adam with bias correction.  The engine maximizes the
free energy by handing Adam the gradient of its negation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class AdamState:
    """Moment estimates and settings for one optimization run."""

    learning_rate: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    step_count: int = 0
    first_moment: np.ndarray | None = field(default=None, repr=False)
    second_moment: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.learning_rate < 0.0:
            raise ValueError("learning rate must be nonnegative")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 < b < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {b}")
        if not self.eps_hat > 0.0:
            raise ValueError("eps_hat must be positive")


def adam_step(
    state: AdamState, zeta: np.ndarray, grad: np.ndarray
) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update; returns the new state and vector.

    `grad` is the gradient of the quantity being minimized.  Deterministic:
    identical inputs give bitwise-identical outputs.
    """
    zeta = np.asarray(zeta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if zeta.shape != grad.shape:
        raise ValueError(f"shape mismatch: zeta {zeta.shape} vs grad {grad.shape}")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient entries")

    m = state.first_moment if state.first_moment is not None else np.zeros_like(zeta)
    v = state.second_moment if state.second_moment is not None else np.zeros_like(zeta)
    if m.shape != zeta.shape:
        raise ValueError("optimizer state does not match parameter vector length")

    t = state.step_count + 1
    m = state.beta1 * m + (1.0 - state.beta1) * grad
    v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    updated = zeta - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps_hat)

    new_state = replace(state, step_count=t, first_moment=m, second_moment=v)
    return new_state, updated
