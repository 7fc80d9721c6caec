"""ADAM with bias correction and a linear learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
from pydantic import BaseModel, Field

from .errors import NumericError, StructuralError


class LinearSchedule(BaseModel):
    """Learning rate interpolated linearly from ``initial`` to ``final`` over ``budget`` steps."""

    initial: float = Field(..., gt=0.0, description="Rate at step 0")
    final: float = Field(..., gt=0.0, description="Rate at and after step `budget`")
    budget: int = Field(..., ge=1, description="Number of steps the decay spans")

    def rate(self, step: int) -> float:
        frac = min(max(step, 0), self.budget) / self.budget
        return self.initial + (self.final - self.initial) * frac

    @classmethod
    def constant(cls, rate: float) -> "LinearSchedule":
        return cls(initial=rate, final=rate, budget=1)


class AdamHyperParams(BaseModel):
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)


@dataclass(frozen=True)
class AdamState:
    """Moments and step counter owned by a single trainer."""

    m: np.ndarray
    u: np.ndarray
    step: int
    schedule: LinearSchedule
    hyper: AdamHyperParams

    @classmethod
    def fresh(
        cls, n_params: int, schedule: LinearSchedule, hyper: AdamHyperParams | None = None
    ) -> "AdamState":
        return cls(
            m=np.zeros(n_params),
            u=np.zeros(n_params),
            step=0,
            schedule=schedule,
            hyper=hyper or AdamHyperParams(),
        )

    @property
    def learning_rate(self) -> float:
        return self.schedule.rate(self.step)


def adam_step(
    params: np.ndarray, grads: np.ndarray, state: AdamState
) -> Tuple[np.ndarray, AdamState]:
    """Return updated parameters and the advanced state; inputs are left untouched."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise StructuralError(
            f"adam_step shapes differ: params {params.shape}, grads {grads.shape}, "
            f"state {state.m.shape}"
        )
    if not np.all(np.isfinite(grads)):
        bad = int(np.flatnonzero(~np.isfinite(grads))[0])
        raise NumericError("non-finite gradient, update refused", location=f"parameter {bad}")

    h = state.hyper
    lr = state.learning_rate
    t = state.step + 1
    m = h.beta1 * state.m + (1.0 - h.beta1) * grads
    u = h.beta2 * state.u + (1.0 - h.beta2) * grads * grads
    m_hat = m / (1.0 - h.beta1**t)
    u_hat = u / (1.0 - h.beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(u_hat) + h.eps)
    return new_params, replace(state, m=m, u=u, step=t)
