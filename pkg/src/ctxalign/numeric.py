"""Numerical kernels: SVD, Adam with linear warmup, gradient checking.

Matrices are plain C-order float64 numpy arrays throughout.  Training
and decomposition run in float64; float32 appears only at the embedding
file boundary.

The SVD contract is the post-condition (orthonormal factors, descending
non-negative singular values, reconstruction to 1e-10 relative); it is
backed by LAPACK via numpy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DataError, NumericError


def svd(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD: returns (U, S, V) with m = U @ diag(S) @ V.T.

    U and V have orthonormal columns; S is non-negative and descending.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DataError(f"expected a matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise NumericError("non-finite entries in SVD input")
    u, s, vh = np.linalg.svd(m, full_matrices=False)
    return u, s, vh.T


@dataclass
class AdamState:
    """Adam accumulators plus the warmup schedule.

    ``step`` counts completed updates; the learning rate for update t
    ramps linearly over the first ``warmup_steps`` updates and then
    stays at ``base_lr`` (schedule "constant") or decays linearly to 0
    at ``total_steps`` (schedule "linear-decay").
    """

    step: int
    first_moment: np.ndarray
    second_moment: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    base_lr: float = 5e-5
    warmup_steps: int = 0
    total_steps: int = 0
    schedule: str = "constant"

    def __post_init__(self):
        if self.step < 0:
            raise DataError("step must be >= 0")
        if not (0 <= self.warmup_steps <= max(self.total_steps, self.warmup_steps)):
            raise DataError("need 0 <= warmup_steps <= total_steps")
        if self.schedule not in ("constant", "linear-decay"):
            raise DataError(f"unknown schedule {self.schedule!r}")
        if self.first_moment.shape != self.second_moment.shape:
            raise DataError("moment shapes differ")

    @classmethod
    def fresh(cls, n_params: int, **kwargs) -> "AdamState":
        return cls(
            step=0,
            first_moment=np.zeros(n_params),
            second_moment=np.zeros(n_params),
            **kwargs,
        )

    def copy(self) -> "AdamState":
        return AdamState(
            self.step,
            self.first_moment.copy(),
            self.second_moment.copy(),
            self.beta1,
            self.beta2,
            self.eps,
            self.base_lr,
            self.warmup_steps,
            self.total_steps,
            self.schedule,
        )


def warmup_lr(state: AdamState) -> float:
    """Learning rate for the update counted by ``state.step``.

    lr = base * step / warmup_steps while step <= warmup_steps, then
    base (or a linear decay to 0 at total_steps).  warmup_steps == 0
    means no warmup at all.
    """
    step = state.step
    if step < 1:
        raise DataError("warmup_lr needs step >= 1")
    if state.warmup_steps > 0 and step <= state.warmup_steps:
        return state.base_lr * step / state.warmup_steps
    if state.schedule == "linear-decay" and state.total_steps > state.warmup_steps:
        remaining = max(state.total_steps - step, 0)
        return state.base_lr * remaining / (state.total_steps - state.warmup_steps)
    return state.base_lr


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; mutates ``state``, returns new params."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise DataError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, "
            f"moments {state.first_moment.shape}"
        )
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradient")
    state.step += 1
    lr = warmup_lr(state)
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * grads
    state.second_moment = state.beta2 * state.second_moment + (1 - state.beta2) * grads**2
    m_hat = state.first_moment / (1 - state.beta1**state.step)
    v_hat = state.second_moment / (1 - state.beta2**state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def grad_check(
    fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    params: np.ndarray,
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps parameters to (loss, analytic gradient).  Each coordinate
    is perturbed by +-h and compared via |a - n| / max(1e-8, |a| + |n|).
    """
    params = np.asarray(params, dtype=np.float64)
    _, analytic = fn(params)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != params.shape:
        raise DataError("analytic gradient shape does not match params")
    numeric = np.empty_like(params)
    for i in range(params.size):
        bumped = params.copy()
        bumped[i] += h
        up, _ = fn(bumped)
        bumped[i] -= 2 * h
        down, _ = fn(bumped)
        numeric[i] = (up - down) / (2 * h)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
