"""Running mean / variance statistics shared by the variance-adaptive Muon variants.

With a shared decay rate ``beta`` the pair (M, Gamma) tracks the gradient mean and the
dispersion around it:

    Gamma_t = beta * Gamma_{t-1} + beta * (1 - beta) * (M_{t-1} - G_t)**2
    M_t     = beta * M_{t-1} + (1 - beta) * G_t

Gamma must be updated from the *previous* M, so `update_moments` computes it first.
For a scalar stream this reproduces ``v_t - m_t**2`` of Adam run with beta1 == beta2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, ShapeMismatchError


@dataclass(frozen=True)
class MomentState:
    M: np.ndarray
    Gamma: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape, dtype=np.float64) -> "MomentState":
        return cls(M=np.zeros(shape, dtype=dtype), Gamma=np.zeros(shape, dtype=dtype), t=0)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.M.shape


def _check_beta(beta: float) -> None:
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")


def update_moments(state: MomentState, G, beta: float) -> MomentState:
    _check_beta(beta)
    G = np.asarray(G, dtype=state.M.dtype)
    if G.shape != state.M.shape:
        raise ShapeMismatchError(f"gradient shape {G.shape} != state shape {state.M.shape}")
    if not np.all(np.isfinite(G)):
        raise NonFiniteError("gradient contains NaN or Inf")
    surprise = state.M - G
    gamma = beta * state.Gamma + beta * (1.0 - beta) * surprise * surprise
    m = beta * state.M + (1.0 - beta) * G
    return MomentState(M=m, Gamma=gamma, t=state.t + 1)


def bias_correct(state: MomentState, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Return (M_hat, Gamma_hat) = (M, Gamma) / (1 - beta**t)."""
    if state.t < 1:
        raise ValueError("bias correction needs t >= 1")
    _check_beta(beta)
    denom = 1.0 - beta**state.t
    return state.M / denom, state.Gamma / denom


def nesterov_lookahead(G, M_hat, beta: float) -> np.ndarray:
    """Lookahead direction G + beta / (1 - beta) * M_hat.

    Rescaling the EMA momentum by 1 / (1 - beta) restores the weighting of Muon's
    unnormalized accumulator, so with bias correction off this equals
    ``beta * M_muon + G`` exactly in exact arithmetic.
    """
    if beta >= 1.0:
        raise ValueError("beta must be < 1 for the lookahead")
    G = np.asarray(G)
    M_hat = np.asarray(M_hat)
    if G.shape != M_hat.shape:
        raise ShapeMismatchError(f"gradient shape {G.shape} != momentum shape {M_hat.shape}")
    return G + (beta / (1.0 - beta)) * M_hat


def corrected_moments(state: MomentState, beta: float, enabled: bool = True):
    """Bias-corrected moments, or the raw ones when correction is disabled."""
    if enabled:
        return bias_correct(state, beta)
    return state.M, state.Gamma

