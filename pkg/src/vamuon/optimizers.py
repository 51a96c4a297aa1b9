"""Optimizer steps for Muon, Muon-NSR, Muon-VS, Muon-NSR-Reshuffled, AdamW and Signum.

Everything here is functional: a step takes a `ParamSlot` plus a gradient and returns a
new slot. Weight decay is decoupled everywhere, ``W <- W * (1 - eta * wd) - eta * update``.

Matrix-shaped non-embedding parameters go to the Muon family; vectors and embedding
tables go to AdamW (see `partition_params`).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, NonFiniteError, ShapeMismatchError, ZeroInputError
from .linalg import NS_COEFFS, NS_STEPS, newton_schulz
from .moments import MomentState, corrected_moments, nesterov_lookahead, update_moments

logger = logging.getLogger(__name__)

VARIANTS = ("muon", "muon_nsr", "muon_vs", "muon_nsr_reshuffled", "adamw", "signum")
MUON_VARIANTS = ("muon", "muon_nsr", "muon_vs", "muon_nsr_reshuffled")
SCALE_RULES = ("muon_02sqrt", "rms_ratio")

# documented default peak learning rates (constant schedule, 16x16 quadratic toy problem)
DEFAULT_ETA = {
    "muon": 0.05,
    "muon_nsr": 0.05,
    "muon_vs": 0.05,
    "muon_nsr_reshuffled": 0.05,
    "adamw": 0.01,
    "signum": 0.01,
}

MUON_FAMILY = "muon_family"
ADAMW_FAMILY = "adamw_family"


@dataclass(frozen=True)
class OptimizerConfig:
    variant: str = "muon_nsr"
    # None picks DEFAULT_ETA[variant]
    eta: float | None = None
    weight_decay: float = 0.0
    beta: float = 0.95
    gamma: float = 10.0
    epsilon: float = 1e-8
    ns_steps: int = NS_STEPS
    ns_coeffs: tuple[float, float, float] = NS_COEFFS
    scale_rule: str = "muon_02sqrt"
    bias_correction: bool = True
    adam_betas: tuple[float, float] = (0.9, 0.95)
    adam_epsilon: float = 1e-8
    adam_bias_correction: bool = True
    # peak learning rate of AdamW-family slots under a Muon variant; None means `eta`
    adam_eta: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"optimizer.variant: unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.eta is None:
            object.__setattr__(self, "eta", DEFAULT_ETA[self.variant])
        if self.scale_rule not in SCALE_RULES:
            raise ConfigError(f"optimizer.scale_rule: expected one of {SCALE_RULES}, got {self.scale_rule!r}")
        if not self.eta > 0:
            raise ConfigError(f"optimizer.eta must be > 0, got {self.eta}")
        if self.adam_eta is not None and not self.adam_eta > 0:
            raise ConfigError(f"optimizer.adam_eta must be > 0, got {self.adam_eta}")
        if not self.epsilon > 0:
            raise ConfigError(f"optimizer.epsilon must be > 0, got {self.epsilon}")
        if not self.adam_epsilon > 0:
            raise ConfigError(f"optimizer.adam_epsilon must be > 0, got {self.adam_epsilon}")
        if self.weight_decay < 0:
            raise ConfigError(f"optimizer.weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError(f"optimizer.beta must lie in [0, 1), got {self.beta}")
        if self.gamma < 0:
            raise ConfigError(f"optimizer.gamma must be >= 0, got {self.gamma}")
        if int(self.ns_steps) != self.ns_steps or self.ns_steps < 1:
            raise ConfigError(f"optimizer.ns_steps must be an integer >= 1, got {self.ns_steps}")
        if len(self.ns_coeffs) != 3:
            raise ConfigError("optimizer.ns_coeffs must have three entries")
        b1, b2 = self.adam_betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ConfigError(f"optimizer.adam_betas must lie in [0, 1), got {self.adam_betas}")
        object.__setattr__(self, "adam_betas", (float(b1), float(b2)))
        object.__setattr__(self, "ns_coeffs", tuple(float(c) for c in self.ns_coeffs))
        object.__setattr__(self, "ns_steps", int(self.ns_steps))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        d["ns_coeffs"] = list(self.ns_coeffs)
        if d["adam_eta"] is None:
            del d["adam_eta"]
        return d


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape, dtype=np.float64) -> "AdamState":
        return cls(m=np.zeros(shape, dtype=dtype), v=np.zeros(shape, dtype=dtype), t=0)


@dataclass(frozen=True)
class ParamSlot:
    id: str
    family: str
    weights: np.ndarray
    state: MomentState | AdamState
    is_embedding: bool = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.weights.shape


@dataclass(frozen=True)
class NamedParam:
    name: str
    value: np.ndarray
    is_embedding: bool = False


def scale_factor(m: int, n: int, rule: str) -> float:
    """Dimension-dependent multiplier on the orthogonalized update."""
    if m < 1 or n < 1:
        raise ValueError(f"dimensions must be positive, got ({m}, {n})")
    if rule == "muon_02sqrt":
        return 0.2 * math.sqrt(max(m, n))
    if rule == "rms_ratio":
        return math.sqrt(max(1.0, m / n))
    raise ValueError(f"unknown scale rule {rule!r}")


def _check_pair(M_tilde, Gamma_hat):
    M_tilde = np.asarray(M_tilde, dtype=np.result_type(M_tilde, np.float32))
    Gamma_hat = np.asarray(Gamma_hat, dtype=M_tilde.dtype)
    if M_tilde.shape != Gamma_hat.shape:
        raise ShapeMismatchError(f"shape mismatch {M_tilde.shape} vs {Gamma_hat.shape}")
    if np.any(Gamma_hat < 0):
        raise ValueError("variance estimate has negative entries")
    return M_tilde, Gamma_hat


def precondition_nsr(M_tilde, Gamma_hat, gamma: float, epsilon: float) -> np.ndarray:
    """Soft noise-to-signal gate: M / (sqrt(M**2 + gamma * Gamma) + eps), elementwise."""
    M_tilde, Gamma_hat = _check_pair(M_tilde, Gamma_hat)
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    return M_tilde / (np.sqrt(M_tilde * M_tilde + gamma * Gamma_hat) + epsilon)


def precondition_vs(M_tilde, Gamma_hat, epsilon: float) -> np.ndarray:
    """Variance scaling: M / (sqrt(Gamma) + eps), elementwise."""
    M_tilde, Gamma_hat = _check_pair(M_tilde, Gamma_hat)
    return M_tilde / (np.sqrt(Gamma_hat) + epsilon)


def nsr_post_scale(M_tilde, Gamma_hat, gamma: float, epsilon: float) -> np.ndarray:
    """Elementwise divisor sqrt(1 + gamma * Gamma / (M**2 + eps)) used after orthogonalization."""
    M_tilde, Gamma_hat = _check_pair(M_tilde, Gamma_hat)
    return np.sqrt(1.0 + gamma * Gamma_hat / (M_tilde * M_tilde + epsilon))


def _orthogonalize(X: np.ndarray, cfg: OptimizerConfig, slot_id: str) -> np.ndarray:
    try:
        return newton_schulz(X, steps=cfg.ns_steps, coeffs=cfg.ns_coeffs)
    except ZeroInputError:
        logger.warning("slot %s: zero update direction, skipping orthogonalization", slot_id)
        return np.zeros_like(X)


def _apply(slot: ParamSlot, direction: np.ndarray, eta_t: float, wd: float, state) -> ParamSlot:
    W = slot.weights * (1.0 - eta_t * wd) - eta_t * direction
    return replace(slot, weights=W, state=state)


def _check_grad(slot: ParamSlot, G) -> np.ndarray:
    G = np.asarray(G, dtype=slot.weights.dtype)
    if G.shape != slot.weights.shape:
        raise ShapeMismatchError(f"slot {slot.id}: gradient shape {G.shape} != {slot.weights.shape}")
    if not np.all(np.isfinite(G)):
        raise NonFiniteError(f"slot {slot.id}: gradient contains NaN or Inf")
    return G


def lookahead_direction(state: MomentState, G: np.ndarray, cfg: OptimizerConfig):
    """Update the moments and return (new_state, M_tilde, Gamma_hat)."""
    state = update_moments(state, G, cfg.beta)
    M_hat, Gamma_hat = corrected_moments(state, cfg.beta, cfg.bias_correction)
    return state, nesterov_lookahead(G, M_hat, cfg.beta), Gamma_hat


def muon_variant_step(slot: ParamSlot, G, cfg: OptimizerConfig, eta_t: float) -> ParamSlot:
    if slot.family != MUON_FAMILY or slot.weights.ndim != 2:
        raise ValueError(f"slot {slot.id} is not a matrix Muon-family slot")
    if cfg.variant == "muon_nsr_reshuffled":
        return muon_nsr_reshuffled_step(slot, G, cfg, eta_t)
    G = _check_grad(slot, G)
    state = slot.state
    if cfg.variant == "muon":
        # Muon's own accumulator: M <- beta * M + G, Nesterov direction beta * M + G
        M = cfg.beta * state.M + G
        state = replace(state, M=M, t=state.t + 1)
        pre = cfg.beta * M + G
    elif cfg.variant in ("muon_nsr", "muon_vs"):
        state, M_tilde, Gamma_hat = lookahead_direction(state, G, cfg)
        if cfg.variant == "muon_nsr":
            pre = precondition_nsr(M_tilde, Gamma_hat, cfg.gamma, cfg.epsilon)
        else:
            pre = precondition_vs(M_tilde, Gamma_hat, cfg.epsilon)
    else:
        raise ValueError(f"variant {cfg.variant!r} is not a Muon variant")
    O = _orthogonalize(pre, cfg, slot.id)
    s = scale_factor(*slot.shape, cfg.scale_rule)
    return _apply(slot, s * O, eta_t, cfg.weight_decay, state)


def muon_nsr_reshuffled_step(slot: ParamSlot, G, cfg: OptimizerConfig, eta_t: float) -> ParamSlot:
    """Ablation: orthogonalize the lookahead first, then damp coordinates by their NSR.

    The damped matrix O / S is what moves the weights.
    """
    if slot.family != MUON_FAMILY or slot.weights.ndim != 2:
        raise ValueError(f"slot {slot.id} is not a matrix Muon-family slot")
    G = _check_grad(slot, G)
    state, M_tilde, Gamma_hat = lookahead_direction(slot.state, G, cfg)
    O = _orthogonalize(M_tilde, cfg, slot.id)
    O_post = O / nsr_post_scale(M_tilde, Gamma_hat, cfg.gamma, cfg.epsilon)
    s = scale_factor(*slot.shape, cfg.scale_rule)
    return _apply(slot, s * O_post, eta_t, cfg.weight_decay, state)


def adamw_step(slot: ParamSlot, g, cfg: OptimizerConfig, eta_t: float) -> ParamSlot:
    g = _check_grad(slot, g)
    b1, b2 = cfg.adam_betas
    st = slot.state
    m = b1 * st.m + (1.0 - b1) * g
    v = b2 * st.v + (1.0 - b2) * g * g
    t = st.t + 1
    if cfg.adam_bias_correction:
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
    else:
        m_hat, v_hat = m, v
    direction = m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)
    return _apply(slot, direction, eta_t, cfg.weight_decay, AdamState(m=m, v=v, t=t))


def signum_step(slot: ParamSlot, g, cfg: OptimizerConfig, eta_t: float) -> ParamSlot:
    g = _check_grad(slot, g)
    st = slot.state
    M = cfg.beta * st.M + (1.0 - cfg.beta) * g
    # np.sign(0) == 0: exact ties do not move the weight
    return _apply(slot, np.sign(M), eta_t, cfg.weight_decay, replace(st, M=M, t=st.t + 1))


def classify(shape: Sequence[int], is_embedding: bool = False) -> str:
    if len(shape) > 2:
        raise ShapeMismatchError(f"tensors with more than 2 dimensions are not supported: {tuple(shape)}")
    if len(shape) == 2 and not is_embedding:
        return MUON_FAMILY
    return ADAMW_FAMILY


def _fresh_state(family: str, shape, dtype):
    if family == MUON_FAMILY:
        return MomentState.zeros(shape, dtype)
    return AdamState.zeros(shape, dtype)


def partition_params(model: Iterable[NamedParam | tuple], variant: str | None = None) -> list[ParamSlot]:
    """Build zero-state slots, assigning 2D non-embedding parameters to the Muon family.

    `model` yields `NamedParam`s or ``(name, array, is_embedding)`` tuples; order is kept.
    With ``variant="signum"`` every slot carries a momentum buffer (MomentState), and
    with ``variant="adamw"`` every slot is AdamW-family.
    """
    slots = []
    seen = set()
    for p in model:
        if not isinstance(p, NamedParam):
            p = NamedParam(*p)
        if p.name in seen:
            raise ValueError(f"duplicate parameter name {p.name!r}")
        seen.add(p.name)
        value = np.array(p.value, dtype=np.float64 if np.asarray(p.value).dtype != np.float32 else np.float32)
        family = classify(value.shape, p.is_embedding)
        if variant == "adamw":
            family = ADAMW_FAMILY
        state_family = MUON_FAMILY if variant == "signum" else family
        slots.append(
            ParamSlot(
                id=p.name,
                family=family,
                weights=value,
                state=_fresh_state(state_family, value.shape, value.dtype),
                is_embedding=p.is_embedding,
            )
        )
    return slots


def step_slot(slot: ParamSlot, G, cfg: OptimizerConfig, eta_t: float, adam_eta_t: float | None = None) -> ParamSlot:
    """Dispatch one slot update according to the configured variant and the slot family."""
    if cfg.variant == "signum":
        return signum_step(slot, G, cfg, eta_t)
    if cfg.variant == "adamw" or slot.family == ADAMW_FAMILY:
        return adamw_step(slot, G, cfg, eta_t if adam_eta_t is None else adam_eta_t)
    return muon_variant_step(slot, G, cfg, eta_t)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    # fixed summation order over slots keeps the result deterministic
    total = 0.0
    for g in grads:
        total += float(np.sum(np.square(g)))
    return math.sqrt(total)


def clip_by_global_norm(grads: Sequence[np.ndarray], max_norm: float | None) -> tuple[list[np.ndarray], float]:
    """Rescale all gradients jointly so their global L2 norm is at most `max_norm`.

    Returns the (possibly rescaled) gradients and the pre-clip norm. `None` or 0 disables.
    """
    norm = global_norm(grads)
    if not max_norm or norm <= max_norm:
        return list(grads), norm
    factor = max_norm / norm
    return [g * factor for g in grads], norm


@dataclass
class Optimizer:
    """Convenience wrapper holding a list of slots and stepping them together."""

    cfg: OptimizerConfig
    slots: list[ParamSlot] = field(default_factory=list)

    @classmethod
    def from_params(cls, model: Iterable[NamedParam | tuple], cfg: OptimizerConfig) -> "Optimizer":
        return cls(cfg=cfg, slots=partition_params(model, cfg.variant))

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {s.id: s.weights for s in self.slots}

    def step(self, grads: dict[str, np.ndarray] | Sequence[np.ndarray], eta_t: float, adam_eta_t: float | None = None):
        if isinstance(grads, dict):
            grads = [grads[s.id] for s in self.slots]
        if len(grads) != len(self.slots):
            raise ShapeMismatchError(f"expected {len(self.slots)} gradients, got {len(grads)}")
        self.slots = [step_slot(s, g, self.cfg, eta_t, adam_eta_t) for s, g in zip(self.slots, grads)]
        return self.slots
