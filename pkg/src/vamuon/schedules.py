"""Learning-rate schedules as pure functions of the 1-based step index."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .errors import ConfigError

SCHEDULES = ("constant", "warmup_constant", "cosine_warmup", "wsd")


@dataclass(frozen=True)
class Schedule:
    """Step -> learning rate.

    kind:
        constant         peak everywhere
        warmup_constant  linear warmup to peak, then flat
        cosine_warmup    linear warmup, then cosine decay to `min_eta`
        wsd              warmup, flat, then linear decay to `min_eta` over the last
                         `decay_fraction` of the steps
    `multiplier` gives the shape alone, so AdamW slots running beside a Muon variant
    can follow the same schedule from a different peak.
    """

    kind: str = "constant"
    peak: float = 0.02
    total_steps: int = 1000
    warmup_steps: int = 0
    min_eta: float = 0.0
    decay_fraction: float = 0.8

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise ConfigError(f"schedule.kind: expected one of {SCHEDULES}, got {self.kind!r}")
        if self.total_steps < 1:
            raise ConfigError(f"schedule total steps must be >= 1, got {self.total_steps}")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigError(f"schedule.warmup_steps must lie in [0, steps], got {self.warmup_steps}")
        if not 0.0 <= self.decay_fraction <= 1.0:
            raise ConfigError(f"schedule.decay_fraction must lie in [0, 1], got {self.decay_fraction}")
        if self.min_eta < 0 or self.min_eta > self.peak:
            raise ConfigError(f"schedule.min_eta must lie in [0, peak], got {self.min_eta}")

    def multiplier(self, step: int) -> float:
        """Ratio eta_t / peak for the 1-based `step`."""
        T, w = self.total_steps, self.warmup_steps
        floor = self.min_eta / self.peak if self.peak > 0 else 0.0
        if self.kind != "constant" and w > 0 and step <= w:
            return step / w
        if self.kind in ("constant", "warmup_constant"):
            return 1.0
        if self.kind == "cosine_warmup":
            span = T - w
            if span <= 0:
                return 1.0
            progress = min(max((step - w) / span, 0.0), 1.0)
            return floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))
        decay_steps = round(self.decay_fraction * T)
        start = T - decay_steps
        if decay_steps == 0 or step <= start:
            return 1.0
        remaining = max(T - step, 0) / decay_steps
        return floor + (1.0 - floor) * remaining

    def __call__(self, step: int) -> float:
        return self.peak * self.multiplier(step)

    def to_dict(self) -> dict:
        d = asdict(self)
        del d["peak"], d["total_steps"]
        return d
