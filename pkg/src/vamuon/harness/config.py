"""Run configuration: a TOML file with [run], [problem], [optimizer] and [schedule] tables.

Every key is optional except ``problem.kind`` and ``optimizer.variant``. Unknown keys
are rejected. Example::

    [run]
    steps = 500
    log_every = 10
    seed = 0
    clip_norm = 1.0       # 0 disables clipping
    threshold = 1e-3      # optional, enables steps_to_threshold

    [problem]
    kind = "quadratic"
    rows = 16
    cols = 16

    [optimizer]
    variant = "muon_nsr"
    eta = 0.05
    gamma = 10.0

    [schedule]
    kind = "wsd"
    decay_fraction = 0.8

The schedule peak is ``optimizer.eta`` and its length is ``run.steps``.
``problem.seed`` defaults to ``run.seed``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..errors import ConfigError
from ..optimizers import OptimizerConfig
from ..problems import ProblemSpec
from ..schedules import Schedule

DEFAULT_STEPS = 500


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError("expected an integer")
    return v


def _float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError("expected a number")
    return float(v)


def _opt_float(v):
    return None if v is None else _float(v)


def _bool(v):
    if not isinstance(v, bool):
        raise TypeError("expected true or false")
    return v


def _str(v):
    if not isinstance(v, str):
        raise TypeError("expected a string")
    return v


def _float_or_list(v):
    if isinstance(v, (list, tuple)):
        return tuple(_float(x) for x in v)
    return _float(v)


def _pair(v):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise TypeError("expected a two-element list")
    return (_float(v[0]), _float(v[1]))


def _triple(v):
    if not isinstance(v, (list, tuple)) or len(v) != 3:
        raise TypeError("expected a three-element list")
    return tuple(_float(x) for x in v)


RUN_KEYS = {
    "steps": _int,
    "log_every": _int,
    "seed": _int,
    "clip_norm": _float,
    "threshold": _opt_float,
    "out": _str,
    "checkpoint_every": _int,
}
PROBLEM_KEYS = {
    "kind": _str,
    "rows": _int,
    "cols": _int,
    "condition": _float,
    "hessian_scale": _float,
    "optimum": _str,
    "rank": _int,
    "factor_rank": _int,
    "samples": _int,
    "features": _int,
    "classes": _int,
    "hidden": _int,
    "outputs": _int,
    "init_scale": _float,
    "noise_sigma": _float_or_list,
    "seed": _int,
}
OPTIMIZER_KEYS = {
    "variant": _str,
    "eta": _float,
    "weight_decay": _float,
    "beta": _float,
    "gamma": _float,
    "epsilon": _float,
    "ns_steps": _int,
    "ns_coeffs": _triple,
    "scale_rule": _str,
    "bias_correction": _bool,
    "adam_betas": _pair,
    "adam_epsilon": _float,
    "adam_bias_correction": _bool,
    "adam_eta": _float,
}
SCHEDULE_KEYS = {
    "kind": _str,
    "warmup_steps": _int,
    "min_eta": _float,
    "decay_fraction": _float,
}
SECTIONS = {"run": RUN_KEYS, "problem": PROBLEM_KEYS, "optimizer": OPTIMIZER_KEYS, "schedule": SCHEDULE_KEYS}
REQUIRED = (("problem", "kind"), ("optimizer", "variant"))


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemSpec
    optimizer: OptimizerConfig
    schedule: Schedule
    steps: int = DEFAULT_STEPS
    clip_norm: float | None = 1.0
    log_every: int = 10
    master_seed: int = 0
    threshold: float | None = None
    out_dir: str | None = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"run.steps must be >= 1, got {self.steps}")
        if self.log_every < 1:
            raise ConfigError(f"run.log_every must be >= 1, got {self.log_every}")
        if self.clip_norm is not None and self.clip_norm < 0:
            raise ConfigError(f"run.clip_norm must be >= 0, got {self.clip_norm}")
        if self.checkpoint_every < 0:
            raise ConfigError("run.checkpoint_every must be >= 0")
        if self.schedule.total_steps != self.steps or self.schedule.peak != self.optimizer.eta:
            raise ConfigError("schedule must span run.steps and peak at optimizer.eta")

    def to_dict(self) -> dict:
        run = {
            "steps": self.steps,
            "log_every": self.log_every,
            "seed": self.master_seed,
            "clip_norm": self.clip_norm or 0.0,
            "checkpoint_every": self.checkpoint_every,
        }
        if self.threshold is not None:
            run["threshold"] = self.threshold
        if self.out_dir is not None:
            run["out"] = self.out_dir
        return {
            "run": run,
            "problem": self.problem.to_dict(),
            "optimizer": self.optimizer.to_dict(),
            "schedule": self.schedule.to_dict(),
        }

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def config_from_dict(raw: dict[str, Any], seed: int | None = None) -> RunConfig:
    """Validate a nested mapping (as parsed from TOML) and fill defaults.

    `seed` overrides ``run.seed`` and, unless the file pins ``problem.seed``, the problem seed.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table")
    parsed: dict[str, dict[str, Any]] = {}
    for section, value in raw.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section or key {section!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"{section!r} must be a table")
        keys = SECTIONS[section]
        out = {}
        for key, v in value.items():
            if key not in keys:
                raise ConfigError(f"unknown key {section}.{key}")
            try:
                out[key] = keys[key](v)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{section}.{key}: {exc}, got {v!r}") from None
        parsed[section] = out
    for section, key in REQUIRED:
        if key not in parsed.get(section, {}):
            raise ConfigError(f"missing required key {section}.{key}")

    run = parsed.get("run", {})
    if seed is not None:
        run["seed"] = seed
    master_seed = run.get("seed", 0)
    problem_kw = dict(parsed["problem"])
    problem_kw.setdefault("seed", master_seed)
    problem = ProblemSpec(**problem_kw)
    optimizer = OptimizerConfig(**parsed["optimizer"])
    steps = run.get("steps", DEFAULT_STEPS)
    if steps < 1:
        raise ConfigError(f"run.steps must be >= 1, got {steps}")
    schedule = Schedule(peak=optimizer.eta, total_steps=steps, **parsed.get("schedule", {}))
    clip = run.get("clip_norm", 1.0)
    return RunConfig(
        problem=problem,
        optimizer=optimizer,
        schedule=schedule,
        steps=steps,
        clip_norm=clip if clip > 0 else None,
        log_every=run.get("log_every", 10),
        master_seed=master_seed,
        threshold=run.get("threshold"),
        out_dir=run.get("out"),
        checkpoint_every=run.get("checkpoint_every", 0),
    )


def load_config(path, seed: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from None
    try:
        return config_from_dict(raw, seed=seed)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def with_override(cfg: RunConfig, param: str, value) -> RunConfig:
    """Return a copy of `cfg` with one key replaced.

    `param` is ``section.key`` or a bare key, looked up in optimizer, schedule, problem,
    then run.
    """
    if "." in param:
        section, key = param.split(".", 1)
    else:
        section = next((s for s in ("optimizer", "schedule", "problem", "run") if param in SECTIONS[s]), None)
        key = param
        if section is None:
            raise ConfigError(f"unknown sweep parameter {param!r}")
    if section not in SECTIONS or key not in SECTIONS[section]:
        raise ConfigError(f"unknown sweep parameter {param!r}")
    raw = cfg.to_dict()
    raw[section][key] = value
    try:
        return config_from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"sweep value {param}={value!r}: {exc}") from None
