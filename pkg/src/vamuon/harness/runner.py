"""Training loop, sweeps and their summaries."""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, NumericalFailure
from ..optimizers import ParamSlot, clip_by_global_norm, partition_params, step_slot
from ..problems import make_problem
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, with_override
from .metrics import RunRecord, emit_metrics, write_csv

logger = logging.getLogger(__name__)

WORKERS_ENV = "VAMUON_MAX_WORKERS"


def max_workers() -> int:
    """Worker cap from $VAMUON_MAX_WORKERS (default 1, i.e. serial)."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning("ignoring non-integer %s=%r", WORKERS_ENV, raw)
        return 1


@dataclass
class RunResult:
    records: list[RunRecord]
    summary: dict
    slots: list[ParamSlot] = field(default_factory=list)


def steps_to_threshold(records, threshold: float | None) -> int | None:
    if threshold is None:
        return None
    for r in records:
        if r.train_loss <= threshold:
            return r.step
    return None


def summarize(cfg: RunConfig, records: list[RunRecord], initial_loss: float, wall_s: float) -> dict:
    final = records[-1].train_loss
    best = min(records, key=lambda r: r.train_loss)
    return {
        "variant": cfg.optimizer.variant,
        "problem": cfg.problem.kind,
        "steps": records[-1].step,
        "initial_loss": initial_loss,
        "final_loss": final,
        "best_loss": best.train_loss,
        "best_step": best.step,
        "loss_reduction": initial_loss / final if final > 0 else math.inf,
        "threshold": cfg.threshold,
        "steps_to_threshold": steps_to_threshold(records, cfg.threshold),
        "wall_seconds": wall_s,
    }


def _step_all(slots, grads, cfg, eta_t, adam_eta_t, workers: int):
    opt = cfg.optimizer
    if workers > 1 and len(slots) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda sg: step_slot(sg[0], sg[1], opt, eta_t, adam_eta_t), zip(slots, grads)))
    return [step_slot(s, g, opt, eta_t, adam_eta_t) for s, g in zip(slots, grads)]


def run_experiment(
    cfg: RunConfig,
    resume_from=None,
    checkpoint_dir=None,
    stop_after: int | None = None,
) -> RunResult:
    """Run `cfg.steps` optimizer steps on the configured problem.

    `resume_from` restarts from a checkpoint; `stop_after` ends the run early at that
    step (used to produce checkpoints mid-run). A non-finite loss raises
    `NumericalFailure` carrying the records logged so far, including the failing step.
    """
    problem = make_problem(cfg.problem)
    if resume_from is not None:
        start, slots, extra = load_checkpoint(resume_from)
        expected = {p.name: p.shape for p in problem.layout}
        if {s.id: s.shape for s in slots} != expected:
            raise ConfigError(f"checkpoint {resume_from} does not match the problem layout")
        initial_loss = extra.get("initial_loss", problem.loss({s.id: s.weights for s in slots}))
    else:
        start = 0
        slots = partition_params(problem.named_params(problem.initial_params()), cfg.optimizer.variant)
        initial_loss = problem.loss({s.id: s.weights for s in slots})

    opt = cfg.optimizer
    adam_peak = opt.adam_eta if opt.adam_eta is not None else opt.eta
    last = cfg.steps if stop_after is None else min(stop_after, cfg.steps)
    workers = max_workers()
    ckpt_dir = Path(checkpoint_dir or cfg.out_dir or ".")
    records: list[RunRecord] = []
    t0 = time.perf_counter()

    for step in range(start + 1, last + 1):
        params = {s.id: s.weights for s in slots}
        grads = problem.sample_gradient(params, step)
        glist = [grads[s.id] for s in slots]
        if not all(np.all(np.isfinite(g)) for g in glist):
            raise NumericalFailure(f"non-finite gradient at step {step}", records)
        glist, gnorm = clip_by_global_norm(glist, cfg.clip_norm)
        mult = cfg.schedule.multiplier(step)
        eta_t = opt.eta * mult
        new = _step_all(slots, glist, cfg, eta_t, adam_peak * mult, workers)
        update_norm = math.sqrt(sum(float(np.sum((n.weights - o.weights) ** 2)) for n, o in zip(new, slots)))
        slots = new
        loss = problem.loss({s.id: s.weights for s in slots})
        wall_ms = 1e3 * (time.perf_counter() - t0)
        rec = RunRecord(step, eta_t, loss, gnorm, update_norm, wall_ms)
        if not rec.is_finite():
            records.append(rec)
            raise NumericalFailure(f"non-finite loss or norm at step {step}", records)
        if step % cfg.log_every == 0 or step == last:
            records.append(rec)
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(ckpt_dir / f"checkpoint_{step:07d}.npz", step, slots, {"initial_loss": initial_loss})

    if not records:
        raise ConfigError("run produced no steps (checkpoint is already at or past run.steps)")
    summary = summarize(cfg, records, initial_loss, time.perf_counter() - t0)
    return RunResult(records=records, summary=summary, slots=slots)


def run_and_emit(cfg: RunConfig, out_dir=None, resume_from=None) -> RunResult:
    out = Path(out_dir or cfg.out_dir or "runs/latest")
    try:
        result = run_experiment(cfg, resume_from=resume_from, checkpoint_dir=out)
    except NumericalFailure as exc:
        if exc.records:
            write_csv(exc.records, out / "metrics.csv")
        raise
    emit_metrics(result.records, out, result.summary, cfg.to_dict())
    return result


# -- sweeps ---------------------------------------------------------------------------


def loss_curve_shape(values, losses) -> str:
    """Classify losses ordered by parameter value: increasing, decreasing, unimodal, or irregular.

    "unimodal" means non-increasing up to a single minimum and non-decreasing after it.
    """
    ys = [y for _, y in sorted(zip(values, losses))]
    if len(ys) < 2:
        return "flat"
    k = int(np.argmin(ys))
    left = all(ys[i] >= ys[i + 1] for i in range(k))
    right = all(ys[i] <= ys[i + 1] for i in range(k, len(ys) - 1))
    if not (left and right):
        return "irregular"
    if k == 0:
        return "increasing"
    if k == len(ys) - 1:
        return "decreasing"
    return "unimodal"


def _sweep_one(args):
    cfg, out = args
    try:
        if out is None:
            return run_experiment(cfg).summary
        return run_and_emit(cfg, out).summary
    except NumericalFailure as exc:
        return {"failed": True, "error": str(exc), "final_loss": math.inf, "best_loss": math.inf}


def run_sweep(cfg: RunConfig, param: str, values, out_dir=None) -> dict:
    """Run one experiment per value of `param`, in parallel up to $VAMUON_MAX_WORKERS.

    Each value writes to ``<out_dir>/<param>=<value>/``; the returned summary lists the
    per-value final losses and the shape of the loss-vs-value curve.
    """
    values = list(values)
    cfgs = [with_override(cfg, param, v) for v in values]
    outs = [None if out_dir is None else Path(out_dir) / f"{param}={v}" for v in values]
    workers = min(max_workers(), len(values))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_sweep_one, zip(cfgs, outs)))
    else:
        summaries = [_sweep_one(a) for a in zip(cfgs, outs)]
    finals = [s["final_loss"] for s in summaries]
    best_idx = int(np.argmin(finals))
    return {
        "param": param,
        "values": values,
        "final_losses": finals,
        "runs": summaries,
        "best_value": values[best_idx],
        "shape": loss_curve_shape(values, finals),
    }
