"""Small optimization problems with analytic gradients and seeded gradient noise.

Parameters are passed around as ``dict[str, ndarray]`` in layout order. Gradient noise
comes from a counter-based generator (Philox) keyed on ``(seed, step, parameter)``, so a
sample depends only on those three values and not on call order.
"""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeMismatchError

KINDS = ("quadratic", "noisy_quadratic", "logistic", "lowrank_factorization", "mlp2")


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    is_embedding: bool = False


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = "quadratic"
    # quadratic kinds and lowrank_factorization: parameter / target matrix shape
    rows: int = 16
    cols: int = 16
    # quadratic kinds: Hessian = hessian_scale * (A kron B); condition is cond(A kron B)
    condition: float = 1.0
    hessian_scale: float = 1.0
    optimum: str = "random"
    # lowrank_factorization
    rank: int = 4
    factor_rank: int | None = None
    # logistic and mlp2
    samples: int = 256
    features: int = 8
    classes: int = 4
    hidden: int = 16
    outputs: int = 4
    init_scale: float = 1.0
    # scalar, or a per-coordinate vector tiled over the flattened parameters
    noise_sigma: float | tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"problem.kind: expected one of {KINDS}, got {self.kind!r}")
        for name in ("rows", "cols", "rank", "samples", "features", "classes", "hidden", "outputs"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"problem.{name} must be >= 1, got {getattr(self, name)}")
        if self.classes < 2 and self.kind == "logistic":
            raise ConfigError("problem.classes must be >= 2 for logistic")
        if self.condition < 1.0:
            raise ConfigError(f"problem.condition must be >= 1, got {self.condition}")
        if self.hessian_scale <= 0:
            raise ConfigError(f"problem.hessian_scale must be > 0, got {self.hessian_scale}")
        if self.optimum not in ("random", "zero"):
            raise ConfigError(f"problem.optimum must be 'random' or 'zero', got {self.optimum!r}")
        if self.kind == "lowrank_factorization" and self.rank > min(self.rows, self.cols):
            raise ConfigError("problem.rank exceeds min(rows, cols)")
        if self.factor_rank is not None and self.factor_rank < 1:
            raise ConfigError("problem.factor_rank must be >= 1")
        if self.init_scale <= 0:
            raise ConfigError("problem.init_scale must be > 0")
        sigma = self.noise_sigma
        if sigma is None:
            sigma = 1.0 if self.kind == "noisy_quadratic" else 0.0
        if isinstance(sigma, (list, tuple, np.ndarray)):
            sigma = tuple(float(s) for s in sigma)
            if not sigma or min(sigma) < 0:
                raise ConfigError("problem.noise_sigma entries must be >= 0")
        else:
            sigma = float(sigma)
            if sigma < 0:
                raise ConfigError("problem.noise_sigma must be >= 0")
        object.__setattr__(self, "noise_sigma", sigma)

    @property
    def noisy(self) -> bool:
        return np.any(np.asarray(self.noise_sigma) > 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(d["noise_sigma"], tuple):
            d["noise_sigma"] = list(d["noise_sigma"])
        if d["factor_rank"] is None:
            del d["factor_rank"]
        return d

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


def _spd(rng: np.random.Generator, n: int, cond: float) -> np.ndarray:
    if cond == 1.0:
        return np.eye(n)
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    q = q * np.sign(np.diag(r))
    eig = np.logspace(0.0, np.log10(cond), n) if n > 1 else np.ones(1)
    H = (q * eig) @ q.T
    return 0.5 * (H + H.T)


@dataclass
class Problem:
    spec: ProblemSpec
    layout: list[ParamSpec]
    data: dict[str, np.ndarray] = field(default_factory=dict)
    optimum_value: float | None = None
    optimum_params: dict[str, np.ndarray] | None = None

    # -- public API -----------------------------------------------------------------

    def initial_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.data["init"].items()}

    def loss(self, params: dict[str, np.ndarray]) -> float:
        return self._loss_grad(self._check(params), need_grad=False)[0]

    def gradient(self, params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        return self._loss_grad(self._check(params), need_grad=True)[1]

    def loss_and_gradient(self, params):
        return self._loss_grad(self._check(params), need_grad=True)

    def sample_gradient(self, params: dict[str, np.ndarray], step: int) -> dict[str, np.ndarray]:
        grads = self.gradient(params)
        if not self.spec.noisy:
            return grads
        sigma = self._sigma_per_param()
        for idx, p in enumerate(self.layout):
            key = [self.spec.seed & 0xFFFFFFFFFFFFFFFF, int(step), zlib.crc32(p.name.encode()), idx]
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
            grads[p.name] = grads[p.name] + sigma[p.name] * rng.standard_normal(p.shape)
        return grads

    @property
    def condition_number(self) -> float | None:
        return self.data.get("condition")

    def named_params(self, params: dict[str, np.ndarray]):
        """(name, array, is_embedding) triples for `partition_params`."""
        return [(p.name, params[p.name], p.is_embedding) for p in self.layout]

    # -- internals ------------------------------------------------------------------

    def _check(self, params):
        out = {}
        for p in self.layout:
            if p.name not in params:
                raise ShapeMismatchError(f"missing parameter {p.name!r}")
            a = np.asarray(params[p.name], dtype=np.float64)
            if a.shape != p.shape:
                raise ShapeMismatchError(f"parameter {p.name!r}: shape {a.shape} != {p.shape}")
            out[p.name] = a
        extra = set(params) - {p.name for p in self.layout}
        if extra:
            raise ShapeMismatchError(f"unknown parameters {sorted(extra)}")
        return out

    def _sigma_per_param(self) -> dict[str, np.ndarray | float]:
        sigma = self.spec.noise_sigma
        if not isinstance(sigma, tuple):
            return {p.name: sigma for p in self.layout}
        total = sum(int(np.prod(p.shape)) for p in self.layout)
        flat = np.resize(np.asarray(sigma, dtype=np.float64), total)
        out, offset = {}, 0
        for p in self.layout:
            size = int(np.prod(p.shape))
            out[p.name] = flat[offset : offset + size].reshape(p.shape)
            offset += size
        return out

    def _loss_grad(self, params, need_grad: bool):
        kind = self.spec.kind
        d = self.data
        if kind in ("quadratic", "noisy_quadratic"):
            E = params["W"] - d["W_star"]
            HE = self.spec.hessian_scale * (d["A"] @ E @ d["B"])
            loss = 0.5 * float(np.sum(E * HE))
            return loss, ({"W": HE} if need_grad else None)

        if kind == "lowrank_factorization":
            L, R = params["L"], params["R"]
            E = L @ R.T - d["target"]
            loss = 0.5 * float(np.sum(E * E))
            return loss, ({"L": E @ R, "R": E.T @ L} if need_grad else None)

        if kind == "logistic":
            X, Y = d["X"], d["Y"]
            n = X.shape[0]
            logits = X @ params["W"].T + params["b"]
            shift = logits - logits.max(axis=1, keepdims=True)
            logsum = np.log(np.exp(shift).sum(axis=1))
            loss = float(np.mean(logsum - np.sum(shift * Y, axis=1)))
            if not need_grad:
                return loss, None
            P = np.exp(shift - logsum[:, None])
            D = (P - Y) / n
            return loss, {"W": D.T @ X, "b": D.sum(axis=0)}

        # mlp2: y = W2 tanh(W1 x + b1) + b2, squared error averaged over samples
        X, Y = d["X"], d["Y"]
        n = X.shape[0]
        H = np.tanh(X @ params["W1"].T + params["b1"])
        R = H @ params["W2"].T + params["b2"] - Y
        loss = 0.5 * float(np.sum(R * R)) / n
        if not need_grad:
            return loss, None
        dR = R / n
        dH = (dR @ params["W2"]) * (1.0 - H * H)
        return loss, {"W1": dH.T @ X, "b1": dH.sum(axis=0), "W2": dR.T @ H, "b2": dR.sum(axis=0)}


def _separable_inputs(rng, n, d, W_true, margin):
    """Draw standard-normal inputs, keeping only points whose top-two logit gap >= margin."""
    kept = []
    count = 0
    while count < n:
        X = rng.standard_normal((2 * n, d))
        z = np.sort(X @ W_true.T, axis=1)
        X = X[(z[:, -1] - z[:, -2]) >= margin]
        kept.append(X)
        count += X.shape[0]
    return np.concatenate(kept)[:n]


def make_problem(spec: ProblemSpec) -> Problem:
    """Construct a problem deterministically from `spec.seed`."""
    rng = np.random.default_rng(spec.seed)
    kind = spec.kind
    s = spec.init_scale

    if kind in ("quadratic", "noisy_quadratic"):
        m, n = spec.rows, spec.cols
        # split the condition number between the row and column factors
        if m == 1 or n == 1:
            cond_a = spec.condition if n == 1 else 1.0
        else:
            cond_a = float(np.sqrt(spec.condition))
        A = _spd(rng, m, cond_a)
        B = _spd(rng, n, spec.condition / cond_a)
        W_star = np.zeros((m, n)) if spec.optimum == "zero" else rng.standard_normal((m, n))
        W0 = rng.standard_normal((m, n)) * s if spec.optimum == "zero" else np.zeros((m, n))
        return Problem(
            spec=spec,
            layout=[ParamSpec("W", (m, n))],
            data={"A": A, "B": B, "W_star": W_star, "init": {"W": W0}, "condition": spec.condition if m * n > 1 else 1.0},
            optimum_value=0.0,
            optimum_params={"W": W_star.copy()},
        )

    if kind == "lowrank_factorization":
        m, n, r = spec.rows, spec.cols, spec.rank
        q = spec.factor_rank or r
        U = rng.standard_normal((m, r)) / r**0.25
        V = rng.standard_normal((n, r)) / r**0.25
        target = U @ V.T
        init = {"L": 0.1 * s * rng.standard_normal((m, q)), "R": 0.1 * s * rng.standard_normal((n, q))}
        opt = None
        if q >= r:
            pad_u = np.zeros((m, q))
            pad_v = np.zeros((n, q))
            pad_u[:, :r], pad_v[:, :r] = U, V
            opt = {"L": pad_u, "R": pad_v}
        return Problem(
            spec=spec,
            layout=[ParamSpec("L", (m, q)), ParamSpec("R", (n, q))],
            data={"target": target, "init": init},
            optimum_value=0.0 if q >= r else None,
            optimum_params=opt,
        )

    if kind == "logistic":
        k, d, N = spec.classes, spec.features, spec.samples
        W_true = rng.standard_normal((k, d))
        X = _separable_inputs(rng, N, d, W_true, margin=0.1)
        labels = np.argmax(X @ W_true.T, axis=1)
        init = {"W": 0.01 * s * rng.standard_normal((k, d)), "b": np.zeros(k)}
        return Problem(
            spec=spec,
            layout=[ParamSpec("W", (k, d)), ParamSpec("b", (k,))],
            data={"X": X, "Y": np.eye(k)[labels], "labels": labels, "W_true": W_true, "init": init},
        )

    # mlp2: regression onto a random teacher network of the same width
    d_in, h, d_out, N = spec.features, spec.hidden, spec.outputs, spec.samples
    teacher = {
        "W1": rng.standard_normal((h, d_in)) / np.sqrt(d_in),
        "b1": 0.1 * rng.standard_normal(h),
        "W2": rng.standard_normal((d_out, h)) / np.sqrt(h),
        "b2": 0.1 * rng.standard_normal(d_out),
    }
    X = rng.standard_normal((N, d_in))
    Y = np.tanh(X @ teacher["W1"].T + teacher["b1"]) @ teacher["W2"].T + teacher["b2"]
    init = {
        "W1": s * rng.standard_normal((h, d_in)) / np.sqrt(d_in),
        "b1": np.zeros(h),
        "W2": s * rng.standard_normal((d_out, h)) / np.sqrt(h),
        "b2": np.zeros(d_out),
    }
    return Problem(
        spec=spec,
        layout=[ParamSpec("W1", (h, d_in)), ParamSpec("b1", (h,)), ParamSpec("W2", (d_out, h)), ParamSpec("b2", (d_out,))],
        data={"X": X, "Y": Y, "init": init},
        optimum_value=0.0,
        optimum_params=teacher,
    )


def evaluate_loss(p: Problem, params: dict[str, np.ndarray]) -> float:
    return p.loss(params)


def sample_gradient(p: Problem, params: dict[str, np.ndarray], step: int) -> dict[str, np.ndarray]:
    return p.sample_gradient(params, step)


def flatten(params: dict[str, np.ndarray], layout: Sequence[ParamSpec]) -> np.ndarray:
    return np.concatenate([np.ravel(params[p.name]) for p in layout])


def unflatten(vec: np.ndarray, layout: Sequence[ParamSpec]) -> dict[str, np.ndarray]:
    out, offset = {}, 0
    for p in layout:
        size = int(np.prod(p.shape))
        out[p.name] = vec[offset : offset + size].reshape(p.shape).copy()
        offset += size
    return out
