"""Oracle-backed numerical checks.

Each check compares an implementation path against an independent computation and
returns a `CheckReport`. `run_suite` runs all of them under one master seed.
"""

from __future__ import annotations

import functools
import math
import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .linalg import NS_COEFFS, newton_schulz, polar_factor_exact, svd_small
from .moments import MomentState, nesterov_lookahead, update_moments
from .optimizers import (
    MUON_FAMILY,
    OptimizerConfig,
    ParamSlot,
    muon_variant_step,
    precondition_nsr,
    precondition_vs,
    scale_factor,
)
from .problems import ProblemSpec, flatten, make_problem, unflatten

# tolerances
EXACT_ALGEBRA_TOL = 1e-12
SIGN_FORM_TOL = 1e-10
MLE_TOL = 1e-6
POLAR_GAP_TOL = 0.35
# NS output singular values must stay within 1 +- POLAR_SV_SPREAD, i.e. [0.6, 1.4]
POLAR_SV_SPREAD = 0.4
SCALE_INVARIANCE_TOL = 1e-12
GAMMA_LIMIT_TOL = 1e-3
FD_TOL = 1e-5


@dataclass(frozen=True)
class CheckReport:
    name: str
    passed: bool
    error: float
    tolerance: float
    details: str = ""
    seconds: float = 0.0

    @classmethod
    def make(cls, name: str, error: float, tolerance: float, details: str = ""):
        error = float(error)
        return cls(name=name, passed=bool(error <= tolerance), error=error, tolerance=tolerance, details=details)

    def to_dict(self) -> dict:
        return asdict(self)


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


# -- moment identities ------------------------------------------------------------------


def adam_moments(stream, beta1: float, beta2: float):
    """Plain Adam first/second moments (no bias correction) for a scalar stream."""
    m = v = 0.0
    ms, vs = [], []
    for g in stream:
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        ms.append(m)
        vs.append(v)
    return np.array(ms), np.array(vs)


def gamma_trace(stream, beta: float) -> np.ndarray:
    state = MomentState.zeros(())
    out = []
    for g in stream:
        state = update_moments(state, np.float64(g), beta)
        out.append(float(state.Gamma))
    return np.array(out)


def check_variance_recursion(steps: int = 1000, beta: float = 0.99, seed=0, stream=None) -> CheckReport:
    """max_t |v_t - m_t^2 - Gamma_t| for Adam with beta1 == beta2 == beta."""
    if stream is None:
        rng = _rng(seed)
        stream = rng.normal(rng.uniform(-2, 2), rng.uniform(0.1, 3.0), size=steps)
    m, v = adam_moments(stream, beta, beta)
    gamma = gamma_trace(stream, beta)
    err = np.max(np.abs(v - m * m - gamma))
    return CheckReport.make(f"variance_recursion[beta={beta}]", err, EXACT_ALGEBRA_TOL, f"{len(stream)} steps")


def check_adam_sign_form(steps: int = 1000, beta: float = 0.9, seed=0) -> CheckReport:
    """m / sqrt(v) against sign(m) / sqrt(1 + sigma^2 / m^2) with sigma^2 = v - m^2."""
    rng = _rng(seed)
    stream = rng.normal(rng.uniform(-2, 2), rng.uniform(0.1, 3.0), size=steps)
    m, v = adam_moments(stream, beta, beta)
    mask = m != 0
    m, v = m[mask], v[mask]
    direct = m / np.sqrt(v)
    sigma2 = v - m * m
    gated = np.sign(m) / np.sqrt(1.0 + sigma2 / (m * m))
    err = np.max(np.abs(direct - gated) / np.abs(direct))
    return CheckReport.make(f"adam_sign_form[beta={beta}]", err, SIGN_FORM_TOL, f"{mask.sum()} nonzero steps")


# -- regularized maximum likelihood --------------------------------------------------------


def regularized_nll(mu: float, log_s2: float, g: float, mu_prev: float, s2_prev: float, lam: float) -> float:
    """Gaussian NLL of g plus KL(N(mu_prev, s2_prev) || N(mu, s2)) / lam, with s2 = exp(log_s2)."""
    s2 = math.exp(log_s2)
    nll = 0.5 * log_s2 + (g - mu) ** 2 / (2.0 * s2)
    kl = 0.5 * (s2_prev / s2 + (mu_prev - mu) ** 2 / s2 - 1.0 - math.log(s2_prev / s2))
    return nll + kl / lam


def solve_regularized_mle_numeric(g: float, mu_prev: float, sigma2_prev: float, beta: float):
    """Minimize the regularized NLL by nested 1-D searches: log-variance outside, mean inside."""
    if sigma2_prev <= 0:
        raise ValueError("sigma2_prev must be positive")
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    lam = (1.0 - beta) / beta
    lo_mu, hi_mu = min(g, mu_prev) - 1.0, max(g, mu_prev) + 1.0
    scale = 1.0 + sigma2_prev + (g - mu_prev) ** 2
    lo_s, hi_s = math.log(1e-6 * sigma2_prev), math.log(10.0 * scale)

    def inner(log_s2):
        f = lambda mu: regularized_nll(mu, log_s2, g, mu_prev, sigma2_prev, lam)  # noqa: E731
        res = minimize_scalar(f, bounds=(lo_mu, hi_mu), method="bounded", options={"xatol": 1e-10, "maxiter": 500})
        mu = _parabolic_polish(f, res.x)
        return mu, f(mu)

    outer = minimize_scalar(
        lambda ls: inner(ls)[1], bounds=(lo_s, hi_s), method="bounded", options={"xatol": 1e-10, "maxiter": 500}
    )
    x = _parabolic_polish(lambda ls: inner(ls)[1], outer.x)
    mu, _ = inner(x)
    return float(mu), math.exp(x)


def _parabolic_polish(f, x0: float, h: float = 1e-5) -> float:
    """One three-point parabola step; a bracketing search alone stalls near sqrt(machine eps)."""
    fm, f0, fp = f(x0 - h), f(x0), f(x0 + h)
    curv = fp - 2.0 * f0 + fm
    if curv <= 0:
        return x0
    step = 0.5 * h * (fp - fm) / curv
    return x0 - step if abs(step) < h else x0


def regularized_mle_closed_form(g: float, mu_prev: float, sigma2_prev: float, beta: float):
    mu = beta * mu_prev + (1.0 - beta) * g
    s2 = beta * sigma2_prev + beta * (1.0 - beta) * (mu_prev - g) ** 2
    return mu, s2


def check_regularized_mle(instances: int = 100, seed=0) -> CheckReport:
    rng = _rng(seed)
    worst = 0.0
    worst_case = None
    for _ in range(instances):
        g = rng.normal(0, 2)
        mu_prev = rng.normal(0, 2)
        s2_prev = math.exp(rng.uniform(math.log(0.05), math.log(5.0)))
        beta = rng.uniform(0.3, 0.99)
        num = solve_regularized_mle_numeric(g, mu_prev, s2_prev, beta)
        ref = regularized_mle_closed_form(g, mu_prev, s2_prev, beta)
        err = max(abs(num[0] - ref[0]), abs(num[1] - ref[1]))
        if err > worst:
            worst, worst_case = err, (g, mu_prev, s2_prev, beta)
    return CheckReport.make("regularized_mle", worst, MLE_TOL, f"{instances} instances; worst at {worst_case}")


# -- Newton-Schulz vs exact polar factor --------------------------------------------------


def random_orthonormal(rng, m: int, r: int) -> np.ndarray:
    q, R = np.linalg.qr(rng.standard_normal((m, r)))
    return q * np.sign(np.diag(R))


def random_conditioned(rng, m: int, n: int, cond: float) -> np.ndarray:
    """m x n matrix with singular values log-uniform in [1/cond, 1], endpoints included."""
    r = min(m, n)
    s = np.sort(10.0 ** rng.uniform(-math.log10(cond), 0.0, r))[::-1]
    s[0] = 1.0
    s[-1] = 1.0 / cond
    return (random_orthonormal(rng, m, r) * s) @ random_orthonormal(rng, n, r).T


def polar_ensemble(trials: int, max_dim: int = 64, cond_cap: float = 100.0, seed=0):
    """Random test matrices: sizes in [2, max_dim]^2, log-uniform condition <= cond_cap, random scale.

    Spectra are spread log-uniformly. A spectrum that is flat except for one tiny value
    (e.g. 63 ones and one 0.01 at 64 x 64) can push the K=5 output slightly below 0.6.
    """
    rng = _rng(seed)
    for _ in range(trials):
        m, n = (int(x) for x in rng.integers(2, max_dim + 1, size=2))
        cond = 10.0 ** rng.uniform(0.0, math.log10(cond_cap))
        yield random_conditioned(rng, m, n, cond) * 10.0 ** rng.uniform(-3, 3)


def polar_statistics(
    trials: int = 200, max_dim: int = 64, cond_cap: float = 100.0, K: int = 5, seed=0, coeffs=NS_COEFFS, matrices=None
) -> dict:
    """Worst normalized gap ||NS_K(A) - polar(A)||_F / sqrt(min(m, n)) and NS singular-value range."""
    if matrices is None:
        matrices = polar_ensemble(trials, max_dim, cond_cap, seed)
    gap, lo, hi, count = 0.0, math.inf, 0.0, 0
    for A in matrices:
        A = np.asarray(A, dtype=np.float64)
        O = newton_schulz(A, steps=K, coeffs=coeffs)
        P = polar_factor_exact(A)
        gap = max(gap, np.linalg.norm(O - P) / math.sqrt(min(A.shape)))
        sv = svd_small(O).singular_values
        lo, hi = min(lo, sv.min()), max(hi, sv.max())
        count += 1
    return {"gap": gap, "sv_min": lo, "sv_max": hi, "count": count, "K": K}


def check_polar_agreement(trials: int = 200, max_dim: int = 64, cond_cap: float = 100.0, K: int = 5, seed=0,
                          coeffs=NS_COEFFS, matrices=None, stats=None) -> CheckReport:
    st = stats or polar_statistics(trials, max_dim, cond_cap, K, seed, coeffs, matrices)
    return CheckReport.make(
        "polar_agreement",
        st["gap"],
        POLAR_GAP_TOL,
        f"{st['count']} matrices, K={st['K']}, NS singular values in [{st['sv_min']:.4f}, {st['sv_max']:.4f}]",
    )


def check_ns_singular_values(trials: int = 200, max_dim: int = 64, cond_cap: float = 100.0, K: int = 5, seed=0,
                             coeffs=NS_COEFFS, matrices=None, stats=None) -> CheckReport:
    """max |sigma - 1| over all NS output singular values (SVD oracle)."""
    st = stats or polar_statistics(trials, max_dim, cond_cap, K, seed, coeffs, matrices)
    spread = max(1.0 - st["sv_min"], st["sv_max"] - 1.0)
    return CheckReport.make(
        "ns_singular_values",
        spread,
        POLAR_SV_SPREAD,
        f"{st['count']} matrices, K={st['K']}, range [{st['sv_min']:.4f}, {st['sv_max']:.4f}] must lie in [0.6, 1.4]",
    )


def check_ns_scale_invariance(trials: int = 50, scales=(1e-3, 2.0, 10.0), seed=0) -> CheckReport:
    rng = _rng(seed)
    worst = 0.0
    for _ in range(trials):
        m, n = (int(x) for x in rng.integers(1, 33, size=2))
        A = rng.standard_normal((m, n))
        base = newton_schulz(A)
        for c in scales:
            worst = max(worst, np.max(np.abs(newton_schulz(c * A) - base)))
    return CheckReport.make("ns_scale_invariance", worst, SCALE_INVARIANCE_TOL, f"{trials} matrices, c in {list(scales)}")


# -- optimizer-level identities -----------------------------------------------------------


def check_nesterov_equivalence(steps: int = 500, beta: float = 0.95, seed=0, shape=(8, 8)) -> CheckReport:
    """EMA lookahead G + beta/(1-beta) M_ema against Muon's beta * M_muon + G (no bias correction)."""
    rng = _rng(seed)
    state = MomentState.zeros(shape)
    M_muon = np.zeros(shape)
    worst = 0.0
    for _ in range(steps):
        G = rng.normal(0.5, 1.0, size=shape)
        state = update_moments(state, G, beta)
        M_muon = beta * M_muon + G
        ema_dir = nesterov_lookahead(G, state.M, beta)
        worst = max(worst, np.linalg.norm(ema_dir - (beta * M_muon + G)))
    return CheckReport.make(f"nesterov_equivalence[beta={beta}]", worst, EXACT_ALGEBRA_TOL, f"{steps} steps of {shape}")


def _slot(W: np.ndarray) -> ParamSlot:
    return ParamSlot(id="W", family=MUON_FAMILY, weights=W.copy(), state=MomentState.zeros(W.shape))


def directions_along_stream(cfg: OptimizerConfig, stream) -> list[np.ndarray]:
    """Orthogonalized directions O_t produced by `cfg` on a fixed gradient stream (eta=1, wd=0)."""
    slot = _slot(np.zeros(stream[0].shape))
    s = scale_factor(*slot.shape, cfg.scale_rule)
    out = []
    for G in stream:
        new = muon_variant_step(slot, G, cfg, eta_t=1.0)
        out.append((slot.weights - new.weights) / s)
        slot = new
    return out


def gamma_limit_gaps(gamma_large: float, steps: int = 50, seed=0, shape=(16, 16), mean=0.2, sigma=1.0):
    """Per-step relative Frobenius gaps between the O_t of Muon-NSR(gamma) and of Muon-VS.

    The stabilizer is set to 1e-300, effectively zero, so only the gating form is compared.
    """
    rng = _rng(seed)
    mu = rng.normal(mean, 1.0, size=shape)
    stream = [mu + sigma * rng.standard_normal(shape) for _ in range(steps)]
    eps = 1e-300
    nsr = OptimizerConfig(variant="muon_nsr", gamma=gamma_large, epsilon=eps)
    vs = OptimizerConfig(variant="muon_vs", epsilon=eps)
    a = directions_along_stream(nsr, stream)
    b = directions_along_stream(vs, stream)
    return [np.linalg.norm(x - y) / np.linalg.norm(y) for x, y in zip(a, b)]


def check_gamma_limit(gamma_large: float = 1e8, steps: int = 50, seed=0) -> CheckReport:
    gaps = gamma_limit_gaps(gamma_large, steps, seed)
    return CheckReport.make(
        f"gamma_limit[gamma={gamma_large:g}]", max(gaps), GAMMA_LIMIT_TOL, f"{steps} noisy 16x16 steps"
    )


def check_reshuffled_degenerate(steps: int = 100, seed=0, shape=(8, 12)) -> CheckReport:
    """Reshuffled NSR at gamma=0 (no bias correction) against plain Muon, weight by weight."""
    rng = _rng(seed)
    W0 = rng.standard_normal(shape)
    stream = [rng.normal(0.3, 1.0, size=shape) for _ in range(steps)]
    common = dict(eta=0.05, weight_decay=0.1, beta=0.95, gamma=0.0, bias_correction=False)
    res = _slot(W0)
    muon = _slot(W0)
    worst = 0.0
    for G in stream:
        res = muon_variant_step(res, G, OptimizerConfig(variant="muon_nsr_reshuffled", **common), 0.05)
        muon = muon_variant_step(muon, G, OptimizerConfig(variant="muon", **common), 0.05)
        worst = max(worst, np.max(np.abs(res.weights - muon.weights)))
    return CheckReport.make("reshuffled_gamma0_matches_muon", worst, EXACT_ALGEBRA_TOL, f"{steps} steps of {shape}")


def check_preconditioner_signs(trials: int = 200, seed=0) -> CheckReport:
    """Count coordinates where either gate flips the sign of its input (must be zero)."""
    rng = _rng(seed)
    flips = 0
    peak = 0.0
    for _ in range(trials):
        M = rng.standard_normal((6, 5)) * 10.0 ** rng.uniform(-3, 3)
        Gm = np.abs(rng.standard_normal((6, 5))) * 10.0 ** rng.uniform(-3, 3)
        a = precondition_nsr(M, Gm, rng.uniform(0, 100), 1e-8)
        b = precondition_vs(M, Gm, 1e-8)
        flips += int(np.sum(np.sign(a) != np.sign(M)) + np.sum(np.sign(b) != np.sign(M)))
        peak = max(peak, np.max(np.abs(a)))
    return CheckReport.make("preconditioner_signs", flips, 0.0, f"{trials} trials, max |NSR output| = {peak:.6f}")


# -- gradient oracles ----------------------------------------------------------------------


def central_difference(loss: Callable[[np.ndarray], float], x: np.ndarray, rel_h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x)
    for i in range(x.size):
        h = rel_h * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (loss(xp) - loss(xm)) / (2.0 * h)
    return g


def finite_difference_check(problem, h: float = 1e-5, seed=0) -> CheckReport:
    """Relative L2 error of the analytic gradient against central differences.

    The probe point is the known optimum (or the initial point) plus a seeded N(0, 0.1^2) shift.
    """
    rng = _rng(seed)
    base = problem.optimum_params if problem.optimum_params is not None else problem.initial_params()
    x = flatten(base, problem.layout)
    x = x + 0.1 * rng.standard_normal(x.size)
    g = flatten(problem.gradient(unflatten(x, problem.layout)), problem.layout)
    fd = central_difference(lambda z: problem.loss(unflatten(z, problem.layout)), x, h)
    err = np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-300)
    return CheckReport.make(f"finite_difference[{problem.spec.kind}]", err, FD_TOL, f"{x.size} coordinates, h={h}*(1+|w|)")


def default_problem_specs(seed=0) -> list[ProblemSpec]:
    return [
        ProblemSpec(kind="quadratic", rows=6, cols=5, condition=10.0, seed=seed),
        ProblemSpec(kind="noisy_quadratic", rows=6, cols=5, condition=10.0, seed=seed),
        ProblemSpec(kind="logistic", samples=64, features=6, classes=3, seed=seed),
        ProblemSpec(kind="lowrank_factorization", rows=8, cols=7, rank=3, seed=seed),
        ProblemSpec(kind="mlp2", samples=32, features=5, hidden=7, outputs=3, seed=seed),
    ]


# -- suite -----------------------------------------------------------------------------------


def suite(seed: int = 0) -> dict[str, Callable[[], CheckReport]]:
    """Named zero-argument checks; names are stable and used by --filter."""
    checks: dict[str, Callable[[], CheckReport]] = {}
    for beta in (0.5, 0.9, 0.99):
        checks[f"variance_recursion[beta={beta}]"] = lambda b=beta: check_variance_recursion(1000, b, seed)
        checks[f"adam_sign_form[beta={beta}]"] = lambda b=beta: check_adam_sign_form(1000, b, seed)
    checks["regularized_mle"] = lambda: check_regularized_mle(100, seed)
    polar = functools.lru_cache(maxsize=1)(lambda: polar_statistics(200, seed=seed))
    checks["polar_agreement"] = lambda: check_polar_agreement(stats=polar())
    checks["ns_singular_values"] = lambda: check_ns_singular_values(stats=polar())
    checks["ns_scale_invariance"] = lambda: check_ns_scale_invariance(50, seed=seed)
    checks["nesterov_equivalence[beta=0.95]"] = lambda: check_nesterov_equivalence(500, 0.95, seed)
    checks["gamma_limit[gamma=1e+08]"] = lambda: check_gamma_limit(1e8, 50, seed)
    checks["reshuffled_gamma0_matches_muon"] = lambda: check_reshuffled_degenerate(100, seed)
    checks["preconditioner_signs"] = lambda: check_preconditioner_signs(200, seed)
    for spec in default_problem_specs(seed):
        spec_ = ProblemSpec(**{**spec.to_dict(), "noise_sigma": 0.0})
        checks[f"finite_difference[{spec.kind}]"] = lambda s=spec_: finite_difference_check(make_problem(s), seed=seed)
    return checks


def run_suite(filter: str | None = None, seed: int = 0) -> list[CheckReport]:
    """Run every check whose name contains `filter`; results sorted by name."""
    reports = []
    for name, fn in suite(seed).items():
        if filter and filter not in name:
            continue
        t0 = time.perf_counter()
        rep = fn()
        reports.append(
            CheckReport(rep.name, rep.passed, rep.error, rep.tolerance, rep.details, time.perf_counter() - t0)
        )
    return sorted(reports, key=lambda r: r.name)
