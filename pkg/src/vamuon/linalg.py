"""Dense matrix kernels: a one-sided Jacobi SVD oracle and Newton-Schulz orthogonalization.

The SVD is only used to check Newton-Schulz against the exact polar factor; it is
written for clarity at desk scale, not speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateInputError,
    DimensionLimitError,
    NonFiniteError,
    ShapeMismatchError,
    ZeroInputError,
)

# Quintic Newton-Schulz coefficients (a, b, c) for X <- aX + b(XX^T)X + c(XX^T)^2 X.
# JORDAN is tuned to push small singular values up fast; after 5 steps it leaves them
# oscillating in roughly [0.6, 1.2] instead of converging to 1.
NS_COEFFS_JORDAN = (3.4445, -4.7750, 2.0315)
# Classical quintic Newton-Schulz: fixed point 1, converges to the exact polar factor
# but needs many more steps when the input is badly conditioned.
NS_COEFFS_CLASSIC = (15.0 / 8.0, -10.0 / 8.0, 3.0 / 8.0)
NS_COEFFS = NS_COEFFS_JORDAN
NS_STEPS = 5

SVD_MAX_DIM = 512
_JACOBI_MAX_SWEEPS = 60


@dataclass(frozen=True)
class SvdResult:
    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.singular_values) @ self.V.T


def as_matrix(A, name: str = "A", dtype=None) -> np.ndarray:
    """Validate a 2D finite array and return it as an ndarray (float64 unless it is float32)."""
    A = np.asarray(A)
    if A.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2D, got shape {A.shape}")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise ShapeMismatchError(f"{name} must have positive dimensions, got {A.shape}")
    if dtype is None:
        dtype = np.float32 if A.dtype == np.float32 else np.float64
    A = A.astype(dtype, copy=False)
    if not np.all(np.isfinite(A)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return A


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: n-1 rounds (n even) of disjoint column pairs covering all pairs."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        left, right = [], []
        for k in range(size // 2):
            i, j = players[k], players[size - 1 - k]
            if i >= 0 and j >= 0:
                left.append(min(i, j))
                right.append(max(i, j))
        rounds.append((np.array(left, dtype=np.intp), np.array(right, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _complete_basis(U: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace columns of U not flagged in `keep` by unit vectors orthogonal to the rest."""
    U = U.copy()
    m = U.shape[0]
    basis = [U[:, k] for k in np.flatnonzero(keep)]
    candidates = iter(np.eye(m))
    for k in np.flatnonzero(~keep):
        while True:
            v = next(candidates).copy()
            for _ in range(2):
                for b in basis:
                    v -= (b @ v) * b
            nv = np.linalg.norm(v)
            if nv > 1e-8:
                break
        v /= nv
        U[:, k] = v
        basis.append(v)
    return U


def _jacobi_tall(A: np.ndarray) -> SvdResult:
    m, n = A.shape
    W = A.copy()
    V = np.eye(n)
    tol = max(m, n) * np.finfo(np.float64).eps
    # columns at rounding-noise level never look orthogonal; treat them as settled
    noise = (np.finfo(np.float64).eps * np.linalg.norm(A)) ** 2
    rounds = _round_robin(n)
    for _ in range(_JACOBI_MAX_SWEEPS):
        rotated = False
        for I, J in rounds:
            if I.size == 0:
                continue
            wi, wj = W[:, I], W[:, J]
            alpha = np.einsum("ij,ij->j", wi, wi)
            beta = np.einsum("ij,ij->j", wj, wj)
            gamma = np.einsum("ij,ij->j", wi, wj)
            active = (np.abs(gamma) > tol * np.sqrt(alpha * beta)) & (np.minimum(alpha, beta) > noise)
            if not active.any():
                continue
            rotated = True
            g = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * g)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.hypot(1.0, t)
            s = c * t
            c = np.where(active, c, 1.0)
            s = np.where(active, s, 0.0)
            W[:, I], W[:, J] = c * wi - s * wj, s * wi + c * wj
            vi, vj = V[:, I], V[:, J]
            V[:, I], V[:, J] = c * vi - s * vj, s * vi + c * vj
        if not rotated:
            break
    else:
        raise RuntimeError("one-sided Jacobi did not converge")

    sigma = np.linalg.norm(W, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, W, V = sigma[order], W[:, order], V[:, order]
    floor = sigma[0] * m * np.finfo(np.float64).eps if sigma[0] > 0 else 0.0
    keep = sigma > floor
    U = np.zeros_like(W)
    U[:, keep] = W[:, keep] / sigma[keep]
    if not keep.all():
        U = _complete_basis(U, keep)
    return SvdResult(U=U, singular_values=sigma, V=V)


def svd_small(A) -> SvdResult:
    """Thin SVD of a small dense matrix by one-sided (Hestenes) Jacobi rotations.

    Always computed in float64. Returns U (m x r), descending singular values and
    V (n x r) with r = min(m, n), so that ``A = U @ diag(s) @ V.T``.
    """
    A = as_matrix(A).astype(np.float64)
    m, n = A.shape
    if min(m, n) > SVD_MAX_DIM:
        raise DimensionLimitError(f"svd_small supports min(m, n) <= {SVD_MAX_DIM}, got {A.shape}")
    if m >= n:
        return _jacobi_tall(A)
    res = _jacobi_tall(A.T)
    return SvdResult(U=res.V, singular_values=res.singular_values, V=res.U)


def polar_factor_exact(A, rank_tol: float = 1e-12) -> np.ndarray:
    """Orthogonal polar factor U V^T of a full-rank matrix, via `svd_small`."""
    res = svd_small(A)
    s = res.singular_values
    if s[0] == 0.0 or s[-1] < rank_tol * s[0]:
        raise DegenerateInputError(
            f"matrix is numerically rank deficient (sigma_min/sigma_max = {s[-1] / s[0] if s[0] else 0.0:.3e})"
        )
    return res.U @ res.V.T


def newton_schulz(A, steps: int = NS_STEPS, coeffs=NS_COEFFS, eps: float = 0.0) -> np.ndarray:
    """Approximate the polar factor (matrix sign) of `A` with `steps` quintic iterations.

    The input is divided by its Frobenius norm first, so the result does not depend on
    the scale of `A`. The Gram product is always formed at the smaller dimension.
    `eps` is an optional additive floor on the norm; it defaults to 0 because any
    positive value breaks exact scale invariance.
    """
    X = as_matrix(A)
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    peak = np.max(np.abs(X))
    if peak == 0.0:
        raise ZeroInputError("Newton-Schulz input is the zero matrix")
    # divide by the max entry first so the norm neither underflows nor overflows
    X = X / peak
    transposed = X.shape[0] > X.shape[1]
    if transposed:
        X = X.T
    X = X / (np.linalg.norm(X) + eps)
    a, b, c = coeffs
    for _ in range(steps):
        gram = X @ X.T
        X = a * X + (b * gram + c * (gram @ gram)) @ X
    return X.T if transposed else X


def frobenius(A) -> float:
    return float(np.linalg.norm(A))
