"""Sparse direct solves and a damped Newton driver.

Systems stay desk-scale (a few times 1e4 unknowns), so a direct LU with
partial pivoting beats any iterative setup here.  The Newton driver takes
full steps by default and falls back to a halving line search when the
residual norm increases; residual evaluations may signal "retry with a
shorter step" by raising a designated exception type, which handles
positivity-constrained nonlinearities that overshoot.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

#: relative residual bound guaranteed (and enforced) by lu_solve
LU_RESIDUAL_BOUND = 1e-10


class FactorizationError(RuntimeError):
    """Factorization failed or produced an unusable solution."""

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class NonconvergenceError(RuntimeError):
    """Newton exhausted its iteration budget."""

    def __init__(self, message: str, residual_norm: float, iterations: int):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterations = iterations


@dataclass(frozen=True)
class NewtonSettings:
    """Absolute residual tolerance in the Euclidean norm of the residual vector."""

    tol: float = 1e-12
    max_iter: int = 30
    damping: bool = True
    max_halvings: int = 8

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("Newton tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("Newton needs at least one iteration")


@dataclass(frozen=True)
class NewtonResult:
    x: np.ndarray
    iterations: int
    residual_norm: float
    residual: np.ndarray


def lu_solve(A, b: np.ndarray) -> np.ndarray:
    """Solve A x = b by sparse LU with partial pivoting.

    Guarantees ||A x - b|| / max(1, ||b||) <= 1e-10 or raises
    FactorizationError (also for exactly singular matrices).
    """
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got shape {A.shape}")
    if A.shape[0] != b.shape[0]:
        raise ValueError("dimension mismatch between matrix and right-hand side")
    try:
        factor = splu(A)
    except RuntimeError as exc:  # SuperLU signals singularity this way
        match = re.search(r"\d+", str(exc))
        pivot = int(match.group()) if match else None
        raise FactorizationError(f"sparse LU failed: {exc}", pivot=pivot) from exc
    x = factor.solve(b)
    if not np.all(np.isfinite(x)):
        raise FactorizationError("sparse LU produced non-finite values")
    resid = np.linalg.norm(A @ x - b) / max(1.0, np.linalg.norm(b))
    if resid > LU_RESIDUAL_BOUND:
        raise FactorizationError(
            f"solution rejected: relative residual {resid:.3e} exceeds "
            f"{LU_RESIDUAL_BOUND:.0e} (matrix numerically singular?)")
    return x


def newton(residual, jacobian, x0: np.ndarray, settings: NewtonSettings,
           retryable: tuple = ()) -> NewtonResult:
    """Damped Newton iteration on residual(x) = 0.

    ``retryable`` lists exception types that a residual evaluation may
    raise to reject a trial point; the line search then shortens the step.
    Raises NonconvergenceError when the tolerance is not met within
    ``settings.max_iter`` iterations and propagates factorization failures.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = np.asarray(residual(x), dtype=float)
    rnorm = float(np.linalg.norm(r))
    for it in range(1, settings.max_iter + 1):
        if rnorm <= settings.tol:
            return NewtonResult(x=x, iterations=it - 1, residual_norm=rnorm,
                                residual=r)
        dx = lu_solve(jacobian(x), -r)
        scale = 1.0
        accepted = None
        for halving in range(settings.max_halvings + 1):
            trial = x + scale * dx
            try:
                r_trial = np.asarray(residual(trial), dtype=float)
            except retryable:
                if halving == settings.max_halvings:
                    raise
                scale *= 0.5
                continue
            rnorm_trial = float(np.linalg.norm(r_trial))
            if (settings.damping and rnorm_trial > rnorm
                    and halving < settings.max_halvings):
                scale *= 0.5
                continue
            accepted = (trial, r_trial, rnorm_trial)
            break
        x, r, rnorm = accepted
    if rnorm <= settings.tol:
        return NewtonResult(x=x, iterations=settings.max_iter,
                            residual_norm=rnorm, residual=r)
    raise NonconvergenceError(
        f"Newton did not reach tolerance {settings.tol:.3e} within "
        f"{settings.max_iter} iterations (residual norm {rnorm:.3e})",
        residual_norm=rnorm, iterations=settings.max_iter)
