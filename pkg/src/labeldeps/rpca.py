"""Sparse + rank-deficient decomposition of an inverse covariance.

Solves, by alternating proximal gradient steps,

    minimize  0.5*tr((S-L) Sigma (S-L)) - tr(S-L)
              + lambda_n * (gamma*||S||_1 + ||L||_*)
    subject to  S - L  >=  pd_floor * I,   L PSD.

The smooth part is stationary at S - L = Sigma^{-1}, so the solution splits
the inverse covariance into a sparse part ``S`` (conditional dependencies)
and a PSD low-rank part ``L`` (the effect of marginalized latent variables).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .covariance import CovarianceMatrix, _matrix, spectral_norm
from .errors import DivergenceError, NumericalError, ValidationError

_STEP_RULES = ("backtracking", "fixed")


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the decomposition solver.

    ``step_size`` is the fixed step for the "fixed" rule and the initial step
    for "backtracking"; ``None`` means ``1/||Sigma||``.  ``tol`` bounds the
    KKT residual at which iteration stops.
    """

    lambda_n: float
    gamma: float
    max_iters: int = 5000
    tol: float = 1e-7
    step_rule: str = "backtracking"
    step_size: float | None = None
    backtrack_factor: float = 0.5
    pd_floor: float = 1e-6

    def __post_init__(self):
        if self.lambda_n <= 0 or self.gamma <= 0 or self.tol <= 0 or self.pd_floor <= 0:
            raise ValidationError("lambda_n, gamma, tol and pd_floor must all be positive")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if self.step_rule not in _STEP_RULES:
            raise ValidationError(f"step_rule must be one of {_STEP_RULES}")
        if not (0.0 < self.backtrack_factor < 1.0):
            raise ValidationError("backtrack_factor must lie in (0, 1)")
        if self.step_size is not None and self.step_size <= 0:
            raise ValidationError("step_size must be positive when given")
        if self.step_rule == "fixed" and self.step_size is None:
            raise ValidationError("the fixed step rule requires an explicit step_size")


@dataclass
class DecompositionResult:
    """Solver output: the two estimated components plus a convergence trace."""

    S_hat: np.ndarray
    L_hat: np.ndarray
    objective_trace: list[float]
    iterations: int
    converged: bool
    final_kkt_residual: float


def loss(S, L, sigma) -> float:
    """Quadratic fit term 0.5*tr(M Sigma M) - tr(M) with M = S - L."""
    sig = _matrix(sigma)
    M = np.asarray(S, dtype=np.float64) - np.asarray(L, dtype=np.float64)
    if M.shape != sig.shape:
        raise ValidationError(f"shape mismatch: iterate {M.shape} vs covariance {sig.shape}")
    return float(0.5 * np.trace(M @ sig @ M) - np.trace(M))


def loss_gradient(M, sigma) -> np.ndarray:
    """Gradient of the fit term in M: 0.5*(Sigma M + M Sigma) - I."""
    sig = _matrix(sigma)
    M = np.asarray(M, dtype=np.float64)
    if M.shape != sig.shape:
        raise ValidationError(f"shape mismatch: iterate {M.shape} vs covariance {sig.shape}")
    return 0.5 * (sig @ M + M @ sig) - np.eye(sig.shape[0])


def prox_l1(X, t: float) -> np.ndarray:
    """Entrywise soft threshold by t, diagonal included."""
    if t < 0:
        raise ValidationError(f"prox threshold must be >= 0, got {t}")
    X = np.asarray(X, dtype=np.float64)
    return np.sign(X) * np.maximum(np.abs(X) - t, 0.0)


def prox_nuclear_psd(X, t: float) -> np.ndarray:
    """Shrink eigenvalues by t and clip at zero.

    For symmetric input this is simultaneously the proximal map of
    ``t*||.||_*`` and the projection onto the PSD cone.
    """
    if t < 0:
        raise ValidationError(f"prox threshold must be >= 0, got {t}")
    X = np.asarray(X, dtype=np.float64)
    X = (X + X.T) / 2.0
    w, q = np.linalg.eigh(X)
    w = np.maximum(w - t, 0.0)
    out = (q * w) @ q.T
    return (out + out.T) / 2.0


def _objective(S, L, sigma, config) -> float:
    nuc = float(np.abs(np.linalg.eigvalsh((L + L.T) / 2.0)).sum())
    return (
        loss(S, L, sigma)
        + config.lambda_n * (config.gamma * float(np.abs(S).sum()) + nuc)
    )


def kkt_residual(S, L, sigma, config: SolverConfig) -> float:
    """Distance of (S, L) from first-order optimality, ignoring the PD floor.

    The S part is the entrywise distance of the negative fit gradient from the
    subdifferential of the scaled l1 penalty; the L part checks, in spectral
    terms, that the fit gradient sits in the scaled trace-penalty-plus-cone
    subdifferential at L (shifted identity, negative semidefinite remainder,
    complementary with L's range).  Zero at any optimum with the floor slack.
    """
    sig = _matrix(sigma)
    S = np.asarray(S, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    if S.shape != sig.shape or L.shape != sig.shape:
        raise ValidationError("S, L and Sigma must share one square shape")
    g = loss_gradient(S - L, sig)
    lam, gam = config.lambda_n, config.gamma

    nonzero = S != 0.0
    res_nonzero = np.abs(g + lam * gam * np.sign(S))[nonzero]
    res_zero = np.maximum(np.abs(g[~nonzero]) - lam * gam, 0.0)
    res_s = max(res_nonzero.max() if res_nonzero.size else 0.0,
                res_zero.max() if res_zero.size else 0.0)

    v = (g + g.T) / 2.0 - lam * np.eye(sig.shape[0])
    w, q = np.linalg.eigh((L + L.T) / 2.0)
    res_cone = max(float(np.linalg.eigvalsh(v).max()), 0.0)
    active = w > max(w.max(), 0.0) * 1e-9 + 1e-15
    if active.any():
        res_compl = float(np.linalg.norm(v @ q[:, active], 2))
    else:
        res_compl = 0.0
    return float(max(res_s, res_cone, res_compl))


def _pd_floor_fix(S, L, floor: float) -> np.ndarray:
    """Return S corrected so that S - L has eigenvalues >= floor."""
    M = S - L
    w, q = np.linalg.eigh((M + M.T) / 2.0)
    if w.min() >= floor:
        return S
    fixed = (q * np.maximum(w, floor)) @ q.T
    fixed = (fixed + fixed.T) / 2.0
    return S + (fixed - M)


def solve(sigma, config: SolverConfig) -> DecompositionResult:
    """Run the alternating proximal gradient iteration to convergence.

    Each iteration takes one gradient step of the fit term in M = S - L,
    applies the l1 prox to S and the nuclear/PSD prox to L, then restores the
    floor ``S - L >= pd_floor*I`` by eigenvalue clipping charged to S.  Stops
    when the KKT residual drops below ``config.tol`` or iterations run out.
    """
    sig = _matrix(sigma)
    if not np.isfinite(sig).all():
        raise ValidationError("covariance entries must be finite")
    if np.abs(sig - sig.T).max() > 1e-10:
        raise ValidationError("covariance must be symmetric")
    m = sig.shape[0]
    lam, gam = config.lambda_n, config.gamma

    diag = np.clip(np.diag(sig), 1e-12, None)
    S = np.diag(1.0 / diag + config.pd_floor)
    L = np.zeros((m, m))
    S = _pd_floor_fix(S, L, config.pd_floor)

    norm_sig = spectral_norm(sig)
    eta0 = config.step_size if config.step_size is not None else 1.0 / max(norm_sig, 1e-12)

    obj = _objective(S, L, sig, config)
    trace = [obj]
    increases = 0
    converged = False
    stalled = False
    residual = np.inf
    iterations = 0

    for iterations in range(1, config.max_iters + 1):
        g = loss_gradient(S - L, sig)
        if config.step_rule == "fixed":
            eta = eta0
            S_new = prox_l1(S - eta * g, eta * lam * gam)
            L_new = prox_nuclear_psd(L + eta * g, eta * lam)
            S_new = _pd_floor_fix(S_new, L_new, config.pd_floor)
            obj_new = _objective(S_new, L_new, sig, config)
            if obj_new > obj + 1e-9:
                increases += 1
                if increases >= 10:
                    raise DivergenceError(
                        "objective increased for 10 consecutive iterations; "
                        f"reduce the step size (currently {eta:.3e})"
                    )
            else:
                increases = 0
        else:
            eta = eta0
            while True:
                S_new = prox_l1(S - eta * g, eta * lam * gam)
                L_new = prox_nuclear_psd(L + eta * g, eta * lam)
                S_new = _pd_floor_fix(S_new, L_new, config.pd_floor)
                obj_new = _objective(S_new, L_new, sig, config)
                if obj_new <= obj + 1e-12:
                    break
                eta *= config.backtrack_factor
                if eta < eta0 * 1e-16:
                    S_new, L_new, obj_new = S, L, obj
                    stalled = True
                    break
        if not (np.isfinite(obj_new) and np.isfinite(S_new).all() and np.isfinite(L_new).all()):
            raise NumericalError(f"iterate became non-finite at iteration {iterations}")
        S, L, obj = S_new, L_new, obj_new
        trace.append(obj)
        residual = kkt_residual(S, L, sig, config)
        if residual < config.tol:
            converged = True
            break
        if stalled:
            break

    return DecompositionResult(
        S_hat=S,
        L_hat=L,
        objective_trace=trace,
        iterations=iterations,
        converged=converged,
        final_kkt_residual=float(residual),
    )
