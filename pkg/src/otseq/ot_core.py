"""Entropy-regularized optimal transport between discrete marginals.

The solver alternates row and column scalings of the Gibbs kernel
``G = exp(-lam * C)`` until the marginal residual of the induced plan drops
below tolerance.  A log-sum-exp variant computes the same fixed point when the
kernel would underflow.  Instances where scaling stalls (nearly degenerate
plans at large ``lam * C``) are finished with Newton steps on the dual
potentials, which share the Sinkhorn fixed point but converge quadratically.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

# exp(-x) falls below 1e-300 once x exceeds this
_UNDERFLOW_EXPONENT = -math.log(1e-300)
_MAX_EXACT_SIZE = 8
_NEWTON_PATIENCE = 10


class SinkhornError(ValueError):
    """Invalid input to the Sinkhorn solver."""


class SinkhornOverflowError(ArithmeticError):
    """Non-finite scalings in the plain-domain iteration; retry in log domain."""


@dataclass(frozen=True)
class SinkhornConfig:
    lam: float = 1.0
    max_iterations: int = 10_000
    residual_tolerance: float = 1e-9
    log_domain: bool = False
    # switch to Newton on the dual after this many scaling sweeps; None = never
    newton_after: int | None = 100

    def __post_init__(self):
        if not self.lam > 0 or not math.isfinite(self.lam):
            raise SinkhornError(f"lambda must be positive and finite, got {self.lam}")
        if not self.residual_tolerance > 0:
            raise SinkhornError("residual_tolerance must be positive")
        if self.max_iterations < 1:
            raise SinkhornError("max_iterations must be >= 1")
        if self.newton_after is not None and self.newton_after < 1:
            raise SinkhornError("newton_after must be >= 1 or None")


@dataclass(frozen=True)
class SinkhornResult:
    plan: np.ndarray
    value: float
    linear_cost: float
    iterations_used: int
    final_residual: float
    scaling_u: np.ndarray
    scaling_v: np.ndarray
    lam: float
    residual_tolerance: float
    log_domain: bool = False

    @property
    def converged(self) -> bool:
        return self.final_residual <= self.residual_tolerance


def uniform_marginal(m: int) -> np.ndarray:
    """Uniform probability vector of length ``m``."""
    if m < 1:
        raise SinkhornError("marginal length must be >= 1")
    return np.full(m, 1.0 / m)


def check_marginal(weights, name: str = "marginal") -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise SinkhornError(f"{name} must be a non-empty vector")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise SinkhornError(f"{name} must be finite and nonnegative")
    if abs(w.sum() - 1.0) > 1e-12:
        raise SinkhornError(f"{name} must sum to 1 (got {w.sum():.17g})")
    return w


def _check_inputs(cost, mu, nu):
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2:
        raise SinkhornError("cost must be a 2-d matrix")
    if not np.all(np.isfinite(C)) or np.any(C < 0):
        raise SinkhornError("cost entries must be finite and nonnegative")
    mu = check_marginal(mu, "mu")
    nu = check_marginal(nu, "nu")
    if C.shape != (mu.size, nu.size):
        raise SinkhornError(
            f"cost shape {C.shape} does not match marginals ({mu.size}, {nu.size})"
        )
    if np.any(mu == 0) or np.any(nu == 0):
        raise SinkhornError("marginal entries must be strictly positive")
    return C, mu, nu


def entropy(plan) -> float:
    """Shannon entropy ``-sum T log T`` with ``0 log 0 = 0``."""
    T = np.asarray(plan, dtype=float)
    if np.any(T < 0):
        raise SinkhornError("plan has negative entries")
    nz = T[T > 0]
    return float(-np.sum(nz * np.log(nz)))


def _residual(T, mu, nu) -> float:
    return max(
        float(np.abs(T.sum(axis=1) - mu).sum()),
        float(np.abs(T.sum(axis=0) - nu).sum()),
    )


def _sweep_limit(cfg) -> int:
    if cfg.newton_after is None:
        return cfg.max_iterations
    return min(cfg.newton_after, cfg.max_iterations)


def _dual(K, f, g, mu, nu):
    T = np.exp(K + f[:, None] + g[None, :])
    return T, float(f @ mu + g @ nu - T.sum())


def _newton(C, mu, nu, f, g, it, cfg):
    """Damped Newton ascent on the dual ``<f,mu> + <g,nu> - sum exp(f+g-lam C)``.

    The Hessian is singular along ``(1, -1)``; ``lstsq`` returns the
    minimum-norm step, which leaves that direction alone.
    """
    K = -cfg.lam * C
    m1 = mu.size
    T, obj = _dual(K, f, g, mu, nu)
    residual = _residual(T, mu, nu)
    best, stale = residual, 0
    # stop at the floating-point floor instead of spinning to max_iterations
    while residual > cfg.residual_tolerance and it < cfg.max_iterations and stale < _NEWTON_PATIENCE:
        it += 1
        rows, cols = T.sum(axis=1), T.sum(axis=0)
        grad = np.concatenate([mu - rows, nu - cols])
        J = np.block([[np.diag(rows), T], [T.T, np.diag(cols)]])
        step = np.linalg.lstsq(J, grad, rcond=None)[0]
        slope = float(grad @ step)
        t = 1.0
        for _ in range(40):
            fn, gn = f + t * step[:m1], g + t * step[m1:]
            Tn, objn = _dual(K, fn, gn, mu, nu)
            if np.isfinite(objn) and objn >= obj + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            # no ascent along the Newton direction; take one scaling sweep instead
            fn = np.log(mu) - logsumexp(K + g[None, :], axis=1)
            gn = np.log(nu) - logsumexp(K + fn[:, None], axis=0)
            Tn, objn = _dual(K, fn, gn, mu, nu)
        f, g, T, obj = fn, gn, Tn, objn
        residual = _residual(T, mu, nu)
        if residual < best:
            best, stale = residual, 0
        else:
            stale += 1
    return T, f, g, it, residual


def _solve_plain(C, mu, nu, cfg):
    # After each v-update the column sums are exact, so the marginal residual
    # is the row violation, read off the next G @ v product for free.
    G = np.exp(-cfg.lam * C)
    residual = math.inf
    it = 1
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        u = mu / G.sum(axis=1)
        v = nu / (G.T @ u)
        while True:
            Gv = G @ v
            residual = float(np.abs(u * Gv - mu).sum())
            if not math.isfinite(residual):
                raise SinkhornOverflowError(
                    f"non-finite scaling at iteration {it}; lambda={cfg.lam} "
                    "is too large for plain-domain Sinkhorn"
                )
            if residual <= cfg.residual_tolerance or it >= _sweep_limit(cfg):
                break
            it += 1
            u = mu / Gv
            v = nu / (G.T @ u)
    T = u[:, None] * G * v[None, :]
    with np.errstate(divide="ignore"):
        return T, np.log(u), np.log(v), it, _residual(T, mu, nu)


def _solve_log(C, mu, nu, cfg):
    K = -cfg.lam * C
    log_mu = np.log(mu)
    log_nu = np.log(nu)
    f = np.zeros_like(mu)
    g = np.zeros_like(nu)
    T = np.exp(K)
    residual = math.inf
    it = 0
    while it < _sweep_limit(cfg):
        it += 1
        f = log_mu - logsumexp(K + g[None, :], axis=1)
        g = log_nu - logsumexp(K + f[:, None], axis=0)
        T = np.exp(K + f[:, None] + g[None, :])
        residual = _residual(T, mu, nu)
        if residual <= cfg.residual_tolerance:
            break
    return T, f, g, it, residual


def sinkhorn_solve(cost, mu, nu, cfg: SinkhornConfig | None = None) -> SinkhornResult:
    """Solve ``min <T, C> - H(T)/lam`` over plans with marginals ``mu``, ``nu``.

    Plain-domain scaling is used unless ``cfg.log_domain`` is set or the
    kernel ``exp(-lam*C)`` underflows below 1e-300 somewhere, in which case
    the log-domain iteration is selected automatically.

    Non-convergence is not an error: inspect ``iterations_used`` and
    ``final_residual`` (or ``converged``) on the result.
    """
    cfg = cfg or SinkhornConfig()
    C, mu, nu = _check_inputs(cost, mu, nu)
    use_log = cfg.log_domain or cfg.lam * float(C.max()) > _UNDERFLOW_EXPONENT
    solver = _solve_log if use_log else _solve_plain
    T, f, g, it, residual = solver(C, mu, nu, cfg)
    stalled = residual > cfg.residual_tolerance and it < cfg.max_iterations
    if stalled and np.all(np.isfinite(f)) and np.all(np.isfinite(g)):
        T, f, g, it, residual = _newton(C, mu, nu, f, g, it, cfg)
    # u, v overflow for large lambda * C; the plan itself is always finite
    with np.errstate(over="ignore"):
        u, v = np.exp(f), np.exp(g)
    linear = float(np.sum(T * C))
    value = linear - entropy(T) / cfg.lam
    return SinkhornResult(
        plan=T,
        value=value,
        linear_cost=linear,
        iterations_used=it,
        final_residual=residual,
        scaling_u=u,
        scaling_v=v,
        lam=cfg.lam,
        residual_tolerance=cfg.residual_tolerance,
        log_domain=use_log,
    )


def sinkhorn_distance(cost, mu, nu, cfg: SinkhornConfig | None = None) -> float:
    return sinkhorn_solve(cost, mu, nu, cfg).value


def value_gradient_wrt_cost(result: SinkhornResult) -> np.ndarray:
    """Gradient of the entropic OT value with respect to the cost matrix.

    The feasible set does not depend on ``C`` and the objective is linear in
    ``C`` at a fixed plan, so the gradient is the optimal plan itself.
    """
    if not np.all(np.isfinite(result.plan)):
        raise SinkhornError("result plan is not finite")
    return result.plan.copy()


def exact_ot_uniform(cost) -> tuple[float, tuple[int, ...]]:
    """Exact OT cost between uniform marginals on a square matrix.

    Enumerates permutations (the vertices of the uniform polytope, scaled by
    1/M), so it is limited to M <= 8.  Ties go to the lexicographically
    smallest permutation.
    """
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise SinkhornError("exact_ot_uniform needs a square cost matrix")
    m = C.shape[0]
    if m > _MAX_EXACT_SIZE:
        raise SinkhornError(f"M={m} exceeds the enumeration limit of {_MAX_EXACT_SIZE}")
    rows = range(m)
    best, best_perm = math.inf, None
    for perm in itertools.permutations(rows):
        total = sum(C[i, perm[i]] for i in rows)
        if total < best:
            best, best_perm = total, perm
    return best / m, best_perm
