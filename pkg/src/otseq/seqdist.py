"""Distances between segment sequences.

``cmot_distance`` transports one sequence onto the other over the fused
semantic + positional cost.  ``agg_distance`` (mean pooling) and
``dtw_distance`` (monotone alignment) are the two baselines it is compared
against; ``dtw_exhaustive`` is a brute-force check of the DTW recursion.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .costs import (
    CostError,
    FusionConfig,
    PositionalConfig,
    as_sequence,
    fused_cost,
    positional_cost,
    semantic_cost,
)
from .ot_core import (
    SinkhornConfig,
    SinkhornOverflowError,
    SinkhornResult,
    check_marginal,
    entropy,
    sinkhorn_solve,
    uniform_marginal,
)

log = logging.getLogger(__name__)

DEFAULT_LAMBDA_MULTIPLIER = 7.0
_MAX_EXHAUSTIVE = 6


@dataclass(frozen=True)
class DistanceConfig:
    """Everything ``cmot_distance`` needs besides the two sequences.

    ``lam=None`` selects the median heuristic ``lambda_multiplier / median(C)``
    on the fused matrix of each pair; ``sinkhorn.lam`` is then ignored.
    Marginals default to uniform over each sequence's segments.
    """

    fusion: FusionConfig = field(default_factory=FusionConfig)
    positional: PositionalConfig = field(default_factory=PositionalConfig)
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    lam: float | None = None
    lambda_multiplier: float = DEFAULT_LAMBDA_MULTIPLIER
    marginal_a: np.ndarray | None = None
    marginal_b: np.ndarray | None = None

    def __post_init__(self):
        if self.lam is not None and not self.lam > 0:
            raise ValueError(f"lam must be positive or None, got {self.lam}")
        if not self.lambda_multiplier > 0:
            raise ValueError("lambda_multiplier must be positive")

    @property
    def lambda_label(self) -> str:
        if self.lam is None:
            return f"auto({self.lambda_multiplier:g}/med)"
        return f"{self.lam:g}"


@dataclass(frozen=True)
class CmotSolution:
    result: SinkhornResult
    semantic: np.ndarray
    positional: np.ndarray
    cost: np.ndarray
    # multiplier of the median heuristic, or None when lambda was fixed
    lambda_multiplier: float | None = None

    @property
    def value(self) -> float:
        return self.result.value

    @property
    def plan(self) -> np.ndarray:
        return self.result.plan

    def cost_gradient(self) -> np.ndarray:
        """dValue/dC including the dependence of an automatic lambda on C.

        With lambda fixed this is the plan.  Under the median heuristic the
        value also moves through lambda: dValue/dlambda = H(T)/lambda**2.
        """
        T = self.result.plan
        if self.lambda_multiplier is None:
            return T.copy()
        lam = self.result.lam
        dlam = median_lambda_gradient(self.cost, self.lambda_multiplier)
        return T + entropy(T) / lam**2 * dlam


def median_lambda(cost, multiplier: float = DEFAULT_LAMBDA_MULTIPLIER) -> float:
    """``multiplier / median(cost)``, falling back to the mean, then to 1.

    The fallbacks only matter for (near) all-zero cost matrices, where any
    lambda gives the same plan.
    """
    C = np.asarray(cost, dtype=float)
    scale = float(np.median(C))
    if scale <= 1e-12:
        scale = float(C.mean())
    if scale <= 1e-12:
        scale = 1.0
    return multiplier / scale


def median_lambda_gradient(cost, multiplier: float = DEFAULT_LAMBDA_MULTIPLIER) -> np.ndarray:
    """Gradient of ``median_lambda`` with respect to the cost entries.

    The median is piecewise linear in the entries; at ties the entries picked
    by a stable sort carry the weight.
    """
    C = np.asarray(cost, dtype=float)
    flat = C.ravel()
    n = flat.size
    dscale = np.zeros(n)
    scale = float(np.median(C))
    if scale > 1e-12:
        order = np.argsort(flat, kind="stable")
        if n % 2:
            dscale[order[n // 2]] = 1.0
        else:
            dscale[order[n // 2 - 1]] = dscale[order[n // 2]] = 0.5
    else:
        scale = float(C.mean())
        if scale > 1e-12:
            dscale[:] = 1.0 / n
        else:
            return np.zeros_like(C)
    return (-multiplier / scale**2 * dscale).reshape(C.shape)


def _marginal(weights, m: int, name: str) -> np.ndarray:
    if weights is None:
        return uniform_marginal(m)
    w = check_marginal(weights, name)
    if w.size != m:
        raise CostError(f"{name} has length {w.size} but the sequence has {m} segments")
    return w


def resolve_lambda(cost, cfg: DistanceConfig) -> float:
    return cfg.lam if cfg.lam is not None else median_lambda(cost, cfg.lambda_multiplier)


def solve_cost(cost, mu, nu, lam: float, sinkhorn: SinkhornConfig) -> SinkhornResult:
    """Sinkhorn solve that retries in the log domain on plain-domain overflow."""
    scfg = replace(sinkhorn, lam=lam)
    try:
        return sinkhorn_solve(cost, mu, nu, scfg)
    except SinkhornOverflowError:
        log.debug("plain-domain Sinkhorn overflowed at lambda=%g; retrying in log domain", lam)
        return sinkhorn_solve(cost, mu, nu, replace(scfg, log_domain=True))


def cmot_solve(a, b, cfg: DistanceConfig | None = None) -> CmotSolution:
    cfg = cfg or DistanceConfig()
    a, b = as_sequence(a), as_sequence(b)
    se = semantic_cost(a, b)
    po = positional_cost(a.shape[0], b.shape[0], cfg.positional, embedding_dim=a.shape[1])
    C = fused_cost(se, po, cfg.fusion)
    mu = _marginal(cfg.marginal_a, a.shape[0], "marginal_a")
    nu = _marginal(cfg.marginal_b, b.shape[0], "marginal_b")
    result = solve_cost(C, mu, nu, resolve_lambda(C, cfg), cfg.sinkhorn)
    auto = cfg.lambda_multiplier if cfg.lam is None else None
    return CmotSolution(result=result, semantic=se, positional=po, cost=C, lambda_multiplier=auto)


def cmot_distance(a, b, cfg: DistanceConfig | None = None) -> tuple[float, np.ndarray]:
    """Entropic OT value over ``C_se + alpha * C_po`` and its transport plan."""
    sol = cmot_solve(a, b, cfg)
    return sol.value, sol.plan


def agg_distance(a, b) -> float:
    """Euclidean distance between the mean-pooled sequences."""
    a, b = as_sequence(a), as_sequence(b)
    if a.shape[1] != b.shape[1]:
        raise CostError(f"embedding dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    return float(np.linalg.norm(_pooled(a) - _pooled(b)))


def _pooled(x: np.ndarray) -> np.ndarray:
    # correctly rounded column sums, so pooling is exactly order-invariant
    return np.array([math.fsum(col) for col in x.T]) / x.shape[0]


def dtw_distance(a, b) -> tuple[float, list[tuple[int, int]]]:
    """Classic DTW over the semantic cost with steps (1,0), (0,1), (1,1).

    Returns the accumulated cost of the optimal boundary-to-boundary path and
    the path itself as 0-based ``(i, j)`` pairs.  On ties the traceback prefers
    the diagonal step, then advancing along the first sequence.
    """
    C = semantic_cost(a, b)
    n, m = C.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = C[i - 1, j - 1] + min(acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])

    path = [(n - 1, m - 1)]
    i, j = n, m
    while (i, j) != (1, 1):
        # candidate predecessors in tie-break order: diagonal, row advance, column advance
        steps = ((i - 1, j - 1), (i - 1, j), (i, j - 1))
        i, j = min(steps, key=lambda s: acc[s])
        path.append((i - 1, j - 1))
    path.reverse()
    return float(acc[n, m]), path


def dtw_exhaustive(a, b) -> float:
    """Minimum DTW cost by enumerating every monotone path (M1, M2 <= 6)."""
    C = semantic_cost(a, b)
    n, m = C.shape
    if n > _MAX_EXHAUSTIVE or m > _MAX_EXHAUSTIVE:
        raise CostError(f"dtw_exhaustive is limited to {_MAX_EXHAUSTIVE} segments per sequence")

    best = math.inf

    def walk(i, j, total):
        nonlocal best
        total += C[i, j]
        if (i, j) == (n - 1, m - 1):
            best = min(best, total)
            return
        if i + 1 < n:
            walk(i + 1, j, total)
        if j + 1 < m:
            walk(i, j + 1, total)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, total)

    walk(0, 0, 0.0)
    return float(best)


METRICS = ("cmot", "agg", "dtw")


def make_metric(name: str, cfg: DistanceConfig | None = None):
    """Scalar distance ``f(a, b)`` for one of ``METRICS``."""
    if name == "cmot":
        cfg = cfg or DistanceConfig()
        return lambda a, b: cmot_solve(a, b, cfg).value
    if name == "agg":
        return agg_distance
    if name == "dtw":
        return lambda a, b: dtw_distance(a, b)[0]
    raise ValueError(f"unknown metric {name!r}; expected one of {METRICS}")
