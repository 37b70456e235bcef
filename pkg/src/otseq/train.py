"""Episodic training of a linear segment embedding through the OT distance.

The loss is the episode cross-entropy over class-mean CMOT distances.  Its
gradient is chained by hand:

    dL/dDIS (softmax closed form) -> dDIS/dC = T* -> dC_se/dphi -> dphi/d(W, b)

The transport plan ``T*`` is the gradient of the entropic OT value with respect
to the cost matrix, so the Sinkhorn iterations are never unrolled.  The
positional cost does not depend on the embedding and contributes nothing.
When lambda comes from the per-pair median heuristic, its own dependence on
the cost adds a rank-one correction (see ``CmotSolution.cost_gradient``).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .costs import CostError, as_sequence
from .fewshot import Episode, predict_proba, query_loss
from .seqdist import DistanceConfig, cmot_solve

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class LinearEmbedding:
    weight: np.ndarray  # (D_out, D_in)
    bias: np.ndarray  # (D_out,)

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=float)
        b = np.asarray(self.bias, dtype=float)
        if w.ndim != 2 or w.shape[0] < 1 or b.shape != (w.shape[0],):
            raise ValueError(f"bad embedding shapes: weight {w.shape}, bias {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("embedding parameters must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @classmethod
    def identity(cls, dim: int) -> "LinearEmbedding":
        return cls(np.eye(dim), np.zeros(dim))

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weight.ravel(), self.bias])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    decay_factor: float = 0.2
    decay_every: int = 2000
    total_episodes: int = 2000
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")
        if self.decay_every < 1 or self.total_episodes < 1:
            raise ValueError("decay_every and total_episodes must be >= 1")

    def rate_at(self, episode_index: int) -> float:
        return self.learning_rate * self.decay_factor ** (episode_index // self.decay_every)


def embed(raw, emb: LinearEmbedding) -> np.ndarray:
    x = as_sequence(raw)
    if x.shape[1] != emb.d_in:
        raise CostError(f"raw dimension {x.shape[1]} does not match embedding input {emb.d_in}")
    return x @ emb.weight.T + emb.bias


def embed_episode(episode: Episode, emb: LinearEmbedding) -> Episode:
    """Same episode with every sequence passed through ``emb``."""
    return Episode(
        support=[(embed(x, emb), y) for x, y in episode.support],
        query=[(embed(x, emb), y) for x, y in episode.query],
        n_way=episode.n_way,
        k_shot=episode.k_shot,
        q_per_class=episode.q_per_class,
    )


def _pair_gradients(phi_a, phi_b, weight, scale):
    """Gradients of ``scale * <G, C_se(phi_a, phi_b)>`` for fixed ``G``, w.r.t. both sequences."""
    diff = phi_a[:, None, :] - phi_b[None, :, :]
    norm = np.linalg.norm(diff, axis=2)
    zero = norm == 0
    if np.any(zero & (weight != 0)):
        log.debug("zero semantic distance on %d matched pairs; using subgradient 0", int(zero.sum()))
    coef = scale * np.divide(weight, norm, out=np.zeros_like(norm), where=~zero)
    contrib = coef[:, :, None] * diff
    return contrib.sum(axis=1), -contrib.sum(axis=0)


def loss_gradient(episode: Episode, emb: LinearEmbedding,
                  cfg: DistanceConfig | None = None) -> tuple[float, LinearEmbedding]:
    """Episode cross-entropy and its gradient with respect to ``(W, b)``.

    ``episode`` holds raw (un-embedded) sequences.  The gradient is returned
    as a ``LinearEmbedding`` whose fields are dL/dW and dL/db.
    """
    cfg = cfg or DistanceConfig()
    classes = episode.classes
    index = {y: n for n, y in enumerate(classes)}
    raw_s = [x for x, _ in episode.support]
    raw_q = [x for x, _ in episode.query]
    phi_s = [embed(x, emb) for x in raw_s]
    phi_q = [embed(x, emb) for x in raw_q]
    grad_s = [np.zeros_like(p) for p in phi_s]
    grad_q = [np.zeros_like(p) for p in phi_q]
    support_class = [index[y] for _, y in episode.support]
    k = np.bincount(support_class, minlength=len(classes)).astype(float)

    total = 0.0
    for j, (_, y) in enumerate(episode.query):
        sols = [cmot_solve(phi_s[i], phi_q[j], cfg) for i in range(len(phi_s))]
        dis = np.zeros(len(classes))
        for i, sol in enumerate(sols):
            dis[support_class[i]] += sol.value
        dis /= k
        total += query_loss(dis, index[y])
        # dL/dDIS_n = 1[n == y] - p_n
        upstream = -predict_proba(dis)
        upstream[index[y]] += 1.0
        for i, sol in enumerate(sols):
            n = support_class[i]
            gs, gq = _pair_gradients(phi_s[i], phi_q[j], sol.cost_gradient(), upstream[n] / k[n])
            grad_s[i] += gs
            grad_q[j] += gq

    gw = np.zeros_like(emb.weight)
    gb = np.zeros_like(emb.bias)
    for g, x in zip(grad_s + grad_q, raw_s + raw_q):
        gw += g.T @ x
        gb += g.sum(axis=0)
    return total, LinearEmbedding(gw, gb)


def train_loop(
    generator: Callable[[np.random.Generator], Episode],
    emb: LinearEmbedding,
    tcfg: TrainConfig,
    dcfg: DistanceConfig | None = None,
) -> tuple[LinearEmbedding, list[float]]:
    """Plain SGD over ``tcfg.total_episodes`` episodes drawn from ``generator``.

    ``generator`` receives the loop's seeded ``numpy.random.Generator`` and
    returns one episode of raw sequences.  Training aborts with
    ``TrainingDivergedError`` once the loss stays above ten times its initial
    value for 100 consecutive episodes.
    """
    rng = np.random.default_rng(tcfg.rng_seed)
    w, b = emb.weight.copy(), emb.bias.copy()
    history: list[float] = []
    above = 0
    for t in range(tcfg.total_episodes):
        episode = generator(rng)
        loss, grad = loss_gradient(episode, LinearEmbedding(w, b), dcfg)
        history.append(loss)
        if loss > 10 * history[0]:
            above += 1
            if above >= 100:
                raise TrainingDivergedError(f"loss diverged at episode {t}", history)
        else:
            above = 0
        lr = tcfg.rate_at(t)
        if lr:
            w = w - lr * grad.weight
            b = b - lr * grad.bias
    return LinearEmbedding(w, b), history


def save_checkpoint(path, emb: LinearEmbedding, episode: int, rng_state: dict | None = None) -> None:
    doc = {
        "weight": emb.weight.tolist(),
        "bias": emb.bias.tolist(),
        "episode": int(episode),
        "rng_state": rng_state,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> tuple[LinearEmbedding, int, dict | None]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return LinearEmbedding(doc["weight"], doc["bias"]), int(doc["episode"]), doc.get("rng_state")
