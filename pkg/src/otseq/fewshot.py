"""Episodic N-way K-shot classification with class-mean distances."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

Metric = Callable[[np.ndarray, np.ndarray], float]


class EpisodeError(ValueError):
    pass


@dataclass(frozen=True)
class Episode:
    support: tuple[tuple[np.ndarray, Hashable], ...]
    query: tuple[tuple[np.ndarray, Hashable], ...]
    n_way: int
    k_shot: int
    q_per_class: int

    def __post_init__(self):
        object.__setattr__(self, "support", tuple((np.asarray(x, dtype=float), y) for x, y in self.support))
        object.__setattr__(self, "query", tuple((np.asarray(x, dtype=float), y) for x, y in self.query))
        labels = self.classes
        if len(labels) != self.n_way:
            raise EpisodeError(f"support has {len(labels)} classes, expected {self.n_way}")
        counts = {y: 0 for y in labels}
        for _, y in self.support:
            counts[y] += 1
        bad = {y: c for y, c in counts.items() if c != self.k_shot}
        if bad:
            raise EpisodeError(f"classes without exactly {self.k_shot} support instances: {bad}")
        unknown = {y for _, y in self.query} - set(labels)
        if unknown:
            raise EpisodeError(f"query labels {unknown} do not appear in the support set")

    @property
    def classes(self) -> list:
        """Class labels in order of first appearance in the support set."""
        return list(dict.fromkeys(y for _, y in self.support))


@dataclass(frozen=True)
class PredictionRecord:
    per_class_mean_distance: np.ndarray
    probabilities: np.ndarray
    predicted_label: Hashable
    true_label: Hashable

    @property
    def correct(self) -> bool:
        return self.predicted_label == self.true_label


@dataclass(frozen=True)
class BenchmarkReport:
    mean_accuracy: float
    ci95_halfwidth: float
    per_episode_accuracies: list[float]
    episode_count: int
    config_snapshot: dict[str, Any] = field(default_factory=dict)


def class_mean_distance(query, episode: Episode, metric: Metric) -> np.ndarray:
    """Mean metric value from ``query`` to each class's support instances."""
    classes = episode.classes
    sums = np.zeros(len(classes))
    counts = np.zeros(len(classes))
    index = {y: n for n, y in enumerate(classes)}
    for x, y in episode.support:
        n = index[y]
        sums[n] += metric(x, query)
        counts[n] += 1
    if np.any(counts == 0):
        raise EpisodeError("a class has no support instances")
    return sums / counts


def predict_proba(distances) -> np.ndarray:
    """Softmax over negated distances."""
    z = -np.asarray(distances, dtype=float)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def predict(query, true_label, episode: Episode, metric: Metric) -> PredictionRecord:
    dist = class_mean_distance(query, episode, metric)
    best = int(np.argmin(dist))
    if np.count_nonzero(dist == dist[best]) > 1:
        log.debug("argmin tie among class distances %s; picking class index %d", dist, best)
    return PredictionRecord(
        per_class_mean_distance=dist,
        probabilities=predict_proba(dist),
        predicted_label=episode.classes[best],
        true_label=true_label,
    )


def query_loss(distances, true_index: int) -> float:
    """``-log p(true class)`` computed stably from class distances."""
    z = -np.asarray(distances, dtype=float)
    zmax = z.max()
    return float(zmax + math.log(np.exp(z - zmax).sum()) - z[true_index])


def episode_loss(episode: Episode, metric: Metric) -> float:
    """Cross-entropy summed over the episode's queries."""
    index = {y: n for n, y in enumerate(episode.classes)}
    return sum(
        query_loss(class_mean_distance(x, episode, metric), index[y]) for x, y in episode.query
    )


def episode_accuracy(episode: Episode, metric: Metric) -> float:
    hits = [predict(x, y, episode, metric).correct for x, y in episode.query]
    return float(np.mean(hits))


def summarize(accuracies: Sequence[float], config_snapshot: dict | None = None) -> BenchmarkReport:
    acc = np.asarray(accuracies, dtype=float)
    if acc.size < 2:
        raise EpisodeError("need at least two episodes for a confidence interval")
    half = 1.96 * float(acc.std(ddof=1)) / math.sqrt(acc.size)
    return BenchmarkReport(
        mean_accuracy=float(acc.mean()),
        ci95_halfwidth=half,
        per_episode_accuracies=[float(a) for a in acc],
        episode_count=int(acc.size),
        config_snapshot=dict(config_snapshot or {}),
    )


def evaluate_benchmark(
    episodes: Iterable[Episode],
    metric: Metric,
    config_snapshot: dict | None = None,
    workers: int = 1,
) -> BenchmarkReport:
    """Accuracy over an episode stream with a 95% normal-approximation CI.

    Episodes may be scored on ``workers`` threads; results are always
    assembled in stream order.
    """
    episodes = list(episodes)
    if not episodes:
        raise EpisodeError("empty episode stream")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            accuracies = list(pool.map(lambda ep: episode_accuracy(ep, metric), episodes))
    else:
        accuracies = [episode_accuracy(ep, metric) for ep in episodes]
    return summarize(accuracies, config_snapshot)
