"""Synthetic content-vs-ordering sequence benchmark.

Each base class is an ordered tuple of unit-norm prototype vectors; an instance
is the tuple plus isotropic Gaussian noise, optionally played backwards.  Two
label regimes decide what reversal means:

* ``CONTENT_DOMINATED``: a reversed instance keeps its class label.
* ``ORDERING_DOMINATED``: the reversal of class ``c`` is a separate class
  ``c + n_classes``, doubling the label space.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from .fewshot import Episode


class Regime(str, enum.Enum):
    CONTENT_DOMINATED = "content"
    ORDERING_DOMINATED = "ordering"


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    n_classes: int = 10
    m_segments: int = 4
    dim: int = 8
    noise_sigma: float = 0.05
    regime: Regime = Regime.CONTENT_DOMINATED
    rng_seed: int = 0
    # ORDERING_DOMINATED only: build episodes from classes together with their
    # own reversals instead of drawing labels independently
    pair_reversals: bool = True
    # extra pure-noise coordinates appended to every segment
    nuisance_dim: int = 0
    nuisance_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime(self.regime))
        if self.n_classes < 2:
            raise GeneratorError("n_classes must be >= 2")
        if self.m_segments < 1 or self.dim < 1:
            raise GeneratorError("m_segments and dim must be >= 1")
        if self.noise_sigma < 0 or self.nuisance_sigma < 0:
            raise GeneratorError("noise scales must be nonnegative")
        if self.nuisance_dim < 0:
            raise GeneratorError("nuisance_dim must be >= 0")
        if self.regime is Regime.ORDERING_DOMINATED and self.m_segments < 2:
            raise GeneratorError("single-segment sequences are their own reversal")

    @property
    def label_count(self) -> int:
        if self.regime is Regime.ORDERING_DOMINATED:
            return 2 * self.n_classes
        return self.n_classes


@dataclass(frozen=True)
class ClassBank:
    classes: np.ndarray  # (n_classes, M, D)
    rng_seed: int

    @property
    def n_classes(self) -> int:
        return self.classes.shape[0]


def _is_palindrome(protos: np.ndarray) -> bool:
    return bool(np.allclose(protos, protos[::-1]))


def _has_repeats(protos: np.ndarray) -> bool:
    m = protos.shape[0]
    return any(np.allclose(protos[i], protos[j]) for i in range(m) for j in range(i + 1, m))


def generate_class_bank(cfg: GeneratorConfig) -> ClassBank:
    """Seeded bank of unit-norm prototype tuples, distinct and non-palindromic."""
    rng = np.random.default_rng(cfg.rng_seed)
    classes = []
    attempts = 0
    while len(classes) < cfg.n_classes:
        attempts += 1
        if attempts > 1000 * cfg.n_classes:
            raise GeneratorError(
                f"could not draw {cfg.n_classes} distinct non-palindromic classes "
                f"with m_segments={cfg.m_segments}, dim={cfg.dim}"
            )
        protos = rng.standard_normal((cfg.m_segments, cfg.dim))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        if _has_repeats(protos) or (cfg.m_segments > 1 and _is_palindrome(protos)):
            continue
        if any(np.allclose(protos, c) for c in classes):
            continue
        classes.append(protos)
    return ClassBank(classes=np.stack(classes), rng_seed=cfg.rng_seed)


def sample_sequence(bank: ClassBank, class_index: int, noise_sigma: float, rng,
                    nuisance_dim: int = 0, nuisance_sigma: float = 0.0) -> np.ndarray:
    if not 0 <= class_index < bank.n_classes:
        raise GeneratorError(f"class index {class_index} out of range [0, {bank.n_classes})")
    protos = bank.classes[class_index]
    seq = protos + noise_sigma * rng.standard_normal(protos.shape)
    if nuisance_dim:
        extra = nuisance_sigma * rng.standard_normal((protos.shape[0], nuisance_dim))
        seq = np.concatenate([seq, extra], axis=1)
    return seq


def reverse_sequence(a) -> np.ndarray:
    return np.asarray(a)[::-1].copy()


def _instance(bank, cfg, base, reverse, rng):
    seq = sample_sequence(bank, base, cfg.noise_sigma, rng, cfg.nuisance_dim, cfg.nuisance_sigma)
    return reverse_sequence(seq) if reverse else seq


def _ordering_labels(cfg: GeneratorConfig, n_way: int, rng) -> list[int]:
    c = cfg.n_classes
    if not cfg.pair_reversals:
        return [int(l) for l in rng.choice(2 * c, size=n_way, replace=False)]
    n_base = (n_way + 1) // 2
    if n_base > c:
        raise GeneratorError(f"{n_way}-way needs {n_base} base classes, bank has {c}")
    bases = [int(b) for b in rng.choice(c, size=n_base, replace=False)]
    labels = []
    for i, b in enumerate(bases):
        if len(labels) + 2 <= n_way:
            labels += [b, b + c]
        else:
            labels.append(b + c * int(rng.integers(2)))
    return labels


def build_episode(bank: ClassBank, cfg: GeneratorConfig, n_way: int, k_shot: int, q: int,
                  rng) -> Episode:
    """Sample one N-way K-shot episode with ``q`` queries per class."""
    if n_way < 2 or k_shot < 1 or q < 1:
        raise GeneratorError("need n_way >= 2, k_shot >= 1, q >= 1")
    if n_way > cfg.label_count:
        raise GeneratorError(
            f"{n_way}-way episodes need {n_way} labels; {cfg.regime.value} regime has {cfg.label_count}"
        )
    c = bank.n_classes
    support, query = [], []
    if cfg.regime is Regime.CONTENT_DOMINATED:
        labels = [int(l) for l in rng.choice(c, size=n_way, replace=False)]
        for label in labels:
            flips = rng.integers(2, size=k_shot + q)
            items = [(_instance(bank, cfg, label, bool(f), rng), label) for f in flips]
            support += items[:k_shot]
            query += items[k_shot:]
    else:
        labels = _ordering_labels(cfg, n_way, rng)
        for label in labels:
            base, rev = label % c, label >= c
            items = [(_instance(bank, cfg, base, rev, rng), label) for _ in range(k_shot + q)]
            support += items[:k_shot]
            query += items[k_shot:]
    return Episode(support=support, query=query, n_way=n_way, k_shot=k_shot, q_per_class=q)


def episode_stream(bank: ClassBank, cfg: GeneratorConfig, n_way: int, k_shot: int, q: int,
                   count: int, seed: int) -> list[Episode]:
    rng = np.random.default_rng(seed)
    return [build_episode(bank, cfg, n_way, k_shot, q, rng) for _ in range(count)]


# JSON interchange -----------------------------------------------------------

def bank_to_dict(bank: ClassBank) -> dict:
    return {"kind": "class_bank", "rng_seed": bank.rng_seed, "classes": bank.classes.tolist()}


def bank_from_dict(d: dict) -> ClassBank:
    if d.get("kind") != "class_bank":
        raise GeneratorError("not a class bank document")
    return ClassBank(classes=np.asarray(d["classes"], dtype=float), rng_seed=int(d["rng_seed"]))


def episode_to_dict(ep: Episode) -> dict:
    def items(pairs):
        return [{"label": y, "segments": np.asarray(x).tolist()} for x, y in pairs]

    return {
        "kind": "episode",
        "n_way": ep.n_way,
        "k_shot": ep.k_shot,
        "q_per_class": ep.q_per_class,
        "support": items(ep.support),
        "query": items(ep.query),
    }


def episode_from_dict(d: dict) -> Episode:
    if d.get("kind") != "episode":
        raise GeneratorError("not an episode document")

    def items(rows):
        return [(np.asarray(r["segments"], dtype=float), r["label"]) for r in rows]

    return Episode(
        support=items(d["support"]),
        query=items(d["query"]),
        n_way=int(d["n_way"]),
        k_shot=int(d["k_shot"]),
        q_per_class=int(d["q_per_class"]),
    )


def sequence_to_dict(seq) -> dict:
    return {"kind": "sequence", "segments": np.asarray(seq).tolist()}


def sequence_from_dict(d) -> np.ndarray:
    # bare nested lists are accepted too
    if isinstance(d, dict):
        if d.get("kind") != "sequence":
            raise GeneratorError("not a sequence document")
        d = d["segments"]
    return np.asarray(d, dtype=float)


def dump_json(obj: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
