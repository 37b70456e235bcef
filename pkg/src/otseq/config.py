"""Run configuration: dotted ``section.key`` settings with provenance.

Values come from three layers, later ones winning: built-in defaults, a
plain-text config file, and ``--section.key=value`` command-line flags.  The
config file accepts ``section.key = value`` lines, or ``[section]`` headers
followed by ``key = value`` lines; ``#`` starts a comment.
"""

from __future__ import annotations

import difflib
import os
from dataclasses import dataclass, field
from typing import Any, Callable

from .costs import FusionConfig, PositionalConfig, PositionalVariant
from .ot_core import SinkhornConfig
from .seqdist import METRICS, DistanceConfig
from .synthgen import GeneratorConfig, Regime
from .train import TrainConfig

OUTPUT_ENV = "OTSEQ_OUTPUT_DIR"
COMMANDS = ("solve", "dist", "bench", "train", "sweep")
SWEEP_PARAMS = ("alpha", "sigma", "lambda")


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _lambda(text: str):
    t = text.strip().lower()
    if t == "auto":
        return "auto"
    value = float(t)
    if not value > 0:
        raise ValueError("lambda must be positive")
    return value


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        t = text.strip().lower()
        if t not in options:
            raise ValueError(f"expected one of {options}, got {text!r}")
        return t

    return parse


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _metrics(text: str) -> list[str]:
    names = [t.strip().lower() for t in text.split(",") if t.strip()]
    for n in names:
        if n not in METRICS:
            raise ValueError(f"unknown metric {n!r}")
    return names


def _optional_int(text: str):
    t = text.strip().lower()
    return None if t in ("", "none", "auto") else int(t)


# key -> (parser, default); defaults are given as text and parsed like flags
SCHEMA: dict[str, tuple[Callable[[str], Any], str]] = {
    "run.seed": (int, "0"),
    "run.output": (str, ""),
    "run.workers": (int, "1"),
    "run.max_nonconverged_fraction": (float, "0.01"),
    "sinkhorn.lambda": (_lambda, "auto"),
    "sinkhorn.lambda_multiplier": (float, "7"),
    "sinkhorn.max_iterations": (int, "10000"),
    "sinkhorn.tolerance": (float, "1e-9"),
    "sinkhorn.log_domain": (_bool, "false"),
    "positional.sigma": (float, "1.2"),
    "positional.variant": (_choice(*(v.value for v in PositionalVariant)), "paper_form"),
    "positional.pe_dimension": (_optional_int, "none"),
    "fusion.alpha": (float, "0.4"),
    "generator.n_classes": (int, "10"),
    "generator.m_segments": (int, "4"),
    "generator.dim": (int, "8"),
    "generator.noise_sigma": (float, "0.05"),
    "generator.regime": (_choice(*(r.value for r in Regime)), "content"),
    "generator.seed": (int, "0"),
    "generator.pair_reversals": (_bool, "true"),
    "generator.nuisance_dim": (int, "0"),
    "generator.nuisance_sigma": (float, "0"),
    "episode.n_way": (int, "5"),
    "episode.k_shot": (int, "1"),
    "episode.q": (int, "1"),
    "episode.count": (int, "1000"),
    "bench.metrics": (_metrics, "cmot,agg,dtw"),
    "sweep.param": (_choice(*SWEEP_PARAMS), "alpha"),
    "sweep.values": (_floats, "0,0.2,0.4,0.8,1.6"),
    "sweep.metric": (_choice(*METRICS), "cmot"),
    "train.learning_rate": (float, "0.01"),
    "train.decay_factor": (float, "0.2"),
    "train.decay_every": (int, "2000"),
    "train.total_episodes": (int, "2000"),
    "train.seed": (int, "0"),
    "train.n_way": (int, "2"),
    "train.k_shot": (int, "1"),
    "train.bank_seed": (int, "1000"),
    "dist.a": (str, ""),
    "dist.b": (str, ""),
    "dist.heatmap": (_bool, "false"),
    "solve.cost": (str, ""),
    "solve.size": (int, "4"),
}


@dataclass
class RunConfig:
    command: str
    values: dict[str, Any] = field(default_factory=dict)
    provenance: dict[str, str] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def output_dir(self) -> str:
        return self.values["run.output"] or os.environ.get(OUTPUT_ENV) or "otseq-out"

    def snapshot(self) -> dict[str, Any]:
        """Every effective value with where it came from."""
        out = {}
        for key in SCHEMA:
            value = self.values[key]
            if key == "sinkhorn.lambda" and value == "auto":
                value = f"auto({self.values['sinkhorn.lambda_multiplier']:g}/med)"
            out[key] = {"value": value, "source": self.provenance[key]}
        out["run.output"]["value"] = self.output_dir
        return out

    def sinkhorn_config(self) -> SinkhornConfig:
        lam = self.values["sinkhorn.lambda"]
        return SinkhornConfig(
            lam=1.0 if lam == "auto" else lam,
            max_iterations=self.values["sinkhorn.max_iterations"],
            residual_tolerance=self.values["sinkhorn.tolerance"],
            log_domain=self.values["sinkhorn.log_domain"],
        )

    def distance_config(self) -> DistanceConfig:
        lam = self.values["sinkhorn.lambda"]
        return DistanceConfig(
            fusion=FusionConfig(alpha=self.values["fusion.alpha"]),
            positional=PositionalConfig(
                sigma=self.values["positional.sigma"],
                variant=self.values["positional.variant"],
                pe_dimension=self.values["positional.pe_dimension"],
            ),
            sinkhorn=self.sinkhorn_config(),
            lam=None if lam == "auto" else lam,
            lambda_multiplier=self.values["sinkhorn.lambda_multiplier"],
        )

    def generator_config(self, seed: int | None = None) -> GeneratorConfig:
        v = self.values
        return GeneratorConfig(
            n_classes=v["generator.n_classes"],
            m_segments=v["generator.m_segments"],
            dim=v["generator.dim"],
            noise_sigma=v["generator.noise_sigma"],
            regime=v["generator.regime"],
            rng_seed=v["generator.seed"] if seed is None else seed,
            pair_reversals=v["generator.pair_reversals"],
            nuisance_dim=v["generator.nuisance_dim"],
            nuisance_sigma=v["generator.nuisance_sigma"],
        )

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            learning_rate=v["train.learning_rate"],
            decay_factor=v["train.decay_factor"],
            decay_every=v["train.decay_every"],
            total_episodes=v["train.total_episodes"],
            rng_seed=v["train.seed"],
        )


def _unknown(key: str) -> ConfigError:
    close = difflib.get_close_matches(key, SCHEMA, n=1)
    hint = f"; did you mean {close[0]!r}?" if close else ""
    return ConfigError(f"unknown config key {key!r}{hint}")


def _set(values, provenance, key, text, source):
    if key not in SCHEMA:
        raise _unknown(key)
    parser = SCHEMA[key][0]
    try:
        values[key] = parser(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key} ({source}): {exc}") from None
    provenance[key] = source


def read_config_file(path) -> list[tuple[str, str]]:
    """``(dotted_key, raw_value)`` pairs in file order."""
    pairs = []
    section = ""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if section and "." not in key:
                key = f"{section}.{key}"
            pairs.append((key, value))
    return pairs


def parse_flags(tokens: list[str]) -> list[tuple[str, str]]:
    """Turn ``--section.key=value`` / ``--section.key value`` tokens into pairs."""
    pairs = []
    it = iter(tokens)
    for tok in it:
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        body = tok[2:]
        if "=" in body:
            key, value = body.split("=", 1)
        else:
            key = body
            try:
                value = next(it)
            except StopIteration:
                raise ConfigError(f"flag --{key} needs a value") from None
        pairs.append((key, value))
    return pairs


def parse_config(command: str, config_path=None, flags: list[str] | None = None) -> RunConfig:
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}")
    values: dict[str, Any] = {}
    provenance: dict[str, str] = {}
    for key, (parser, default) in SCHEMA.items():
        values[key] = parser(default)
        provenance[key] = "default"
    if config_path:
        for key, value in read_config_file(config_path):
            _set(values, provenance, key, value, "file")
    for key, value in parse_flags(flags or []):
        _set(values, provenance, key, value, "flag")
    cfg = RunConfig(command=command, values=values, provenance=provenance)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    v = cfg.values
    try:
        gen = cfg.generator_config()
        cfg.distance_config()
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.command in ("bench", "sweep") and v["episode.n_way"] > gen.label_count:
        raise ConfigError(
            f"episode.n_way={v['episode.n_way']} exceeds the {gen.label_count} labels "
            f"available in the {gen.regime.value} regime with {gen.n_classes} classes"
        )
    if cfg.command == "train" and v["train.n_way"] > gen.label_count:
        raise ConfigError(f"train.n_way={v['train.n_way']} exceeds {gen.label_count} labels")
    if v["episode.count"] < 2:
        raise ConfigError("episode.count must be >= 2 for confidence intervals")
    if cfg.command == "sweep" and not v["sweep.values"]:
        raise ConfigError("sweep.values is empty")
    if cfg.command == "sweep" and v["sweep.param"] == "lambda" and any(x <= 0 for x in v["sweep.values"]):
        raise ConfigError("lambda multipliers must be positive")
