"""``otseq`` command-line driver.

    otseq <solve|dist|bench|train|sweep> [--config path] [--section.key=value ...]

Results are written to ``run.output`` (or ``$OTSEQ_OUTPUT_DIR``) as CSV and
JSON.  Exit status is 0 when every run finished within the Sinkhorn
convergence budget, 1 when too many solves failed to converge, and 2 on
configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import threading
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import COMMANDS, ConfigError, RunConfig, parse_config
from .costs import FusionConfig
from .fewshot import BenchmarkReport, Episode, evaluate_benchmark
from .ot_core import entropy, exact_ot_uniform, uniform_marginal
from .seqdist import DistanceConfig, agg_distance, cmot_solve, dtw_distance, make_metric, resolve_lambda, solve_cost
from .synthgen import (
    build_episode,
    episode_stream,
    generate_class_bank,
    load_json,
    reverse_sequence,
    sample_sequence,
    sequence_from_dict,
)
from .train import LinearEmbedding, embed_episode, save_checkpoint, train_loop

CSV_HEADER = ["metric", "regime", "n_way", "k_shot", "episodes", "accuracy", "ci95", "seed"]


class Budget:
    """Counts Sinkhorn solves that stopped at the iteration cap."""

    def __init__(self, max_fraction: float):
        self.max_fraction = max_fraction
        self.solves = 0
        self.unconverged = 0
        self._lock = threading.Lock()

    def record(self, converged: bool) -> None:
        with self._lock:
            self.solves += 1
            self.unconverged += not converged

    def metric(self, name: str, cfg: DistanceConfig):
        if name != "cmot":
            return make_metric(name)

        def cmot(a, b):
            result = cmot_solve(a, b, cfg).result
            self.record(result.converged)
            return result.value

        return cmot

    @property
    def fraction(self) -> float:
        return self.unconverged / self.solves if self.solves else 0.0

    def ok(self) -> bool:
        return self.fraction <= self.max_fraction


# export ---------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".6g")
    return str(x)


def report_row(report: BenchmarkReport, metric: str, cfg: RunConfig, **extra) -> dict:
    row = {
        "metric": metric,
        "regime": cfg["generator.regime"],
        "n_way": cfg["episode.n_way"],
        "k_shot": cfg["episode.k_shot"],
        "episodes": report.episode_count,
        "accuracy": report.mean_accuracy,
        "ci95": report.ci95_halfwidth,
        "seed": cfg["run.seed"],
    }
    row.update(extra)
    return row


def export_results(rows: list[dict], reports: list[BenchmarkReport], path, snapshot: dict,
                   extra: dict | None = None, leading: tuple[str, ...] = ()) -> tuple[Path, Path]:
    """Write ``<path>.csv`` (6 significant digits) and ``<path>.json`` (full precision)."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        csv_path = path.with_suffix(".csv")
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            header = list(leading) + CSV_HEADER
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(row[k]) for k in header])
        doc = {
            "config": snapshot,
            "reports": [
                {
                    **row,
                    "per_episode_accuracies": rep.per_episode_accuracies,
                    "config_snapshot": rep.config_snapshot,
                }
                for row, rep in zip(rows, reports)
            ],
        }
        if extra:
            doc.update(extra)
        json_path = path.with_suffix(".json")
        write_json(doc, json_path)
    except OSError as exc:
        raise ConfigError(f"cannot write results to {path}: {exc}") from None
    return csv_path, json_path


def write_json(doc, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def plan_heatmap(plan: np.ndarray) -> str:
    """Gnuplot-style ``p q value`` rows with a blank line between matrix rows."""
    lines = []
    for p, row in enumerate(plan, 1):
        lines += [f"{p} {q} {v:.10g}" for q, v in enumerate(row, 1)]
        lines.append("")
    return "\n".join(lines)


# commands -------------------------------------------------------------------

def _episodes(cfg: RunConfig) -> list[Episode]:
    gen = cfg.generator_config()
    bank = generate_class_bank(gen)
    return episode_stream(bank, gen, cfg["episode.n_way"], cfg["episode.k_shot"], cfg["episode.q"],
                          cfg["episode.count"], seed=cfg["run.seed"])


def _print_row(row: dict) -> None:
    prefix = f"{row['sweep_param']}={row['sweep_value']:g} " if "sweep_param" in row else ""
    print(f"{prefix}{row['metric']:<16} {row['regime']:<9} acc={row['accuracy']:.4f} ± {row['ci95']:.4f}")


def run_bench(cfg: RunConfig, budget: Budget) -> None:
    episodes = _episodes(cfg)
    dcfg = cfg.distance_config()
    rows, reports = [], []
    for name in cfg["bench.metrics"]:
        rep = evaluate_benchmark(episodes, budget.metric(name, dcfg), {"metric": name},
                                 workers=cfg["run.workers"])
        rows.append(report_row(rep, name, cfg))
        reports.append(rep)
        _print_row(rows[-1])
    export_results(rows, reports, Path(cfg.output_dir) / "bench", cfg.snapshot())


def sweep_config(dcfg: DistanceConfig, param: str, value: float) -> DistanceConfig:
    if param == "alpha":
        return replace(dcfg, fusion=FusionConfig(alpha=value))
    if param == "sigma":
        return replace(dcfg, positional=replace(dcfg.positional, sigma=value))
    return replace(dcfg, lam=None, lambda_multiplier=value)


def run_sweep(cfg: RunConfig, budget: Budget) -> None:
    episodes = _episodes(cfg)
    base = cfg.distance_config()
    param, metric = cfg["sweep.param"], cfg["sweep.metric"]
    rows, reports = [], []
    for value in cfg["sweep.values"]:
        dcfg = sweep_config(base, param, value)
        rep = evaluate_benchmark(episodes, budget.metric(metric, dcfg),
                                 {"metric": metric, param: value}, workers=cfg["run.workers"])
        rows.append(report_row(rep, metric, cfg, sweep_param=param, sweep_value=value))
        reports.append(rep)
        _print_row(rows[-1])
    export_results(rows, reports, Path(cfg.output_dir) / "sweep", cfg.snapshot(),
                   leading=("sweep_param", "sweep_value"))


def run_train(cfg: RunConfig, budget: Budget) -> None:
    dcfg = cfg.distance_config()
    train_gen = cfg.generator_config(seed=cfg["train.bank_seed"])
    train_bank = generate_class_bank(train_gen)
    n_way, k_shot = cfg["train.n_way"], cfg["train.k_shot"]

    def generator(rng):
        return build_episode(train_bank, train_gen, n_way, k_shot, 1, rng)

    test = _episodes(cfg)
    start = LinearEmbedding.identity(train_gen.dim + train_gen.nuisance_dim)
    tcfg = cfg.train_config()
    trained, history = train_loop(generator, start, tcfg, dcfg)

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.json", trained, tcfg.total_episodes,
                    {"seed": tcfg.rng_seed, "episodes_consumed": tcfg.total_episodes})
    rows, reports = [], []
    for label, emb in (("cmot@untrained", start), ("cmot@trained", trained)):
        rep = evaluate_benchmark([embed_episode(ep, emb) for ep in test], budget.metric("cmot", dcfg),
                                 {"embedding": label}, workers=cfg["run.workers"])
        rows.append(report_row(rep, label, cfg))
        reports.append(rep)
        _print_row(rows[-1])
    export_results(rows, reports, out / "train", cfg.snapshot(), extra={"loss_history": history})


def _load_cost(cfg: RunConfig) -> np.ndarray:
    if cfg["solve.cost"]:
        doc = load_json(cfg["solve.cost"])
        return np.asarray(doc["cost"] if isinstance(doc, dict) else doc, dtype=float)
    n = cfg["solve.size"]
    return np.random.default_rng(cfg["run.seed"]).random((n, n))


def run_solve(cfg: RunConfig, budget: Budget) -> None:
    C = _load_cost(cfg)
    dcfg = cfg.distance_config()
    lam = resolve_lambda(C, dcfg)
    res = solve_cost(C, uniform_marginal(C.shape[0]), uniform_marginal(C.shape[1]), lam, dcfg.sinkhorn)
    budget.record(res.converged)
    doc = {
        "cost": C.tolist(),
        "lambda": lam,
        "value": res.value,
        "linear_cost": res.linear_cost,
        "entropy": entropy(res.plan),
        "plan": res.plan.tolist(),
        "iterations": res.iterations_used,
        "final_residual": res.final_residual,
        "converged": res.converged,
        "log_domain": res.log_domain,
        "config": cfg.snapshot(),
    }
    if C.shape[0] == C.shape[1] and C.shape[0] <= 8:
        exact, perm = exact_ot_uniform(C)
        doc["exact_ot"] = {"value": exact, "permutation": list(perm)}
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(doc, out / "solve.json")
    print(f"value={res.value:.10g} linear_cost={res.linear_cost:.10g} iterations={res.iterations_used}")


def _dist_inputs(cfg: RunConfig):
    if cfg["dist.a"] and cfg["dist.b"]:
        return sequence_from_dict(load_json(cfg["dist.a"])), sequence_from_dict(load_json(cfg["dist.b"]))
    if cfg["dist.a"] or cfg["dist.b"]:
        raise ConfigError("give both dist.a and dist.b, or neither")
    gen = cfg.generator_config()
    bank = generate_class_bank(gen)
    rng = np.random.default_rng(cfg["run.seed"])
    a = sample_sequence(bank, 0, gen.noise_sigma, rng)
    return a, reverse_sequence(sample_sequence(bank, 0, gen.noise_sigma, rng))


def run_dist(cfg: RunConfig, budget: Budget) -> None:
    a, b = _dist_inputs(cfg)
    sol = cmot_solve(a, b, cfg.distance_config())
    budget.record(sol.result.converged)
    dtw_value, path = dtw_distance(a, b)
    doc = {
        "cmot": {
            "value": sol.value,
            "plan": sol.plan.tolist(),
            "lambda": sol.result.lam,
            "iterations": sol.result.iterations_used,
            "final_residual": sol.result.final_residual,
            "converged": sol.result.converged,
        },
        "agg": {"value": agg_distance(a, b)},
        "dtw": {"value": dtw_value, "path": [list(p) for p in path]},
        "config": cfg.snapshot(),
    }
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(doc, out / "dist.json")
    if cfg["dist.heatmap"]:
        (out / "plan.dat").write_text(plan_heatmap(sol.plan), encoding="utf-8")
    print(f"cmot={sol.value:.10g} agg={doc['agg']['value']:.10g} dtw={dtw_value:.10g}")


RUNNERS = {
    "solve": run_solve,
    "dist": run_dist,
    "bench": run_bench,
    "train": run_train,
    "sweep": run_sweep,
}


def run_experiment(cfg: RunConfig) -> int:
    budget = Budget(cfg["run.max_nonconverged_fraction"])
    RUNNERS[cfg.command](cfg, budget)
    if not budget.ok():
        print(f"error: {budget.fraction:.2%} of Sinkhorn solves did not converge "
              f"(limit {budget.max_fraction:.2%})", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="otseq",
        description="Optimal-transport sequence distances and few-shot benchmarks.",
        epilog="Any config key can be overridden with --section.key=value.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="plain-text key = value config file")
    parser.add_argument("-v", "--verbose", action="store_true")
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.command, args.config, rest)
        return run_experiment(cfg)
    except ConfigError as exc:
        print(f"otseq: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
