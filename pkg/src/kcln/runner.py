"""Experiment protocols: epoch curves, sample-size sweeps and alpha sweeps.

Results are long-format CSV rows
``protocol,model,alpha,sample_fraction,seed,epoch,metric,value``.
Independent training jobs run in a process pool capped by ``KCLN_THREADS``
and are merged by sorting on the key columns, so output does not depend on
scheduling.
"""

from __future__ import annotations

import csv
import functools
import json
import logging
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

from .graph import load_graph, load_labels, split, subsample
from .grounding import create_masks, empty_masks
from .network import NetworkConfig, save_checkpoint
from .rules import RuleSet, load_rules, validate_against
from .training import TrainConfig, train

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("protocol", "model", "alpha", "sample_fraction", "seed", "epoch", "metric", "value")
CURVE_COLUMNS = ("epoch", "split", "metric", "value")

DEFAULT_FRACTIONS = (0.05, 0.1, 0.2, 0.4, 0.6, 0.8)
DEFAULT_ALPHAS = (0.2, 0.4, 0.6, 0.8, 1.0)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    entities: str
    edges: str
    rules: str | None = None
    eval_labels: str | None = None
    net: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    protocol: str = "epochs"
    train_split: float = 0.6
    epochs_fraction: float = 0.4
    sample_fractions: list = field(default_factory=lambda: list(DEFAULT_FRACTIONS))
    alphas: list = field(default_factory=lambda: list(DEFAULT_ALPHAS))
    n_seeds: int = 5
    base_seed: int = 0
    threshold: float = 0.0
    task: str | None = None
    output_dir: str = "results"
    save_checkpoints: bool = True
    log_curves: bool = False

    def __post_init__(self):
        if self.protocol not in ("epochs", "sample_sweep", "alpha_sweep"):
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if not 0.0 < self.train_split < 1.0:
            raise ConfigError("train_split must be in (0, 1)")
        if not 0.0 < self.epochs_fraction <= 1.0:
            raise ConfigError("epochs_fraction must be in (0, 1]")
        if self.protocol in ("sample_sweep", "alpha_sweep") and not self.sample_fractions:
            raise ConfigError("sample_fractions must be non-empty")
        if any(not 0.0 < f <= 1.0 for f in self.sample_fractions):
            raise ConfigError("sample fractions must be in (0, 1]")
        if list(self.sample_fractions) != sorted(self.sample_fractions):
            raise ConfigError("sample fractions must be sorted ascending")
        if self.protocol == "alpha_sweep" and not self.alphas:
            raise ConfigError("alphas must be non-empty")
        if any(not 0.0 <= a <= 1.0 for a in self.alphas):
            raise ConfigError("alphas must be in [0, 1]")
        if self.threshold < 0:
            raise ConfigError("threshold must be non-negative")
        if self.task not in (None, "binary", "multiclass"):
            raise ConfigError(f"unknown task {self.task!r}")
        try:
            TrainConfig(**self.train)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad train config: {exc}") from None
        bad = set(self.net) - {"n_layers", "hidden_dim", "activation", "share_parameters", "z"}
        if bad:
            raise ConfigError(f"unknown net config keys: {sorted(bad)}")

    @property
    def seeds(self) -> list[int]:
        return [self.base_seed + k for k in range(self.n_seeds)]


def load_experiment_config(path, **overrides) -> ExperimentConfig:
    """Read a JSON experiment config; relative paths resolve against its directory."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    base = os.path.dirname(os.path.abspath(path))
    for key in ("entities", "edges", "rules", "eval_labels", "output_dir"):
        if doc.get(key) and not os.path.isabs(doc[key]):
            doc[key] = os.path.join(base, doc[key])
    doc.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        return ExperimentConfig(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


@functools.lru_cache(maxsize=8)
def _load_inputs(entities, edges, rules, eval_labels):
    g = load_graph(entities, edges)
    rs = load_rules(rules) if rules else RuleSet()
    truth = load_labels(eval_labels, g) if eval_labels else None
    return g, rs, truth


@functools.lru_cache(maxsize=16)
def _masks(entities, edges, rules, eval_labels, threshold):
    g, rs, _ = _load_inputs(entities, edges, rules, eval_labels)
    return create_masks(g, rs, threshold)


@dataclass(frozen=True)
class Job:
    protocol: str
    model: str
    alpha: float
    sample_fraction: float
    seed: int
    curve: bool
    checkpoint: str | None = None
    curve_path: str | None = None


def _run_job(cfg: ExperimentConfig, job: Job) -> list[tuple]:
    g, _, truth = _load_inputs(cfg.entities, cfg.edges, cfg.rules, cfg.eval_labels)
    if job.model == "kcln":
        masks = _masks(cfg.entities, cfg.edges, cfg.rules, cfg.eval_labels, cfg.threshold)
    else:
        masks = empty_masks(g)
    base = split(g, cfg.train_split, job.seed)
    sub = subsample(base, job.sample_fraction, job.seed)
    net_cfg = NetworkConfig.for_graph(g, **cfg.net)
    train_cfg = TrainConfig(**{**cfg.train, "seed": job.seed, "alpha": job.alpha})
    result = train(g, sub, masks, net_cfg, train_cfg, eval_labels=truth, task=cfg.task)

    if job.checkpoint:
        save_checkpoint(
            job.checkpoint,
            net_cfg,
            result.params,
            result.gates,
            extra={
                "model": job.model,
                "seed": job.seed,
                "alpha": job.alpha,
                "epoch": result.state.best_epoch,
                "train_ids": list(sub.train_ids),
                "test_ids": list(sub.test_ids),
                "threshold": cfg.threshold,
            },
        )
    if job.curve_path:
        write_curve(job.curve_path, result.curve)

    key = (job.protocol, job.model, job.alpha, job.sample_fraction, job.seed)
    rows = []
    for epoch, split_name, metric, value in result.curve:
        if not job.curve and epoch != result.state.best_epoch:
            continue
        name = metric if split_name == "test" else f"{split_name}_{metric}"
        rows.append((*key, epoch, name, value))
    return rows


def write_curve(path, curve) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for epoch, split_name, metric, value in curve:
            w.writerow([epoch, split_name, metric, repr(float(value))])


def _pool_size(n_jobs: int) -> int:
    env = os.environ.get("KCLN_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ConfigError(f"KCLN_THREADS must be an integer, got {env!r}") from None
    return max(1, min(cap, n_jobs))


def run_jobs(cfg: ExperimentConfig, jobs: list[Job]) -> list[tuple]:
    # fail fast on bad inputs before spawning workers
    g, rs, _ = _load_inputs(cfg.entities, cfg.edges, cfg.rules, cfg.eval_labels)
    for warning in validate_against(rs, g):
        log.warning(warning)
    workers = _pool_size(len(jobs))
    if workers == 1:
        chunks = [_run_job(cfg, job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_job, [cfg] * len(jobs), jobs))
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: r[:7])
    return rows


def write_results(path, rows) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for protocol, model, alpha, frac, seed, epoch, metric, value in rows:
            w.writerow([protocol, model, repr(float(alpha)), repr(float(frac)), seed, epoch, metric, repr(float(value))])


def read_results(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _kcln_alpha(cfg: ExperimentConfig) -> float:
    return float(TrainConfig(**cfg.train).alpha)


def run_epochs(cfg: ExperimentConfig) -> str:
    """K-CLN and vanilla learning curves at ``epochs_fraction`` of the train split."""
    os.makedirs(cfg.output_dir, exist_ok=True)
    if cfg.save_checkpoints:
        os.makedirs(os.path.join(cfg.output_dir, "checkpoints"), exist_ok=True)
        os.makedirs(os.path.join(cfg.output_dir, "curves"), exist_ok=True)
    jobs = []
    for seed in cfg.seeds:
        for model, alpha in (("kcln", _kcln_alpha(cfg)), ("vanilla", 0.0)):
            ckpt = curve = None
            if cfg.save_checkpoints:
                ckpt = os.path.join(cfg.output_dir, "checkpoints", f"{model}_seed{seed}.json")
                curve = os.path.join(cfg.output_dir, "curves", f"{model}_seed{seed}.csv")
            jobs.append(Job("epochs", model, alpha, cfg.epochs_fraction, seed, True, ckpt, curve))
    path = os.path.join(cfg.output_dir, "results_epochs.csv")
    write_results(path, run_jobs(cfg, jobs))
    return path


def run_sample_sweep(cfg: ExperimentConfig) -> str:
    """Final test metrics of both models for every sample fraction and seed.

    With ``log_curves`` every epoch is written instead of only the returned one.
    """
    jobs = [
        Job("sample_sweep", model, alpha, f, seed, cfg.log_curves)
        for f in cfg.sample_fractions
        for seed in cfg.seeds
        for model, alpha in (("kcln", _kcln_alpha(cfg)), ("vanilla", 0.0))
    ]
    path = os.path.join(cfg.output_dir, "results_sample_sweep.csv")
    write_results(path, run_jobs(cfg, jobs))
    return path


def run_alpha_sweep(cfg: ExperimentConfig) -> str:
    """Final K-CLN metrics per (alpha, fraction, seed), with vanilla rows for reference."""
    jobs = [
        Job("alpha_sweep", "kcln", float(a), f, seed, cfg.log_curves)
        for a in cfg.alphas
        for f in cfg.sample_fractions
        for seed in cfg.seeds
    ]
    jobs += [Job("alpha_sweep", "vanilla", 0.0, f, seed, cfg.log_curves) for f in cfg.sample_fractions for seed in cfg.seeds]
    path = os.path.join(cfg.output_dir, "results_alpha_sweep.csv")
    write_results(path, run_jobs(cfg, jobs))
    return path


def aggregate(rows: list[dict]) -> list[dict]:
    """Mean and sample standard deviation over seeds for every other key."""
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        key = (row["protocol"], row["model"], row["alpha"], row["sample_fraction"], row["epoch"], row["metric"])
        groups.setdefault(key, []).append(float(row["value"]))
    out = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], float(k[2]), float(k[3]), int(k[4]), k[5])):
        vals = groups[key]
        out.append(
            dict(
                zip(("protocol", "model", "alpha", "sample_fraction", "epoch", "metric"), key),
                mean=statistics.fmean(vals),
                sd=statistics.stdev(vals) if len(vals) > 1 else 0.0,
                n=len(vals),
            )
        )
    return out


def write_aggregate(path, agg: list[dict]) -> None:
    cols = ("protocol", "model", "alpha", "sample_fraction", "epoch", "metric", "mean", "sd", "n")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in agg:
            w.writerow({**row, "mean": repr(row["mean"]), "sd": repr(row["sd"])})
