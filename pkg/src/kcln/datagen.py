"""Synthetic relational benchmarks with planted labels, targeted noise and advice."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, replace

import numpy as np

from .graph import KnowledgeGraph, write_graph
from .rules import (
    AttributeAtom,
    LabelPreference,
    Polarity,
    PreferenceRule,
    RelationAtom,
    RuleSet,
    Variable,
    format_rules,
)


@dataclass(frozen=True)
class GenConfig:
    n_entities: int = 500
    n_features: int = 30
    n_labels: int = 3
    n_relations: int = 2
    homophily: float = 0.8
    edges_per_entity: float = 3.0
    feature_signal: float = 1.0
    noise_rate: float = 0.0
    noise_predicate: str | None = None
    n_rules: int | None = None
    seed: int = 0

    def __post_init__(self):
        if min(self.n_entities, self.n_features, self.n_labels, self.n_relations) < 1:
            raise ValueError("entity, feature, label and relation counts must be positive")
        if self.n_features < self.n_labels:
            raise ValueError("need at least one feature per label")
        if not 0.0 <= self.homophily <= 1.0 or not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError("homophily and noise_rate must be in [0, 1]")
        if not self.edges_per_entity > 0:
            raise ValueError("edges_per_entity must be positive")
        if self.feature_signal < 0:
            raise ValueError("feature_signal must be non-negative")


@dataclass(frozen=True, eq=False)
class GeneratedBench:
    graph: KnowledgeGraph
    clean_labels: np.ndarray
    rules_true: RuleSet
    rules_corrupt: RuleSet
    config: GenConfig

    @property
    def feature_blocks(self) -> list[np.ndarray]:
        return feature_blocks(self.config.n_features, self.config.n_labels)

    @property
    def flipped(self) -> np.ndarray:
        return np.flatnonzero(self.graph.labels != self.clean_labels)


def feature_blocks(n_features: int, n_labels: int) -> list[np.ndarray]:
    """Contiguous, near-equal blocks of feature indices, one per label."""
    return np.array_split(np.arange(n_features), n_labels)


def _names(prefix: str, n: int) -> tuple[str, ...]:
    return tuple(f"{prefix}{k}" for k in range(n))


def generate(cfg: GenConfig) -> GeneratedBench:
    """Draw a benchmark; labels, features, edges and noise all follow ``cfg.seed``."""
    n, L = cfg.n_entities, cfg.n_labels
    rng = np.random.default_rng([cfg.seed, 0])
    labels = rng.integers(0, L, size=n)
    blocks = feature_blocks(cfg.n_features, L)
    features = rng.normal(size=(n, cfg.n_features))
    for label, block in enumerate(blocks):
        features[np.ix_(labels == label, block)] += cfg.feature_signal

    per_entity = int(math.floor(cfg.edges_per_entity + 0.5))
    if per_entity > n - 1:
        raise ValueError(f"infeasible: {per_entity} in-edges per entity with only {n} entities")
    edge_rng = np.random.default_rng([cfg.seed, 1])
    pairs: list[list[tuple[int, int]]] = [[] for _ in range(cfg.n_relations)]
    ids = np.arange(n)
    counter = 0
    for i in range(n):
        taken = np.zeros(n, dtype=bool)
        taken[i] = True
        for _ in range(per_entity):
            same = edge_rng.random() < cfg.homophily
            pool = ids[~taken & ((labels == labels[i]) == same)]
            if pool.size == 0:
                kind = "same-label" if same else "other-label"
                raise ValueError(f"infeasible: no {kind} partner left for entity {i}")
            j = int(pool[edge_rng.integers(pool.size)])
            taken[j] = True
            pairs[counter % cfg.n_relations].append((j, i))
            counter += 1

    label_names = _names("label", L)
    graph = KnowledgeGraph(
        entity_names=_names("e", n),
        feature_names=_names("f", cfg.n_features),
        features=features,
        labels=labels,
        label_names=label_names,
        relation_names=_names("rel", cfg.n_relations),
        edges=tuple(np.array(p, dtype=np.int64).reshape(-1, 2) for p in pairs),
    )
    bench = GeneratedBench(graph, labels.copy(), RuleSet(), RuleSet(), cfg)
    if cfg.noise_rate > 0:
        bench = inject_noise(bench, cfg.noise_rate, cfg.noise_predicate, seed=cfg.seed)
    rules = derive_true_advice(bench, cfg.n_rules or L)
    return replace(bench, rules_true=rules, rules_corrupt=corrupt_advice(rules, label_names, seed=cfg.seed))


def noise_targets(g: KnowledgeGraph, predicate: str | None) -> np.ndarray:
    if predicate is None:
        return np.arange(g.n_entities)
    f = g.feature_index(predicate)
    if f is None:
        raise ValueError(f"unknown noise predicate feature {predicate!r}")
    return np.flatnonzero(g.features[:, f] > 0)


def inject_noise(bench: GeneratedBench, rate: float, predicate: str | None = None, seed: int = 0) -> GeneratedBench:
    """Flip ``ceil(rate * |targets|)`` observed labels to a different random label.

    Targets are the entities whose ``predicate`` feature is positive, or all
    entities. Clean labels are left untouched.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be in [0, 1]")
    g = bench.graph
    targets = noise_targets(g, predicate)
    k = math.ceil(rate * targets.size - 1e-9)
    if k == 0:
        return bench
    rng = np.random.default_rng([seed, 2])
    chosen = np.sort(rng.choice(targets, size=k, replace=False))
    labels = g.labels.copy()
    L = g.n_labels
    if L < 2:
        raise ValueError("cannot flip labels with a single class")
    # shift by 1..L-1 gives a uniformly random different label
    labels[chosen] = (labels[chosen] + rng.integers(1, L, size=k)) % L
    return replace(bench, graph=g.with_labels(labels))


def derive_true_advice(bench: GeneratedBench, k_rules: int) -> RuleSet:
    """Rules ``attr(E1,"f"), rel(E2,E1) => label(E2,"l")+`` with ``f`` in label ``l``'s block.

    Rule ``k`` advises label ``k mod L`` through the next unused feature of
    that label's block and relation ``k mod |R|``.
    """
    if k_rules < 1:
        raise ValueError("k_rules must be >= 1")
    g = bench.graph
    blocks = feature_blocks(g.n_features, g.n_labels)
    L, R = g.n_labels, g.n_relations
    rules = []
    e1, e2 = Variable("E1"), Variable("E2")
    for k in range(k_rules):
        label = k % L
        slot = k // L
        if slot >= len(blocks[label]):
            raise ValueError(f"k_rules={k_rules} exceeds the indicative features of label {label}")
        feature = g.feature_names[blocks[label][slot]]
        body = (AttributeAtom(e1, feature), RelationAtom(g.relation_names[k % R], e2, e1))
        head = (LabelPreference(e2, g.label_names[label], Polarity.PREFERRED),)
        rules.append(PreferenceRule(body, head, k + 1))
    return RuleSet(tuple(rules))


def corrupt_advice(rs: RuleSet, label_names, seed: int = 0) -> RuleSet:
    """Replace every head label by a uniformly random different label."""
    label_names = list(label_names)
    if len(label_names) < 2:
        raise ValueError("need at least two labels to corrupt advice")
    rng = np.random.default_rng([seed, 3])
    out = []
    for rule in rs:
        head = []
        for pref in rule.head:
            others = [l for l in label_names if l != pref.label]
            head.append(replace(pref, label=others[int(rng.integers(len(others)))]))
        out.append(replace(rule, head=tuple(head)))
    return RuleSet(tuple(out))


def write_bench(bench: GeneratedBench, out_dir) -> dict[str, str]:
    """Write entities.csv, edges.tsv, clean_labels.csv, both rule files and manifest.json."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "entities": os.path.join(out_dir, "entities.csv"),
        "edges": os.path.join(out_dir, "edges.tsv"),
        "clean_labels": os.path.join(out_dir, "clean_labels.csv"),
        "rules_true": os.path.join(out_dir, "rules_true.txt"),
        "rules_corrupt": os.path.join(out_dir, "rules_corrupt.txt"),
        "manifest": os.path.join(out_dir, "manifest.json"),
    }
    g = bench.graph
    write_graph(g, paths["entities"], paths["edges"])
    with open(paths["clean_labels"], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"])
        for i, name in enumerate(g.entity_names):
            w.writerow([name, g.label_names[bench.clean_labels[i]]])
    with open(paths["rules_true"], "w", encoding="utf-8") as fh:
        fh.write(format_rules(bench.rules_true))
    with open(paths["rules_corrupt"], "w", encoding="utf-8") as fh:
        fh.write(format_rules(bench.rules_corrupt))
    manifest = {
        "config": asdict(bench.config),
        "n_flipped": int(bench.flipped.size),
        "files": {k: os.path.basename(v) for k, v in paths.items() if k != "manifest"},
    }
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
