"""Rule grounding by subgraph matching, and the advice masks built from it."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .graph import KnowledgeGraph
from .rules import (
    AttributeAtom,
    Constant,
    Polarity,
    PreferenceRule,
    RuleSet,
    Variable,
)

Substitution = dict[str, int]


def _resolve(term, g: KnowledgeGraph, binding: dict[str, int]):
    """Entity index for ``term``: bound value, constant lookup, or None if free."""
    if isinstance(term, Constant):
        return g.entity_index(term.name)
    return binding.get(term.name)


class _Matcher:
    def __init__(self, g: KnowledgeGraph, rule: PreferenceRule, threshold: float):
        self.g = g
        self.threshold = threshold
        self.rule = rule
        self.variables = [v.name for v in rule.variables()]
        self.feasible = True
        self.literals = []
        for lit in rule.body:
            for t in (lit.entity,) if isinstance(lit, AttributeAtom) else (lit.src, lit.dst):
                if isinstance(t, Constant) and g.entity_index(t.name) is None:
                    self.feasible = False
            if isinstance(lit, AttributeAtom):
                f = g.feature_index(lit.feature)
                if f is None:
                    self.feasible = False
                self.literals.append(("attr", f, lit.entity, None))
            else:
                r = g.relation_index(lit.relation)
                if r is None:
                    self.feasible = False
                self.literals.append(("rel", r, lit.src, lit.dst))
        self._holders = {}

    def _attr_holders(self, f: int) -> np.ndarray:
        if f not in self._holders:
            self._holders[f] = np.flatnonzero(self.g.features[:, f] > self.threshold)
        return self._holders[f]

    def _pick(self, remaining: list[int], binding: dict[str, int]) -> int:
        # relation atoms first, most-constrained first
        def cost(k):
            kind, _, a, b = self.literals[k]
            free = sum(
                1
                for t in ((a,) if kind == "attr" else (a, b))
                if isinstance(t, Variable) and t.name not in binding
            )
            return (free, 0 if kind == "rel" else 1, k)

        return min(remaining, key=cost)

    def run(self) -> list[Substitution]:
        if not self.feasible:
            return []
        out: list[Substitution] = []
        self._search(list(range(len(self.literals))), {}, out)
        out.sort(key=lambda s: tuple(s[v] for v in self.variables))
        return out

    def _search(self, remaining, binding, out):
        if not remaining:
            out.append(dict(binding))
            return
        k = self._pick(remaining, binding)
        rest = [j for j in remaining if j != k]
        kind, idx, a, b = self.literals[k]
        g = self.g
        if kind == "attr":
            i = _resolve(a, g, binding)
            if i is not None:
                if g.features[i, idx] > self.threshold:
                    self._search(rest, binding, out)
                return
            for i in self._attr_holders(idx).tolist():
                binding[a.name] = i
                self._search(rest, binding, out)
            binding.pop(a.name, None)
            return

        s, d = _resolve(a, g, binding), _resolve(b, g, binding)
        if s is not None and d is not None:
            if g.has_edge(s, d, idx):
                self._search(rest, binding, out)
            return
        if s is not None:
            for d in g.out_neighbors(s, idx).tolist():
                binding[b.name] = d
                self._search(rest, binding, out)
            binding.pop(b.name, None)
            return
        if d is not None:
            for s in g.in_neighbors(d, idx).tolist():
                binding[a.name] = s
                self._search(rest, binding, out)
            binding.pop(a.name, None)
            return
        same = a.name == b.name
        for s, d in g.edges[idx].tolist():
            if same and s != d:
                continue
            binding[a.name] = s
            binding[b.name] = d
            self._search(rest, binding, out)
        binding.pop(a.name, None)
        binding.pop(b.name, None)


def ground_rule(g: KnowledgeGraph, p: PreferenceRule, threshold: float = 0.0) -> list[Substitution]:
    """All substitutions of ``p``'s variables under which every body literal holds.

    ``r(X, Y)`` holds iff the edge ``X -> Y`` exists under ``r``;
    ``attr(X, "f")`` holds iff feature ``f`` of ``X`` exceeds ``threshold``.
    Unknown names match nothing. Results are ordered by their bindings.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    return _Matcher(g, p, threshold).run()


@dataclass(frozen=True, eq=False)
class AdviceMasks:
    """Binary advice masks plus the resolved label advice.

    ``entity_mask`` is feature-major (D x |V|), ``context_mask[i, j] = 1``
    marks the edge ``j -> i`` as advised, and ``label_mask`` holds the
    resolved preferred label of each entity one-hot. ``preferred_label`` is
    -1 where no label is preferred.
    """

    entity_mask: np.ndarray
    context_mask: np.ndarray
    label_mask: np.ndarray
    preferred_label: np.ndarray
    nonpreferred: tuple[frozenset, ...]

    @property
    def n_entities(self) -> int:
        return self.label_mask.shape[0]

    def equals(self, other: "AdviceMasks") -> bool:
        return (
            np.array_equal(self.entity_mask, other.entity_mask)
            and np.array_equal(self.context_mask, other.context_mask)
            and np.array_equal(self.label_mask, other.label_mask)
            and np.array_equal(self.preferred_label, other.preferred_label)
            and self.nonpreferred == other.nonpreferred
        )


def empty_masks(g: KnowledgeGraph) -> AdviceMasks:
    return create_masks(g, RuleSet())


def create_masks(g: KnowledgeGraph, rs: RuleSet, threshold: float = 0.0) -> AdviceMasks:
    """Ground every rule and build the entity, context and label masks.

    Each satisfying substitution of a rule is one firing and casts one vote
    per preferred head label. An entity's preferred label is the most-voted
    one; an exact tie falls back to the entity's label in the data.
    """
    n, d, n_labels = g.n_entities, g.n_features, g.n_labels
    entity_mask = np.zeros((d, n), dtype=np.int8)
    context_mask = np.zeros((n, n), dtype=np.int8)
    votes = [Counter() for _ in range(n)]
    demoted: list[set] = [set() for _ in range(n)]

    for rule in rs:
        subs = ground_rule(g, rule, threshold)
        if not subs:
            continue
        for sigma in subs:
            for lit in rule.body:
                if isinstance(lit, AttributeAtom):
                    i = _resolve(lit.entity, g, sigma)
                    entity_mask[g.feature_index(lit.feature), i] = 1
                else:
                    j, i = _resolve(lit.src, g, sigma), _resolve(lit.dst, g, sigma)
                    if i != j:
                        context_mask[i, j] = 1
            for pref in rule.head:
                label = g.label_index(pref.label)
                i = _resolve(pref.entity, g, sigma)
                if label is None or i is None:
                    continue
                if pref.polarity is Polarity.PREFERRED:
                    votes[i][label] += 1
                else:
                    demoted[i].add(label)

    preferred = np.full(n, -1, dtype=np.int64)
    label_mask = np.zeros((n, n_labels), dtype=np.int8)
    for i, counter in enumerate(votes):
        if not counter:
            continue
        top = max(counter.values())
        winners = [l for l, c in counter.items() if c == top]
        preferred[i] = winners[0] if len(winners) == 1 else int(g.labels[i])
        label_mask[i, preferred[i]] = 1

    for arr in (entity_mask, context_mask, label_mask, preferred):
        arr.setflags(write=False)
    return AdviceMasks(
        entity_mask=entity_mask,
        context_mask=context_mask,
        label_mask=label_mask,
        preferred_label=preferred,
        nonpreferred=tuple(frozenset(s) for s in demoted),
    )


def entity_gate_flags(m: AdviceMasks) -> np.ndarray:
    """1 for entities touched by advice (attribute, preferred or demoted label)."""
    flags = m.entity_mask.any(axis=0) | m.label_mask.any(axis=1)
    flags |= np.array([bool(s) for s in m.nonpreferred], dtype=bool)
    return flags.astype(np.int8)


def context_gate_flags(m: AdviceMasks, g: KnowledgeGraph) -> np.ndarray:
    """``(|V|, |R|)`` flags: 1 iff some advised edge ``j -> i`` has ``j`` in N_r(i)."""
    flags = np.zeros((g.n_entities, g.n_relations), dtype=np.int8)
    for r in range(g.n_relations):
        e = g.edges[r]
        if len(e):
            hit = m.context_mask[e[:, 1], e[:, 0]] == 1
            flags[e[hit, 1], r] = 1
    return flags
