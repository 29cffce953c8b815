"""Multi-relational knowledge graph: loading, neighbor queries and splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class GraphFormatError(ValueError):
    """Raised when an entities/edges file does not conform to its format."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    """Immutable graph with one entity type and typed directed edges.

    ``edges[r]`` is an ``(m, 2)`` int array of ``(src, dst)`` pairs, sorted and
    free of duplicates. ``N_r(i)`` (the in-neighbourhood used for contexts) is
    the set of sources of ``r``-edges pointing at ``i``.
    """

    entity_names: tuple[str, ...]
    feature_names: tuple[str, ...]
    features: np.ndarray
    labels: np.ndarray
    label_names: tuple[str, ...]
    relation_names: tuple[str, ...]
    edges: tuple[np.ndarray, ...]
    _in_ptr: tuple[np.ndarray, ...] = field(init=False, repr=False)
    _in_idx: tuple[np.ndarray, ...] = field(init=False, repr=False)
    _out_ptr: tuple[np.ndarray, ...] = field(init=False, repr=False)
    _out_idx: tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.entity_names)
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2 or features.shape != (n, len(self.feature_names)):
            raise ValueError(
                f"features must have shape ({n}, {len(self.feature_names)}), got {features.shape}"
            )
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (n,):
            raise ValueError(f"labels must have shape ({n},)")
        if n and (labels.min() < 0 or labels.max() >= len(self.label_names)):
            raise ValueError("label index out of range")
        if len(set(self.entity_names)) != n:
            raise ValueError("duplicate entity name")
        if len(set(self.relation_names)) != len(self.relation_names):
            raise ValueError("duplicate relation name")
        if len(self.edges) != len(self.relation_names):
            raise ValueError("need one edge array per relation")

        edges = []
        for r, e in enumerate(self.edges):
            e = np.asarray(e, dtype=np.int64).reshape(-1, 2)
            if e.size and (e.min() < 0 or e.max() >= n):
                raise ValueError(f"edge endpoint out of range in relation {self.relation_names[r]!r}")
            e = np.unique(e, axis=0) if e.size else e
            edges.append(e)

        in_ptr, in_idx, out_ptr, out_idx = [], [], [], []
        for e in edges:
            # np.unique sorted by (src, dst); re-sort by (dst, src) for the in-index
            order = np.lexsort((e[:, 0], e[:, 1]))
            in_ptr.append(np.searchsorted(e[order, 1], np.arange(n + 1)))
            in_idx.append(e[order, 0].copy())
            out_ptr.append(np.searchsorted(e[:, 0], np.arange(n + 1)))
            out_idx.append(e[:, 1].copy())

        for arr in [features, labels, *edges, *in_ptr, *in_idx, *out_ptr, *out_idx]:
            arr.setflags(write=False)
        set_ = object.__setattr__
        set_(self, "features", features)
        set_(self, "labels", labels)
        set_(self, "edges", tuple(edges))
        set_(self, "_in_ptr", tuple(in_ptr))
        set_(self, "_in_idx", tuple(in_idx))
        set_(self, "_out_ptr", tuple(out_ptr))
        set_(self, "_out_idx", tuple(out_idx))

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def n_labels(self) -> int:
        return len(self.label_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    def entity_index(self, name: str) -> int | None:
        return self._lookup("entity_names").get(name)

    def feature_index(self, name: str) -> int | None:
        return self._lookup("feature_names").get(name)

    def label_index(self, name: str) -> int | None:
        return self._lookup("label_names").get(name)

    def relation_index(self, name: str) -> int | None:
        return self._lookup("relation_names").get(name)

    def _lookup(self, attr: str) -> dict[str, int]:
        cache = self.__dict__.setdefault("_lookups", {})
        if attr not in cache:
            cache[attr] = {name: i for i, name in enumerate(getattr(self, attr))}
        return cache[attr]

    def in_neighbors(self, i: int, r: int) -> np.ndarray:
        """Sources of ``r``-edges into ``i``, ascending."""
        return self._in_idx[r][self._in_ptr[r][i] : self._in_ptr[r][i + 1]]

    def out_neighbors(self, i: int, r: int) -> np.ndarray:
        """Targets of ``r``-edges out of ``i``, ascending."""
        return self._out_idx[r][self._out_ptr[r][i] : self._out_ptr[r][i + 1]]

    def has_edge(self, src: int, dst: int, r: int) -> bool:
        nbrs = self.out_neighbors(src, r)
        k = np.searchsorted(nbrs, dst)
        return bool(k < len(nbrs) and nbrs[k] == dst)

    def context_operator(self, r: int) -> sp.csr_matrix:
        """Row-normalised in-adjacency ``A`` with ``(A @ H)[i] = mean_{j in N_r(i)} H[j]``.

        Rows of entities with no in-neighbours are all zero.
        """
        cache = self.__dict__.setdefault("_ctx_ops", {})
        if r not in cache:
            n = self.n_entities
            counts = np.diff(self._in_ptr[r])
            data = np.repeat(1.0 / np.maximum(counts, 1), counts)
            cache[r] = sp.csr_matrix((data, self._in_idx[r], self._in_ptr[r]), shape=(n, n))
        return cache[r]

    def with_labels(self, labels) -> "KnowledgeGraph":
        return KnowledgeGraph(
            entity_names=self.entity_names,
            feature_names=self.feature_names,
            features=self.features,
            labels=np.asarray(labels, dtype=np.int64),
            label_names=self.label_names,
            relation_names=self.relation_names,
            edges=self.edges,
        )

    def structurally_equal(self, other: "KnowledgeGraph") -> bool:
        return (
            self.entity_names == other.entity_names
            and self.feature_names == other.feature_names
            and self.label_names == other.label_names
            and self.relation_names == other.relation_names
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and all(np.array_equal(a, b) for a, b in zip(self.edges, other.edges))
        )


def neighbors(g: KnowledgeGraph, i: int, r: int) -> list[int]:
    """N_r(i): sources of r-edges into entity ``i`` in ascending id order."""
    return g.in_neighbors(i, r).tolist()


def average_degree(g: KnowledgeGraph) -> float:
    """Mean total in-neighbour count per entity; 1.0 when the graph has no edges."""
    if g.n_entities == 0:
        raise ValueError("average degree of an empty graph is undefined")
    total = sum(len(e) for e in g.edges)
    z = total / g.n_entities
    return z if z > 0 else 1.0


LABELS_DIRECTIVE = "# labels:"


def _data_lines(fh, directives=None):
    for lineno, line in enumerate(fh, start=1):
        if directives is not None and line.startswith(LABELS_DIRECTIVE):
            directives["labels"] = (lineno, line[len(LABELS_DIRECTIVE) :].strip())
            continue
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        yield lineno, line.rstrip("\r\n")


def load_graph(entities_path, edges_path) -> KnowledgeGraph:
    """Read an entities CSV and an edges TSV into a :class:`KnowledgeGraph`.

    The label vocabulary comes from a ``# labels: a,b,c`` directive line when
    present (fixing label order; other labels are rejected), otherwise it is
    the sorted set of label strings found in the file.
    """
    entities_path, edges_path = str(entities_path), str(edges_path)
    directives: dict = {}
    with open(entities_path, encoding="utf-8", newline="") as fh:
        rows = list(_data_lines(fh, directives))
    declared = None
    if "labels" in directives:
        _, spec = directives["labels"]
        declared = tuple(l.strip() for l in spec.split(",") if l.strip())
        if len(set(declared)) != len(declared):
            raise GraphFormatError("duplicate label in labels directive", entities_path, directives["labels"][0])
    if not rows:
        raise GraphFormatError("missing header row", entities_path)
    header_line, header = rows[0]
    header = next(csv.reader([header]))
    if len(header) < 2 or header[0].strip() != "id" or header[1].strip() != "label":
        raise GraphFormatError("header must start with 'id,label'", entities_path, header_line)
    feature_names = tuple(h.strip() for h in header[2:])
    if len(set(feature_names)) != len(feature_names):
        raise GraphFormatError("duplicate feature name in header", entities_path, header_line)

    names: list[str] = []
    raw_labels: list[str] = []
    feats: list[list[float]] = []
    seen: dict[str, int] = {}
    for lineno, line in rows[1:]:
        cells = next(csv.reader([line]))
        if len(cells) != len(header):
            raise GraphFormatError(
                f"expected {len(header)} fields, got {len(cells)}", entities_path, lineno
            )
        name, label = cells[0].strip(), cells[1].strip()
        if not name:
            raise GraphFormatError("empty entity id", entities_path, lineno)
        if not label:
            raise GraphFormatError("empty label", entities_path, lineno)
        if declared is not None and label not in declared:
            raise GraphFormatError(f"unknown label {label!r}", entities_path, lineno)
        if name in seen:
            raise GraphFormatError(f"duplicate entity id {name!r}", entities_path, lineno)
        try:
            values = [float(c) for c in cells[2:]]
        except ValueError as exc:
            raise GraphFormatError(f"bad feature value ({exc})", entities_path, lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise GraphFormatError("non-finite feature value", entities_path, lineno)
        seen[name] = len(names)
        names.append(name)
        raw_labels.append(label)
        feats.append(values)

    label_names = declared if declared is not None else tuple(sorted(set(raw_labels)))
    label_of = {name: i for i, name in enumerate(label_names)}
    labels = np.array([label_of[l] for l in raw_labels], dtype=np.int64)
    features = np.array(feats, dtype=np.float64).reshape(len(names), len(feature_names))

    relation_names: list[str] = []
    rel_of: dict[str, int] = {}
    pairs: list[list[tuple[int, int]]] = []
    with open(edges_path, encoding="utf-8") as fh:
        for lineno, line in _data_lines(fh):
            cells = line.split("\t")
            if len(cells) != 3:
                raise GraphFormatError(
                    f"expected 3 tab-separated fields, got {len(cells)}", edges_path, lineno
                )
            src, rel, dst = (c.strip() for c in cells)
            if not rel:
                raise GraphFormatError("empty relation name", edges_path, lineno)
            for end in (src, dst):
                if end not in seen:
                    raise GraphFormatError(f"dangling edge endpoint {end!r}", edges_path, lineno)
            if rel not in rel_of:
                rel_of[rel] = len(relation_names)
                relation_names.append(rel)
                pairs.append([])
            pairs[rel_of[rel]].append((seen[src], seen[dst]))

    return KnowledgeGraph(
        entity_names=tuple(names),
        feature_names=feature_names,
        features=features,
        labels=labels,
        label_names=label_names,
        relation_names=tuple(relation_names),
        edges=tuple(np.array(p, dtype=np.int64).reshape(-1, 2) for p in pairs),
    )


def load_labels(path, g: KnowledgeGraph) -> np.ndarray:
    """Read an ``id,label`` CSV (e.g. clean labels) aligned to ``g``'s entities."""
    out = np.full(g.n_entities, -1, dtype=np.int64)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(_data_lines(fh))
    for lineno, line in rows[1:]:
        cells = next(csv.reader([line]))
        if len(cells) != 2:
            raise GraphFormatError("expected 'id,label'", str(path), lineno)
        i = g.entity_index(cells[0].strip())
        l = g.label_index(cells[1].strip())
        if i is None:
            raise GraphFormatError(f"unknown entity {cells[0]!r}", str(path), lineno)
        if l is None:
            raise GraphFormatError(f"unknown label {cells[1]!r}", str(path), lineno)
        out[i] = l
    if (out < 0).any():
        raise GraphFormatError("labels missing for some entities", str(path))
    return out


def write_graph(g: KnowledgeGraph, entities_path, edges_path) -> None:
    with open(entities_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"{LABELS_DIRECTIVE} {','.join(g.label_names)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", *g.feature_names])
        for i, name in enumerate(g.entity_names):
            w.writerow([name, g.label_names[g.labels[i]], *(repr(float(v)) for v in g.features[i])])
    with open(edges_path, "w", encoding="utf-8") as fh:
        for r, rel in enumerate(g.relation_names):
            for s, d in g.edges[r]:
                fh.write(f"{g.entity_names[s]}\t{rel}\t{g.entity_names[d]}\n")


@dataclass(frozen=True)
class SplitSpec:
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]
    seed: int

    def __post_init__(self):
        if set(self.train_ids) & set(self.test_ids):
            raise ValueError("train and test ids overlap")


def split(g: KnowledgeGraph, train_fraction: float, seed: int) -> SplitSpec:
    """Uniformly random train/test split; ``round(fraction * |V|)`` training ids."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    perm = np.random.default_rng(seed).permutation(g.n_entities)
    n_train = int(round(train_fraction * g.n_entities))
    return SplitSpec(
        train_ids=tuple(sorted(perm[:n_train].tolist())),
        test_ids=tuple(sorted(perm[n_train:].tolist())),
        seed=seed,
    )


def subsample(s: SplitSpec, fraction: float, seed: int) -> SplitSpec:
    """Keep ``ceil(fraction * |train|)`` training ids; the test set is untouched."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    k = math.ceil(fraction * len(s.train_ids) - 1e-9)
    if k >= len(s.train_ids):
        return s
    chosen = np.random.default_rng(seed).choice(len(s.train_ids), size=k, replace=False)
    train = tuple(sorted(s.train_ids[j] for j in chosen))
    return SplitSpec(train_ids=train, test_ids=s.test_ids, seed=s.seed)
