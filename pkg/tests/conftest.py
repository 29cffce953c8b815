import numpy as np
import pytest

from kcln.graph import KnowledgeGraph


def make_graph(n, edges=None, features=None, feature_names=None, labels=None, label_names=("a", "b")):
    """Small graph helper: ``edges`` maps relation name -> list of (src, dst)."""
    edges = edges or {}
    if features is None:
        features = np.zeros((n, 1))
    features = np.asarray(features, dtype=float)
    if feature_names is None:
        feature_names = tuple(f"f{k}" for k in range(features.shape[1]))
    if labels is None:
        labels = np.zeros(n, dtype=int)
    return KnowledgeGraph(
        entity_names=tuple(f"e{i}" for i in range(n)),
        feature_names=tuple(feature_names),
        features=features,
        labels=np.asarray(labels),
        label_names=tuple(label_names),
        relation_names=tuple(edges),
        edges=tuple(np.array(v, dtype=np.int64).reshape(-1, 2) for v in edges.values()),
    )


@pytest.fixture
def citation_pair():
    """a has "AI", b has "domain", b cites a."""
    return KnowledgeGraph(
        entity_names=("a", "b"),
        feature_names=("AI", "domain"),
        features=np.array([[1.0, 0.0], [0.0, 1.0]]),
        labels=np.array([0, 0]),
        label_names=("relevant", "irrelevant"),
        relation_names=("cites",),
        edges=(np.array([[1, 0]]),),
    )


CITATION_RULE = 'attr(E1,"AI"), attr(E2,"domain"), cites(E2,E1) => label(E2,"irrelevant")+'
MEDICAL_RULE = 'attr(E1,"fat"), attr(E1,"obese"), cites(E2,E1) => label(E2,"type2")+'
