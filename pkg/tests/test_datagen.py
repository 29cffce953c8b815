import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kcln.datagen import (
    GenConfig,
    corrupt_advice,
    derive_true_advice,
    feature_blocks,
    generate,
    inject_noise,
    write_bench,
)
from kcln.graph import load_graph, load_labels, split
from kcln.grounding import empty_masks, ground_rule
from kcln.network import NetworkConfig
from kcln.rules import load_rules, validate_against
from kcln.training import TrainConfig, train


def test_homophily_one_joins_same_labels():
    b = generate(GenConfig(n_entities=60, homophily=1.0, seed=2))
    for e in b.graph.edges:
        assert np.all(b.clean_labels[e[:, 0]] == b.clean_labels[e[:, 1]])


def test_edge_counts_and_round_robin():
    b = generate(GenConfig(n_entities=50, edges_per_entity=3, n_relations=2, seed=1))
    g = b.graph
    assert sum(len(e) for e in g.edges) == 150
    assert abs(len(g.edges[0]) - len(g.edges[1])) <= 1
    indeg = sum(np.bincount(e[:, 1], minlength=50) for e in g.edges)
    assert np.all(indeg == 3)


def test_zero_signal_features_uninformative():
    b = generate(GenConfig(n_entities=3000, feature_signal=0.0, seed=0))
    g = b.graph
    means = np.array([g.features[g.labels == l].mean(axis=0) for l in range(3)])
    assert np.abs(means).max() < 0.15


def test_signal_shifts_own_block():
    b = generate(GenConfig(n_entities=3000, feature_signal=2.0, seed=0))
    blocks = feature_blocks(30, 3)
    for l in range(3):
        m = b.graph.features[b.clean_labels == l]
        assert abs(m[:, blocks[l]].mean() - 2.0) < 0.1
        assert abs(m[:, blocks[(l + 1) % 3]].mean()) < 0.1


def test_same_seed_same_bench():
    a, b = generate(GenConfig(n_entities=40, noise_rate=0.3, seed=9)), generate(GenConfig(n_entities=40, noise_rate=0.3, seed=9))
    assert a.graph.structurally_equal(b.graph) and a.rules_corrupt == b.rules_corrupt


def test_infeasible_edges():
    with pytest.raises(ValueError, match="infeasible"):
        generate(GenConfig(n_entities=3, edges_per_entity=5))
    with pytest.raises(ValueError, match="infeasible"):
        generate(GenConfig(n_entities=6, n_labels=6, n_features=6, homophily=1.0, edges_per_entity=1))


def test_noise_counts():
    clean = generate(GenConfig(n_entities=40, seed=3))
    assert inject_noise(clean, 0.0).graph.structurally_equal(clean.graph)
    full = inject_noise(clean, 1.0, seed=1)
    assert np.all(full.graph.labels != full.clean_labels)
    targeted = inject_noise(clean, 0.5, predicate="f0", seed=1)
    n_targets = int((clean.graph.features[:, 0] > 0).sum())
    assert targeted.flipped.size == int(np.ceil(0.5 * n_targets))
    assert np.all(clean.graph.features[targeted.flipped, 0] > 0)


def test_true_advice_shape():
    b = generate(GenConfig(n_entities=40, n_labels=2, n_features=10, seed=0, n_rules=1))
    (rule,) = b.rules_true
    assert rule.head[0].label == "label0"
    feature = rule.body[0].feature
    assert b.graph.feature_index(feature) in feature_blocks(10, 2)[0]
    assert validate_against(b.rules_true, b.graph) == []
    with pytest.raises(ValueError):
        derive_true_advice(b, 11)


def test_rules_ground_on_high_signal_bench():
    b = generate(GenConfig(n_entities=100, feature_signal=3.0, seed=0))
    assert all(len(ground_rule(b.graph, r)) >= 1 for r in b.rules_true)


def test_corruption():
    b = generate(GenConfig(n_entities=60, n_labels=2, n_features=6, n_rules=4, seed=0))
    bad = corrupt_advice(b.rules_true, b.graph.label_names, seed=5)
    for t, c in zip(b.rules_true, bad):
        assert t.body == c.body and t.head[0].label != c.head[0].label
    assert bad == corrupt_advice(b.rules_true, b.graph.label_names, seed=5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_noise_changes_exactly_the_flips(seed, rate):
    clean = generate(GenConfig(n_entities=60, seed=seed % 50))
    noisy = inject_noise(clean, rate, seed=seed)
    assert noisy.flipped.size == int(np.ceil(rate * 60 - 1e-9))
    assert np.array_equal(noisy.clean_labels, clean.graph.labels)
    assert np.array_equal(noisy.graph.features, clean.graph.features)


def test_write_bench_roundtrip(tmp_path):
    b = generate(GenConfig(n_entities=25, noise_rate=0.2, seed=4))
    paths = write_bench(b, tmp_path)
    g = load_graph(paths["entities"], paths["edges"])
    assert g.structurally_equal(b.graph)
    assert np.array_equal(load_labels(paths["clean_labels"], g), b.clean_labels)
    assert load_rules(paths["rules_true"]) == b.rules_true
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"]["n_entities"] == 25 and manifest["n_flipped"] == b.flipped.size


def test_sanity_floor_for_vanilla():
    """Strong signal plus homophily is learnable by a plain column network."""
    b = generate(GenConfig(feature_signal=3.0, homophily=0.8, seed=0))
    g = b.graph
    sp = split(g, 0.6, 0)
    cfg = NetworkConfig.for_graph(g, n_layers=10, activation="tanh")
    tc = TrainConfig(learning_rate=0.1, momentum=0.9, max_epochs=40, validation_fraction=0.0)
    res = train(g, sp, empty_masks(g), cfg, tc, eval_labels=b.clean_labels)
    assert res.final_metric("test", "micro_f1") >= 0.9
