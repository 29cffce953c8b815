"""Random instance generators shared by unit and acceptance tests."""

import itertools

import numpy as np

from conftest import make_graph
from kcln.rules import (
    AttributeAtom,
    Constant,
    LabelPreference,
    Polarity,
    PreferenceRule,
    RelationAtom,
    Variable,
)

VAR_NAMES = ["X", "Y", "Z", "E1", "E2", "Ab_3"]
IDENTS = ["cites", "likes", "e0", "e1", "e2", "near_by", "q9"]
STRINGS = ["AI", "domain", "f0", "f1", "has space", "x-y", "type2"]


def random_term(rng, variables, allow_const=True):
    if allow_const and rng.random() < 0.2:
        return Constant(str(rng.choice(["e0", "e1", "e2", "e17"])))
    return Variable(str(rng.choice(variables)))


def random_rule(rng) -> PreferenceRule:
    variables = list(rng.choice(VAR_NAMES, size=int(rng.integers(1, 4)), replace=False))
    body = []
    for _ in range(int(rng.integers(1, 5))):
        if rng.random() < 0.5:
            pred = "attr" if rng.random() < 0.7 else str(rng.choice(IDENTS))
            body.append(AttributeAtom(random_term(rng, variables), str(rng.choice(STRINGS)), pred))
        else:
            body.append(RelationAtom(str(rng.choice(IDENTS)), random_term(rng, variables), random_term(rng, variables)))
    bound = sorted({t.name for lit in body for t in _terms(lit) if isinstance(t, Variable)})
    if not bound:
        body.append(AttributeAtom(Variable(variables[0]), "f0"))
        bound = [variables[0]]
    head = []
    for _ in range(int(rng.integers(1, 3))):
        ent = Variable(str(rng.choice(bound))) if rng.random() < 0.9 else Constant("e1")
        pol = Polarity.PREFERRED if rng.random() < 0.7 else Polarity.NON_PREFERRED
        head.append(LabelPreference(ent, str(rng.choice(["a", "b", "c", "irrelevant"])), pol))
    return PreferenceRule(tuple(body), tuple(head))


def _terms(lit):
    return (lit.entity,) if isinstance(lit, AttributeAtom) else (lit.src, lit.dst)


def random_graph(rng, max_entities=8, n_relations=2, n_features=3, n_labels=3, density=0.25):
    n = int(rng.integers(1, max_entities + 1))
    edges = {}
    for r in range(n_relations):
        pairs = [(i, j) for i in range(n) for j in range(n) if rng.random() < density]
        edges[f"r{r}"] = pairs
    features = (rng.random((n, n_features)) < 0.5).astype(float) * rng.random((n, n_features)) * 2
    labels = rng.integers(0, n_labels, size=n)
    return make_graph(
        n,
        edges,
        features=features,
        feature_names=[f"f{k}" for k in range(n_features)],
        labels=labels,
        label_names=[f"l{k}" for k in range(n_labels)],
    )


def random_grounding_rule(rng, g, n_vars=None) -> PreferenceRule:
    """Rule over ``g``'s vocabulary with at most three variables, sometimes with unknown names."""
    n_vars = n_vars or int(rng.integers(1, 4))
    variables = ["X", "Y", "Z"][:n_vars]
    feats = list(g.feature_names) + ["missing"]
    rels = list(g.relation_names) + ["nowhere"]
    body = []
    for v in variables:  # every variable occurs in the body
        if rng.random() < 0.5 or n_vars == 1:
            body.append(AttributeAtom(Variable(v), str(rng.choice(feats[:-1] if rng.random() < 0.9 else feats))))
        else:
            other = str(rng.choice(variables))
            src, dst = (v, other) if rng.random() < 0.5 else (other, v)
            body.append(RelationAtom(str(rng.choice(rels[:-1] if rng.random() < 0.9 else rels)), Variable(src), Variable(dst)))
    for _ in range(int(rng.integers(0, 3))):
        a, b = rng.choice(variables, size=2)
        if rng.random() < 0.15 and g.n_entities:
            body.append(RelationAtom(str(rng.choice(rels[:-1])), Constant(g.entity_names[int(rng.integers(g.n_entities))]), Variable(str(b))))
        else:
            body.append(RelationAtom(str(rng.choice(rels[:-1])), Variable(str(a)), Variable(str(b))))
    head = [
        LabelPreference(
            Variable(str(rng.choice(variables))),
            str(rng.choice(g.label_names)),
            Polarity.PREFERRED if rng.random() < 0.8 else Polarity.NON_PREFERRED,
        )
        for _ in range(int(rng.integers(1, 3)))
    ]
    return PreferenceRule(tuple(body), tuple(head))


def brute_force_substitutions(g, rule, threshold=0.0):
    """Every total assignment of the rule's variables that satisfies the body."""
    names = [v.name for v in rule.variables()]
    out = []
    for combo in itertools.product(range(g.n_entities), repeat=len(names)):
        sigma = dict(zip(names, combo))
        if all(_holds(g, lit, sigma, threshold) for lit in rule.body):
            out.append(sigma)
    return out


def _value(g, term, sigma):
    return sigma[term.name] if isinstance(term, Variable) else g.entity_index(term.name)


def _holds(g, lit, sigma, threshold):
    if isinstance(lit, AttributeAtom):
        i, f = _value(g, lit.entity, sigma), g.feature_index(lit.feature)
        return i is not None and f is not None and g.features[i, f] > threshold
    r = g.relation_index(lit.relation)
    s, d = _value(g, lit.src, sigma), _value(g, lit.dst, sigma)
    if r is None or s is None or d is None:
        return False
    return any(int(a) == s and int(b) == d for a, b in g.edges[r])


def brute_force_masks(g, rules, threshold=0.0):
    """Direct transcription of the mask-construction rules over brute-force substitutions."""
    n, d, L = g.n_entities, g.n_features, g.n_labels
    mw = np.zeros((d, n), dtype=np.int8)
    mc = np.zeros((n, n), dtype=np.int8)
    votes = np.zeros((n, L), dtype=int)
    demoted = [set() for _ in range(n)]
    for rule in rules:
        for sigma in brute_force_substitutions(g, rule, threshold):
            for lit in rule.body:
                if isinstance(lit, AttributeAtom):
                    mw[g.feature_index(lit.feature), _value(g, lit.entity, sigma)] = 1
                else:
                    src, dst = _value(g, lit.src, sigma), _value(g, lit.dst, sigma)
                    if src != dst:
                        mc[dst, src] = 1
            for pref in rule.head:
                i, lab = _value(g, pref.entity, sigma), g.label_index(pref.label)
                if pref.polarity is Polarity.PREFERRED:
                    votes[i, lab] += 1
                else:
                    demoted[i].add(lab)
    pref_label = np.full(n, -1)
    ml = np.zeros((n, L), dtype=np.int8)
    for i in range(n):
        if votes[i].any():
            top = np.flatnonzero(votes[i] == votes[i].max())
            pref_label[i] = top[0] if len(top) == 1 else g.labels[i]
            ml[i, pref_label[i]] = 1
    return mw, mc, ml, pref_label, [frozenset(s) for s in demoted]


def fd_instance(seed, gated):
    """Random tiny network, graph, gates and labels for gradient checks."""
    from kcln.network import Gates, NetworkConfig, init_params
    from kcln.training import data_loss

    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    R = int(rng.integers(1, 3))
    L = int(rng.integers(2, 4))
    D = int(rng.integers(1, 4))
    edges = {f"r{r}": [(i, j) for i in range(n) for j in range(n) if i != j and rng.random() < 0.4] for r in range(R)}
    g = make_graph(n, edges, features=rng.normal(size=(n, D)), labels=rng.integers(0, L, size=n), label_names=[f"l{k}" for k in range(L)])
    cfg = NetworkConfig(
        input_dim=D,
        n_labels=L,
        n_relations=R,
        n_layers=int(rng.integers(1, 4)),
        hidden_dim=int(rng.integers(1, 5)),
        activation=str(rng.choice(["tanh", "sigmoid", "identity", "relu"])),
        share_parameters=bool(rng.random() < 0.5),
        z=float(rng.uniform(0.5, 2.0)),
    )
    params = init_params(cfg, seed=seed)
    for _, a in params.named():  # non-zero biases exercise every path
        a += rng.normal(scale=0.3, size=a.shape)
    gates = Gates.ones(n, R)
    if gated:
        gates = Gates(np.exp(rng.uniform(-1, 1, size=n)), np.exp(rng.uniform(-1, 1, size=(n, R))))
    if cfg.activation == "relu":
        from kcln.network import forward

        # keep every pre-activation clear of the kink so differences are valid
        for _ in range(50):
            trace = forward(cfg, params, g, gates=gates)
            if min(np.abs(s).min() for s in trace.pre[1:]) > 1e-3:
                break
            for b in params.b:
                b += rng.normal(scale=0.05, size=b.shape)
    ids = np.sort(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))
    scale = float(rng.uniform(0.2, 1.0))
    return g, cfg, params, gates, ids, scale, data_loss


def fd_max_rel_error(seed, gated, step=1e-6):
    """Largest relative error between backward and central differences."""
    from kcln.network import forward
    from kcln.training import backward

    g, cfg, params, gates, ids, scale, data_loss = fd_instance(seed, gated)

    def loss():
        return data_loss(forward(cfg, params, g, gates=gates).probs, g.labels, ids, scale)

    analytic = backward(cfg, params, g, forward(cfg, params, g, gates=gates), g.labels, ids, scale)
    worst = 0.0
    for (_, p), (_, a) in zip(params.named(), analytic.named()):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + step
            up = loss()
            p[idx] = old - step
            down = loss()
            p[idx] = old
            numeric = (up - down) / (2 * step)
            denom = max(abs(numeric), abs(a[idx]), 1e-5)
            worst = max(worst, abs(numeric - a[idx]) / denom)
    return worst
