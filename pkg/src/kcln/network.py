"""Column-network forward computation, with optional advice gates.

Every entity owns a column of ``T`` hidden layers. Layer ``t`` of entity
``i`` combines the entity's own previous layer with one context per
relation, the mean of the previous layer over the in-neighbours ``N_r(i)``::

    h_i^t = g(b + G_i * W h_i^{t-1} + (1/z) sum_r G_ir * V_r c_ir^t)

with gates ``G`` equal to one for plain column networks. Predictions are a
softmax over ``W_out h_i^T + b_out``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import KnowledgeGraph, average_degree

CHECKPOINT_MAGIC = "KCLN1"

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    n_labels: int
    n_relations: int
    n_layers: int = 10
    hidden_dim: int = 40
    activation: str = "relu"
    share_parameters: bool = True
    z: float = 1.0

    def __post_init__(self):
        if self.n_layers < 1 or self.hidden_dim < 1:
            raise ValueError("n_layers and hidden_dim must be >= 1")
        if self.input_dim < 1 or self.n_labels < 1 or self.n_relations < 0:
            raise ValueError("input_dim and n_labels must be positive")
        if not self.z > 0:
            raise ValueError("z must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    @classmethod
    def for_graph(cls, g: KnowledgeGraph, z: float | None = None, **kw) -> "NetworkConfig":
        return cls(
            input_dim=g.n_features,
            n_labels=g.n_labels,
            n_relations=g.n_relations,
            z=average_degree(g) if z is None else z,
            **kw,
        )

    @property
    def n_param_sets(self) -> int:
        if self.share_parameters:
            return min(self.n_layers, 2)
        return self.n_layers

    def param_set(self, t: int) -> int:
        """Index of the weights used by hidden layer ``t`` (1-based).

        With sharing, layer 1 keeps its own weights (it reads D-dimensional
        features) and layers 2..T share one set.
        """
        if self.share_parameters:
            return 0 if t == 1 else 1
        return t - 1


@dataclass
class NetworkParams:
    """``W[k]: K x K_prev``, ``V[k]: |R| x K x K_prev``, ``b[k]: K`` per weight set."""

    W: list[np.ndarray]
    V: list[np.ndarray]
    b: list[np.ndarray]
    W_out: np.ndarray
    b_out: np.ndarray

    def named(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for k in range(len(self.W)):
            out += [(f"W{k}", self.W[k]), (f"V{k}", self.V[k]), (f"b{k}", self.b[k])]
        return out + [("W_out", self.W_out), ("b_out", self.b_out)]

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            W=[a.copy() for a in self.W],
            V=[a.copy() for a in self.V],
            b=[a.copy() for a in self.b],
            W_out=self.W_out.copy(),
            b_out=self.b_out.copy(),
        )

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(
            W=[np.zeros_like(a) for a in self.W],
            V=[np.zeros_like(a) for a in self.V],
            b=[np.zeros_like(a) for a in self.b],
            W_out=np.zeros_like(self.W_out),
            b_out=np.zeros_like(self.b_out),
        )

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(
            W=[a.astype(dtype) for a in self.W],
            V=[a.astype(dtype) for a in self.V],
            b=[a.astype(dtype) for a in self.b],
            W_out=self.W_out.astype(dtype),
            b_out=self.b_out.astype(dtype),
        )

    @property
    def dtype(self):
        return self.W_out.dtype

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for _, a in self.named())


def init_params(cfg: NetworkConfig, seed: int = 0, init: str = "uniform_scaled", dtype=np.float64) -> NetworkParams:
    """Glorot-uniform weights and zero biases, or all zeros."""
    if init not in ("uniform_scaled", "zeros"):
        raise ValueError(f"unknown init {init!r}")
    rng = np.random.default_rng(seed)
    K, R = cfg.hidden_dim, cfg.n_relations

    def draw(shape, fan_in, fan_out):
        if init == "zeros":
            return np.zeros(shape, dtype=dtype)
        s = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-s, s, size=shape).astype(dtype)

    W, V, b = [], [], []
    for k in range(cfg.n_param_sets):
        k_prev = cfg.input_dim if k == 0 else K
        W.append(draw((K, k_prev), k_prev, K))
        V.append(draw((R, K, k_prev), k_prev, K))
        b.append(np.zeros(K, dtype=dtype))
    return NetworkParams(W, V, b, draw((cfg.n_labels, K), K, cfg.n_labels), np.zeros(cfg.n_labels, dtype=dtype))


@dataclass(frozen=True)
class Gates:
    """Per-entity column gates and per-(entity, relation) context gates."""

    entity: np.ndarray
    context: np.ndarray

    @classmethod
    def ones(cls, n_entities: int, n_relations: int) -> "Gates":
        return cls(np.ones(n_entities), np.ones((n_entities, n_relations)))

    def validate(self, n_entities: int, n_relations: int) -> None:
        if self.entity.shape != (n_entities,) or self.context.shape != (n_entities, n_relations):
            raise ValueError("gate shapes do not match the graph")
        if not (np.all(self.entity > 0) and np.all(self.context > 0)):
            raise ValueError("gates must be strictly positive")
        if not (np.isfinite(self.entity).all() and np.isfinite(self.context).all()):
            raise ValueError("gates must be finite")


def compute_gates(entity_flags, context_flags, advice_grad, alpha: float) -> Gates:
    """``exp(alpha * grad_i * flag)`` for column and context gates."""
    grad = np.asarray(advice_grad, dtype=np.float64)
    if not np.isfinite(grad).all():
        raise ValueError("advice gradient must be finite")
    ef = np.asarray(entity_flags, dtype=np.float64)
    cf = np.asarray(context_flags, dtype=np.float64)
    return Gates(np.exp(alpha * grad * ef), np.exp(alpha * grad[:, None] * cf))


def activate(name: str, s: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(s, 0)
    if name == "tanh":
        return np.tanh(s)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * s))
    return s


def activation_grad(name: str, s: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Derivative of the activation given pre-activation ``s`` and output ``h``."""
    if name == "relu":
        return (s > 0).astype(s.dtype)
    if name == "tanh":
        return 1.0 - h * h
    if name == "sigmoid":
        return h * (1.0 - h)
    return np.ones_like(s)


def softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def context(g: KnowledgeGraph, h_prev: np.ndarray, i: int, r: int) -> np.ndarray:
    """Mean of ``h_prev`` over ``N_r(i)``; the zero vector for an empty neighbourhood."""
    nbrs = g.in_neighbors(i, r)
    if len(nbrs) == 0:
        return np.zeros(h_prev.shape[1], dtype=h_prev.dtype)
    return h_prev[nbrs].mean(axis=0)


def _context_ops(g: KnowledgeGraph, dtype):
    return [g.context_operator(r).astype(dtype, copy=False) for r in range(g.n_relations)]


def _pre_activation(cfg, params, g, h_prev, t, gates, ops):
    k = cfg.param_set(t)
    W, V, b = params.W[k], params.V[k], params.b[k]
    contexts = [op @ h_prev for op in ops]
    s = b + gates.entity[:, None] * (h_prev @ W.T)
    if contexts:
        ctx = gates.context[:, 0, None] * (contexts[0] @ V[0].T)
        for r in range(1, len(contexts)):
            ctx = ctx + gates.context[:, r, None] * (contexts[r] @ V[r].T)
        s = s + ctx / cfg.z
    return s, contexts


def gated_hidden_layer(cfg, params, g, h_prev, t, gates: Gates, _ops=None) -> np.ndarray:
    """One hidden layer with every column and context term scaled by its gate."""
    gates.validate(g.n_entities, g.n_relations)
    ops = _context_ops(g, h_prev.dtype) if _ops is None else _ops
    s, _ = _pre_activation(cfg, params, g, h_prev, t, gates, ops)
    h = activate(cfg.activation, s)
    if not np.isfinite(h).all():
        raise FloatingPointError(f"non-finite activation in hidden layer {t}")
    return h


def hidden_layer(cfg, params, g, h_prev, t) -> np.ndarray:
    return gated_hidden_layer(cfg, params, g, h_prev, t, Gates.ones(g.n_entities, g.n_relations))


@dataclass
class ForwardTrace:
    """Activations of every layer (``hidden[0]`` is the input) and output probabilities."""

    hidden: list[np.ndarray]
    pre: list[np.ndarray]
    contexts: list[list[np.ndarray]]
    logits: np.ndarray
    probs: np.ndarray
    gates: Gates = field(repr=False, default=None)


def forward(cfg: NetworkConfig, params: NetworkParams, g: KnowledgeGraph, features=None, gates: Gates | None = None) -> ForwardTrace:
    """Run all ``T`` hidden layers and the softmax output on every entity."""
    dtype = params.dtype
    x = g.features if features is None else features
    x = np.asarray(x, dtype=dtype)
    if x.shape != (g.n_entities, cfg.input_dim):
        raise ValueError(f"features must have shape ({g.n_entities}, {cfg.input_dim})")
    if gates is None:
        gates = Gates.ones(g.n_entities, g.n_relations)
    gates.validate(g.n_entities, g.n_relations)
    gates = Gates(gates.entity.astype(dtype), gates.context.astype(dtype))
    ops = _context_ops(g, dtype)

    hidden, pre, ctxs = [x], [None], [None]
    for t in range(1, cfg.n_layers + 1):
        s, c = _pre_activation(cfg, params, g, hidden[-1], t, gates, ops)
        h = activate(cfg.activation, s)
        if not np.isfinite(h).all():
            raise FloatingPointError(f"non-finite activation in hidden layer {t}")
        hidden.append(h)
        pre.append(s)
        ctxs.append(c)
    logits = hidden[-1] @ params.W_out.T + params.b_out
    probs = softmax(logits)
    if not np.isfinite(probs).all():
        raise FloatingPointError("non-finite output probabilities")
    return ForwardTrace(hidden, pre, ctxs, logits, probs, gates)


def _encode(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "dtype": str(a.dtype), "data": a.ravel().tolist()}


def _decode(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=d["dtype"]).reshape(d["shape"])


def save_checkpoint(path, cfg: NetworkConfig, params: NetworkParams, gates: Gates | None = None, extra: dict | None = None) -> None:
    """Write a JSON checkpoint: config, shape-tagged arrays, optional gates and metadata."""
    doc = {
        "magic": CHECKPOINT_MAGIC,
        "config": asdict(cfg),
        "params": {name: _encode(a) for name, a in params.named()},
        "gates": None if gates is None else {"entity": _encode(gates.entity), "context": _encode(gates.context)},
        "extra": extra or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> tuple[NetworkConfig, NetworkParams, Gates | None, dict]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a {CHECKPOINT_MAGIC} checkpoint")
    cfg = NetworkConfig(**doc["config"])
    arrays = {name: _decode(d) for name, d in doc["params"].items()}
    n = cfg.n_param_sets
    params = NetworkParams(
        W=[arrays[f"W{k}"] for k in range(n)],
        V=[arrays[f"V{k}"] for k in range(n)],
        b=[arrays[f"b{k}"] for k in range(n)],
        W_out=arrays["W_out"],
        b_out=arrays["b_out"],
    )
    gates = None
    if doc.get("gates"):
        gates = Gates(_decode(doc["gates"]["entity"]), _decode(doc["gates"]["context"]))
    return cfg, params, gates, doc.get("extra", {})
