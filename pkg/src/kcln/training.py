"""Losses, gradients and the advice-gated training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .graph import KnowledgeGraph, SplitSpec
from .grounding import AdviceMasks, context_gate_flags, entity_gate_flags
from .metrics import evaluate_probs
from .network import (
    ForwardTrace,
    Gates,
    NetworkConfig,
    NetworkParams,
    activation_grad,
    compute_gates,
    forward,
    init_params,
)

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.5
    loss_scaling: str = "data_tradeoff"
    advice_loss_form: str = "log_likelihood"
    learning_rate: float = 0.01
    momentum: float = 0.0
    max_epochs: int = 100
    patience: int = 10
    validation_fraction: float = 0.1
    seed: int = 0
    init: str = "uniform_scaled"
    precision: str = "f64"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.loss_scaling not in ("data_tradeoff", "none"):
            raise ValueError(f"unknown loss_scaling {self.loss_scaling!r}")
        if self.advice_loss_form not in ("log_likelihood", "squared"):
            raise ValueError(f"unknown advice_loss_form {self.advice_loss_form!r}")
        if self.precision not in ("f64", "f32"):
            raise ValueError(f"unknown precision {self.precision!r}")
        if self.max_epochs < 0 or self.patience < 1:
            raise ValueError("max_epochs must be >= 0 and patience >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32


def _check_probs(probs):
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or not np.allclose(probs.sum(axis=1), 1.0, rtol=0.0, atol=1e-6):
        raise ValueError("each probability row must sum to 1")
    return probs


def _advised_components(probs, masks: AdviceMasks):
    """Per entity: (target, P) at the advised component, or None outside the advice."""
    pref = masks.preferred_label
    n = probs.shape[0]
    p_pref = np.where(pref >= 0, probs[np.arange(n), np.maximum(pref, 0)], 0.0)
    p_demoted = np.array(
        [probs[i, sorted(s)].sum() if s else 0.0 for i, s in enumerate(masks.nonpreferred)]
    )
    has_demoted = np.array([bool(s) for s in masks.nonpreferred], dtype=bool)
    return pref >= 0, p_pref, has_demoted & (pref < 0), p_demoted


def advice_gradient(probs, masks: AdviceMasks) -> np.ndarray:
    """``1 - P(preferred)`` for entities with a preferred label, ``-P(demoted)``
    for entities with only non-preferred advice, 0 elsewhere."""
    probs = _check_probs(probs)
    has_pref, p_pref, only_demoted, p_demoted = _advised_components(probs, masks)
    grad = np.zeros(probs.shape[0])
    grad[has_pref] = 1.0 - p_pref[has_pref]
    grad[only_demoted] = -p_demoted[only_demoted]
    return np.clip(grad, -1.0, 1.0)


def advice_gradient_squared(probs, masks: AdviceMasks) -> np.ndarray:
    """Squared-loss form ``2 (y - P)(1 - P) P`` with ``y = 1`` for preferred, 0 for demoted."""
    probs = _check_probs(probs)
    has_pref, p_pref, only_demoted, p_demoted = _advised_components(probs, masks)
    grad = np.zeros(probs.shape[0])
    p = p_pref[has_pref]
    grad[has_pref] = 2.0 * (1.0 - p) * (1.0 - p) * p
    q = p_demoted[only_demoted]
    grad[only_demoted] = 2.0 * (0.0 - q) * (1.0 - q) * q
    return grad


def modified_gradient_check(data_grad: float, advice_grad: float, alpha: float) -> float:
    """Reference combination ``(1 - alpha) * data_grad + alpha * advice_grad``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    return (1.0 - alpha) * data_grad + alpha * advice_grad


def data_loss(probs, labels, ids, scale: float = 1.0) -> float:
    """Mean cross-entropy over ``ids`` (probabilities floored at 1e-12), times ``scale``."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("no training entities")
    p = np.asarray(probs)[ids, np.asarray(labels)[ids]]
    return float(scale * -np.mean(np.log(np.maximum(p, PROB_FLOOR))))


def data_scale(train_cfg: TrainConfig, has_advice: bool) -> float:
    """Weight of the data loss: ``1 - alpha`` under the data trade-off when advice exists."""
    if has_advice and train_cfg.loss_scaling == "data_tradeoff":
        return 1.0 - train_cfg.alpha
    return 1.0


def backward(cfg: NetworkConfig, params: NetworkParams, g: KnowledgeGraph, trace: ForwardTrace, labels, ids, scale: float = 1.0) -> NetworkParams:
    """Exact gradient of ``data_loss(trace.probs, labels, ids, scale)`` w.r.t. every parameter.

    The gates stored in ``trace`` are treated as constants.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("no training entities")
    if trace.probs.shape != (g.n_entities, cfg.n_labels):
        raise ValueError("trace shape does not match the network")
    labels = np.asarray(labels)
    grads = params.zeros_like()
    dtype = params.dtype
    gates = trace.gates

    d_logits = np.zeros_like(trace.probs)
    rows = trace.probs[ids]
    y = labels[ids]
    live = rows[np.arange(ids.size), y] >= PROB_FLOOR
    delta = rows.copy()
    delta[np.arange(ids.size), y] -= 1.0
    delta[~live] = 0.0
    np.add.at(d_logits, ids, delta * (scale / ids.size))

    h_last = trace.hidden[-1]
    grads.W_out[...] = d_logits.T @ h_last
    grads.b_out[...] = d_logits.sum(axis=0)
    d_h = d_logits @ params.W_out

    ops_t = [g.context_operator(r).T.astype(dtype, copy=False).tocsr() for r in range(g.n_relations)]
    for t in range(cfg.n_layers, 0, -1):
        k = cfg.param_set(t)
        d_s = d_h * activation_grad(cfg.activation, trace.pre[t], trace.hidden[t])
        h_prev = trace.hidden[t - 1]
        grads.b[k] += d_s.sum(axis=0)
        d_w = gates.entity[:, None] * d_s
        grads.W[k] += d_w.T @ h_prev
        if t > 1:
            d_h = d_w @ params.W[k]
        for r in range(g.n_relations):
            d_c = gates.context[:, r, None] * d_s / cfg.z
            grads.V[k][r] += d_c.T @ trace.contexts[t][r]
            if t > 1:
                d_h = d_h + ops_t[r] @ (d_c @ params.V[k][r])
    return grads


@dataclass
class TrainState:
    epoch: int = 0
    probs: np.ndarray | None = None
    advice_grad: np.ndarray | None = None
    loss_history: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    best_params: NetworkParams | None = None
    best_gates: Gates | None = None
    stopped_early: bool = False


@dataclass
class TrainResult:
    params: NetworkParams
    state: TrainState
    curve: list[tuple[int, str, str, float]]
    gates: Gates

    def final_metric(self, split: str, metric: str) -> float:
        """Value of ``metric`` at the epoch whose parameters were returned."""
        for epoch, s, m, v in self.curve:
            if epoch == self.state.best_epoch and s == split and m == metric:
                return v
        raise KeyError((split, metric))

    def metric_series(self, split: str, metric: str) -> list[tuple[int, float]]:
        return [(e, v) for e, s, m, v in self.curve if s == split and m == metric]


def validation_split(train_ids, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Hold out ``floor(fraction * |train|)`` training ids for early stopping."""
    train_ids = np.asarray(sorted(train_ids), dtype=np.int64)
    n_val = int(np.floor(fraction * train_ids.size + 1e-9))
    if n_val == 0 or n_val >= train_ids.size:
        return train_ids, np.zeros(0, dtype=np.int64)
    perm = np.random.default_rng([seed, 17]).permutation(train_ids.size)
    return np.sort(train_ids[perm[n_val:]]), np.sort(train_ids[perm[:n_val]])


def train(
    g: KnowledgeGraph,
    split: SplitSpec,
    masks: AdviceMasks,
    net_cfg: NetworkConfig,
    train_cfg: TrainConfig,
    eval_labels=None,
    task: str | None = None,
    on_epoch=None,
) -> TrainResult:
    """Full-batch training with advice gates recomputed after every epoch.

    Epoch ``k`` gates the network with the advice gradient stored at the end
    of epoch ``k - 1`` (zero before the first epoch), takes one gradient step
    on the data loss (weighted by ``1 - alpha`` from epoch 2 on under the data
    trade-off, so epoch 1 matches an unadvised run), then recomputes every entity's probabilities and stores
    the new advice gradient. The curve records training and validation loss
    against the observed labels and test metrics against ``eval_labels``
    (observed labels by default). Returns the parameters of the epoch with
    the lowest validation loss when a validation slice exists.

    ``on_epoch(epoch, params, state)`` is called after every update, for
    inspection only.
    """
    dtype = train_cfg.dtype
    task = task or ("binary" if g.n_labels == 2 else "multiclass")
    labels = g.labels
    eval_labels = labels if eval_labels is None else np.asarray(eval_labels)
    fit_ids, val_ids = validation_split(split.train_ids, train_cfg.validation_fraction, train_cfg.seed)
    if fit_ids.size == 0:
        raise ValueError("no training entities")
    test_ids = np.asarray(split.test_ids, dtype=np.int64)

    flags_e = entity_gate_flags(masks)
    flags_c = context_gate_flags(masks, g)
    has_advice = bool(flags_e.any() or flags_c.any())
    scale = data_scale(train_cfg, has_advice)
    grad_fn = advice_gradient if train_cfg.advice_loss_form == "log_likelihood" else advice_gradient_squared
    alpha = train_cfg.alpha

    params = init_params(net_cfg, seed=train_cfg.seed, init=train_cfg.init, dtype=dtype)
    velocity = params.zeros_like()
    state = TrainState(advice_grad=np.zeros(g.n_entities))
    curve: list[tuple[int, str, str, float]] = []

    def record(epoch, probs):
        train_loss = data_loss(probs, labels, fit_ids)
        curve.append((epoch, "train", "loss", train_loss))
        val_loss = data_loss(probs, labels, val_ids) if val_ids.size else train_loss
        if val_ids.size:
            curve.append((epoch, "val", "loss", val_loss))
        if test_ids.size:
            report = evaluate_probs(probs, eval_labels, test_ids, g.n_labels, task)
            for name, value in report.metrics.items():
                curve.append((epoch, "test", name, value))
        return train_loss, val_loss

    gates = compute_gates(flags_e, flags_c, state.advice_grad, alpha)
    try:
        trace = forward(net_cfg, params, g, gates=gates)
    except FloatingPointError as exc:
        raise TrainingDiverged(f"non-finite values before training: {exc}") from exc
    train_loss, val_loss = record(0, trace.probs)
    state.loss_history.append(train_loss)
    state.probs = trace.probs
    state.best_val_loss, state.best_params, state.best_gates = val_loss, params.copy(), gates
    wait = 0

    for epoch in range(1, train_cfg.max_epochs + 1):
        gates = compute_gates(flags_e, flags_c, state.advice_grad, alpha)
        try:
            trace = forward(net_cfg, params, g, gates=gates)
            # the trade-off weight starts with the advice channel, one epoch in
            w = scale if epoch > 1 else 1.0
            loss = data_loss(trace.probs, labels, fit_ids, w)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            grads = backward(net_cfg, params, g, trace, labels, fit_ids, w)
            for (_, p), (_, v), (_, d) in zip(params.named(), velocity.named(), grads.named()):
                v *= train_cfg.momentum
                v -= train_cfg.learning_rate * d
                p += v
            if not params.all_finite():
                raise TrainingDiverged(f"non-finite parameters after epoch {epoch}")
            trace = forward(net_cfg, params, g, gates=gates)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"training diverged at epoch {epoch}: {exc}") from exc

        state.epoch = epoch
        state.probs = trace.probs
        state.advice_grad = grad_fn(trace.probs.astype(np.float64), masks)
        train_loss, val_loss = record(epoch, trace.probs)
        state.loss_history.append(train_loss)
        if on_epoch is not None:
            on_epoch(epoch, params, state)

        if val_loss < state.best_val_loss:
            state.best_val_loss = val_loss
            state.best_epoch = epoch
            state.best_params = params.copy()
            state.best_gates = gates
            wait = 0
        elif val_ids.size:
            wait += 1
            if wait >= train_cfg.patience:
                state.stopped_early = True
                log.debug("early stop at epoch %d (best %d)", epoch, state.best_epoch)
                break

    if not val_ids.size:
        state.best_epoch = state.epoch
        state.best_params = params.copy()
        state.best_gates = gates
    return TrainResult(state.best_params, state, curve, state.best_gates)
