"""Negative-sampled four-term objective, Adam, and the training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, logsumexp

from .config import TrainConfig
from .errors import NumericalError
from .graph import TextualGraph, TransitionTensor
from .model import ModelParameters, VertexViews, init_parameters
from .text import (
    Vocabulary,
    averaging_matrix,
    backprop_text,
    build_vocabulary,
    encode_texts,
    scatter_rows,
)

log = logging.getLogger(__name__)

# (name, target family, context family); negatives replace the target.
TERMS = (
    ("tt", "v_t", "v_t"),
    ("ss", "v_s", "u_s"),
    ("st", "v_s", "v_t"),
    ("ts", "v_t", "u_s"),
)


class NoiseDistribution:
    """Vertex sampler with ``P(v) proportional to d_v ** 0.75`` backed by a Vose alias table.

    ``d_v`` is the weighted out-degree. If every degree is zero the
    distribution falls back to uniform.
    """

    def __init__(self, degrees, power: float = 0.75):
        degrees = np.asarray(degrees, dtype=np.float64)
        if degrees.ndim != 1 or degrees.size == 0:
            raise ValueError("noise distribution needs at least one vertex")
        if np.any(degrees < 0):
            raise ValueError("degrees must be non-negative")
        w = degrees**power
        total = w.sum()
        self.probabilities = w / total if total > 0 else np.full(w.size, 1.0 / w.size)
        self.prob, self.alias = self._build(self.probabilities)

    def __len__(self) -> int:
        return self.probabilities.size

    @staticmethod
    def _build(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = p.size
        scaled = p * n
        prob = np.ones(n)
        alias = np.arange(n)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s, g = small.pop(), large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            (small if scaled[g] < 1.0 else large).append(g)
        # leftovers are 1 up to rounding
        return prob, alias

    def table_probabilities(self) -> np.ndarray:
        """Per-vertex probability implied by the alias table."""
        n = len(self)
        out = self.prob / n
        np.add.at(out, self.alias, (1.0 - self.prob) / n)
        return out

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        idx = rng.integers(0, len(self), size=size)
        u = rng.random(size=size)
        return np.where(u < self.prob[idx], idx, self.alias[idx])


def sample_negatives(dist: NoiseDistribution, k: int, rng: np.random.Generator, size=()) -> np.ndarray:
    """``k`` i.i.d. draws per position; result shape is ``size + (k,)``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(dist) == 0:
        raise ValueError("empty noise distribution")
    size = (size,) if isinstance(size, int) else tuple(size)
    return dist.sample(rng, size + (k,))


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _surrogate(tables, index, weight, alphas):
    """Negative-sampled objective over a batch and its gradients w.r.t. ``tables``.

    ``index[term]`` holds ``(target, context, negatives)`` rows into the
    target/context family tables, shapes ``(B,)``, ``(B,)``, ``(B, K)``.
    """
    value = 0.0
    parts = {name: ([], []) for name in tables}
    for (term, tfam, cfam), alpha in zip(TERMS, alphas):
        if alpha == 0:
            continue
        targets, contexts, negs = index[term]
        tab_t, tab_c = tables[tfam], tables[cfam]
        c = tab_c[contexts]
        a = tab_t[targets]
        b = tab_t[negs]
        pos = np.einsum("bd,bd->b", a, c)
        neg = np.einsum("bkd,bd->bk", b, c)
        scale = alpha * weight
        value += float(scale @ (_log_sigmoid(pos) + _log_sigmoid(-neg).sum(axis=1)))
        g_pos = scale * expit(-pos)
        g_neg = -scale[:, None] * expit(neg)
        parts[tfam][0].extend([targets, negs.ravel()])
        parts[tfam][1].extend([g_pos[:, None] * c, (g_neg[:, :, None] * c[:, None, :]).reshape(-1, c.shape[1])])
        parts[cfam][0].append(contexts)
        parts[cfam][1].append(g_pos[:, None] * a + np.einsum("bk,bkd->bd", g_neg, b))
    grads = {}
    for name, tab in tables.items():
        idx, vals = parts[name]
        if idx:
            grads[name] = scatter_rows(tab.shape[0], np.concatenate(idx), np.concatenate(vals))
        else:
            grads[name] = np.zeros_like(tab)
    return value, grads


def _term_index(src, dst, negs):
    return {term: (src, dst, negs[:, t, :]) for t, (term, _, _) in enumerate(TERMS)}


def edge_loss(edge, views: VertexViews, negatives, config: TrainConfig):
    """Surrogate log-likelihood of one edge (higher is better) and its gradients.

    Args:
        edge: ``(i, j, s_ij)``; ``i`` is generated conditioned on ``j``.
        views: current ``v_s``, ``v_t`` and ``u_s``.
        negatives: ``(4, K)`` vertex ids, one row per term in
            ``tt, ss, st, ts`` order.
        config: supplies the four alpha weights.

    Returns:
        ``(value, grads)`` where ``grads`` is a :class:`VertexViews` of
        gradients with the same shapes as ``views``.
    """
    i, j, s = edge
    negs = np.asarray(negatives, dtype=np.int64)
    if negs.ndim == 1:
        negs = negs[None, :].repeat(len(TERMS), axis=0)
    tables = {"v_s": views.v_s, "v_t": views.v_t, "u_s": views.u_s}
    value, g = _surrogate(
        tables,
        _term_index(np.array([i]), np.array([j]), negs[None]),
        np.array([float(s)]),
        config.alphas,
    )
    return value, VertexViews(v_s=g["v_s"], v_t=g["v_t"], u_s=g["u_s"])


def exact_softmax_loss(edge, views: VertexViews, config: TrainConfig) -> float:
    """Weighted sum of the four exact log-softmax terms for one edge.

    Every term normalises over all vertices of its target family, so this
    costs ``O(N d)``; intended for small graphs and tests.
    """
    i, j, s = edge
    tables = {"v_s": views.v_s, "v_t": views.v_t, "u_s": views.u_s}
    total = 0.0
    for (_, tfam, cfam), alpha in zip(TERMS, config.alphas):
        if alpha == 0:
            continue
        logits = tables[tfam] @ tables[cfam][j]
        total += alpha * (logits[i] - logsumexp(logits))
    return float(s) * total


@dataclass
class TrainingData:
    """Everything derived from the graph that stays fixed during training."""

    graph: TextualGraph
    tensor: TransitionTensor
    vocab: Vocabulary
    doc_matrix: sp.csr_matrix
    operator: sp.csr_matrix
    noise: NoiseDistribution
    nonlinearity: str = "tanh"

    @classmethod
    def build(cls, graph, tensor, config: TrainConfig, vocab: Vocabulary | None = None) -> "TrainingData":
        if vocab is None:
            vocab = build_vocabulary(graph, config.min_count)
        return cls(
            graph=graph,
            tensor=tensor,
            vocab=vocab,
            doc_matrix=averaging_matrix(vocab.encode_graph(graph), len(vocab)),
            operator=tensor.operator(),
            noise=NoiseDistribution(graph.out_degree()),
            nonlinearity=config.nonlinearity,
        )


def batch_objective(
    params: ModelParameters,
    data: TrainingData,
    src: np.ndarray,
    dst: np.ndarray,
    weight: np.ndarray,
    negatives: np.ndarray,
    alphas,
) -> tuple[float, dict[str, np.ndarray]]:
    """Summed surrogate objective over a batch and its parameter gradients.

    ``negatives`` has shape ``(B, 4, K)``. Only the text rows and diffusion
    map rows the batch touches are evaluated.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    negatives = np.asarray(negatives, dtype=np.int64)
    text_rows = np.unique(np.concatenate([src, dst, negatives[:, 0].ravel(), negatives[:, 3].ravel()]))
    ctx_rows = np.unique(dst)

    act = encode_texts(
        data.tensor, data.doc_matrix, params.word_table, params.diff_weights, data.nonlinearity, rows=text_rows
    )
    op_rows = data.operator[ctx_rows]
    tables = {"v_t": act.v_t, "v_s": params.struct_table, "u_s": op_rows @ params.struct_table}

    t_of = lambda ids: np.searchsorted(text_rows, ids)
    u_of = lambda ids: np.searchsorted(ctx_rows, ids)
    index = {
        "tt": (t_of(src), t_of(dst), t_of(negatives[:, 0])),
        "ss": (src, u_of(dst), negatives[:, 1]),
        "st": (src, t_of(dst), negatives[:, 2]),
        "ts": (t_of(src), u_of(dst), t_of(negatives[:, 3])),
    }
    value, g = _surrogate(tables, index, np.asarray(weight, dtype=np.float64), alphas)
    grad_w, grad_words = backprop_text(g["v_t"], act)
    grad_struct = g["v_s"] + np.asarray(op_rows.T @ g["u_s"])
    return value, {"word_table": grad_words, "struct_table": grad_struct, "diff_weights": grad_w}


class Adam:
    """Adam on a dict of arrays, updated in place (descent direction)."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


def draw_negatives(data: TrainingData, config: TrainConfig, src: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent ``K`` negatives for each of the four terms of every edge, shape ``(B, 4, K)``."""
    negs = sample_negatives(data.noise, config.negatives, rng, size=(src.size, len(TERMS)))
    if config.reject_true_target:
        for _ in range(100):
            clash = negs == src[:, None, None]
            if not clash.any():
                break
            negs[clash] = data.noise.sample(rng, int(clash.sum()))
    return negs


def mean_objective(params, data: TrainingData, config: TrainConfig, seed: int = 0) -> float:
    """Per-edge surrogate objective averaged over every edge once, with seeded negatives."""
    g = data.graph
    if g.num_edges == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    negs = draw_negatives(data, config, g.src, rng)
    value, _ = batch_objective(params, data, g.src, g.dst, g.weight, negs, config.alphas)
    return value / g.num_edges


@dataclass
class TrainResult:
    params: ModelParameters
    losses: list[float]
    data: TrainingData
    steps: int = 0


def train(
    graph: TextualGraph,
    tensor: TransitionTensor,
    config: TrainConfig,
    vocab: Vocabulary | None = None,
    params: ModelParameters | None = None,
    on_epoch: Callable[[int, float, ModelParameters], None] | None = None,
) -> TrainResult:
    """Fit all parameters by minibatch Adam ascent on the surrogate objective.

    Each step samples ``batch_size`` edges uniformly with replacement and
    fresh negatives; an epoch is ``ceil(|E| / batch_size)`` steps. The
    returned ``losses`` hold the per-epoch mean per-edge objective.

    Raises:
        NumericalError: if an epoch's mean objective is not finite.
    """
    data = TrainingData.build(graph, tensor, config, vocab)
    if params is None:
        params = init_parameters(config, len(data.vocab), graph.num_vertices)
    rng = np.random.default_rng([config.seed, 1])
    opt = Adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    tables = params.as_dict()
    n_edges = graph.num_edges
    steps_per_epoch = math.ceil(n_edges / config.batch_size) if n_edges else 0
    losses = []
    for epoch in range(1, config.epochs + 1):
        if steps_per_epoch == 0:
            break
        total = 0.0
        for _ in range(steps_per_epoch):
            pick = rng.integers(0, n_edges, size=config.batch_size)
            src, dst, w = graph.src[pick], graph.dst[pick], graph.weight[pick]
            negs = draw_negatives(data, config, src, rng)
            value, grads = batch_objective(params, data, src, dst, w, negs, config.alphas)
            scale = -1.0 / config.batch_size
            opt.step(tables, {k: scale * g for k, g in grads.items()})
            total += value / config.batch_size
        mean = total / steps_per_epoch
        if not math.isfinite(mean) or not params.all_finite():
            raise NumericalError(f"training diverged at epoch {epoch} (mean objective {mean})")
        losses.append(mean)
        log.debug("epoch %d mean objective %.6f", epoch, mean)
        if on_epoch is not None:
            on_epoch(epoch, mean, params)
    return TrainResult(params=params, losses=losses, data=data, steps=opt.t)
