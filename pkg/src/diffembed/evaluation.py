"""Link prediction AUC, Macro-F1 vertex classification and similarity search."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from scipy.stats import rankdata

from .config import TrainConfig
from .errors import DataError
from .graph import TextualGraph, build_transition
from .model import final_embeddings, forward_views
from .training import TrainResult, train

log = logging.getLogger(__name__)

METRICS = ("cosine", "dot", "sigmoid_dot")


def derive_seeds(seed: int, count: int) -> list[int]:
    """Independent per-run seeds from a master seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


# -- training wrapper -------------------------------------------------------


def fit_embeddings(graph: TextualGraph, config: TrainConfig, **train_kwargs) -> tuple[np.ndarray, TrainResult]:
    """Build the transition tensor, train, and return the final embedding matrix."""
    tensor = build_transition(graph, config.hops, config.lambda_decay, config.max_row_entries)
    result = train(graph, tensor, config, **train_kwargs)
    views = forward_views(result.params, result.data.doc_matrix, tensor, config.nonlinearity)
    return final_embeddings(views, config.embed_mode), result


# -- link prediction --------------------------------------------------------


@dataclass(frozen=True)
class LinkSplit:
    """Held-out link prediction split.

    For undirected graphs every edge is a canonical ``(min, max)`` pair and
    ``train_graph`` re-expands the training pairs into both directions.
    """

    train_edges: np.ndarray  # (m_train, 3): src, dst, weight
    test_edges: np.ndarray  # (m_test, 2)
    negative_test_edges: np.ndarray  # (m_test, 2)
    train_ratio: float
    directed: bool

    def train_graph(self, graph: TextualGraph) -> TextualGraph:
        src = self.train_edges[:, 0].astype(np.int64)
        dst = self.train_edges[:, 1].astype(np.int64)
        w = self.train_edges[:, 2]
        if not self.directed:
            loop = src == dst
            src, dst, w = (
                np.concatenate([src, dst[~loop]]),
                np.concatenate([dst, src[~loop]]),
                np.concatenate([w, w[~loop]]),
            )
        order = np.lexsort((dst, src))
        return graph.with_edges(src[order], dst[order], w[order])


def split_edges(graph: TextualGraph, train_ratio: float, seed: int) -> LinkSplit:
    """Uniformly hold out edges and sample as many non-edges as test negatives.

    The training set gets ``floor(train_ratio * m)`` edges. Negatives are
    distinct vertex pairs ``i != j`` absent from the graph (in either
    direction for undirected graphs).

    Raises:
        DataError: if the ratio leaves no test edges or the graph has too few
            non-edges.
    """
    if not 0 < train_ratio < 1:
        raise ValueError("train_ratio must lie in (0, 1)")
    if graph.directed:
        src, dst, w = graph.src, graph.dst, graph.weight
    else:
        src, dst, w = graph.undirected_pairs()
    m = src.size
    n_train = int(math.floor(train_ratio * m + 1e-9))
    n_test = m - n_train
    if n_test < 1:
        raise DataError(f"train ratio {train_ratio} leaves no test edges out of {m}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(m)
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    train_edges = np.column_stack([src[tr], dst[tr], w[tr]]).astype(np.float64)
    test_edges = np.column_stack([src[te], dst[te]]).astype(np.int64)

    n = graph.num_vertices
    existing = graph.edge_set()
    available = n * (n - 1) - sum(1 for a, b in existing if a != b)
    if not graph.directed:
        available //= 2
    if available < n_test:
        raise DataError(f"graph too dense: {available} non-edges for {n_test} negatives")
    chosen: list[tuple[int, int]] = []
    taken = set()
    while len(chosen) < n_test:
        cand = rng.integers(0, n, size=(2 * (n_test - len(chosen)) + 8, 2))
        for a, b in cand.tolist():
            if a == b:
                continue
            if not graph.directed and a > b:
                a, b = b, a
            if (a, b) in existing or (a, b) in taken:
                continue
            if not graph.directed and (b, a) in existing:
                continue
            taken.add((a, b))
            chosen.append((a, b))
            if len(chosen) == n_test:
                break
    negatives = np.array(chosen, dtype=np.int64).reshape(-1, 2)
    return LinkSplit(train_edges, test_edges, negatives, train_ratio, graph.directed)


def score_pairs(emb: np.ndarray, pairs: np.ndarray, metric: str = "cosine") -> np.ndarray:
    """Vectorised :func:`score_pair` over an ``(m, 2)`` array of vertex pairs."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    a, b = emb[pairs[:, 0]], emb[pairs[:, 1]]
    dots = np.einsum("md,md->m", a, b)
    if metric == "dot":
        return dots
    if metric == "sigmoid_dot":
        return expit(dots)
    if metric == "cosine":
        norms = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
        out = np.zeros_like(dots)
        nz = norms > 0
        out[nz] = dots[nz] / norms[nz]
        return np.clip(out, -1.0, 1.0)
    raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")


def score_pair(emb: np.ndarray, i: int, j: int, metric: str = "cosine") -> float:
    """Similarity of vertices ``i`` and ``j``; cosine against a zero vector is 0."""
    return float(score_pairs(emb, np.array([[i, j]]), metric)[0])


def auc(positive_scores, negative_scores) -> float:
    """Probability a positive outscores a negative, ties counting one half.

    Computed from the rank sum of the positives (Mann-Whitney U).
    """
    pos = np.asarray(positive_scores, dtype=np.float64).ravel()
    neg = np.asarray(negative_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auc needs at least one positive and one negative score")
    ranks = rankdata(np.concatenate([pos, neg]), method="average")
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


@dataclass(frozen=True)
class LinkResult:
    train_ratio: float
    aucs: tuple[float, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.aucs))

    @property
    def std(self) -> float:
        return float(np.std(self.aucs))


def link_prediction_run(
    graph: TextualGraph,
    config: TrainConfig,
    train_ratio: float,
    seed: int,
    metric: str = "cosine",
    null_model: bool = False,
) -> float:
    """One split -> train on training edges only -> AUC on held-out pairs.

    With ``null_model`` the embeddings are i.i.d. Gaussian noise of the
    same width instead of trained vectors.
    """
    split = split_edges(graph, train_ratio, seed)
    if null_model:
        width = config.d_t if config.embed_mode == "text_only" else config.dim
        emb = np.random.default_rng([seed, 2]).standard_normal((graph.num_vertices, width))
    else:
        emb, _ = fit_embeddings(split.train_graph(graph), config.replace(seed=seed))
    return auc(score_pairs(emb, split.test_edges, metric), score_pairs(emb, split.negative_test_edges, metric))


def evaluate_link_prediction(
    graph: TextualGraph,
    config: TrainConfig,
    train_ratio: float,
    repeats: int = 10,
    metric: str = "cosine",
    seed: int | None = None,
    null_model: bool = False,
) -> LinkResult:
    """Repeat :func:`link_prediction_run` with seeds derived from ``seed`` (default ``config.seed``)."""
    seeds = derive_seeds(config.seed if seed is None else seed, repeats)
    aucs = []
    for r, s in enumerate(seeds):
        aucs.append(link_prediction_run(graph, config, train_ratio, s, metric, null_model))
        log.info("run %d ratio %.2f auc %.4f", r, train_ratio, aucs[-1])
    return LinkResult(train_ratio, tuple(aucs))


def hop_sweep(
    graph: TextualGraph,
    config: TrainConfig,
    hop_values,
    train_ratio: float,
    repeats: int = 10,
    metric: str = "cosine",
    seed: int | None = None,
) -> list[tuple[int, float, float]]:
    """``(H, mean AUC, std AUC)`` per hop count, every other setting and seed held fixed."""
    rows = []
    for h in hop_values:
        if h < 1:
            raise ValueError("hop counts must be >= 1")
        res = evaluate_link_prediction(graph, config.replace(hops=int(h)), train_ratio, repeats, metric, seed)
        rows.append((int(h), res.mean, res.std))
    return rows


# -- classification ---------------------------------------------------------


def label_matrix(labels, classes=None) -> tuple[np.ndarray, list[str]]:
    """Indicator matrix ``(N, C)`` from per-vertex label tuples."""
    if classes is None:
        classes = sorted({c for tags in labels for c in tags})
    col = {c: k for k, c in enumerate(classes)}
    y = np.zeros((len(labels), len(classes)), dtype=bool)
    for i, tags in enumerate(labels):
        for c in tags:
            y[i, col[c]] = True
    return y, list(classes)


def _fit_binary(x: np.ndarray, y: np.ndarray, reg: float, tol: float) -> tuple[np.ndarray, float]:
    """L2-regularised logistic regression (bias unpenalised) by L-BFGS."""
    t = np.where(y, 1.0, -1.0)

    def f(theta):
        w, b = theta[:-1], theta[-1]
        margin = t * (x @ w + b)
        loss = np.logaddexp(0.0, -margin).sum() + 0.5 * reg * (w @ w)
        g = -t * expit(-margin)
        return loss, np.append(x.T @ g + reg * w, g.sum())

    res = minimize(f, np.zeros(x.shape[1] + 1), jac=True, method="L-BFGS-B",
                   options={"gtol": tol, "ftol": 1e-15, "maxiter": 10000})
    return res.x[:-1], float(res.x[-1])


@dataclass
class ClassifierModel:
    """One-vs-rest linear classifier over embedding features."""

    weights: np.ndarray  # (C, d)
    bias: np.ndarray  # (C,)
    classes: list[str]
    trained: np.ndarray  # (C,) bool; False for classes absent from training data
    single_label: bool
    train_index: np.ndarray | None = None
    test_index: np.ndarray | None = None

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        scores = x @ self.weights.T + self.bias
        scores[:, ~self.trained] = -np.inf
        return scores

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Indicator predictions: argmax for single-label data, else positive decision score (probability above one half)."""
        scores = self.decision_function(x)
        if self.single_label:
            out = np.zeros(scores.shape, dtype=bool)
            out[np.arange(len(x)), np.argmax(scores, axis=1)] = True
            return out
        return scores > 0.0


def fit_one_vs_rest(x, y, classes, reg: float = 1.0, tol: float = 1e-6, single_label: bool | None = None) -> ClassifierModel:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=bool)
    present = y.any(axis=0)
    if present.sum() < 2:
        raise DataError("need at least two classes in the training data")
    if single_label is None:
        single_label = bool(np.all(y.sum(axis=1) == 1))
    weights = np.zeros((y.shape[1], x.shape[1]))
    bias = np.zeros(y.shape[1])
    for c in range(y.shape[1]):
        if not present[c]:
            log.warning("class %r absent from training data; it will never be predicted", classes[c])
            continue
        weights[c], bias[c] = _fit_binary(x, y[:, c], reg, tol)
    return ClassifierModel(weights, bias, list(classes), present, single_label)


def train_classifier(emb, labels, labeled_ratio: float, seed: int, reg: float = 1.0) -> ClassifierModel:
    """Fit on a random ``labeled_ratio`` share of labelled vertices; the rest is the test set.

    ``labels`` holds one tuple of label names per vertex; unlabelled vertices
    are ignored.
    """
    if not 0 < labeled_ratio < 1:
        raise ValueError("labeled_ratio must lie in (0, 1)")
    y, classes = label_matrix(labels)
    labelled = np.flatnonzero(y.any(axis=1))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(labelled)
    n_train = max(1, int(math.floor(labeled_ratio * labelled.size + 1e-9)))
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    single = bool(np.all(y[labelled].sum(axis=1) == 1))
    model = fit_one_vs_rest(emb[tr], y[tr], classes, reg=reg, single_label=single)
    model.train_index, model.test_index = tr, te
    return model


def macro_f1(predictions, truth) -> float:
    """Unweighted mean of per-class F1 over indicator matrices of shape ``(n, C)``.

    A class with no true and no predicted members scores 0.
    """
    pred = np.asarray(predictions, dtype=bool)
    true = np.asarray(truth, dtype=bool)
    if true.size == 0:
        raise ValueError("empty ground truth")
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {true.shape}")
    if true.ndim == 1:
        pred, true = pred[:, None], true[:, None]
    tp = (pred & true).sum(axis=0)
    denom = pred.sum(axis=0) + true.sum(axis=0)
    f1 = np.where(denom > 0, 2.0 * tp / np.maximum(denom, 1), 0.0)
    return float(f1.mean())


def evaluate_classification(emb, labels, labeled_ratio: float, repeats: int = 10, seed: int = 0, reg: float = 1.0) -> list[float]:
    """Macro-F1 on the held-out vertices for ``repeats`` random labelled subsets."""
    y, _ = label_matrix(labels)
    scores = []
    for s in derive_seeds(seed, repeats):
        model = train_classifier(emb, labels, labeled_ratio, s, reg)
        te = model.test_index
        scores.append(macro_f1(model.predict(emb[te]), y[te]))
    return scores


# -- similarity search ------------------------------------------------------


def top_k_similar(emb: np.ndarray, query: int, k: int = 5) -> list[tuple[int, float]]:
    """The ``k`` vertices most cosine-similar to ``query`` (excluded); ties go to the lower id."""
    n = emb.shape[0]
    if not 0 <= query < n:
        raise IndexError(f"query vertex {query} out of range")
    if not 0 < k < n:
        raise ValueError(f"k must lie in [1, {n - 1}]")
    others = np.delete(np.arange(n), query)
    scores = score_pairs(emb, np.column_stack([np.full(others.size, query), others]), "cosine")
    order = np.lexsort((others, -scores))[:k]
    return [(int(others[o]), float(scores[o])) for o in order]
