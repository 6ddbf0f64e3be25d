"""Vocabulary, word-average text inputs and the diffusion-convolution encoder."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .graph import TextualGraph, TransitionTensor

UNK = "<unk>"


class Vocabulary:
    """Token <-> id bijection with a shared unknown-token id.

    Known tokens are numbered by descending corpus frequency, ties broken
    lexicographically; the unknown token always takes the last id.
    """

    def __init__(self, tokens: Sequence[str]):
        tokens = [t for t in tokens if t != UNK]
        self.tokens: tuple[str, ...] = tuple(tokens) + (UNK,)
        self._ids = {t: i for i, t in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")

    @property
    def unk_id(self) -> int:
        return len(self.tokens) - 1

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def lookup(self, token: str) -> int:
        return self._ids.get(token, self.unk_id)

    def inverse(self, idx: int) -> str:
        return self.tokens[idx]

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.fromiter((self.lookup(t) for t in tokens), dtype=np.int64, count=len(tokens))

    def encode_graph(self, graph: TextualGraph) -> list[np.ndarray]:
        return [self.encode(t) for t in graph.texts]

    def save(self, path) -> None:
        from .io import atomic_write

        with atomic_write(path) as fh:
            for i, tok in enumerate(self.tokens):
                fh.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        pairs = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\r\n")
                if line:
                    tok, _, idx = line.rpartition("\t")
                    pairs.append((int(idx), tok))
        pairs.sort()
        if [i for i, _ in pairs] != list(range(len(pairs))) or not pairs or pairs[-1][1] != UNK:
            raise ValueError(f"{path}: not a vocabulary file")
        return cls([t for _, t in pairs[:-1]])


def build_vocabulary(graph: TextualGraph, min_count: int = 1) -> Vocabulary:
    counts = Counter(tok for text in graph.texts for tok in text)
    kept = [t for t, c in counts.items() if c >= min_count and t != UNK]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


def averaging_matrix(docs: Sequence[np.ndarray], vocab_size: int) -> sp.csr_matrix:
    """Sparse ``N x |w|`` matrix whose row ``i`` averages the word rows of ``docs[i]``.

    Empty documents give all-zero rows.
    """
    rows, cols, vals = [], [], []
    for i, ids in enumerate(docs):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            continue
        if ids.max() >= vocab_size or ids.min() < 0:
            raise ValueError(f"token id out of range in document {i}")
        uniq, counts = np.unique(ids, return_counts=True)
        rows.append(np.full(uniq.size, i))
        cols.append(uniq)
        vals.append(counts / ids.size)
    if rows:
        rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(docs), vocab_size))


def scatter_rows(n: int, index: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``out[index[r]] += values[r]`` for every ``r`` into an ``(n, d)`` zero array."""
    index = np.asarray(index, dtype=np.int64).ravel()
    m = sp.csr_matrix((np.ones(index.size), (index, np.arange(index.size))), shape=(n, index.size))
    return np.asarray(m @ values.reshape(index.size, -1))


def compute_text_inputs(docs, word_table: np.ndarray) -> np.ndarray:
    """Mean word vector of each document (zero row for an empty one).

    ``docs`` is either a sequence of token-id arrays or a precomputed
    :func:`averaging_matrix`.
    """
    if not sp.issparse(docs):
        docs = averaging_matrix(docs, word_table.shape[0])
    return np.asarray(docs @ word_table)


@dataclass(frozen=True)
class Nonlinearity:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    # derivative given (pre-activation, activation)
    grad: Callable[[np.ndarray, np.ndarray], np.ndarray]


NONLINEARITIES = {
    "tanh": Nonlinearity("tanh", np.tanh, lambda z, a: 1.0 - a * a),
    "relu": Nonlinearity("relu", lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(z.dtype)),
    "identity": Nonlinearity("identity", lambda z: z, lambda z, a: np.ones_like(z)),
}


def get_nonlinearity(f) -> Nonlinearity:
    if isinstance(f, Nonlinearity):
        return f
    try:
        return NONLINEARITIES[f]
    except KeyError:
        raise ValueError(f"unknown nonlinearity {f!r}; choose from {sorted(NONLINEARITIES)}") from None


@dataclass
class DiffusionActivation:
    """Forward result of :func:`diffusion_convolve` plus what backprop needs.

    ``v_star`` has shape ``(R, H, d_t)`` and ``v_t`` shape ``(R, d_t)`` where
    ``R`` is the number of requested rows (all vertices by default).
    """

    v_star: np.ndarray
    v_t: np.ndarray
    rows: np.ndarray | None
    hop_weights: np.ndarray
    weights: np.ndarray
    nonlinearity: Nonlinearity
    diffused: np.ndarray | None = field(default=None, repr=False)
    hop_rows: list | None = field(default=None, repr=False)
    doc_matrix: sp.csr_matrix | None = field(default=None, repr=False)

    def release(self) -> None:
        self.diffused = None
        self.hop_rows = None


def diffusion_convolve(
    tensor: TransitionTensor,
    x: np.ndarray,
    weights: np.ndarray,
    nonlinearity="tanh",
    rows: np.ndarray | None = None,
) -> DiffusionActivation:
    """Per-hop, per-feature scaled diffusion of ``x`` followed by ``f``.

    ``v_star[i, h, k] = f(W[h, k] * sum_n P^h[i, n] x[n, k])`` and
    ``v_t = sum_h lambda_h v_star[:, h, :]``. When ``rows`` is given only
    those vertices' activations are produced.
    """
    f = get_nonlinearity(nonlinearity)
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    n, d = x.shape
    if n != tensor.num_vertices:
        raise ValueError(f"expected {tensor.num_vertices} input rows, got {n}")
    if weights.shape != (tensor.num_hops, d):
        raise ValueError(f"weights must have shape {(tensor.num_hops, d)}, got {weights.shape}")
    hop_rows = tensor.rows(None if rows is None else np.asarray(rows, dtype=np.int64))
    if rows is not None:
        rows = np.asarray(rows, dtype=np.int64)
    diffused = np.empty((len(x) if rows is None else rows.size, tensor.num_hops, d))
    diffused[:, 0, :] = x if rows is None else x[rows]
    for h, p in enumerate(hop_rows, start=1):
        diffused[:, h, :] = p @ x
    v_star = f.fn(weights[None, :, :] * diffused)
    v_t = np.einsum("h,rhk->rk", tensor.hop_weights, v_star)
    return DiffusionActivation(
        v_star=v_star,
        v_t=v_t,
        rows=rows,
        hop_weights=tensor.hop_weights,
        weights=weights,
        nonlinearity=f,
        diffused=diffused,
        hop_rows=hop_rows,
    )


def encode_texts(
    tensor: TransitionTensor,
    doc_matrix: sp.csr_matrix,
    word_table: np.ndarray,
    weights: np.ndarray,
    nonlinearity="tanh",
    rows: np.ndarray | None = None,
) -> DiffusionActivation:
    """Word averaging followed by diffusion convolution; keeps the cache for backprop."""
    x = compute_text_inputs(doc_matrix, word_table)
    act = diffusion_convolve(tensor, x, weights, nonlinearity, rows=rows)
    act.doc_matrix = doc_matrix
    return act


def backprop_text(upstream: np.ndarray, act: DiffusionActivation) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of a scalar w.r.t. the diffusion weights and the word table.

    Args:
        upstream: gradient w.r.t. ``act.v_t``, same shape.
        act: activation returned by :func:`encode_texts`.

    Returns:
        ``(grad_weights, grad_word_table)``.
    """
    if act.diffused is None or act.hop_rows is None or act.doc_matrix is None:
        raise RuntimeError("activation has no forward cache; call encode_texts first")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != act.v_t.shape:
        raise ValueError(f"upstream shape {upstream.shape} != {act.v_t.shape}")
    pre = act.weights[None, :, :] * act.diffused
    g_pre = act.hop_weights[None, :, None] * upstream[:, None, :] * act.nonlinearity.grad(pre, act.v_star)
    grad_w = np.einsum("rhk,rhk->hk", g_pre, act.diffused)
    g_diffused = g_pre * act.weights[None, :, :]
    if act.rows is None:
        grad_x = g_diffused[:, 0, :].copy()
    else:
        grad_x = scatter_rows(act.doc_matrix.shape[0], act.rows, g_diffused[:, 0, :])
    for h, p in enumerate(act.hop_rows, start=1):
        grad_x += p.T @ g_diffused[:, h, :]
    grad_words = np.asarray(act.doc_matrix.T @ grad_x)
    return grad_w, grad_words
