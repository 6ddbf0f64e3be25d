"""Text-attributed graphs, transition matrices and their power series."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DataError


@dataclass(frozen=True)
class TextualGraph:
    """Directed weighted graph whose vertices carry token sequences.

    Vertex ids are dense integers in ``[0, N)``; ``names[i]`` is the external
    name of vertex ``i``. Edges are stored once per ``(src, dst)`` pair with a
    strictly positive weight. An undirected input is kept as two opposite
    directed edges and flagged with ``directed=False``.
    """

    names: tuple[str, ...]
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    texts: tuple[tuple[str, ...], ...]
    labels: tuple[tuple[str, ...], ...] | None = None
    directed: bool = True
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.names)
        if n == 0:
            raise DataError("graph has no vertices")
        if len(self.texts) != n:
            raise DataError(f"expected {n} texts, got {len(self.texts)}")
        if self.labels is not None and len(self.labels) != n:
            raise DataError(f"expected {n} label sets, got {len(self.labels)}")
        src = np.asarray(self.src, dtype=np.int64)
        dst = np.asarray(self.dst, dtype=np.int64)
        weight = np.asarray(self.weight, dtype=np.float64)
        if not (src.shape == dst.shape == weight.shape):
            raise DataError("edge arrays must have equal length")
        if src.size and (src.min() < 0 or dst.min() < 0 or max(src.max(), dst.max()) >= n):
            raise DataError("edge endpoint out of range")
        if np.any(weight <= 0) or not np.all(np.isfinite(weight)):
            raise DataError("edge weights must be finite and positive")
        keys = src * n + dst
        if np.unique(keys).size != keys.size:
            raise DataError("duplicate (src, dst) pair")
        for name, arr in (("src", src), ("dst", dst), ("weight", weight)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "_index", {v: i for i, v in enumerate(self.names)})
        if len(self._index) != n:
            raise DataError("vertex names must be unique")

    @property
    def num_vertices(self) -> int:
        return len(self.names)

    @property
    def num_edges(self) -> int:
        return int(self.src.size)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown vertex {name!r}") from None

    def adjacency(self) -> sp.csr_matrix:
        n = self.num_vertices
        return sp.csr_matrix((self.weight, (self.src, self.dst)), shape=(n, n))

    def out_degree(self) -> np.ndarray:
        """Weighted out-degree of every vertex."""
        return np.bincount(self.src, weights=self.weight, minlength=self.num_vertices)

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.src.tolist(), self.dst.tolist()))

    def undirected_pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Edges as canonical ``(min, max)`` pairs, one per undirected edge."""
        keep = self.src <= self.dst
        return self.src[keep], self.dst[keep], self.weight[keep]

    def with_edges(self, src, dst, weight, directed: bool | None = None) -> "TextualGraph":
        """Same vertices, texts and labels over a different edge set."""
        return TextualGraph(
            names=self.names,
            src=src,
            dst=dst,
            weight=weight,
            texts=self.texts,
            labels=self.labels,
            directed=self.directed if directed is None else directed,
        )


def merge_edges(src, dst, weight, n: int):
    """Collapse duplicate ``(src, dst)`` pairs by summing their weights."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    weight = np.asarray(weight, dtype=np.float64)
    keys, inverse = np.unique(src * n + dst, return_inverse=True)
    merged = np.zeros(keys.size)
    np.add.at(merged, inverse, weight)
    return keys // n, keys % n, merged


def from_edge_list(
    names: Sequence[str],
    edges: Iterable[tuple[int, int, float]],
    texts: Sequence[Sequence[str]] | None = None,
    labels: Sequence[Sequence[str]] | None = None,
    directed: bool = True,
) -> TextualGraph:
    """Build a graph from dense-id edges, expanding undirected ones."""
    n = len(names)
    edges = list(edges)
    src = [e[0] for e in edges]
    dst = [e[1] for e in edges]
    w = [e[2] if len(e) > 2 else 1.0 for e in edges]
    if not directed:
        # self-loops are not doubled
        rev = [(d, s, x) for s, d, x in zip(src, dst, w) if s != d]
        src += [r[0] for r in rev]
        dst += [r[1] for r in rev]
        w += [r[2] for r in rev]
    src, dst, w = merge_edges(src, dst, w, n)
    if texts is None:
        texts = [()] * n
    return TextualGraph(
        names=tuple(names),
        src=src,
        dst=dst,
        weight=w,
        texts=tuple(tuple(t) for t in texts),
        labels=None if labels is None else tuple(tuple(x) for x in labels),
        directed=directed,
    )


def tokenize(text: str, lowercase: bool = True) -> tuple[str, ...]:
    if lowercase:
        text = text.lower()
    return tuple(text.split())


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line


def read_texts(path) -> dict[str, str]:
    """Raw ``VERTEX<TAB>TEXT`` entries in file order.

    Raises:
        DataError: on a line without a tab or a repeated vertex.
    """
    out: dict[str, str] = {}
    for lineno, line in _data_lines(path):
        name, sep, body = line.partition("\t")
        if not sep or not name:
            raise DataError(f"{path}:{lineno}: expected VERTEX<TAB>TEXT")
        if name in out:
            raise DataError(f"{path}:{lineno}: duplicate text entry for {name!r}")
        out[name] = body
    return out


def read_labels(path, known) -> dict[str, tuple[str, ...]]:
    """``VERTEX<TAB>LABEL[,LABEL...]`` entries; every vertex must be in ``known``."""
    out: dict[str, tuple[str, ...]] = {}
    for lineno, line in _data_lines(path):
        name, sep, body = line.partition("\t")
        if not sep or not name:
            raise DataError(f"{path}:{lineno}: expected VERTEX<TAB>LABEL[,LABEL...]")
        if name not in known:
            raise DataError(f"{path}:{lineno}: unknown vertex {name!r}")
        if name in out:
            raise DataError(f"{path}:{lineno}: duplicate label entry for {name!r}")
        tags = tuple(x.strip() for x in body.split(",") if x.strip())
        if not tags:
            raise DataError(f"{path}:{lineno}: empty label list")
        out[name] = tags
    return out


def load_graph(
    edge_path: str | os.PathLike,
    text_path: str | os.PathLike,
    label_path: str | os.PathLike | None = None,
    directed: bool = True,
    lowercase: bool = True,
) -> TextualGraph:
    """Read a graph from edge, text and (optionally) label files.

    Vertices are numbered in order of first appearance in the text file,
    followed by vertices that only occur in the edge file. A vertex that only
    appears in the text file is kept with degree 0; a vertex that only appears
    in the edge file gets an empty text.

    Raises:
        DataError: on a malformed line, a duplicate text entry, or a label
            entry for a vertex that is in neither the edge nor the text file.
    """
    index: dict[str, int] = {}
    texts: list[tuple[str, ...]] = []

    def vertex(name):
        if name not in index:
            index[name] = len(index)
            texts.append(())
        return index[name]

    for name, body in read_texts(text_path).items():
        texts[vertex(name)] = tokenize(body, lowercase)

    src, dst, weight = [], [], []
    for lineno, line in _data_lines(edge_path):
        parts = line.split("\t")
        if len(parts) not in (2, 3) or not parts[0] or not parts[1]:
            raise DataError(f"{edge_path}:{lineno}: expected SRC<TAB>DST[<TAB>WEIGHT]")
        w = 1.0
        if len(parts) == 3:
            try:
                w = float(parts[2])
            except ValueError:
                raise DataError(f"{edge_path}:{lineno}: bad weight {parts[2]!r}") from None
            if not np.isfinite(w) or w <= 0:
                raise DataError(f"{edge_path}:{lineno}: weight must be positive")
        src.append(vertex(parts[0]))
        dst.append(vertex(parts[1]))
        weight.append(w)

    labels = None
    if label_path is not None:
        found = read_labels(label_path, index)
        labels = [found.get(name, ()) for name in index]

    if not index:
        raise DataError("no vertices found")
    names = list(index)
    return from_edge_list(
        names, zip(src, dst, weight), texts=texts, labels=labels, directed=directed
    )


def save_graph(
    graph: TextualGraph,
    edge_path: str | os.PathLike,
    text_path: str | os.PathLike,
    label_path: str | os.PathLike | None = None,
) -> None:
    """Write a graph in the same formats :func:`load_graph` reads.

    Edges are written as directed pairs; reload with ``directed=True``.
    """
    from .io import atomic_write

    with atomic_write(text_path) as fh:
        for name, toks in zip(graph.names, graph.texts):
            fh.write(f"{name}\t{' '.join(toks)}\n")
    with atomic_write(edge_path) as fh:
        for s, d, w in zip(graph.src, graph.dst, graph.weight):
            fh.write(f"{graph.names[s]}\t{graph.names[d]}\t{float(w)!r}\n")
    if label_path is not None and graph.labels is not None:
        with atomic_write(label_path) as fh:
            for name, tags in zip(graph.names, graph.labels):
                if tags:
                    fh.write(f"{name}\t{','.join(tags)}\n")


DENSE_FRACTION = 0.1
DENSE_MAX_N = 4096


@dataclass(frozen=True)
class TransitionTensor:
    """Powers ``P^0 .. P^{H-1}`` of a row-stochastic matrix with hop weights."""

    hops: tuple[sp.csr_matrix, ...]
    hop_weights: np.ndarray

    @property
    def num_hops(self) -> int:
        return len(self.hops)

    @property
    def num_vertices(self) -> int:
        return self.hops[0].shape[0]

    def rows(self, rows: np.ndarray | None = None) -> list:
        """Row blocks of ``P^1 .. P^{H-1}`` (``P^0`` is the identity and omitted).

        Hops denser than ``DENSE_FRACTION`` on graphs up to ``DENSE_MAX_N``
        vertices are returned as dense arrays, which multiply much faster.
        """
        mats = self._compute_hops()
        if rows is None:
            return list(mats)
        return [p[rows] for p in mats]

    def _compute_hops(self) -> tuple:
        cached = self.__dict__.get("_compute")
        if cached is None:
            n = self.num_vertices
            cached = tuple(
                p.toarray() if n <= DENSE_MAX_N and p.nnz > DENSE_FRACTION * n * n else p
                for p in self.hops[1:]
            )
            object.__setattr__(self, "_compute", cached)
        return cached

    def operator(self) -> sp.csr_matrix:
        """The single matrix ``sum_h lambda_h P^h``."""
        out = self.hop_weights[0] * self.hops[0]
        for lam, p in zip(self.hop_weights[1:], self.hops[1:]):
            out = out + lam * p
        return out.tocsr()


def hop_weights(num_hops: int, decay: float) -> np.ndarray:
    """Geometric weights ``decay**h`` rescaled to sum to one."""
    if not 0 < decay < 1:
        raise ValueError(f"lambda decay must lie in (0, 1), got {decay}")
    lam = decay ** np.arange(num_hops, dtype=np.float64)
    return lam / lam.sum()


def _row_normalize(m: sp.csr_matrix) -> sp.csr_matrix:
    sums = np.asarray(m.sum(axis=1)).ravel()
    return (sp.diags(1.0 / sums) @ m).tocsr()


def _cap_rows(m: sp.csr_matrix, k: int) -> sp.csr_matrix:
    """Keep the ``k`` largest entries of each row, then renormalise."""
    m = m.tocsr()
    indptr, indices, data = [0], [], []
    for i in range(m.shape[0]):
        lo, hi = m.indptr[i], m.indptr[i + 1]
        cols, vals = m.indices[lo:hi], m.data[lo:hi]
        if vals.size > k:
            # stable on ties: prefer smaller column ids
            order = np.lexsort((cols, -vals))[:k]
            cols, vals = cols[order], vals[order]
        indices.append(cols)
        data.append(vals)
        indptr.append(indptr[-1] + cols.size)
    out = sp.csr_matrix(
        (np.concatenate(data), np.concatenate(indices), np.array(indptr)), shape=m.shape
    )
    out.sort_indices()
    return _row_normalize(out)


def transition_matrix(graph: TextualGraph) -> sp.csr_matrix:
    """Row-normalised adjacency; vertices without out-edges get a self-loop."""
    n = graph.num_vertices
    adj = graph.adjacency()
    sinks = np.flatnonzero(np.diff(adj.indptr) == 0)
    if sinks.size:
        adj = adj + sp.csr_matrix((np.ones(sinks.size), (sinks, sinks)), shape=(n, n))
    p = _row_normalize(adj.tocsr())
    p.sort_indices()
    return p


def build_transition(
    graph: TextualGraph,
    num_hops: int,
    lambda_decay: float = 0.5,
    max_row_entries: int | None = None,
) -> TransitionTensor:
    """Materialise ``P^0 .. P^{H-1}`` as sparse matrices.

    Args:
        graph: source graph.
        num_hops: H, number of powers kept (``P^0`` is the identity).
        lambda_decay: ratio of consecutive hop weights.
        max_row_entries: optional per-row density cap applied to every power
            above the first; capped rows are renormalised.
    """
    if num_hops < 1:
        raise ValueError("num_hops must be >= 1")
    n = graph.num_vertices
    eye = sp.identity(n, format="csr", dtype=np.float64)
    hops = [eye]
    if num_hops > 1:
        p1 = transition_matrix(graph)
        hops.append(p1)
        for _ in range(2, num_hops):
            nxt = (hops[-1] @ p1).tocsr()
            if max_row_entries is not None:
                nxt = _cap_rows(nxt, max_row_entries)
            nxt.sort_indices()
            hops.append(nxt)
    return TransitionTensor(tuple(hops), hop_weights(num_hops, lambda_decay))


def diffuse(tensor: TransitionTensor, m: np.ndarray) -> np.ndarray:
    """Return ``sum_h lambda_h P^h M``."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape[0] != tensor.num_vertices:
        raise ValueError(f"expected {tensor.num_vertices} rows, got {m.shape[0]}")
    out = np.zeros_like(m)
    for lam, p in zip(tensor.hop_weights, tensor.hops):
        out += lam * (p @ m)
    return out


def diffuse_row(tensor: TransitionTensor, m: np.ndarray, j: int) -> np.ndarray:
    """Row ``j`` of :func:`diffuse`, touching only the sparse rows of vertex ``j``."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape[0] != tensor.num_vertices:
        raise ValueError(f"expected {tensor.num_vertices} rows, got {m.shape[0]}")
    if not 0 <= j < tensor.num_vertices:
        raise IndexError(f"vertex {j} out of range")
    out = np.zeros(m.shape[1:])
    for lam, p in zip(tensor.hop_weights, tensor.hops):
        lo, hi = p.indptr[j], p.indptr[j + 1]
        out += lam * (p.data[lo:hi] @ m[p.indices[lo:hi]])
    return out
