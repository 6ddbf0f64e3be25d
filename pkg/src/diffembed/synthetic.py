"""Seeded planted-partition graphs with block-specific vocabularies."""
from __future__ import annotations

import numpy as np

from .graph import TextualGraph, from_edge_list


def block_graph(
    num_vertices: int = 200,
    num_blocks: int = 2,
    p_in: float = 0.05,
    p_out: float = 0.005,
    vocab_per_block: int = 50,
    text_length: int = 10,
    seed: int = 0,
) -> TextualGraph:
    """Undirected stochastic block model whose texts are drawn from per-block vocabularies.

    Vertex ``v{i}`` belongs to block ``i * num_blocks // num_vertices`` and is
    labelled with it. Each text has ``text_length`` tokens sampled uniformly
    with replacement from its block's ``vocab_per_block`` words.
    """
    rng = np.random.default_rng(seed)
    block = np.arange(num_vertices) * num_blocks // num_vertices
    iu, ju = np.triu_indices(num_vertices, k=1)
    prob = np.where(block[iu] == block[ju], p_in, p_out)
    keep = rng.random(iu.size) < prob
    edges = [(int(a), int(b), 1.0) for a, b in zip(iu[keep], ju[keep])]
    words = rng.integers(0, vocab_per_block, size=(num_vertices, text_length))
    texts = [[f"b{block[i]}w{w}" for w in words[i]] for i in range(num_vertices)]
    labels = [[f"block{block[i]}"] for i in range(num_vertices)]
    names = [f"v{i}" for i in range(num_vertices)]
    return from_edge_list(names, edges, texts=texts, labels=labels, directed=False)
