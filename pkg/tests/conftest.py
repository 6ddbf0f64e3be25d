import numpy as np
import pytest

from diffembed.graph import from_edge_list


def random_graph(rng, n, p=0.3, directed=True, max_tokens=4, vocab=6, weighted=True):
    """Small random textual graph; some vertices may be sinks or have empty texts."""
    edges = []
    for i in range(n):
        for j in range(n):
            if (directed or i < j) and rng.random() < p:
                edges.append((i, j, float(rng.uniform(0.5, 2.0)) if weighted else 1.0))
    texts = [
        [f"w{rng.integers(vocab)}" for _ in range(rng.integers(0, max_tokens + 1))] for _ in range(n)
    ]
    return from_edge_list([f"n{i}" for i in range(n)], edges, texts=texts, directed=directed)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
