"""Trainable parameters, per-vertex views and embedding persistence."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .config import TrainConfig
from .errors import DataError
from .graph import TransitionTensor, diffuse
from .io import atomic_write
from .text import Vocabulary, encode_texts

PARAM_NAMES = ("word_table", "struct_table", "diff_weights")


@dataclass
class ModelParameters:
    """Word table ``|w| x d_t``, structure table ``N x d_s`` and diffusion weights ``H x d_t``."""

    word_table: np.ndarray
    struct_table: np.ndarray
    diff_weights: np.ndarray
    seed: int = 0

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "ModelParameters":
        return ModelParameters(*(getattr(self, n).copy() for n in PARAM_NAMES), seed=self.seed)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.as_dict().values())


def truncated_normal(rng: np.random.Generator, shape, std: float, bound: float = 2.0) -> np.ndarray:
    """Gaussian draws with anything beyond ``bound`` standard deviations redrawn."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


def init_parameters(config: TrainConfig, vocab_size: int, num_vertices: int) -> ModelParameters:
    if vocab_size < 1 or num_vertices < 1:
        raise ValueError("vocabulary and vertex count must be positive")
    rng = np.random.default_rng(config.seed)
    return ModelParameters(
        word_table=truncated_normal(rng, (vocab_size, config.d_t), config.init_std),
        struct_table=truncated_normal(rng, (num_vertices, config.d_s), config.init_std),
        diff_weights=truncated_normal(rng, (config.hops, config.d_t), config.init_std),
        seed=config.seed,
    )


@dataclass(frozen=True)
class VertexViews:
    """Structure embeddings ``v_s``, text embeddings ``v_t`` and the diffusion map ``u_s`` of ``v_s``."""

    v_s: np.ndarray
    v_t: np.ndarray
    u_s: np.ndarray


def forward_views(
    params: ModelParameters,
    doc_matrix: sp.csr_matrix,
    tensor: TransitionTensor,
    nonlinearity="tanh",
) -> VertexViews:
    n = tensor.num_vertices
    if params.struct_table.shape[0] != n or doc_matrix.shape[0] != n:
        raise ValueError("parameter tables do not match the graph size")
    if params.struct_table.shape[1] != params.word_table.shape[1]:
        raise ValueError("structure and text dimensions differ")
    act = encode_texts(tensor, doc_matrix, params.word_table, params.diff_weights, nonlinearity)
    v_s = params.struct_table
    return VertexViews(v_s=v_s, v_t=act.v_t, u_s=diffuse(tensor, v_s))


def final_embeddings(views: VertexViews, mode: str = "concat") -> np.ndarray:
    """Row ``i`` is ``v_t[i]`` followed by ``v_s[i]``, or ``v_t[i]`` alone in ``text_only`` mode."""
    if mode == "concat":
        return np.hstack([views.v_t, views.v_s])
    if mode == "text_only":
        return views.v_t.copy()
    raise ValueError(f"unknown embedding mode {mode!r}")


def save_embeddings(path, names, emb: np.ndarray) -> None:
    """Text format: a ``N d`` header, then ``NAME v1 ... vd`` per vertex."""
    emb = np.asarray(emb, dtype=np.float64)
    if len(names) != emb.shape[0]:
        raise ValueError("names and embedding rows differ in length")
    with atomic_write(path) as fh:
        fh.write(f"{emb.shape[0]} {emb.shape[1]}\n")
        for name, row in zip(names, emb):
            fh.write(name + " " + " ".join(repr(float(x)) for x in row) + "\n")


def load_embeddings(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}: expected 'N d' header")
        n, d = int(header[0]), int(header[1])
        names, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.rsplit(" ", d)
            if len(parts) != d + 1:
                raise DataError(f"{path}:{lineno}: expected name and {d} values")
            names.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    if len(names) != n:
        raise DataError(f"{path}: header says {n} rows, found {len(names)}")
    return names, np.array(rows, dtype=np.float64).reshape(n, d)


def save_checkpoint(path, params: ModelParameters, hop_weights, vocab: Vocabulary, config: TrainConfig, names) -> None:
    with atomic_write(path, "wb") as fh:
        np.savez(
            fh,
            word_table=params.word_table,
            struct_table=params.struct_table,
            diff_weights=params.diff_weights,
            hop_weights=np.asarray(hop_weights),
            vocab=np.array(vocab.tokens[:-1], dtype=str),
            names=np.array(list(names), dtype=str),
            config=np.array(json.dumps(config.to_dict(), sort_keys=True)),
        )


def load_checkpoint(path):
    """Return ``(params, hop_weights, vocab, config, names)``."""
    with np.load(path, allow_pickle=False) as z:
        config = TrainConfig.from_dict(json.loads(str(z["config"])))
        params = ModelParameters(
            z["word_table"].copy(), z["struct_table"].copy(), z["diff_weights"].copy(), seed=config.seed
        )
        return params, z["hop_weights"].copy(), Vocabulary(z["vocab"].tolist()), config, z["names"].tolist()
