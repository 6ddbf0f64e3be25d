import numpy as np
import pytest
from conftest import random_graph
from scipy.stats import truncnorm

from diffembed.config import TrainConfig
from diffembed.errors import ConfigError
from diffembed.graph import build_transition, diffuse_row
from diffembed.model import (
    VertexViews,
    final_embeddings,
    forward_views,
    init_parameters,
    load_checkpoint,
    load_embeddings,
    save_checkpoint,
    save_embeddings,
    truncated_normal,
)
from diffembed.text import (
    averaging_matrix,
    build_vocabulary,
    compute_text_inputs,
    diffusion_convolve,
)


def small_config(**kw):
    base = dict(d_s=4, d_t=4, hops=3)
    base.update(kw)
    return TrainConfig(**base)


def test_same_seed_identical():
    a = init_parameters(small_config(seed=3), 10, 7)
    b = init_parameters(small_config(seed=3), 10, 7)
    for name, arr in a.as_dict().items():
        assert arr.tobytes() == b.as_dict()[name].tobytes()
    c = init_parameters(small_config(seed=4), 10, 7)
    assert not np.array_equal(a.word_table, c.word_table)


def test_truncation_bound():
    p = init_parameters(TrainConfig(seed=0), 500, 300)
    for arr in p.as_dict().values():
        assert np.abs(arr).max() <= 0.2


def test_truncated_std_matches_closed_form():
    draws = truncated_normal(np.random.default_rng(0), 10**6, std=0.1)
    expected = truncnorm.std(-2, 2, loc=0, scale=0.1)
    assert abs(draws.std() - expected) / expected < 0.05
    assert abs(expected - 0.08796) < 1e-4


def test_init_shapes_and_errors():
    p = init_parameters(small_config(), 9, 5)
    assert p.word_table.shape == (9, 4)
    assert p.struct_table.shape == (5, 4)
    assert p.diff_weights.shape == (3, 4)
    with pytest.raises(ValueError):
        init_parameters(small_config(), 0, 5)


def test_config_rejects_unequal_halves():
    with pytest.raises(ConfigError):
        TrainConfig(d_s=3, d_t=4)


def _views(rng, hops=3):
    g = random_graph(rng, 7, vocab=5)
    vocab = build_vocabulary(g)
    a = averaging_matrix(vocab.encode_graph(g), len(vocab))
    t = build_transition(g, hops)
    p = init_parameters(small_config(hops=hops, init_std=0.5), len(vocab), 7)
    return g, a, t, p, forward_views(p, a, t)


def test_single_hop_diffusion_map_is_structure(rng):
    _, _, _, p, views = _views(rng, hops=1)
    np.testing.assert_array_equal(views.u_s, views.v_s)


def test_no_diffusion_text_view(rng):
    _, a, _, p, views = _views(rng, hops=1)
    x = compute_text_inputs(a, p.word_table)
    np.testing.assert_allclose(views.v_t, np.tanh(p.diff_weights[0] * x), rtol=0, atol=1e-15)


def test_views_match_row_oracles(rng):
    _, a, t, p, views = _views(rng)
    for j in range(7):
        np.testing.assert_allclose(views.u_s[j], diffuse_row(t, p.struct_table, j), rtol=0, atol=1e-12)
    x = compute_text_inputs(a, p.word_table)
    np.testing.assert_allclose(views.v_t, diffusion_convolve(t, x, p.diff_weights).v_t, atol=1e-15)


def test_final_embeddings_layout(rng):
    _, _, _, _, views = _views(rng)
    emb = final_embeddings(views, "concat")
    assert emb.shape == (7, 8)
    np.testing.assert_array_equal(emb[0], np.concatenate([views.v_t[0], views.v_s[0]]))
    assert final_embeddings(views, "text_only").shape == (7, 4)
    np.testing.assert_array_equal(final_embeddings(views), final_embeddings(views))


def test_default_width_is_200():
    cfg = TrainConfig()
    views = VertexViews(np.zeros((3, cfg.d_s)), np.zeros((3, cfg.d_t)), np.zeros((3, cfg.d_s)))
    assert final_embeddings(views).shape[1] == 200


def test_embedding_file_round_trip(tmp_path, rng):
    emb = rng.standard_normal((4, 3))
    names = ["a", "b c", "d", "e"]
    save_embeddings(tmp_path / "emb.txt", names, emb)
    assert (tmp_path / "emb.txt").read_text().splitlines()[0] == "4 3"
    got_names, got = load_embeddings(tmp_path / "emb.txt")
    assert got_names == names
    assert got.tobytes() == emb.tobytes()


def test_checkpoint_round_trip(tmp_path, rng):
    g, a, t, p, _ = _views(rng)
    vocab = build_vocabulary(g)
    cfg = small_config(seed=9)
    save_checkpoint(tmp_path / "ck.npz", p, t.hop_weights, vocab, cfg, g.names)
    q, lam, v2, cfg2, names = load_checkpoint(tmp_path / "ck.npz")
    assert cfg2 == cfg
    assert v2.tokens == vocab.tokens
    assert tuple(names) == g.names
    np.testing.assert_array_equal(lam, t.hop_weights)
    for name, arr in p.as_dict().items():
        np.testing.assert_array_equal(q.as_dict()[name], arr)
