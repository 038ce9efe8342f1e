import math
import random

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from kgxrec.attention import (
    NEG_INF,
    AttentionParams,
    assignment_matrix,
    build_component_mask,
    gather_combine,
    gather_with,
    global_attention,
    graph_attention,
    pool_components,
    pool_with,
)
from kgxrec.graph import Item, ItemKG, Triple, UserHistory, build_user_item_graph, linearize
from kgxrec.tokenizer import Vocab

import oracles

pytestmark = pytest.mark.usefixtures("float64")


def rand_params(d, heads=1, seed=0, w_o=False):
    g = torch.Generator().manual_seed(seed)
    mats = [torch.randn(d, d, generator=g, dtype=torch.float64) for _ in range(4)]
    return AttentionParams(mats[0], mats[1], mats[2], mats[3] if w_o else None, heads)


def random_adjacency(m, rng):
    adj = np.eye(m, dtype=bool)
    for i in range(m):
        for j in range(i + 1, m):
            if rng.random() < 0.4:
                adj[i, j] = adj[j, i] = True
    return adj


def random_spans(n, m, rng):
    """m disjoint non-empty spans over n tokens; leftover tokens act as markers."""
    tokens = list(range(n))
    rng.shuffle(tokens)
    cuts = sorted(rng.sample(range(1, n), m - 1)) if m > 1 else []
    groups = [tokens[a:b] for a, b in zip([0] + cuts, cuts + [n])]
    # drop a few tokens from the spans to leave marker positions
    return [sorted(g[: max(1, len(g) - rng.randint(0, 1))]) for g in groups]


# -- mask ---------------------------------------------------------------------


def test_mask_fully_connected_pair():
    assert torch.equal(build_component_mask(np.ones((2, 2), bool)), torch.zeros(2, 2))


def test_mask_chain():
    adj = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], bool)
    mask = build_component_mask(adj)
    assert mask[0, 2] == NEG_INF and mask[2, 0] == NEG_INF
    assert mask[0, 1] == 0 and mask[1, 2] == 0
    assert (mask.diagonal() == 0).all()


@settings(max_examples=50)
@given(st.integers(1, 8), st.integers(0, 10_000))
def test_mask_matches_pair_enumeration(m, seed):
    adj = random_adjacency(m, random.Random(seed))
    mask = build_component_mask(adj)
    pairs = {(i, j) for i in range(m) for j in range(i + 1, m) if adj[i, j]}
    ref = oracles.mask_by_rule(pairs, m)
    for i in range(m):
        for j in range(m):
            assert (mask[i, j] == 0) == (ref[i][j] == 0)
    assert torch.equal(mask, mask.T)


def test_mask_from_user_item_graph(harry_potter_graph):
    mask = build_component_mask(harry_potter_graph)
    assert torch.equal(mask[:3, :3], torch.zeros(3, 3))
    assert mask[0, 3] == NEG_INF and mask[2, 3] == 0 and mask[3, 4] == 0 and mask[2, 4] == NEG_INF


# -- global attention -----------------------------------------------------------


def test_global_single_token():
    p = rand_params(4)
    x = torch.randn(1, 4)
    out, w = global_attention(x, p, return_weights=True)
    assert torch.allclose(w, torch.ones(1, 1, 1))
    assert torch.allclose(out, x @ p.w_v)


def test_global_identical_rows_uniform_weights():
    p = rand_params(4, heads=2)
    x = torch.randn(1, 4).repeat(5, 1)
    _, w = global_attention(x, p, return_weights=True)
    assert torch.allclose(w, torch.full_like(w, 1 / 5), atol=1e-12)


def test_global_small_integer_case_against_exact_evaluation():
    x = torch.tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    p = AttentionParams(torch.tensor([[1.0, 0.0], [0.0, 2.0]]), torch.tensor([[1.0, 1.0], [0.0, 1.0]]),
                        torch.tensor([[2.0, -1.0], [1.0, 3.0]]))
    out, w = global_attention(x, p, return_weights=True)
    ref_out, ref_w = oracles.attention_single_head(x, p.w_q, p.w_k, p.w_v)
    assert torch.allclose(out, torch.tensor(ref_out), atol=1e-12)
    assert torch.allclose(w[0], torch.tensor(ref_w), atol=1e-12)
    # first row by hand: q=(1,0); keys (1,1),(0,1),(1,2) -> scores (1,0,1)/sqrt2
    e1, e0 = math.exp(1 / math.sqrt(2)), 1.0
    z = 2 * e1 + e0
    assert ref_w[0] == pytest.approx([e1 / z, e0 / z, e1 / z], abs=1e-15)


@given(st.integers(1, 9), st.integers(0, 10_000))
def test_global_rows_sum_to_one(n, seed):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(n, 8, generator=g) * 3
    _, w = global_attention(x, rand_params(8, heads=2, seed=seed), return_weights=True)
    assert torch.allclose(w.sum(-1), torch.ones_like(w.sum(-1)), atol=1e-6)


def test_global_rejects_non_finite():
    x = torch.zeros(3, 4)
    x[1, 2] = math.nan
    with pytest.raises(ValueError, match="non-finite"):
        global_attention(x, rand_params(4))


def test_global_key_padding_ignores_padded_keys():
    p = rand_params(4)
    x = torch.randn(4, 4)
    pad = torch.tensor([False, False, True, True])
    out, w = global_attention(x, p, key_padding=pad, return_weights=True)
    assert float(w[..., 2:].max()) < 1e-12
    assert torch.allclose(out[:2], global_attention(x[:2], p)[:2], atol=1e-12)


# -- pooling / gather ---------------------------------------------------------


def test_pool_singleton_spans_select_rows():
    x = torch.randn(5, 3)
    spans = [[4], [0], [2]]
    assert torch.equal(pool_components(x, spans), x[[4, 0, 2]])


def test_pool_opposite_rows_cancel():
    v = torch.randn(3)
    x = torch.stack([v, -v])
    assert torch.allclose(pool_components(x, [[0, 1]]), torch.zeros(1, 3))


@settings(max_examples=100)
@given(st.integers(2, 12), st.integers(0, 10_000))
def test_pool_and_gather_match_loops(n, seed):
    rng = random.Random(seed)
    m = rng.randint(1, min(n, 6))
    spans = random_spans(n, m, rng)
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(n, 5, generator=g)
    xg = torch.randn(m, 5, generator=g)
    assert torch.allclose(pool_components(x, spans), torch.tensor(oracles.pool_loop(x, spans)), atol=1e-6)
    assert torch.allclose(gather_combine(xg, x, spans), torch.tensor(oracles.gather_loop(xg, x, spans)),
                          atol=1e-6)


def test_pool_rejects_empty_span():
    with pytest.raises(ValueError, match="empty span"):
        pool_components(torch.zeros(3, 2), [[0], []])


def test_gather_zero_components_is_identity():
    x = torch.randn(6, 4)
    assert torch.equal(gather_combine(torch.zeros(2, 4), x, [[0, 1], [3]]), x)


def test_gather_singletons_add_aligned_rows():
    x, xg = torch.randn(3, 4), torch.randn(3, 4)
    assert torch.allclose(gather_combine(xg, x, [[0], [1], [2]]), x + xg)


def test_gather_leaves_marker_tokens():
    x, xg = torch.randn(4, 2), torch.randn(1, 2)
    out = gather_combine(xg, x, [[1, 2]])
    assert torch.equal(out[0], x[0]) and torch.equal(out[3], x[3])


@given(st.integers(0, 10_000))
def test_pool_then_broadcast_is_identity_for_constant_spans(seed):
    rng = random.Random(seed)
    n, m = 9, 3
    spans = random_spans(n, m, rng)
    values = torch.randn(m, 4, generator=torch.Generator().manual_seed(seed))
    comp = [-1] * n
    for c, s in enumerate(spans):
        for t in s:
            comp[t] = c
    assign = assignment_matrix(comp, m)
    x = torch.randn(n, 4)
    for c, s in enumerate(spans):
        x[s] = values[c]
    back = assign @ pool_with(x, assign)
    idx = [t for t in range(n) if comp[t] >= 0]
    assert torch.allclose(back[idx], x[idx], atol=1e-12)


# -- graph attention ----------------------------------------------------------


def test_graph_attention_full_mask_equals_unmasked():
    p = rand_params(6, heads=2, w_o=True)
    xg = torch.randn(4, 6)
    masked = graph_attention(xg, build_component_mask(np.ones((4, 4), bool)), p)
    assert torch.allclose(masked, global_attention(xg, p), atol=1e-12)


def test_graph_attention_isolated_nodes_use_own_value():
    p = rand_params(4)
    xg = torch.randn(3, 4)
    out = graph_attention(xg, build_component_mask(np.eye(3, dtype=bool)), p)
    assert torch.allclose(out, xg @ p.w_v, atol=1e-12)


def test_graph_attention_chain_matches_restricted_softmax():
    p = rand_params(4, seed=3)
    xg = torch.randn(3, 4, generator=torch.Generator().manual_seed(7))
    adj = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], bool)
    out, w = graph_attention(xg, build_component_mask(adj), p, return_weights=True)
    ref_out, ref_w = oracles.attention_single_head(xg, p.w_q, p.w_k, p.w_v, allowed=adj)
    assert torch.allclose(out, torch.tensor(ref_out), atol=1e-10)
    assert torch.allclose(w[0], torch.tensor(ref_w), atol=1e-10)


def test_graph_attention_shape_mismatch():
    with pytest.raises(ValueError, match="does not match"):
        graph_attention(torch.zeros(3, 4), torch.zeros(2, 2), rand_params(4))


@settings(max_examples=30)
@given(st.integers(1, 8), st.integers(0, 10_000))
def test_masked_weights_vanish(m, seed):
    rng = random.Random(seed)
    adj = random_adjacency(m, rng)
    xg = torch.randn(m, 8, generator=torch.Generator().manual_seed(seed)) * 4
    _, w = graph_attention(xg, build_component_mask(adj), rand_params(8, heads=2, seed=seed),
                           return_weights=True)
    blocked = torch.as_tensor(~adj)
    assert all(float(v) < 1e-6 for v in w[:, blocked].flatten())
    assert torch.allclose(w.sum(-1), torch.ones(2, m), atol=1e-6)


def _permuted_graphs(seed):
    rng = random.Random(seed)
    words = ["red", "green", "blue", "cyan", "pink", "gold", "gray", "teal"]
    user = UserHistory("u", tuple(Item(f"p{i}", rng.choice(words)) for i in range(2)))
    center = Item("c", "center item")
    pairs = [(rng.choice(words), " ".join(rng.sample(words, rng.randint(1, 2)))) for _ in range(3)]
    perm = [2, 0, 1]
    g1 = build_user_item_graph(user, ItemKG(center, tuple(Triple(center, r, t) for r, t in pairs)))
    g2 = build_user_item_graph(user, ItemKG(center, tuple(Triple(center, *pairs[k]) for k in perm)))
    return g1, g2, perm


@given(st.integers(0, 1000))
def test_triple_permutation_consistency(seed):
    g1, g2, perm = _permuted_graphs(seed)
    vocab = Vocab.build([c.text for c in g1.components])
    emb = torch.randn(len(vocab), 4, generator=torch.Generator().manual_seed(seed))
    s1, s2 = linearize(g1, vocab), linearize(g2, vocab)
    # component index map: g2 component k -> g1 component comp_map[k]
    base = g1.center_index + 1
    comp_map = list(range(base))
    for k in perm:
        comp_map += [base + 2 * k, base + 2 * k + 1]
    P = torch.eye(g1.num_components)[comp_map]
    m1, m2 = build_component_mask(g1), build_component_mask(g2)
    assert torch.equal(m2, P @ m1 @ P.T)
    x1, x2 = emb[list(s1.ids)], emb[list(s2.ids)]
    pooled1, pooled2 = pool_components(x1, s1.spans()), pool_components(x2, s2.spans())
    assert torch.allclose(pooled2, P @ pooled1, atol=1e-12)
    p = rand_params(4, seed=seed, w_o=True)
    assert torch.allclose(graph_attention(pooled2, m2, p), P @ graph_attention(pooled1, m1, p), atol=1e-10)


# -- gradients ----------------------------------------------------------------


def _check_grad(fn, tensors, tol=1e-4):
    leaves = [t.clone().requires_grad_(True) for t in tensors]
    fn(*leaves).backward()
    analytic = [leaf.grad.clone() for leaf in leaves]
    work = [t.clone() for t in tensors]
    numeric = oracles.central_differences(lambda: fn(*work), work)
    assert oracles.max_relative_error(analytic, numeric) < tol


def test_kernel_gradients_match_finite_differences():
    g = torch.Generator().manual_seed(11)
    n, m, d = 7, 3, 4
    x = torch.randn(n, d, generator=g)
    ws = [torch.randn(d, d, generator=g) * 0.7 for _ in range(4)]
    spans = [[0, 1], [3], [4, 5, 6]]
    adj = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], bool)
    mask = build_component_mask(adj)
    r = torch.randn(n, d, generator=g)

    def layer(x, wq, wk, wv, wo):
        p = AttentionParams(wq, wk, wv, wo, num_heads=2)
        mixed = global_attention(x, p)
        comps = graph_attention(pool_components(x, spans), mask, p)
        return (gather_combine(comps, mixed, spans) * r).sum()

    _check_grad(layer, [x] + ws)
