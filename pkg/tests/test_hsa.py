import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kvcompress import (HsaConfig, KvStore, dense_attention, exact_topk_indices, hsa_step, score_pages,
                        select_dims, select_tokens, sparse_attention)
from kvcompress.errors import EmptyCache, EmptySelection, InvalidConfig

from conftest import random_store


# -- select_dims ------------------------------------------------------------------

def test_select_dims_example():
    dims, signs = select_dims(np.array([[0.0, 5.0, -3.0]]), 2)
    assert dims.tolist() == [1, 2]
    assert signs.tolist() == [1, -1]


def test_select_dims_negated_query(rng):
    q = rng.standard_normal((1, 16))
    d1, s1 = select_dims(q, 5)
    d2, s2 = select_dims(-q, 5)
    assert d1.tolist() == d2.tolist()
    assert (s1 == -s2).all()


def test_select_dims_zero_sign_is_positive():
    _, signs = select_dims(np.array([[1.0, -1.0], [-1.0, 1.0]]), 2)
    assert signs.tolist() == [1, 1]


def test_select_dims_brute_force(rng):
    for _ in range(20):
        q = rng.standard_normal((4, 24))
        k1 = int(rng.integers(1, 25))
        mags = [sum(abs(q[h, j]) for h in range(4)) for j in range(24)]
        oracle = sorted(range(24), key=lambda j: (-mags[j], j))[:k1]
        dims, signs = select_dims(q, k1)
        assert dims.tolist() == oracle
        assert signs.tolist() == [1 if sum(q[h, j] for h in range(4)) >= 0 else -1 for j in oracle]


def test_select_dims_k1_too_large():
    with pytest.raises(InvalidConfig):
        select_dims(np.ones((1, 3)), 4)


# -- score_pages ------------------------------------------------------------------

def test_scores_exact_with_unit_pages(rng):
    s = random_store(rng, 50, 16)
    q = rng.standard_normal((4, 16))
    dims, signs = select_dims(q, 16)
    np.testing.assert_allclose(score_pages(q, s, dims, signs),
                               s.keys.astype(np.float64) @ q.sum(axis=0), rtol=1e-12, atol=1e-12)


def test_identical_keys_equal_scores(rng):
    k = rng.standard_normal(8)
    s = KvStore.from_arrays(np.tile(k, (21, 1)), np.zeros((21, 8)), page_len=4)
    q = rng.standard_normal((2, 8))
    dims, signs = select_dims(q, 3)
    sc = score_pages(q, s, dims, signs)
    assert np.ptp(sc) == 0


def test_scores_follow_fetch_rule(rng):
    s = random_store(rng, 40, 10, page_len=3)
    q = rng.standard_normal((3, 10))
    dims, signs = select_dims(q, 4)
    qs = q.sum(axis=0)
    for p, got in enumerate(score_pages(q, s, dims, signs)):
        ref = 0.0
        for j, g in zip(dims, signs):
            ref += qs[j] * (s.k_max[p, j] if g >= 0 else s.k_min[p, j])
        assert got == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_scores_upper_bound_page_logits(rng):
    for L in (2, 3, 8):
        s = random_store(rng, 100, 12, page_len=L)
        q = rng.standard_normal((4, 12))
        dims, signs = select_dims(q, 12)
        sc = score_pages(q, s, dims, signs)
        true = s.keys.astype(np.float64) @ q.sum(axis=0)
        for p in range(s.num_pages):
            assert sc[p] >= true[s.page_members(p)].max() - 1e-9


def test_scores_empty_cache():
    s = KvStore(4)
    with pytest.raises(EmptyCache):
        score_pages(np.ones((1, 4)), s, np.array([0]), np.array([1]))


# -- select_tokens ----------------------------------------------------------------

def test_select_all_when_k2_covers_cache(rng):
    s = random_store(rng, 10, 4, page_len=3)
    tokens, _ = select_tokens(np.zeros(s.num_pages), s, 50)
    assert tokens.tolist() == list(range(10))


def test_select_unit_pages_is_topk(rng):
    s = random_store(rng, 40, 4)
    sc = rng.standard_normal(40)
    tokens, _ = select_tokens(sc, s, 7)
    assert tokens.tolist() == sorted(sorted(range(40), key=lambda i: (-sc[i], i))[:7])


def test_select_truncates_last_page():
    s = KvStore.from_arrays(np.zeros((9, 2)), np.zeros((9, 2)), page_len=3)
    tokens, pages = select_tokens(np.array([1.0, 3.0, 2.0]), s, 4)
    # best page (1) whole, then the earliest token of the runner-up (2)
    assert tokens.tolist() == [3, 4, 5, 6]
    assert pages.tolist() == [1, 2]


def test_select_short_final_page_still_fills_k2():
    s = KvStore.from_arrays(np.zeros((7, 2)), np.zeros((7, 2)), page_len=3)
    # best pages are the 1-token tail page and page 0; k2=4 needs a third page
    tokens, pages = select_tokens(np.array([2.0, 0.0, 3.0]), s, 4)
    assert tokens.tolist() == [0, 1, 2, 6]
    assert pages.tolist() == [2, 0]


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 60), st.sampled_from([1, 2, 3, 4, 7]), st.integers(1, 70), st.integers(0, 2**32 - 1))
def test_select_size_and_nesting(n, L, k2, seed):
    rng = np.random.default_rng(seed)
    s = random_store(rng, n, 3, page_len=L)
    sc = rng.standard_normal(s.num_pages)
    tokens, _ = select_tokens(sc, s, k2)
    assert tokens.size == min(k2, n)
    assert np.all(np.diff(tokens) > 0)
    assert set(tokens.tolist()) <= set(s.active.tolist())
    assert tokens.size <= -(-k2 // L) * L
    bigger, _ = select_tokens(sc, s, k2 + 1)
    assert set(tokens.tolist()) <= set(bigger.tolist())


# -- sparse_attention / hsa_step ----------------------------------------------------

def _naive_attention(q, keys, values, idx):
    out = np.zeros_like(q)
    for h in range(q.shape[0]):
        logits = np.array([q[h] @ keys[i] for i in idx]) / math.sqrt(q.shape[1])
        p = np.exp(logits - logits.max())
        p /= p.sum()
        out[h] = sum(pi * values[i] for pi, i in zip(p, idx))
    return out


def test_sparse_all_equals_dense(rng):
    s = random_store(rng, 80, 16)
    q = rng.standard_normal((4, 16))
    np.testing.assert_allclose(sparse_attention(q, s, s.active), dense_attention(q, s.keys, s.values), atol=1e-5)


def test_sparse_single_token(rng):
    s = random_store(rng, 10, 8)
    out = sparse_attention(rng.standard_normal((3, 8)), s, [4])
    np.testing.assert_allclose(out, np.tile(s.values[4], (3, 1)))


def test_sparse_matches_naive(rng):
    s = random_store(rng, 50, 8)
    q = rng.standard_normal((2, 8))
    idx = np.sort(rng.choice(50, 12, replace=False))
    keys = s.keys.astype(np.float64)
    vals = s.values.astype(np.float64)
    np.testing.assert_allclose(sparse_attention(q, s, idx), _naive_attention(q, keys, vals, idx), atol=1e-10)


def test_sparse_empty_selection(rng):
    with pytest.raises(EmptySelection):
        sparse_attention(np.ones((1, 8)), random_store(rng, 3, 8), [])


def test_hsa_exact_configuration(rng):
    s = random_store(rng, 200, 32)
    q = rng.standard_normal((4, 32))
    _, trace = hsa_step(q, s, HsaConfig(32, 20, 1))
    assert trace.selected_tokens.tolist() == exact_topk_indices(q, s.keys, 20).tolist()


def test_hsa_trace_and_traffic(rng):
    s = random_store(rng, 120, 16, page_len=4)
    q = rng.standard_normal((2, 16))
    out, trace = hsa_step(q, s, HsaConfig(5, 17, 4))
    assert out.shape == (2, 16)
    assert trace.dims.size == 5 and trace.signs.size == 5
    assert trace.selected_tokens.size == 17
    assert trace.est_elements == s.num_pages * 5
    assert trace.fetch_elements == 2 * 16 * 17
    assert trace.traffic_tokens == pytest.approx(30 * 5 / 32 + 17)
    np.testing.assert_allclose(out, sparse_attention(q, s, trace.selected_tokens))


def test_hsa_head_only_equals_sparq_style_estimate(rng):
    s = random_store(rng, 100, 16)
    q = rng.standard_normal((2, 16))
    _, trace = hsa_step(q, s, HsaConfig(4, 10, 1))
    dims, _ = select_dims(q, 4)
    approx = s.keys[:, np.sort(dims)].astype(np.float64) @ q.sum(axis=0)[np.sort(dims)]
    assert trace.selected_tokens.tolist() == sorted(sorted(range(100), key=lambda i: (-approx[i], i))[:10])


def test_hsa_page_len_mismatch(rng):
    s = random_store(rng, 10, 4, page_len=2)
    with pytest.raises(InvalidConfig):
        hsa_step(np.ones((1, 4)), s, HsaConfig(4, 2, 1))


@pytest.mark.parametrize("L", [1, 2, 3, 4])
def test_planted_needle_always_fetched(L):
    d, n, H = 32, 400, 2
    for seed in range(100):
        rng = np.random.default_rng(seed)
        keys = rng.standard_normal((n, d))
        q = rng.standard_normal((H, d))
        qs = q.sum(axis=0)
        needle = int(rng.integers(n))
        # margin measured on the scaled group-summed logit, sum_h q_h.k / sqrt(d)
        logits = keys @ qs / math.sqrt(d)
        others = np.delete(logits, needle).max()
        keys[needle] += (others + 10 - logits[needle]) * math.sqrt(d) * qs / (qs @ qs)
        s = KvStore.from_arrays(keys, keys, page_len=L)
        _, trace = hsa_step(q, s, HsaConfig(d // 2, 16, L))
        assert needle in trace.selected_tokens
