import math
import random

import pytest
import torch
from hypothesis import given, settings, strategies as st

from kgxrec.decoding import Hypothesis, beam_search

from oracles import best_sequence_exhaustive

EOS = 2


def table_fn(table):
    """Wrap ``prefix tuple -> list of log-probs`` as a batched step function."""

    def step(prefixes):
        return torch.tensor([table(tuple(p.tolist())) for p in prefixes], dtype=torch.float64)

    return step


def random_table(seed, vocab):
    cache = {}

    def table(prefix):
        if prefix not in cache:
            rng = random.Random(hash((seed, prefix)))
            w = [rng.random() + 1e-3 for _ in range(vocab)]
            z = sum(w)
            cache[prefix] = [math.log(v / z) for v in w]
        return cache[prefix]

    return table


def greedy(table, eos, max_len):
    seq = ()
    while len(seq) < max_len:
        lp = table(seq)
        tok = max(range(len(lp)), key=lambda i: (lp[i], -i))
        seq += (tok,)
        if tok == eos:
            break
    return seq


# a then anything is mediocre; b then EOS is strong, but b loses the first step
HAND = {(): [math.log(0.5), math.log(0.4), math.log(0.1)],
        (0,): [math.log(0.34), math.log(0.33), math.log(0.33)],
        (1,): [math.log(0.05), math.log(0.05), math.log(0.9)]}


def hand(prefix):
    return HAND.get(prefix, [math.log(1 / 3)] * 3)


def test_greedy_misses_what_beam_two_finds():
    g = beam_search(table_fn(hand), EOS, beam_size=1, max_len=2)
    assert g.tokens == (0, 0)
    b = beam_search(table_fn(hand), EOS, beam_size=2, max_len=2)
    assert b.tokens == (1, 2)
    best, score = best_sequence_exhaustive(hand, 3, EOS, 2)
    assert b.tokens == best
    assert b.score(1.0) == pytest.approx((math.log(0.4) + math.log(0.9)) / 2)
    assert score == pytest.approx(b.score(1.0))


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_beam_one_is_greedy(seed, max_len):
    table = random_table(seed, 4)
    assert beam_search(table_fn(table), EOS, 1, max_len).tokens == greedy(table, EOS, max_len)


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_full_width_beam_is_exhaustive(seed, max_len):
    vocab = 3
    table = random_table(seed, vocab)
    got = beam_search(table_fn(table), EOS, beam_size=vocab ** max_len, max_len=max_len)
    best, score = best_sequence_exhaustive(table, vocab, EOS, max_len)
    assert got.tokens == best
    assert got.score(1.0) == pytest.approx(score, abs=1e-12)


def test_deterministic():
    table = random_table(7, 5)
    runs = {beam_search(table_fn(table), EOS, 3, 6) for _ in range(3)}
    assert len(runs) == 1


def test_stops_at_eos_when_certain():
    certain = lambda prefix: [-math.inf, -math.inf, 0.0]  # noqa: E731
    hyp = beam_search(table_fn(certain), EOS, beam_size=3, max_len=10)
    assert hyp == Hypothesis((EOS,), 0.0, True)


def test_length_counts_eos():
    assert Hypothesis((5, 6, EOS), -3.0, True).score(1.0) == -1.0
    assert Hypothesis((5, 6, EOS), -3.0, True).score(0.0) == -3.0


def test_invalid_beam():
    with pytest.raises(ValueError):
        beam_search(table_fn(hand), EOS, beam_size=0)
