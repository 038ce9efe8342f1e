"""Small model/data factories shared by several test modules."""

from __future__ import annotations

import torch

from kgxrec.graph import Item, ItemKG, UserHistory
from kgxrec.model import KGXRec, ModelConfig
from kgxrec.records import Example, to_examples
from kgxrec.synthetic import make_overfit_corpus
from kgxrec.training import build_vocab, make_model, prepare


def tiny_examples() -> list[Example]:
    """Two examples over 11 content words, so the vocabulary has exactly 20 entries."""
    center = Item("c1", "w0 w1")
    kg1 = ItemKG.from_pairs(center, [("w2", "w3"), ("w4", "w5 w6")])
    kg2 = ItemKG.from_pairs(Item("c2", "w7"), [("w2", "w8")])
    u1 = UserHistory("u1", (Item("p1", "w9"), Item("p2", "w10 w0")))
    u2 = UserHistory("u2", (Item("p3", "w10"),))
    return [Example(u1, kg1, 4.0, "w0 w1 w2 w3 w5"), Example(u2, kg2, 2.0, "w7 w8 w10")]


def tiny_setup(d: int = 8, layers: int = 1, heads: int = 1, seed: int = 0, **cfg_kw):
    examples = tiny_examples()
    vocab = build_vocab(examples)
    cfg = ModelConfig(d=d, encoder_layers=layers, decoder_layers=layers, heads=heads,
                      vocab_size=len(vocab), max_source_len=32, max_explanation_len=16, **cfg_kw)
    model = make_model(cfg, seed).to(torch.get_default_dtype())
    return model, vocab, prepare(examples, vocab, cfg.max_explanation_len)


def overfit_setup(d: int = 64, layers: int = 2, heads: int = 4, seed: int = 0, **cfg_kw):
    examples = to_examples(make_overfit_corpus())
    vocab = build_vocab(examples)
    cfg = ModelConfig(d=d, encoder_layers=layers, decoder_layers=layers, heads=heads,
                      vocab_size=len(vocab), max_explanation_len=32, **cfg_kw)
    return cfg, vocab, prepare(examples, vocab, cfg.max_explanation_len)


@torch.no_grad()
def rig_decoder(model: KGXRec, sequence: list[int]) -> None:
    """Make the decoder emit ``sequence`` regardless of its input.

    Every decoder block is silenced, each position gets a huge one-hot
    embedding so it survives the final norm, and the output projection maps
    position t onto token ``sequence[t]``.
    """
    d = model.cfg.d
    if len(sequence) > d:
        raise ValueError("rigged sequence longer than the model width")
    for layer in model.decoder:
        layer.self_attn.w_o.zero_()
        layer.cross_attn.w_o.zero_()
        layer.ffn.fc2.weight.zero_()
        layer.ffn.fc2.bias.zero_()
    model.dec_pos.weight.zero_()
    for t in range(min(model.cfg.max_explanation_len, d)):
        model.dec_pos.weight[t, t] = 1000.0
    model.out_proj.weight.zero_()
    model.out_proj.bias.zero_()
    for t, tok in enumerate(sequence):
        model.out_proj.weight[tok, t] = 100.0
