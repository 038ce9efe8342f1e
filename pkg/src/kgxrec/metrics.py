"""Text and rating metrics: BLEU, ROUGE-2/L, USR, entity coverage, RMSE/MAE.

BLEU, ROUGE and EC are reported as percentages in :class:`MetricsReport`;
the individual functions return BLEU/ROUGE as percentages and USR/EC as
fractions.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Sequence

from kgxrec.tokenizer import DEFAULT_TOKENIZER

_WORD_RE = re.compile(r"\w+", re.UNICODE)


def normalize_tokens(text: str) -> list[str]:
    """Lowercase, split on whitespace and punctuation, drop punctuation."""
    return _WORD_RE.findall(text.lower())


def _tokens(text) -> list[str]:
    if isinstance(text, str):
        return DEFAULT_TOKENIZER.tokenize(text)
    return list(text)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates: Sequence, references: Sequence, max_n: int = 4,
         epsilon: float = 0.1) -> float:
    """Corpus BLEU (x100) with uniform weights over 1..max_n and the brevity penalty.

    An order with no clipped matches gets precision ``epsilon / total``
    instead of zero so short texts do not collapse the geometric mean.
    """
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        c, r = _tokens(cand), _tokens(ref)
        cand_len += len(c)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            cn, rn = _ngrams(c, n), _ngrams(r, n)
            matches[n - 1] += sum(min(k, rn[g]) for g, k in cn.items())
            totals[n - 1] += max(len(c) - n + 1, 0)
    if cand_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        p = m / t if m > 0 else epsilon / max(t, 1)
        log_p += math.log(p)
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * bp * math.exp(log_p / max_n)


def _lcs(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def _prf(overlap: float, cand_total: int, ref_total: int) -> tuple[float, float, float]:
    p = overlap / cand_total if cand_total else 0.0
    r = overlap / ref_total if ref_total else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return f, r, p


def rouge(candidates: Sequence, references: Sequence) -> dict[str, float]:
    """Macro-averaged ROUGE-2 and ROUGE-L F/recall/precision (x100)."""
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    keys = ("rouge2_f", "rouge2_r", "rouge2_p", "rougeL_f", "rougeL_r", "rougeL_p")
    sums = dict.fromkeys(keys, 0.0)
    for cand, ref in zip(candidates, references):
        c, r = _tokens(cand), _tokens(ref)
        cb, rb = _ngrams(c, 2), _ngrams(r, 2)
        overlap = sum((cb & rb).values())
        two = _prf(overlap, sum(cb.values()), sum(rb.values()))
        ell = _prf(_lcs(c, r), len(c), len(r))
        for k, v in zip(keys, two + ell):
            sums[k] += v
    n = max(len(candidates), 1)
    return {k: 100.0 * v / n for k, v in sums.items()}


def usr(candidates: Sequence) -> float:
    """Fraction of distinct candidates after normalization."""
    if not candidates:
        raise ValueError("usr needs at least one candidate")
    distinct = {" ".join(normalize_tokens(c if isinstance(c, str) else " ".join(c)))
                for c in candidates}
    return len(distinct) / len(candidates)


def _contains(haystack: Sequence[str], needle: Sequence[str]) -> bool:
    k = len(needle)
    return any(list(haystack[i:i + k]) == list(needle) for i in range(len(haystack) - k + 1))


def kg_entities(item_kg) -> list[str]:
    """Unique normalized entity surface forms: the center item and every tail."""
    names = item_kg.entities() if hasattr(item_kg, "entities") else list(item_kg)
    out, seen = [], set()
    for name in names:
        key = " ".join(normalize_tokens(name))
        if key and key not in seen:
            seen.add(key)
            out.append(key)
    return out


def entity_coverage(item_kg, explanation, mode: str = "contiguous") -> float:
    """Fraction of unique KG entities mentioned in ``explanation``.

    ``item_kg`` is an :class:`~kgxrec.graph.ItemKG` or a list of entity names.
    In ``contiguous`` mode an entity counts when its whole normalized form
    occurs as a contiguous token run; ``token`` mode credits each entity with
    the fraction of its tokens present anywhere in the text.
    """
    ents = kg_entities(item_kg)
    if not ents:
        raise ValueError("KG has no entities")
    text = explanation if isinstance(explanation, str) else " ".join(explanation)
    toks = normalize_tokens(text)
    if mode == "contiguous":
        found = sum(_contains(toks, e.split()) for e in ents)
    elif mode == "token":
        vocab = set(toks)
        found = sum(sum(t in vocab for t in e.split()) / len(e.split()) for e in ents)
    else:
        raise ValueError(f"unknown entity coverage mode {mode!r}")
    return found / len(ents)


def rmse_mae(predictions: Sequence[float], truths: Sequence[float]) -> tuple[float, float]:
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths differ in length")
    if not predictions:
        raise ValueError("rmse_mae needs at least one pair")
    errs = [p - t for p, t in zip(predictions, truths)]
    rmse = math.sqrt(sum(e * e for e in errs) / len(errs))
    mae = sum(abs(e) for e in errs) / len(errs)
    return rmse, mae


@dataclass
class MetricsReport:
    bleu1: float
    bleu4: float
    usr: float
    rouge2_f: float
    rouge2_r: float
    rouge2_p: float
    rougeL_f: float
    rougeL_r: float
    rougeL_p: float
    ec: float
    rmse: float
    mae: float

    @classmethod
    def compute(cls, candidates: Sequence[str], references: Sequence[str],
                item_kgs: Iterable, predictions: Sequence[float],
                truths: Sequence[float]) -> "MetricsReport":
        kgs = list(item_kgs)
        ec = sum(entity_coverage(g, c) for g, c in zip(kgs, candidates)) / len(kgs)
        rg = rouge(candidates, references)
        rmse, mae = rmse_mae(predictions, truths)
        return cls(bleu1=bleu(candidates, references, 1), bleu4=bleu(candidates, references, 4),
                   usr=usr(candidates), **rg, ec=100.0 * ec, rmse=rmse, mae=mae)

    @staticmethod
    def header() -> str:
        return "\t".join(f.name for f in fields(MetricsReport))

    def to_tsv(self) -> str:
        return "\t".join(f"{v:.4f}" for v in astuple(self))

    def table(self) -> str:
        width = max(len(f.name) for f in fields(self))
        return "\n".join(f"{f.name:<{width}}  {getattr(self, f.name):10.4f}" for f in fields(self))
