"""Word-level tokenizer and vocabulary."""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

PAD = "[pad]"
UNK = "[unk]"
BOS = "[bos]"
EOS = "[eos]"

USER = "[user]"
GRAPH = "[graph]"
HEAD = "[head]"
RELATION = "[relation]"
TAIL = "[tail]"

SPECIAL_TOKENS = (PAD, UNK, BOS, EOS)
MARKER_TOKENS = (USER, GRAPH, HEAD, RELATION, TAIL)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class Tokenizer:
    """Splits on whitespace and isolates punctuation; lowercases by default."""

    def __init__(self, lowercase: bool = True):
        self.lowercase = lowercase

    def tokenize(self, text: str) -> list[str]:
        if self.lowercase:
            text = text.lower()
        return _TOKEN_RE.findall(text)

    def spans(self, text: str) -> list[tuple[str, int, int]]:
        """Tokens with their character offsets into ``text``."""
        out = []
        for m in _TOKEN_RE.finditer(text):
            tok = m.group(0)
            out.append((tok.lower() if self.lowercase else tok, m.start(), m.end()))
        return out

    @staticmethod
    def detokenize(tokens: Sequence[str]) -> str:
        return " ".join(tokens)


DEFAULT_TOKENIZER = Tokenizer()


class Vocab:
    """Fixed token <-> id mapping. Ids 0..3 are pad/unk/bos/eos, then markers."""

    def __init__(self, tokens: Iterable[str], tokenizer: Tokenizer | None = None):
        self.tokenizer = tokenizer or DEFAULT_TOKENIZER
        self.itos: list[str] = list(SPECIAL_TOKENS) + list(MARKER_TOKENS)
        seen = set(self.itos)
        for tok in tokens:
            if tok not in seen:
                seen.add(tok)
                self.itos.append(tok)
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def build(cls, texts: Iterable[str], tokenizer: Tokenizer | None = None,
              min_freq: int = 1, max_size: int | None = None) -> "Vocab":
        tokenizer = tokenizer or DEFAULT_TOKENIZER
        counts: Counter[str] = Counter()
        for text in texts:
            counts.update(tokenizer.tokenize(text))
        # frequency desc, then lexical, so the vocab does not depend on corpus order
        ranked = sorted((t for t, c in counts.items() if c >= min_freq),
                        key=lambda t: (-counts[t], t))
        if max_size is not None:
            ranked = ranked[:max_size]
        return cls(ranked, tokenizer)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    @property
    def pad_id(self) -> int:
        return self.stoi[PAD]

    @property
    def unk_id(self) -> int:
        return self.stoi[UNK]

    @property
    def bos_id(self) -> int:
        return self.stoi[BOS]

    @property
    def eos_id(self) -> int:
        return self.stoi[EOS]

    def is_marker(self, token_id: int) -> bool:
        return self.itos[token_id] in MARKER_TOKENS

    def encode_tokens(self, tokens: Sequence[str]) -> list[int]:
        unk = self.unk_id
        return [self.stoi.get(t, unk) for t in tokens]

    def encode(self, text: str) -> list[int]:
        return self.encode_tokens(self.tokenizer.tokenize(text))

    def decode(self, ids: Sequence[int], strip_special: bool = True) -> list[str]:
        out = []
        for i in ids:
            tok = self.itos[i]
            if strip_special and tok in SPECIAL_TOKENS:
                if tok == EOS:
                    break
                continue
            out.append(tok)
        return out

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, tokenizer: Tokenizer | None = None) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        head = list(SPECIAL_TOKENS) + list(MARKER_TOKENS)
        if lines[: len(head)] != head:
            raise ValueError(f"{path}: vocabulary does not start with the reserved tokens")
        vocab = cls(lines[len(head):], tokenizer)
        if vocab.itos != lines:
            raise ValueError(f"{path}: duplicate entries in vocabulary file")
        return vocab
