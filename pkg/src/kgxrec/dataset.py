"""Description-first corpus construction.

Entities found in an item description become the tails of the item's KG
(relation = the entity's type), and the description, restricted to the
sentences that mention an entity, becomes the reference explanation.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

from kgxrec.graph import Item, ItemKG, Triple
from kgxrec.metrics import entity_coverage
from kgxrec.records import DatasetRecord
from kgxrec.tokenizer import DEFAULT_TOKENIZER

log = logging.getLogger(__name__)

_SENTENCE_END = re.compile(r"[.!?](?=\s|$)")


@dataclass(frozen=True)
class Mention:
    surface: str
    entity_id: str
    type_label: str
    start: int
    end: int


class EntityLinker(Protocol):
    def link(self, text: str) -> list[Mention]: ...


class Gazetteer:
    """Case-insensitive, token-level, greedy longest-match entity linker."""

    def __init__(self, entries: dict[str, tuple[str, str]]):
        self.entries: dict[tuple[str, ...], tuple[str, str]] = {}
        for surface, value in entries.items():
            key = tuple(DEFAULT_TOKENIZER.tokenize(surface))
            if not key:
                raise ValueError(f"empty gazetteer surface form {surface!r}")
            self.entries[key] = value
        self.max_len = max((len(k) for k in self.entries), default=0)

    @classmethod
    def from_file(cls, path: str | Path) -> "Gazetteer":
        entries = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3 or not all(p.strip() for p in parts):
                    raise ValueError(f"{path}:{lineno}: expected surface<TAB>id<TAB>type")
                entries[parts[0]] = (parts[1], parts[2])
        return cls(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def link(self, text: str) -> list[Mention]:
        spans = DEFAULT_TOKENIZER.spans(text)
        toks = [t for t, _, _ in spans]
        out, i = [], 0
        while i < len(toks):
            for k in range(min(self.max_len, len(toks) - i), 0, -1):
                hit = self.entries.get(tuple(toks[i:i + k]))
                if hit is not None:
                    start, end = spans[i][1], spans[i + k - 1][2]
                    out.append(Mention(text[start:end], hit[0], hit[1], start, end))
                    i += k
                    break
            else:
                i += 1
        return out


def extract_entities(description: str, linker: EntityLinker) -> list[Mention]:
    return linker.link(description)


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Character spans of sentences ending in '.', '!' or '?' before whitespace or end of text."""
    out, start = [], 0
    for m in _SENTENCE_END.finditer(text):
        out.append((start, m.end()))
        start = m.end()
    if text[start:].strip():
        out.append((start, len(text)))
    spans = []
    for s, e in out:
        while s < e and text[s].isspace():
            s += 1
        if s < e:
            spans.append((s, e))
    return spans


class NoEntitiesError(ValueError):
    pass


def build_record(item: Item, description: str, linker: EntityLinker) -> tuple[ItemKG, str]:
    """Item KG from the unique entities of ``description`` plus the entity-bearing sentences."""
    mentions = extract_entities(description, linker)
    if not mentions:
        raise NoEntitiesError(f"no entities found for item {item.item_id!r}")
    triples, seen = [], set()
    for m in mentions:
        if m.entity_id in seen:
            continue
        seen.add(m.entity_id)
        triples.append(Triple(item, m.type_label, m.surface))
    kept = [description[s:e] for s, e in split_sentences(description)
            if any(m.start < e and m.end > s for m in mentions)]
    return ItemKG(item, tuple(triples)), " ".join(kept)


@dataclass(frozen=True)
class MetadataRow:
    item: Item
    description: str


def read_metadata(path: str | Path) -> tuple[list[MetadataRow], int]:
    """Parse ``item_id<TAB>name<TAB>description`` lines; returns (rows, malformed count)."""
    rows, bad = [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            try:
                if len(parts) != 3:
                    raise ValueError(f"expected 3 fields, got {len(parts)}")
                item_id, name, desc = parts
                if not item_id.strip() or not desc.strip():
                    raise ValueError("empty item id or description")
                rows.append(MetadataRow(Item(item_id, name), desc))
            except ValueError as exc:
                bad += 1
                log.warning("%s:%d: skipping malformed metadata line (%s)", path, lineno, exc)
    return rows, bad


def read_interactions(path: str | Path) -> tuple[list[tuple[str, str, float]], int]:
    """Parse ``user_id<TAB>item_id<TAB>rating`` lines; returns (rows, malformed count)."""
    rows, bad = [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            try:
                if len(parts) != 3:
                    raise ValueError(f"expected 3 fields, got {len(parts)}")
                rating = float(parts[2])
                if not 1.0 <= rating <= 5.0:
                    raise ValueError(f"rating {rating} outside [1, 5]")
                rows.append((parts[0], parts[1], rating))
            except ValueError as exc:
                bad += 1
                log.warning("%s:%d: skipping malformed interaction line (%s)", path, lineno, exc)
    return rows, bad


def build_dataset(metadata: Iterable[MetadataRow], interactions: Iterable[tuple[str, str, float]],
                  linker: EntityLinker) -> tuple[list[DatasetRecord], dict[str, str]]:
    """Join item KGs/explanations with interactions. Returns (records, dropped item -> reason)."""
    built: dict[str, tuple[ItemKG, str]] = {}
    dropped: dict[str, str] = {}
    for row in metadata:
        try:
            built[row.item.item_id] = build_record(row.item, row.description, linker)
        except (NoEntitiesError, ValueError) as exc:
            dropped[row.item.item_id] = str(exc)
            log.info("dropping item %s: %s", row.item.item_id, exc)
    records = []
    for user_id, item_id, rating in interactions:
        if item_id not in built:
            continue
        kg, expl = built[item_id]
        triples = tuple((kg.center.name, t.relation, t.tail) for t in kg.triples)
        records.append(DatasetRecord(user_id, item_id, rating, expl, triples))
    return records, dropped


@dataclass
class CorpusStats:
    users: int
    items: int
    interactions: int
    entities: int
    relations: int
    triples: int
    ec: float  # mean per-record entity coverage, percent
    words_per_sample: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def dataset_stats(records: list[DatasetRecord]) -> CorpusStats:
    if not records:
        raise ValueError("dataset_stats needs at least one record")
    entities, relations, triples = set(), set(), set()
    ec = words = 0.0
    for rec in records:
        kg = rec.item_kg()
        for _, r, t in rec.triples:
            relations.add(r)
            entities.add(t.lower())
            triples.add((rec.item_id, r, t))
        entities.add(kg.center.name.lower())
        ec += entity_coverage(kg, rec.explanation)
        words += len(rec.explanation.split())
    n = len(records)
    return CorpusStats(
        users=len({r.user_id for r in records}),
        items=len({r.item_id for r in records}),
        interactions=n,
        entities=len(entities),
        relations=len(relations),
        triples=len(triples),
        ec=100.0 * ec / n,
        words_per_sample=words / n,
    )
