"""Line-oriented dataset record format.

One record per line, tab-separated::

    user_id <TAB> item_id <TAB> rating <TAB> explanation <TAB> triples

``triples`` is ``head|relation|tail`` joined by ``;``. Names may not contain
``|``, ``;`` or tabs.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from kgxrec.graph import Interaction, Item, ItemKG, Triple, UserHistory, MAX_USER_SIZE

log = logging.getLogger(__name__)

_FORBIDDEN = ("|", ";", "\t", "\n")


class RecordFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetRecord:
    user_id: str
    item_id: str
    rating: float
    explanation: str
    triples: tuple[tuple[str, str, str], ...]

    @property
    def item_name(self) -> str:
        return self.triples[0][0]

    def interaction(self) -> Interaction:
        return Interaction(self.user_id, self.item_id, self.rating, self.explanation)

    def item_kg(self) -> ItemKG:
        center = Item(self.item_id, self.item_name)
        return ItemKG(center, tuple(Triple(center, r, t) for _, r, t in self.triples))


def _check_name(name: str) -> str:
    for ch in _FORBIDDEN:
        if ch in name:
            raise RecordFormatError(f"forbidden character {ch!r} in {name!r}")
    if not name.strip():
        raise RecordFormatError("empty name in triple")
    return name


def format_record(rec: DatasetRecord) -> str:
    for field_ in (rec.user_id, rec.item_id):
        _check_name(field_)
    if "\t" in rec.explanation or "\n" in rec.explanation:
        raise RecordFormatError("explanation may not contain tabs or newlines")
    triples = ";".join("|".join(_check_name(x) for x in t) for t in rec.triples)
    return "\t".join([rec.user_id, rec.item_id, repr(float(rec.rating)), rec.explanation, triples])


def parse_record(line: str) -> DatasetRecord:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 5:
        raise RecordFormatError(f"expected 5 tab-separated fields, got {len(parts)}")
    user_id, item_id, rating_s, explanation, triples_s = parts
    try:
        rating = float(rating_s)
    except ValueError:
        raise RecordFormatError(f"bad rating {rating_s!r}") from None
    if not 1.0 <= rating <= 5.0:
        raise RecordFormatError(f"rating {rating} outside [1, 5]")
    triples = []
    for chunk in triples_s.split(";"):
        pieces = chunk.split("|")
        if len(pieces) != 3 or not all(p.strip() for p in pieces):
            raise RecordFormatError(f"bad triple {chunk!r}")
        triples.append(tuple(pieces))
    heads = {h for h, _, _ in triples}
    if len(heads) != 1:
        raise RecordFormatError(f"triples of item {item_id!r} have several heads: {sorted(heads)}")
    return DatasetRecord(user_id, item_id, rating, explanation, tuple(triples))


def write_records(path: str | Path, records: Iterable[DatasetRecord]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(format_record(rec) + "\n")
            n += 1
    return n


def read_records(path: str | Path) -> list[DatasetRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(parse_record(line))
            except RecordFormatError as exc:
                raise RecordFormatError(f"{path}:{lineno}: {exc}") from None
    return out


@dataclass(frozen=True)
class Example:
    """A model input: user history + item KG, with targets."""

    user: UserHistory
    item_kg: ItemKG
    rating: float
    explanation: str


def user_histories(records: Iterable[DatasetRecord]) -> dict[str, list[Item]]:
    """Per-user purchased items in file order, one entry per distinct item."""
    hist: dict[str, list[Item]] = defaultdict(list)
    seen: dict[str, set[str]] = defaultdict(set)
    for rec in records:
        if rec.item_id not in seen[rec.user_id]:
            seen[rec.user_id].add(rec.item_id)
            hist[rec.user_id].append(Item(rec.item_id, rec.item_name))
    return dict(hist)


def to_examples(records: list[DatasetRecord],
                history_source: list[DatasetRecord] | None = None,
                max_user_size: int = MAX_USER_SIZE) -> list[Example]:
    """Pair each record with the user's other purchases.

    Histories come from ``history_source`` (default: ``records``) so that a
    held-out split can still see purchases recorded in the training split.
    Records whose user has no other purchase are skipped.
    """
    hist = user_histories(history_source if history_source is not None else records)
    examples, skipped = [], 0
    for rec in records:
        others = [it for it in hist.get(rec.user_id, []) if it.item_id != rec.item_id]
        if not others:
            skipped += 1
            continue
        user = UserHistory(rec.user_id, tuple(others), max_user_size)
        examples.append(Example(user, rec.item_kg(), rec.rating, rec.explanation))
    if skipped:
        log.info("skipped %d records whose user has no other purchase", skipped)
    return examples
