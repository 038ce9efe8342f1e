"""Small synthetic corpora for overfitting runs and builder tests."""

from __future__ import annotations

import random
from dataclasses import dataclass

from kgxrec.graph import Item
from kgxrec.records import DatasetRecord

_ADJ = ["silver", "hollow", "crimson", "quiet", "northern", "glass", "last", "winter",
        "amber", "secret", "broken", "iron"]
_NOUN = ["harbor", "garden", "river", "lantern", "kingdom", "orchard", "mirror", "tower",
         "voyage", "station", "forest", "letter"]
_FIRST = ["anna", "tomas", "ines", "rafael", "mira", "jonas", "lena", "oskar", "clara", "emil"]
_LAST = ["kowal", "berg", "moreau", "santos", "lind", "okafor", "varga", "hale", "novak", "reyes"]
_GENRE = ["mystery", "fantasy", "romance", "thriller", "history", "adventure"]
_PLACE = ["lisbon", "oslo", "kyoto", "cairo", "lima", "dublin", "prague", "quebec"]


def _unique_names(rng: random.Random, n: int, parts) -> list[str]:
    pool = sorted({" ".join(p) for p in _product(parts)})
    rng.shuffle(pool)
    return pool[:n]


def _product(parts):
    if not parts:
        yield ()
        return
    for head in parts[0]:
        for rest in _product(parts[1:]):
            yield (head,) + rest


def make_overfit_corpus(n_items: int = 8, n_users: int = 5, per_user: int = 4,
                        seed: int = 0) -> list[DatasetRecord]:
    """``n_users * per_user`` records whose explanations verbalize every KG entity.

    Each explanation mentions the item name, its writer, genre and setting, and
    stays under 20 tokens. Ratings are integers in [1, 5] drawn per (user, item).
    """
    rng = random.Random(seed)
    titles = ["the " + t for t in _unique_names(rng, n_items, [_ADJ, _NOUN])]
    writers = _unique_names(rng, n_items, [_FIRST, _LAST])
    items = []
    for i, title in enumerate(titles):
        genre, place = rng.choice(_GENRE), rng.choice(_PLACE)
        triples = ((title, "writer", writers[i]), (title, "genre", genre), (title, "setting", place))
        expl = f"{title} is a {genre} novel by {writers[i]} , set in {place} ."
        items.append((f"i{i:02d}", triples, expl))
    records = []
    for u in range(n_users):
        for idx in sorted(rng.sample(range(n_items), per_user)):
            item_id, triples, expl = items[idx]
            records.append(DatasetRecord(f"u{u:02d}", item_id, float(rng.randint(1, 5)), expl, triples))
    return records


@dataclass
class PlantedCorpus:
    gazetteer: dict[str, tuple[str, str]]  # surface -> (entity id, type)
    items: list[Item]
    descriptions: list[str]
    planted: list[list[str]]  # per item, surface forms planted in order
    interactions: list[tuple[str, str, float]]


_FILLER = ["the story follows a family", "many readers praised the pacing",
           "it was reprinted twice", "the cover shows a lighthouse", "chapters are short"]


def make_planted_corpus(n_items: int = 6, seed: int = 0, filler_sentences: int = 2) -> PlantedCorpus:
    """Descriptions built from gazetteer surface forms and entity-free filler sentences.

    The item name is registered in the gazetteer and planted in the first
    entity sentence, so every KG entity (center included) survives filtering.
    """
    rng = random.Random(seed)
    writers = _unique_names(rng, 10, [_FIRST, _LAST])
    gaz = {w: (w.title().replace(" ", "_"), "writer") for w in writers}
    gaz.update({p: (p.title(), "city") for p in _PLACE})
    gaz.update({g: (g.title(), "genre") for g in _GENRE})
    titles = ["the " + t for t in _unique_names(rng, n_items, [_ADJ, _NOUN])]
    items, descs, planted = [], [], []
    for i, title in enumerate(titles):
        gaz[title] = (title.title().replace(" ", "_"), "book")
        item = Item(f"b{i:02d}", title)
        writer, place, genre = rng.choice(writers), rng.choice(_PLACE), rng.choice(_GENRE)
        sentences = [f"{title.capitalize()} is a {genre} novel written by {writer.title()}.",
                     f"It is set in {place.title()}."]
        sentences += [rng.choice(_FILLER).capitalize() + "." for _ in range(filler_sentences)]
        rng.shuffle(sentences)
        items.append(item)
        descs.append(" ".join(sentences))
        order = []
        for s in sentences:
            if s.lower().startswith(title):
                order += [title, genre, writer]
            elif s.startswith("It is set"):
                order.append(place)
        planted.append(order)
    interactions = [(f"u{u}", items[j].item_id, float(rng.randint(1, 5)))
                    for u in range(3) for j in range(n_items) if (u + j) % 2 == 0]
    return PlantedCorpus(gaz, items, descs, planted, interactions)
