"""Users, item KGs, the collaborative user-item graph and its linearization."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from kgxrec.tokenizer import (
    DEFAULT_TOKENIZER,
    GRAPH,
    HEAD,
    RELATION,
    TAIL,
    USER,
    Vocab,
)

MAX_USER_SIZE = 64
MAX_KG_SIZE = 192
MAX_COMPONENT_LEN = 60

PURCHASE = "purchase"
CENTER = "center"
REL = "relation"
ENTITY = "tail"


def _require_tokens(text: str, what: str) -> None:
    if not DEFAULT_TOKENIZER.tokenize(text):
        raise ValueError(f"{what} must contain at least one token, got {text!r}")


@dataclass(frozen=True)
class Item:
    item_id: str
    name: str

    def __post_init__(self):
        _require_tokens(self.name, "item name")


@dataclass(frozen=True)
class UserHistory:
    user_id: str
    purchases: tuple[Item, ...]
    max_user_size: int = MAX_USER_SIZE

    def __post_init__(self):
        purchases = tuple(self.purchases)
        if not purchases:
            # users without purchase history are not representable
            raise ValueError(f"user {self.user_id!r} has no purchases")
        if len(purchases) > self.max_user_size:
            purchases = purchases[-self.max_user_size:]
        object.__setattr__(self, "purchases", purchases)


@dataclass(frozen=True)
class Triple:
    head: Item
    relation: str
    tail: str

    def __post_init__(self):
        _require_tokens(self.relation, "relation")
        _require_tokens(self.tail, "tail entity")


@dataclass(frozen=True)
class ItemKG:
    center: Item
    triples: tuple[Triple, ...]

    def __post_init__(self):
        triples = tuple(self.triples)
        if not triples:
            raise ValueError(f"item {self.center.item_id!r} has an empty KG")
        for t in triples:
            if t.head != self.center:
                raise ValueError(f"triple head {t.head!r} is not the KG center {self.center!r}")
        object.__setattr__(self, "triples", triples)

    @classmethod
    def from_pairs(cls, center: Item, pairs: Sequence[tuple[str, str]]) -> "ItemKG":
        return cls(center, tuple(Triple(center, r, t) for r, t in pairs))

    def entities(self) -> list[str]:
        """Center name followed by tail names, in triple order (not deduplicated)."""
        return [self.center.name] + [t.tail for t in self.triples]


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    rating: float
    explanation: str

    def __post_init__(self):
        if not 1.0 <= self.rating <= 5.0:
            raise ValueError(f"rating {self.rating} outside [1, 5]")


@dataclass(frozen=True)
class Component:
    kind: str
    text: str


@dataclass(frozen=True)
class UserItemGraph:
    user: UserHistory
    item_kg: ItemKG
    components: tuple[Component, ...]
    edges: frozenset[tuple[int, int]]  # (i, j) with i < j

    @property
    def num_components(self) -> int:
        return len(self.components)

    @property
    def center_index(self) -> int:
        return len(self.user.purchases)

    def adjacent(self, i: int, j: int) -> bool:
        return i == j or (min(i, j), max(i, j)) in self.edges

    def adjacency_matrix(self) -> np.ndarray:
        """Boolean m x m matrix, symmetric, with a True diagonal."""
        m = self.num_components
        adj = np.eye(m, dtype=bool)
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = True
        return adj


def build_user_item_graph(user: UserHistory, kg: ItemKG) -> UserItemGraph:
    """Link a purchase history to an item KG.

    Components are ordered ``[purchases..., center, rel_1, tail_1, rel_2, tail_2, ...]``.
    Purchases and the center form a clique; each relation touches only the
    center and its own tail. The purchase-center links are structural and get
    no lexical component of their own.
    """
    comps = [Component(PURCHASE, p.name) for p in user.purchases]
    center = len(comps)
    comps.append(Component(CENTER, kg.center.name))
    edges = set(combinations(range(center + 1), 2))
    for t in kg.triples:
        r = len(comps)
        comps.append(Component(REL, t.relation))
        comps.append(Component(ENTITY, t.tail))
        edges.add((center, r))
        edges.add((r, r + 1))
    return UserItemGraph(user, kg, tuple(comps), frozenset(edges))


@dataclass(frozen=True)
class LinearizeLimits:
    max_user_tokens: int = MAX_USER_SIZE
    max_kg_tokens: int = MAX_KG_SIZE
    max_component_len: int = MAX_COMPONENT_LEN


@dataclass(frozen=True)
class EncodedSequence:
    """Token ids of a linearized graph plus component bookkeeping.

    ``component_of[t]`` is the component index of token ``t`` or -1 for
    marker tokens.
    """

    tokens: tuple[str, ...]
    ids: tuple[int, ...]
    component_of: tuple[int, ...]
    user_mask: tuple[bool, ...]
    item_mask: tuple[bool, ...]
    adjacency: np.ndarray = field(compare=False, repr=False)
    component_kinds: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def num_components(self) -> int:
        return len(self.component_kinds)

    def spans(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.num_components)]
        for t, c in enumerate(self.component_of):
            if c >= 0:
                out[c].append(t)
        return out

    def text(self, with_markers: bool = False) -> str:
        if with_markers:
            return " ".join(self.tokens)
        return " ".join(t for t, c in zip(self.tokens, self.component_of) if c >= 0)


def truncate_graph(graph: UserItemGraph, tokenizer=DEFAULT_TOKENIZER,
                   limits: LinearizeLimits = LinearizeLimits()) -> UserItemGraph:
    """Drop trailing triples, then oldest purchases, until both token budgets hold.

    Component names are assumed already cut to ``max_component_len``; the
    center is never removed.
    """
    cap = limits.max_component_len

    def n_tok(text: str) -> int:
        return min(len(tokenizer.tokenize(text)), cap)

    triples = list(graph.item_kg.triples)
    kg_tokens = n_tok(graph.item_kg.center.name) + sum(
        n_tok(t.relation) + n_tok(t.tail) for t in triples)
    while kg_tokens > limits.max_kg_tokens and len(triples) > 1:
        t = triples.pop()
        kg_tokens -= n_tok(t.relation) + n_tok(t.tail)

    purchases = list(graph.user.purchases)
    user_tokens = sum(n_tok(p.name) for p in purchases)
    while user_tokens > limits.max_user_tokens and len(purchases) > 1:
        user_tokens -= n_tok(purchases.pop(0).name)

    if len(triples) == len(graph.item_kg.triples) and len(purchases) == len(graph.user.purchases):
        return graph
    user = UserHistory(graph.user.user_id, tuple(purchases), graph.user.max_user_size)
    kg = ItemKG(graph.item_kg.center, tuple(triples))
    return build_user_item_graph(user, kg)


def linearize(graph: UserItemGraph, vocab: Vocab,
              limits: LinearizeLimits = LinearizeLimits()) -> EncodedSequence:
    """Flatten a user-item graph into ``[user] p1 [user] p2 ... [graph] [head] c [relation] r [tail] t ...``."""
    tok = vocab.tokenizer
    graph = truncate_graph(graph, tok, limits)
    cap = limits.max_component_len

    tokens: list[str] = []
    comp_of: list[int] = []

    def emit_marker(marker: str) -> None:
        tokens.append(marker)
        comp_of.append(-1)

    def emit_component(index: int) -> None:
        words = tok.tokenize(graph.components[index].text)[:cap]
        tokens.extend(words)
        comp_of.extend([index] * len(words))

    center = graph.center_index
    for i in range(center):
        emit_marker(USER)
        emit_component(i)
    emit_marker(GRAPH)
    emit_marker(HEAD)
    emit_component(center)
    for i in range(center + 1, graph.num_components, 2):
        emit_marker(RELATION)
        emit_component(i)
        emit_marker(TAIL)
        emit_component(i + 1)

    user_mask = tuple(0 <= c < center for c in comp_of)
    item_mask = tuple(c >= center for c in comp_of)
    return EncodedSequence(
        tokens=tuple(tokens),
        ids=tuple(vocab.encode_tokens(tokens)),
        component_of=tuple(comp_of),
        user_mask=user_mask,
        item_mask=item_mask,
        adjacency=graph.adjacency_matrix(),
        component_kinds=tuple(c.kind for c in graph.components),
    )
