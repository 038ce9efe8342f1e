"""Knowledge-graph grounded explainable recommendation.

Builds collaborative user-item graphs, encodes them with a dual
(global + graph-masked) attention encoder and jointly predicts a rating
and a natural-language explanation.
"""

from kgxrec.graph import (
    EncodedSequence,
    Interaction,
    Item,
    ItemKG,
    Triple,
    UserHistory,
    UserItemGraph,
    build_user_item_graph,
    linearize,
)
from kgxrec.tokenizer import Tokenizer, Vocab

__all__ = [
    "EncodedSequence",
    "Interaction",
    "Item",
    "ItemKG",
    "Tokenizer",
    "Triple",
    "UserHistory",
    "UserItemGraph",
    "Vocab",
    "build_user_item_graph",
    "linearize",
]

__version__ = "0.1.0"
