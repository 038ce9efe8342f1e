import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from kgxrec.graph import Item, ItemKG, UserHistory, build_user_item_graph  # noqa: E402
from kgxrec.tokenizer import Vocab  # noqa: E402


@pytest.fixture
def harry_potter_graph():
    user = UserHistory("u1", (Item("lotr", "The Lord of the Rings"), Item("lp", "The Little Prince")))
    kg = ItemKG.from_pairs(Item("hp", "Harry Potter"), [("author", "J.K. Rowling")])
    return build_user_item_graph(user, kg)


@pytest.fixture
def hp_vocab():
    return Vocab.build(["The Lord of the Rings The Little Prince Harry Potter author J.K. Rowling"])


@pytest.fixture
def float64():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(module.RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
        terminalreporter.write_line(line)
