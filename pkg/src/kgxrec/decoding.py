"""Length-normalized beam search over an arbitrary next-token scorer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch

# prefixes (k, t) of generated ids -> log-probabilities (k, V) of the next token
StepFn = Callable[[torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    logprob: float
    finished: bool

    def score(self, length_penalty: float) -> float:
        return self.logprob / (max(len(self.tokens), 1) ** length_penalty)


def beam_search(step_fn: StepFn, eos_id: int, beam_size: int = 5, max_len: int = 128,
                length_penalty: float = 1.0) -> Hypothesis:
    """Return the best hypothesis under ``sum log p / len ** length_penalty``.

    Alive hypotheses are ranked by cumulative log-probability; a candidate
    ending in ``eos_id`` moves to the finished pool (its length counts the
    EOS). Search stops once ``beam_size`` hypotheses have finished or
    ``max_len`` tokens were generated, whichever comes first; hypotheses
    still alive at ``max_len`` are scored as they stand. Ties break towards
    lower token ids, so ``beam_size=1`` is exactly greedy decoding.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    alive: list[Hypothesis] = [Hypothesis((), 0.0, False)]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        prefixes = torch.tensor([h.tokens for h in alive], dtype=torch.long).reshape(len(alive), -1)
        logp = step_fn(prefixes).double()
        vocab = logp.shape[-1]
        total = torch.tensor([h.logprob for h in alive], dtype=torch.float64).unsqueeze(1) + logp
        flat = total.reshape(-1)
        # stable sort: equal scores keep (beam, token) order
        order = torch.sort(flat, descending=True, stable=True).indices.tolist()
        new_alive: list[Hypothesis] = []
        for idx in order:
            b, tok = divmod(idx, vocab)
            score = float(flat[idx])
            if score == float("-inf"):
                break
            hyp = Hypothesis(alive[b].tokens + (tok,), score, tok == eos_id)
            if hyp.finished:
                finished.append(hyp)
            else:
                new_alive.append(hyp)
                if len(new_alive) == beam_size:
                    break
        alive = new_alive
        if len(finished) >= beam_size or not alive:
            break
    pool = finished + alive
    if not pool:
        raise RuntimeError("beam search produced no hypothesis")
    best = max(range(len(pool)), key=lambda i: (pool[i].score(length_penalty), -i))
    return pool[best]
