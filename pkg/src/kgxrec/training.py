"""Data preparation, the optimization loop, checkpoints, evaluation and the loss-weight sweep."""

from __future__ import annotations

import json
import logging
import math
import random
import shutil
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import torch

from kgxrec.config import TrainConfig
from kgxrec.graph import LinearizeLimits, build_user_item_graph, linearize, EncodedSequence
from kgxrec.metrics import MetricsReport, bleu, rmse_mae
from kgxrec.model import EncodedBatch, KGXRec, ModelConfig, collate, encode_target
from kgxrec.records import Example
from kgxrec.tokenizer import Vocab

log = logging.getLogger(__name__)

LOG_HEADER = "epoch\ttrain_loss\tvalid_loss\tvalid_L_r\tvalid_L_e"


class NumericError(RuntimeError):
    pass


class VocabMismatchError(ValueError):
    pass


# -- data ------------------------------------------------------------------


def split_dataset(records: Sequence, ratios=(0.6, 0.2, 0.2), seed: int = 0):
    """Split by item: every record of an item lands in the same split.

    Items are shuffled with ``seed`` and assigned to train until it holds
    ``round(ratio * N)`` records, then to valid, the rest to test.
    """
    if len(records) < 3:
        raise ValueError(f"need at least 3 records to split, got {len(records)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    by_item: dict[str, list] = defaultdict(list)
    for rec in records:
        by_item[rec.item_id].append(rec)
    items = sorted(by_item)
    random.Random(seed).shuffle(items)
    n = len(records)
    want_train = max(1, round(ratios[0] * n))
    want_valid = max(1, round(ratios[1] * n))
    train, valid, test = [], [], []
    for item in items:
        if len(train) < want_train:
            train.extend(by_item[item])
        elif len(valid) < want_valid:
            valid.extend(by_item[item])
        else:
            test.extend(by_item[item])
    if not (train and valid and test):
        raise ValueError(f"degenerate split sizes {len(train)}/{len(valid)}/{len(test)}; "
                         "too few distinct items")
    return train, valid, test


def build_vocab(examples: Iterable[Example], max_size: int | None = None) -> Vocab:
    texts = []
    for ex in examples:
        texts.extend(p.name for p in ex.user.purchases)
        texts.append(ex.item_kg.center.name)
        for t in ex.item_kg.triples:
            texts.extend((t.relation, t.tail))
        texts.append(ex.explanation)
    return Vocab.build(texts, max_size=max_size)


@dataclass
class Prepared:
    example: Example
    seq: EncodedSequence
    target: list[int]


def prepare(examples: Iterable[Example], vocab: Vocab, max_explanation_len: int,
            limits: LinearizeLimits = LinearizeLimits()) -> list[Prepared]:
    out = []
    for ex in examples:
        seq = linearize(build_user_item_graph(ex.user, ex.item_kg), vocab, limits)
        out.append(Prepared(ex, seq, encode_target(vocab, ex.explanation, max_explanation_len)))
    return out


def make_batch(items: Sequence[Prepared], vocab: Vocab) -> EncodedBatch:
    return collate([p.seq for p in items], vocab.pad_id,
                   ratings=[p.example.rating for p in items],
                   targets=[p.target for p in items], bos_id=vocab.bos_id)


def iter_batches(items: Sequence[Prepared], batch_size: int, vocab: Vocab,
                 generator: torch.Generator | None = None):
    order = (torch.randperm(len(items), generator=generator).tolist()
             if generator is not None else list(range(len(items))))
    for i in range(0, len(order), batch_size):
        yield make_batch([items[j] for j in order[i:i + batch_size]], vocab)


# -- model lifecycle -------------------------------------------------------


def make_model(cfg: ModelConfig, seed: int) -> KGXRec:
    torch.manual_seed(seed)
    return KGXRec(cfg)


def clip_gradients(parameters: Iterable[torch.nn.Parameter], max_norm: float) -> float:
    """Rescale gradients in place to global L2 norm <= ``max_norm``; returns the pre-clip norm."""
    return float(torch.nn.utils.clip_grad_norm_(list(parameters), max_norm))


def save_checkpoint(path: str | Path, model: KGXRec, vocab: Vocab, step: int,
                    extra: dict | None = None) -> Path:
    """Directory with ``params.pt`` (state dict), ``vocab.txt`` and ``manifest.txt``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), path / "params.pt")
    vocab.save(path / "vocab.txt")
    manifest = {f"model.{k}": v for k, v in model.cfg.to_dict().items()}
    manifest.update(vocab_hash=vocab.fingerprint(), step=step, dtype=str(next(model.parameters()).dtype))
    manifest.update(extra or {})
    lines = [f"{k}={v}" for k, v in manifest.items()]
    (path / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            out[k] = v
    return out


def load_checkpoint(path: str | Path) -> tuple[KGXRec, Vocab, dict[str, str]]:
    path = Path(path)
    manifest = read_manifest(path / "manifest.txt")
    vocab = Vocab.load(path / "vocab.txt")
    if vocab.fingerprint() != manifest.get("vocab_hash"):
        raise VocabMismatchError(f"{path}: vocabulary does not match the checkpoint manifest")
    defaults = ModelConfig()
    kw = {}
    for key, value in manifest.items():
        if not key.startswith("model."):
            continue
        name = key[len("model."):]
        like = getattr(defaults, name)
        kw[name] = (value == "True") if isinstance(like, bool) else type(like)(value)
    cfg = ModelConfig(**kw)
    if cfg.vocab_size != len(vocab):
        raise VocabMismatchError(f"{path}: vocab has {len(vocab)} entries, model expects {cfg.vocab_size}")
    model = KGXRec(cfg)
    state = torch.load(path / "params.pt", weights_only=True)
    if manifest.get("dtype") == "torch.float64":
        model = model.double()
    model.load_state_dict(state)
    model.eval()
    return model, vocab, manifest


# -- training --------------------------------------------------------------


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    valid_loss: float
    valid_loss_r: float
    valid_loss_e: float

    def line(self) -> str:
        return "\t".join([str(self.epoch)] + [repr(v) for v in
                         (self.train_loss, self.valid_loss, self.valid_loss_r, self.valid_loss_e)])


@dataclass
class TrainResult:
    history: list[EpochLog] = field(default_factory=list)
    checkpoints: list[tuple[float, Path]] = field(default_factory=list)
    steps: int = 0

    @property
    def best(self) -> Path | None:
        return self.checkpoints[0][1] if self.checkpoints else None


@torch.no_grad()
def evaluate_loss(model: KGXRec, items: Sequence[Prepared], vocab: Vocab,
                  batch_size: int) -> tuple[float, float, float]:
    """Example-weighted mean of (total, L_r, L_e) over ``items``."""
    was_training = model.training
    model.eval()
    sums = [0.0, 0.0, 0.0]
    for batch in iter_batches(items, batch_size, vocab):
        losses = model.joint_loss(batch)
        for i, v in enumerate(losses):
            sums[i] += float(v) * len(batch)
    model.train(was_training)
    return tuple(s / len(items) for s in sums)


def _dump_failure(out_dir: Path | None, model: KGXRec, info: dict) -> Path | None:
    info = dict(info)
    info["param_norms"] = {n: float(p.detach().norm()) for n, p in model.named_parameters()}
    info["nonfinite_grads"] = [n for n, p in model.named_parameters()
                               if p.grad is not None and not torch.isfinite(p.grad).all()]
    text = json.dumps(info, indent=2, default=str)
    log.error("non-finite loss; state: %s", text)
    if out_dir is None:
        return None
    out_dir.mkdir(parents=True, exist_ok=True)
    dump = out_dir / "failure_dump.json"
    dump.write_text(text, encoding="utf-8")
    return dump


def train(model: KGXRec, cfg: TrainConfig, train_items: Sequence[Prepared], vocab: Vocab,
          valid_items: Sequence[Prepared] | None = None, out_dir: str | Path | None = None) -> TrainResult:
    """Adam on the joint loss with global-norm clipping.

    Each epoch the validation total loss is logged; with ``out_dir`` set the
    best ``cfg.top_k`` checkpoints by validation loss are kept under
    ``out_dir/checkpoints`` and the metrics log goes to ``out_dir/metrics.tsv``.
    Validation falls back to the training items when none are given.
    """
    if not train_items:
        raise ValueError("empty training split")
    valid_items = valid_items or train_items
    out = Path(out_dir) if out_dir is not None else None
    ckpt_root = out / "checkpoints" if out is not None else None
    if ckpt_root is not None:
        if ckpt_root.exists():
            shutil.rmtree(ckpt_root)
        ckpt_root.mkdir(parents=True)
        log_fh = open(out / "metrics.tsv", "w", encoding="utf-8")
        log_fh.write(LOG_HEADER + "\n")
    else:
        log_fh = None

    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)
    result = TrainResult()

    def keep(valid_loss: float, epoch: int) -> None:
        if ckpt_root is None:
            return
        path = save_checkpoint(ckpt_root / f"epoch-{epoch:04d}", model, vocab, result.steps,
                               {"epoch": epoch, "valid_loss": repr(valid_loss)})
        result.checkpoints.append((valid_loss, path))
        result.checkpoints.sort(key=lambda t: (t[0], t[1].name))
        for _, stale in result.checkpoints[cfg.top_k:]:
            shutil.rmtree(stale)
        del result.checkpoints[cfg.top_k:]
        (out / "best_checkpoint.txt").write_text(result.best.name + "\n", encoding="utf-8")

    try:
        if cfg.epochs == 0:
            keep(evaluate_loss(model, valid_items, vocab, cfg.batch_size)[0], 0)
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            total, seen = 0.0, 0
            for batch in iter_batches(train_items, cfg.batch_size, vocab, gen):
                loss, loss_r, loss_e = model.joint_loss(batch)
                if not torch.isfinite(loss):
                    dump = _dump_failure(out, model, {"epoch": epoch, "step": result.steps,
                                                      "loss": loss.item(), "loss_r": loss_r.item(),
                                                      "loss_e": loss_e.item()})
                    raise NumericError(f"non-finite loss at epoch {epoch}, step {result.steps}"
                                       + (f" (state dumped to {dump})" if dump else ""))
                opt.zero_grad(set_to_none=True)
                loss.backward()
                clip_gradients(model.parameters(), cfg.clip_norm)
                opt.step()
                result.steps += 1
                total += loss.item() * len(batch)
                seen += len(batch)
            v_total, v_r, v_e = evaluate_loss(model, valid_items, vocab, cfg.batch_size)
            row = EpochLog(epoch, total / seen, v_total, v_r, v_e)
            result.history.append(row)
            log.debug("epoch %d train %.5f valid %.5f", epoch, row.train_loss, v_total)
            if log_fh is not None:
                log_fh.write(row.line() + "\n")
            keep(v_total, epoch)
    finally:
        if log_fh is not None:
            log_fh.close()
    model.eval()
    return result


# -- evaluation ------------------------------------------------------------


@dataclass
class Predictions:
    candidates: list[str]
    references: list[str]
    item_kgs: list
    ratings: list[float]  # clamped to [1, 5]
    truths: list[float]

    def report(self) -> MetricsReport:
        return MetricsReport.compute(self.candidates, self.references, self.item_kgs,
                                     self.ratings, self.truths)


@torch.no_grad()
def predict(model: KGXRec, items: Sequence[Prepared], vocab: Vocab, beam: int = 5,
            batch_size: int = 16) -> Predictions:
    model.eval()
    preds = Predictions([], [], [], [], [])
    for i in range(0, len(items), batch_size):
        chunk = items[i:i + batch_size]
        batch = make_batch(chunk, vocab)
        state = model.encode(batch)
        ratings = model.predict_rating(state).clamp(1.0, 5.0).tolist()
        outs = model.generate_explanation(state, beam, vocab.bos_id, vocab.eos_id)
        for p, r, ids in zip(chunk, ratings, outs):
            preds.candidates.append(" ".join(vocab.decode(ids)))
            preds.references.append(p.example.explanation)
            preds.item_kgs.append(p.example.item_kg)
            preds.ratings.append(r)
            preds.truths.append(p.example.rating)
    return preds


def sample_fraction(items: Sequence, fraction: float, seed: int) -> list:
    if fraction >= 1.0:
        return list(items)
    k = max(1, round(fraction * len(items)))
    idx = sorted(random.Random(seed).sample(range(len(items)), k))
    return [items[i] for i in idx]


@dataclass
class SweepRow:
    lambda_r: float
    lambda_e: float
    bleu4: float
    rmse: float
    valid_loss: float

    def line(self) -> str:
        return f"{self.lambda_r!r}\t{self.lambda_e!r}\t{self.bleu4:.4f}\t{self.rmse:.4f}\t{self.valid_loss!r}"


SWEEP_HEADER = "lambda_r\tlambda_e\tbleu4\trmse\tvalid_loss"


def sweep_lambda(model_cfg: ModelConfig, grid: Sequence[tuple[float, float]], train_cfg: TrainConfig,
                 train_items: Sequence[Prepared], vocab: Vocab,
                 valid_items: Sequence[Prepared] | None = None) -> list[SweepRow]:
    """Train one fresh model per (lambda_r, lambda_e) pair from the same seed and score it on validation."""
    valid_items = valid_items or train_items
    rows = []
    for lam_r, lam_e in grid:
        cfg = replace(model_cfg, lambda_r=lam_r, lambda_e=lam_e)
        model = make_model(cfg, train_cfg.seed)
        result = train(model, train_cfg, train_items, vocab, valid_items)
        preds = predict(model, valid_items, vocab, train_cfg.beam)
        rmse, _ = rmse_mae(preds.ratings, preds.truths)
        v_loss = result.history[-1].valid_loss if result.history else math.nan
        rows.append(SweepRow(lam_r, lam_e, bleu(preds.candidates, preds.references, 4), rmse, v_loss))
        log.info("sweep lambda_r=%g lambda_e=%g -> %s", lam_r, lam_e, rows[-1].line())
    return rows


def format_sweep(rows: Sequence[SweepRow]) -> str:
    return "\n".join([SWEEP_HEADER] + [r.line() for r in rows]) + "\n"
