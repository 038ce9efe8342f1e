import filecmp
import math

import pytest
import torch

from kgxrec.config import ConfigError, ExperimentConfig, TrainConfig, load_config, parse_pairs
from kgxrec.model import ModelConfig
from kgxrec.records import DatasetRecord, RecordFormatError, parse_record, read_records, to_examples, write_records
from kgxrec.synthetic import make_overfit_corpus
from kgxrec.training import (
    LOG_HEADER,
    NumericError,
    VocabMismatchError,
    clip_gradients,
    load_checkpoint,
    make_batch,
    make_model,
    predict,
    sample_fraction,
    save_checkpoint,
    split_dataset,
    sweep_lambda,
    train,
)

from helpers import tiny_setup


def ten_records():
    return [DatasetRecord(f"u{i % 3}", f"i{i}", 3.0, f"text {i}", ((f"item {i}", "r", "t"),))
            for i in range(10)]


# -- splitting -------------------------------------------------------------


def test_split_sizes_and_determinism():
    recs = ten_records()
    train_, valid, test = split_dataset(recs, (0.6, 0.2, 0.2), seed=3)
    assert (len(train_), len(valid), len(test)) == (6, 2, 2)
    again = split_dataset(recs, (0.6, 0.2, 0.2), seed=3)
    assert (train_, valid, test) == again
    assert split_dataset(recs, (0.6, 0.2, 0.2), seed=4) != again


def test_split_keeps_items_disjoint():
    recs = make_overfit_corpus()
    parts = split_dataset(recs, (0.6, 0.2, 0.2), seed=0)
    item_sets = [{r.item_id for r in p} for p in parts]
    assert not (item_sets[0] & item_sets[1] or item_sets[0] & item_sets[2] or item_sets[1] & item_sets[2])
    assert sum(len(p) for p in parts) == len(recs)


def test_split_rejects_bad_ratios():
    with pytest.raises(ValueError):
        split_dataset(ten_records(), (0.5, 0.2, 0.2))


# -- records ---------------------------------------------------------------


def test_record_round_trip(tmp_path):
    recs = make_overfit_corpus()
    path = tmp_path / "d.tsv"
    write_records(path, recs)
    assert read_records(path) == recs


def test_record_parse_errors():
    with pytest.raises(RecordFormatError):
        parse_record("u\ti\tnot-a-number\texpl\th|r|t")
    with pytest.raises(RecordFormatError):
        parse_record("u\ti\t3\texpl\th|r")


def test_examples_use_other_purchases():
    recs = make_overfit_corpus()
    exs = to_examples(recs)
    assert len(exs) == len(recs)
    for rec, ex in zip(recs, exs):
        assert rec.item_id not in {p.item_id for p in ex.user.purchases}


# -- optimization ------------------------------------------------------------


def test_zero_learning_rate_keeps_parameters(float64):
    model, vocab, items = tiny_setup()
    before = {k: v.clone() for k, v in model.state_dict().items()}
    train(model, TrainConfig(lr=0.0, epochs=2, batch_size=1), items, vocab)
    assert all(torch.equal(before[k], v) for k, v in model.state_dict().items())


def test_loss_decreases(float64):
    model, vocab, items = tiny_setup(d=16, heads=2)
    batch = make_batch(items, vocab)
    start = model.joint_loss(batch)[0].item()
    train(model, TrainConfig(epochs=10, batch_size=2), items, vocab)
    assert model.joint_loss(batch)[0].item() < start


def test_clipping_scales_to_max_norm(float64):
    model, vocab, items = tiny_setup()
    model.joint_loss(make_batch(items, vocab))[0].backward()
    for p in model.parameters():
        p.grad *= 1000.0
    pre = clip_gradients(model.parameters(), 1.0)
    assert pre > 1.0
    total = math.sqrt(sum(float(p.grad.pow(2).sum()) for p in model.parameters()))
    assert total == pytest.approx(1.0, abs=1e-6)


def test_clipping_never_increases_norm(float64):
    model, vocab, items = tiny_setup()
    model.joint_loss(make_batch(items, vocab))[0].backward()
    before = math.sqrt(sum(float(p.grad.pow(2).sum()) for p in model.parameters()))
    clip_gradients(model.parameters(), before * 10)
    after = math.sqrt(sum(float(p.grad.pow(2).sum()) for p in model.parameters()))
    assert after == pytest.approx(before, rel=1e-12)


def test_non_finite_loss_aborts_with_dump(tmp_path):
    model, vocab, items = tiny_setup()
    with torch.no_grad():
        model.w_user.fill_(math.inf)
    with pytest.raises(NumericError, match="non-finite loss at epoch 1"):
        train(model, TrainConfig(epochs=1), items, vocab, out_dir=tmp_path)
    assert "w_user" in (tmp_path / "failure_dump.json").read_text()


# -- checkpoints -------------------------------------------------------------


def test_checkpoint_round_trip_is_exact(tmp_path, float64):
    model, vocab, items = tiny_setup(layers=2)
    batch = make_batch(items, vocab)
    save_checkpoint(tmp_path / "ck", model, vocab, step=7)
    loaded, vocab2, manifest = load_checkpoint(tmp_path / "ck")
    assert manifest["step"] == "7" and vocab2.itos == vocab.itos
    with torch.no_grad():
        a, b = model.eval().joint_loss(batch), loaded.joint_loss(batch)
        sa, sb = model.encode(batch), loaded.encode(batch)
    assert all(torch.equal(x, y) for x, y in zip(a, b))
    assert torch.equal(model.predict_rating(sa), loaded.predict_rating(sb))


def test_vocab_mismatch_is_detected(tmp_path):
    model, vocab, _ = tiny_setup()
    ck = save_checkpoint(tmp_path / "ck", model, vocab, step=0)
    lines = (ck / "vocab.txt").read_text(encoding="utf-8").splitlines()
    lines[-1] = lines[-1] + "x"
    (ck / "vocab.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(VocabMismatchError):
        load_checkpoint(ck)


def test_zero_epochs_saves_initial_checkpoint(tmp_path):
    model, vocab, items = tiny_setup()
    res = train(model, TrainConfig(epochs=0), items, vocab, out_dir=tmp_path)
    assert res.steps == 0 and res.best.name == "epoch-0000"
    assert (tmp_path / "metrics.tsv").read_text() == LOG_HEADER + "\n"
    assert (tmp_path / "best_checkpoint.txt").read_text().strip() == "epoch-0000"


def test_top_k_retention(tmp_path):
    model, vocab, items = tiny_setup()
    res = train(model, TrainConfig(epochs=5, top_k=2, batch_size=1), items, vocab, out_dir=tmp_path)
    kept = sorted(p.name for p in (tmp_path / "checkpoints").iterdir())
    assert len(kept) == 2
    losses = {row.epoch: row.valid_loss for row in res.history}
    best_two = sorted(losses, key=lambda e: (losses[e], e))[:2]
    assert kept == sorted(f"epoch-{e:04d}" for e in best_two)
    assert (tmp_path / "best_checkpoint.txt").read_text().strip() == f"epoch-{best_two[0]:04d}"


def test_metrics_log_is_byte_identical_across_runs(tmp_path):
    for run in ("a", "b"):
        model, vocab, items = tiny_setup(seed=5)
        train(model, TrainConfig(epochs=3, batch_size=1, seed=5), items, vocab, out_dir=tmp_path / run)
    a, b = tmp_path / "a" / "metrics.tsv", tmp_path / "b" / "metrics.tsv"
    assert filecmp.cmp(a, b, shallow=False)
    assert len(a.read_text().splitlines()) == 4


# -- evaluation and sweep ----------------------------------------------------


def test_predict_clamps_ratings():
    model, vocab, items = tiny_setup()
    with torch.no_grad():
        model.w_user.mul_(100.0)
    preds = predict(model, items, vocab, beam=1)
    assert all(1.0 <= r <= 5.0 for r in preds.ratings)
    assert len(preds.candidates) == len(items)


def test_sample_fraction():
    data = list(range(20))
    assert sample_fraction(data, 1.0, 0) == data
    part = sample_fraction(data, 0.25, 0)
    assert len(part) == 5 and part == sorted(part) and part == sample_fraction(data, 0.25, 0)


def test_sweep_has_one_row_per_pair():
    _, vocab, items = tiny_setup()
    cfg = ModelConfig(d=8, encoder_layers=1, decoder_layers=1, heads=1, vocab_size=len(vocab),
                      max_source_len=32, max_explanation_len=16)
    rows = sweep_lambda(cfg, [(0.01, 1.0), (0.0, 1.0), (1.0, 0.0)], TrainConfig(epochs=1, beam=1),
                        items, vocab)
    assert [(r.lambda_r, r.lambda_e) for r in rows] == [(0.01, 1.0), (0.0, 1.0), (1.0, 0.0)]


def test_make_model_is_seeded():
    cfg = ModelConfig(d=8, heads=1, vocab_size=20)
    a, b = make_model(cfg, 3), make_model(cfg, 3)
    assert all(torch.equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))


# -- config ------------------------------------------------------------------


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("# comment\nd=32\nheads=2\nlr=0.005\ngraph_attention=false\nout=runs/x\n")
    cfg = load_config(path, ["epochs=3"])
    assert (cfg.model.d, cfg.model.heads, cfg.model.graph_attention) == (32, 2, False)
    assert (cfg.train.lr, cfg.train.epochs, cfg.out) == (0.005, 3, "runs/x")


def test_config_rejects_unknown_key():
    with pytest.raises(ConfigError, match="unknown config key"):
        load_config(None, ["learning_rate=1"])


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        load_config(None, ["epochs=many"])
    with pytest.raises(ConfigError):
        parse_pairs(["no equals sign"])
    with pytest.raises(ConfigError):
        TrainConfig(train_ratio=0.9)


def test_config_lines_round_trip():
    cfg = load_config(None, ["d=16", "heads=2", "seed=9"])
    again = load_config(None, cfg.to_lines())
    assert again == cfg
    assert isinstance(ExperimentConfig().model, ModelConfig)
