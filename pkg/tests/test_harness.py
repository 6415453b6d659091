"""Training runs, run folders, evaluation, prediction, and analysis tools."""

import json
from pathlib import Path

import pytest

from xlcoref.corpus import (
    Document,
    Vocabulary,
    generate_toy_corpus,
    load_corpus,
    load_parallel_corpus,
    pseudo_translate,
    save_corpus,
    save_parallel_corpus,
)
from xlcoref.harness import (
    HarnessError,
    RunConfig,
    analyze,
    evaluate,
    gen_corpus,
    load_config,
    predict,
    train,
    train_xl,
    translate,
)

# Small dimensions keep each training run in the tens of milliseconds.
TINY = dict(
    embed_dim=8,
    hidden_dim=4,
    width_feature_dim=4,
    ffn_hidden_dim=8,
    adapter_hidden_dim=8,
    max_span_width=4,
    max_spans=20,
    max_antecedents=10,
)


@pytest.fixture(scope="module")
def corpus_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("harness_corpora")
    docs = generate_toy_corpus(4, 0)
    save_corpus(docs, str(root / "train4.jsonl"))
    save_corpus(docs[:2], str(root / "train2.jsonl"))
    save_corpus(generate_toy_corpus(2, 1), str(root / "dev2.jsonl"))
    save_parallel_corpus(
        [pseudo_translate(d, "identity", seed=0) for d in docs],
        str(root / "par4.jsonl"),
    )
    save_parallel_corpus(
        [pseudo_translate(d, "xenoglot", seed=0) for d in docs],
        str(root / "xeno4.jsonl"),
    )
    return root


def run_config(corpus_files, out_dir, **kw):
    base = dict(
        train_path=str(corpus_files / "train4.jsonl"),
        dev_path=str(corpus_files / "dev2.jsonl"),
        output_dir=str(out_dir),
        epochs=6,
        lr=0.005,
        seed=0,
        **TINY,
    )
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def base_run(corpus_files, tmp_path_factory):
    out = tmp_path_factory.mktemp("base_run")
    return train(run_config(corpus_files, out))


@pytest.fixture(scope="module")
def xl_run(corpus_files, base_run, tmp_path_factory):
    out = tmp_path_factory.mktemp("xl_run")
    cfg = run_config(
        corpus_files,
        out,
        parallel_train_path=str(corpus_files / "par4.jsonl"),
        init_checkpoint=str(base_run.checkpoint_path),
    )
    return train_xl(cfg)


# ---------------------------------------------------------------- config


def test_config_rejects_unknown_keys():
    with pytest.raises(Exception):
        RunConfig(train_path="a", dev_path="b", output_dir="c", bogus=1)


def test_config_validates_ranges():
    with pytest.raises(Exception):
        RunConfig(train_path="a", dev_path="b", output_dir="c", epochs=-1)
    with pytest.raises(Exception):
        RunConfig(train_path="a", dev_path="b", output_dir="c", lr=0.0)
    with pytest.raises(Exception):
        RunConfig(train_path="a", dev_path="b", output_dir="c", span_ratio=1.5)


def test_load_config_missing_file():
    with pytest.raises(HarnessError, match="no_such_config"):
        load_config("no_such_config.json")


def test_load_config_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{nope")
    with pytest.raises(HarnessError, match="JSON"):
        load_config(str(path))


def test_load_config_must_be_object(tmp_path):
    path = tmp_path / "list.json"
    path.write_text("[1, 2]")
    with pytest.raises(HarnessError, match="object"):
        load_config(str(path))


def test_load_config_applies_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train_path": "t", "dev_path": "d", "output_dir": "o"}))
    cfg = load_config(str(path), ("epochs=3", "lr=0.5"))
    assert cfg.epochs == 3
    assert cfg.lr == 0.5


def test_load_config_rejects_bad_override(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train_path": "t", "dev_path": "d", "output_dir": "o"}))
    with pytest.raises(HarnessError, match="key=value"):
        load_config(str(path), ("epochs",))


def test_load_config_rejects_unknown_override(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train_path": "t", "dev_path": "d", "output_dir": "o"}))
    with pytest.raises(HarnessError, match="invalid config"):
        load_config(str(path), ("bogus=1",))


# ---------------------------------------------------------------- train


def test_train_missing_corpus_names_path(corpus_files, tmp_path):
    cfg = run_config(corpus_files, tmp_path, train_path=str(corpus_files / "absent.jsonl"))
    with pytest.raises(HarnessError, match="absent.jsonl"):
        train(cfg)


def test_train_empty_corpus_rejected(corpus_files, tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    cfg = run_config(corpus_files, tmp_path / "run", train_path=str(empty))
    with pytest.raises(HarnessError, match="empty"):
        train(cfg)


def test_run_dir_contents(base_run):
    names = {p.name for p in Path(base_run.run_dir).iterdir()}
    assert {"config.json", "vocab.json", "log.jsonl", "best.ckpt"} <= names


def test_log_schema_and_epoch_numbering(base_run):
    lines = Path(base_run.run_dir, "log.jsonl").read_text().splitlines()
    assert len(lines) == 7  # epoch 0 plus six training epochs
    for i, line in enumerate(lines):
        entry = json.loads(line)
        assert set(entry) == {"epoch", "train_loss", "coref_loss", "xl_loss", "dev_avg_f1"}
        assert entry["epoch"] == i
        assert entry["xl_loss"] == 0.0  # monolingual run


def test_training_reduces_loss(base_run):
    log = base_run.log
    assert log[-1]["train_loss"] < log[0]["train_loss"]


def test_best_checkpoint_tracks_dev(base_run):
    best = max(e["dev_avg_f1"] for e in base_run.log)
    assert base_run.best_dev_avg_f1 == best
    assert base_run.log[base_run.best_epoch]["dev_avg_f1"] == best
    # Earliest epoch wins ties.
    first = next(i for i, e in enumerate(base_run.log) if e["dev_avg_f1"] == best)
    assert base_run.best_epoch == first


def test_config_json_round_trips(base_run):
    cfg = load_config(str(Path(base_run.run_dir, "config.json")))
    assert cfg.epochs == 6
    assert cfg.hidden_dim == TINY["hidden_dim"]


def test_zero_epoch_run(corpus_files, tmp_path):
    result = train(run_config(corpus_files, tmp_path / "run0", epochs=0))
    assert len(result.log) == 1
    assert result.best_epoch == 0
    assert Path(result.checkpoint_path).is_file()


def test_training_is_bit_deterministic(corpus_files, tmp_path):
    a = train(run_config(corpus_files, tmp_path / "a", epochs=3))
    b = train(run_config(corpus_files, tmp_path / "b", epochs=3))
    read = lambda r, name: Path(r.run_dir, name).read_bytes()
    assert read(a, "log.jsonl") == read(b, "log.jsonl")
    assert read(a, "best.ckpt") == read(b, "best.ckpt")
    assert read(a, "vocab.json") == read(b, "vocab.json")


def test_seed_changes_trajectory(corpus_files, tmp_path):
    a = train(run_config(corpus_files, tmp_path / "a", epochs=3))
    b = train(run_config(corpus_files, tmp_path / "b", epochs=3, seed=7))
    assert [e["train_loss"] for e in a.log[1:]] != [e["train_loss"] for e in b.log[1:]]


def test_unclusterable_dev_keeps_epoch_zero(corpus_files, tmp_path):
    bare = Document(doc_key="bare", sentences=[["nothing", "here", "."]], clusters=())
    dev = tmp_path / "dev_bare.jsonl"
    save_corpus([bare], str(dev))
    result = train(run_config(corpus_files, tmp_path / "run", dev_path=str(dev), epochs=3))
    # Dev F1 is 0 forever; only a strict improvement may move the best epoch.
    assert result.best_epoch == 0


# ---------------------------------------------------------------- continuation


def test_continuation_extends_vocabulary(corpus_files, tmp_path):
    small = train(run_config(corpus_files, tmp_path / "small",
                             train_path=str(corpus_files / "train2.jsonl"), epochs=1))
    big = train(run_config(corpus_files, tmp_path / "big", epochs=1,
                           init_checkpoint=str(small.checkpoint_path)))
    v_small = Vocabulary.from_json(Path(small.run_dir, "vocab.json").read_text())
    v_big = Vocabulary.from_json(Path(big.run_dir, "vocab.json").read_text())
    assert len(v_big) > len(v_small)
    assert v_big.id_to_token[: len(v_small)] == v_small.id_to_token


def test_continuation_shape_mismatch_lists_tensors(corpus_files, tmp_path):
    small = train(run_config(corpus_files, tmp_path / "small", epochs=0))
    wider = run_config(corpus_files, tmp_path / "wider", epochs=0,
                       hidden_dim=8, init_checkpoint=str(small.checkpoint_path))
    with pytest.raises(HarnessError) as err:
        train(wider)
    assert "shape mismatch" in str(err.value)
    assert "head_attention" in str(err.value)


def test_continuation_missing_checkpoint(corpus_files, tmp_path):
    cfg = run_config(corpus_files, tmp_path / "run",
                     init_checkpoint=str(tmp_path / "ghost.ckpt"))
    with pytest.raises(HarnessError, match="ghost.ckpt"):
        train(cfg)


# ---------------------------------------------------------------- train_xl


def test_train_xl_requires_parallel_path(corpus_files, tmp_path):
    with pytest.raises(HarnessError, match="parallel"):
        train_xl(run_config(corpus_files, tmp_path / "run"))


def test_train_xl_missing_parallel_file(corpus_files, tmp_path):
    cfg = run_config(corpus_files, tmp_path / "run",
                     parallel_train_path=str(corpus_files / "nope.jsonl"))
    with pytest.raises(HarnessError, match="nope.jsonl"):
        train_xl(cfg)


def test_train_xl_reduces_xl_loss(xl_run):
    assert min(e["xl_loss"] for e in xl_run.log[1:]) < xl_run.log[0]["xl_loss"]
    assert all(e["xl_loss"] >= 0.0 for e in xl_run.log)


def test_train_xl_checkpoint_has_adapters(xl_run):
    from xlcoref.autodiff import ParamStore

    store = ParamStore.load(str(xl_run.checkpoint_path))
    assert "adapter_mention_w1" in store
    assert "adapter_coref_w1" in store
    assert "target_embedding" not in store  # shared encoder mode


def test_train_xl_separate_mode_writes_target_vocab(corpus_files, tmp_path):
    cfg = run_config(corpus_files, tmp_path / "sep", epochs=1,
                     parallel_train_path=str(corpus_files / "xeno4.jsonl"),
                     encoder_mode="separate")
    result = train_xl(cfg)
    assert Path(result.run_dir, "target_vocab.json").is_file()
    from xlcoref.autodiff import ParamStore

    store = ParamStore.load(str(result.checkpoint_path))
    assert "target_embedding" in store


def test_train_xl_ratio_zero_matches_mono(corpus_files, base_run, tmp_path):
    mono = train(run_config(corpus_files, tmp_path / "mono", epochs=2,
                            init_checkpoint=str(base_run.checkpoint_path)))
    r0 = train_xl(run_config(corpus_files, tmp_path / "r0", epochs=2,
                             parallel_train_path=str(corpus_files / "par4.jsonl"),
                             init_checkpoint=str(base_run.checkpoint_path),
                             loss_ratio=0.0))
    read = lambda r, name: Path(r.run_dir, name).read_bytes()
    assert read(mono, "log.jsonl") == read(r0, "log.jsonl")
    assert read(mono, "best.ckpt") == read(r0, "best.ckpt")


# ---------------------------------------------------------------- evaluate


def test_evaluate_writes_metrics_file(base_run, corpus_files):
    result = evaluate(str(base_run.checkpoint_path), str(corpus_files / "dev2.jsonl"))
    assert 0.0 <= result["avg_f1"] <= 1.0
    metrics_path = Path(base_run.run_dir, "metrics_dev2.json")
    assert metrics_path.is_file()
    payload = json.loads(metrics_path.read_text())
    assert payload["avg_f1"] == pytest.approx(result["avg_f1"])
    assert set(payload["muc"]) == {"recall", "precision", "f1"}


def test_evaluate_custom_output_path(base_run, corpus_files, tmp_path):
    out = tmp_path / "m.json"
    evaluate(str(base_run.checkpoint_path), str(corpus_files / "dev2.jsonl"), str(out))
    assert out.is_file()


def test_evaluate_is_idempotent(base_run, corpus_files):
    a = evaluate(str(base_run.checkpoint_path), str(corpus_files / "dev2.jsonl"))
    b = evaluate(str(base_run.checkpoint_path), str(corpus_files / "dev2.jsonl"))
    assert a["avg_f1"] == b["avg_f1"]
    assert a["muc"] == b["muc"]


def test_evaluate_missing_checkpoint(corpus_files, tmp_path):
    with pytest.raises(HarnessError, match="checkpoint"):
        evaluate(str(tmp_path / "none.ckpt"), str(corpus_files / "dev2.jsonl"))


def test_evaluate_detects_tampered_vocab(base_run, corpus_files, tmp_path):
    clone = tmp_path / "clone"
    clone.mkdir()
    for name in ("best.ckpt", "config.json"):
        (clone / name).write_bytes(Path(base_run.run_dir, name).read_bytes())
    (clone / "vocab.json").write_text(Vocabulary(["only", "these"]).to_json())
    with pytest.raises(HarnessError, match="mismatch"):
        evaluate(str(clone / "best.ckpt"), str(corpus_files / "dev2.jsonl"))


# ---------------------------------------------------------------- predict


def test_predict_writes_loadable_corpus(base_run, corpus_files, tmp_path):
    out = tmp_path / "pred.jsonl"
    count = predict(str(base_run.checkpoint_path), str(corpus_files / "dev2.jsonl"), str(out))
    assert count == 2
    docs = load_corpus(str(out))
    source = load_corpus(str(corpus_files / "dev2.jsonl"))
    assert [d.doc_key for d in docs] == [d.doc_key for d in source]
    assert [d.sentences for d in docs] == [d.sentences for d in source]
    for doc in docs:
        for cluster in doc.clusters:
            assert len(cluster) >= 2


# ---------------------------------------------------------------- analyze


def test_analyze_rejects_monolingual_checkpoint(base_run, corpus_files):
    with pytest.raises(HarnessError, match="cross-lingual"):
        analyze(str(base_run.checkpoint_path), str(corpus_files / "par4.jsonl"))


def test_analyze_counts_and_tsv(xl_run, corpus_files, tmp_path):
    tsv = tmp_path / "pairs.tsv"
    analysis, text = analyze(str(xl_run.checkpoint_path), str(corpus_files / "par4.jsonl"), str(tsv))
    assert (
        analysis.identical + analysis.coreferential + analysis.same_surface + analysis.other
        == analysis.total
    )
    lines = text.splitlines()
    assert lines[0] == "doc_key\tsource\ttarget\tsource_text\ttarget_text\tlabel"
    assert len(lines) == analysis.total + 1
    assert tsv.read_text() == text


def test_analyze_rejects_xenoglot_data(corpus_files, tmp_path):
    cfg = run_config(corpus_files, tmp_path / "x", epochs=1,
                     parallel_train_path=str(corpus_files / "xeno4.jsonl"))
    result = train_xl(cfg)
    with pytest.raises(HarnessError, match="identity"):
        analyze(str(result.checkpoint_path), str(corpus_files / "xeno4.jsonl"))


# ---------------------------------------------------------------- small tools


def test_gen_corpus_writes_file(tmp_path):
    out = tmp_path / "toy.jsonl"
    assert gen_corpus(3, 0, str(out)) == 3
    assert len(load_corpus(str(out))) == 3


def test_gen_corpus_rejects_nonpositive(tmp_path):
    with pytest.raises(HarnessError):
        gen_corpus(0, 0, str(tmp_path / "x.jsonl"))


def test_translate_round_trip(corpus_files, tmp_path):
    out = tmp_path / "par.jsonl"
    count = translate(str(corpus_files / "train2.jsonl"), str(out), "identity", 0)
    assert count == 2
    pdocs = load_parallel_corpus(str(out))
    assert all(p.is_identity for p in pdocs)


def test_translate_attach_requires_identity(corpus_files, tmp_path):
    with pytest.raises(HarnessError):
        translate(str(corpus_files / "train2.jsonl"), str(tmp_path / "p.jsonl"),
                  "xenoglot", 0, attach_clusters=True)


def test_translate_missing_input(tmp_path):
    with pytest.raises(HarnessError, match="input corpus"):
        translate(str(tmp_path / "none.jsonl"), str(tmp_path / "out.jsonl"), "identity", 0)
