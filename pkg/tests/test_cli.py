"""CLI subcommands: determinism, file outputs, exit codes."""

import csv
from pathlib import Path

import numpy as np
import pytest

from tablemt.checkpoint import load_checkpoint
from tablemt.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def dir_bytes(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("corpus")
    assert main([
        "synth", "--out", str(out), "--seed", "3",
        "--num-source", "12", "--num-dev", "6", "--num-target", "8", "--num-test", "6",
    ]) == EXIT_OK
    return out


TINY_TRAIN = ["--epochs", "2", "--d", "8", "--layers", "1", "--eta", "0.3"]


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, corpus_dir) -> Path:
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--data", str(corpus_dir), "--out", str(out), "--seed", "1"] + TINY_TRAIN)
    assert code == EXIT_OK
    return out


def test_synth_rerun_byte_identical(tmp_path, corpus_dir):
    again = tmp_path / "again"
    main([
        "synth", "--out", str(again), "--seed", "3",
        "--num-source", "12", "--num-dev", "6", "--num-target", "8", "--num-test", "6",
    ])
    assert dir_bytes(again) == dir_bytes(corpus_dir)


def test_synth_counts_match_flags(corpus_dir):
    lines = (corpus_dir / "source_train.txt").read_text().strip().splitlines()
    assert len(lines) == 12
    assert len((corpus_dir / "target_test.txt").read_text().strip().splitlines()) == 6


def test_synth_disjoint_lexicons(corpus_dir):
    from tablemt.corpus import FUNCTION_WORDS, load_dataset, vocabulary

    src = set(vocabulary(load_dataset(corpus_dir / "source_train.txt")))
    tgt = set(vocabulary(load_dataset(corpus_dir / "target_test.txt")))
    assert src & tgt <= set(FUNCTION_WORDS)


def test_train_outputs_and_rerun_determinism(tmp_path, corpus_dir, trained_dir):
    metrics = read_csv(trained_dir / "metrics_tfmt_seed1.csv")
    assert metrics[0] == ["epoch", "step", "l_rpn", "l_rpc", "l_sup", "l_uns", "l_mmd",
                          "total", "dev_f1", "test_f1"]
    assert len(metrics) == 3  # header + 2 epochs
    assert (trained_dir / "summary.csv").exists()
    assert (trained_dir / "checkpoint_tfmt_seed1.bin").exists()

    rerun = tmp_path / "rerun"
    assert main(["train", "--data", str(corpus_dir), "--out", str(rerun), "--seed", "1"]
                + TINY_TRAIN) == EXIT_OK
    assert dir_bytes(rerun) == dir_bytes(trained_dir)


def test_train_refuses_overwrite_without_force(corpus_dir, trained_dir):
    code = main(["train", "--data", str(corpus_dir), "--out", str(trained_dir), "--seed", "1"]
                + TINY_TRAIN)
    assert code == EXIT_USAGE


def test_train_multi_seed_summary_mean(tmp_path, corpus_dir):
    out = tmp_path / "multi"
    assert main(["train", "--data", str(corpus_dir), "--out", str(out),
                 "--seeds", "1,2", "--variant", "source_only"] + TINY_TRAIN) == EXIT_OK
    assert (out / "metrics_source_only_seed1.csv").exists()
    assert (out / "metrics_source_only_seed2.csv").exists()
    header, row = read_csv(out / "summary.csv")
    # recompute the mean from the per-seed logs: test_f1 at the first dev argmax
    finals = []
    for seed in (1, 2):
        rows = read_csv(out / f"metrics_source_only_seed{seed}.csv")[1:]
        devs = [float(r[8]) for r in rows]
        finals.append(float(rows[int(np.argmax(devs))][9]))
    assert float(row[header.index("mean_test_f1")]) == pytest.approx(np.mean(finals), abs=1e-12)


def test_train_config_file_and_flag_precedence(tmp_path, corpus_dir):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("epochs = 1\nd = 8\nlayers = 1\neta = 0.3\n# comment\n")
    out = tmp_path / "cfgrun"
    assert main(["train", "--data", str(corpus_dir), "--out", str(out),
                 "--config", str(cfgfile), "--seed", "4"]) == EXIT_OK
    ckpt = load_checkpoint(out / "checkpoint_tfmt_seed4.bin")
    assert ckpt.config.epochs == 1
    assert ckpt.config.encoder.d == 8
    out2 = tmp_path / "cfgrun2"
    assert main(["train", "--data", str(corpus_dir), "--out", str(out2),
                 "--config", str(cfgfile), "--seed", "4", "--epochs", "2"]) == EXIT_OK
    assert load_checkpoint(out2 / "checkpoint_tfmt_seed4.bin").config.epochs == 2


def test_eval_reports_and_mode_mismatch(tmp_path, corpus_dir, trained_dir, capsys):
    ckpt_path = trained_dir / "checkpoint_tfmt_seed1.bin"
    out_csv = tmp_path / "report.csv"
    assert main(["eval", "--checkpoint", str(ckpt_path),
                 "--data", str(corpus_dir / "source_dev.txt"), "--out", str(out_csv)]) == EXIT_OK
    rows = read_csv(out_csv)
    assert rows[0] == ["metric", "value"]
    assert rows[1][0] == "sentence_precision"
    assert main(["eval", "--checkpoint", str(ckpt_path), "--mode", "aope",
                 "--data", str(corpus_dir / "source_dev.txt")]) == EXIT_USAGE


def test_eval_empty_file_errors(tmp_path, trained_dir):
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    code = main(["eval", "--checkpoint", str(trained_dir / "checkpoint_tfmt_seed1.bin"),
                 "--data", str(empty)])
    assert code == EXIT_USAGE


def test_eval_deterministic_rerun(tmp_path, corpus_dir, trained_dir):
    ckpt_path = trained_dir / "checkpoint_tfmt_seed1.bin"
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert main(["eval", "--checkpoint", str(ckpt_path),
                     "--data", str(corpus_dir / "source_dev.txt"), "--out", str(path)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_audit_outputs_histogram(tmp_path, corpus_dir, trained_dir, capsys):
    out_csv = tmp_path / "audit.csv"
    assert main(["audit", "--checkpoint", str(trained_dir / "checkpoint_tfmt_seed1.bin"),
                 "--data", str(corpus_dir / "target_test.txt"), "--eta", "0.3",
                 "--out", str(out_csv)]) == EXIT_OK
    captured = capsys.readouterr().out
    rows = read_csv(out_csv)
    assert rows[0] == ["category", "count", "fraction"]
    assert [r[0] for r in rows[1:]] == ["correct", "sentiment_error",
                                        "words_mis_localized", "error"]
    retained = int(captured.split("retained ")[1].split(" ")[0])
    assert sum(int(r[1]) for r in rows[1:]) == retained


def test_audit_eta_one_empty_histogram(tmp_path, corpus_dir, trained_dir):
    out_csv = tmp_path / "audit1.csv"
    assert main(["audit", "--checkpoint", str(trained_dir / "checkpoint_tfmt_seed1.bin"),
                 "--data", str(corpus_dir / "target_test.txt"), "--eta", "1.0",
                 "--out", str(out_csv)]) == EXIT_OK
    rows = read_csv(out_csv)
    assert all(int(r[1]) == 0 for r in rows[1:])


def test_audit_requires_labels(tmp_path, corpus_dir, trained_dir):
    code = main(["audit", "--checkpoint", str(trained_dir / "checkpoint_tfmt_seed1.bin"),
                 "--data", str(corpus_dir / "target_unlabeled.txt")])
    assert code == EXIT_USAGE


def test_ablate_row_set(tmp_path, corpus_dir):
    out = tmp_path / "ablate"
    assert main(["ablate", "--data", str(corpus_dir), "--out", str(out),
                 "--seeds", "1", "--alpha-grid", "0,1"] + TINY_TRAIN) == EXIT_OK
    rows = read_csv(out / "ablation.csv")
    labels = [r[0] for r in rows[1:]]
    assert labels == ["full", "no_aug", "no_uns", "no_mmd", "no_uns+no_mmd",
                      "alpha=0.0", "alpha=1.0"]
    # reduction identity: the alpha=0 sweep cell equals the no_uns ablation row
    header = rows[0]
    by_label = {r[0]: r for r in rows[1:]}
    assert by_label["alpha=0.0"][header.index("mean_test_f1")] == \
        by_label["no_uns"][header.index("mean_test_f1")]


def test_usage_errors_exit_1():
    assert main(["train", "--data", "/nonexistent", "--out", "/tmp/x"]) == EXIT_USAGE
    assert main(["bogus-command"]) == EXIT_USAGE
    assert main(["train"]) == EXIT_USAGE  # missing required flags


def test_overfit_then_eval_f1_high(tmp_path, corpus_dir):
    """Overfit a model on a 12-sentence corpus (dev = train so selection
    keeps the overfit weights), then score it on its own training file."""
    data = tmp_path / "overfit_corpus"
    data.mkdir()
    for name in ("source_train", "source_dev", "target_unlabeled", "target_test"):
        src_name = "source_train" if name == "source_dev" else name
        (data / f"{name}.txt").write_bytes((corpus_dir / f"{src_name}.txt").read_bytes())
    out = tmp_path / "overfit"
    assert main(["train", "--data", str(data), "--out", str(out), "--seed", "2",
                 "--variant", "source_only", "--epochs", "40"]) == EXIT_OK
    report = tmp_path / "overfit_report.csv"
    assert main(["eval", "--checkpoint", str(out / "checkpoint_source_only_seed2.bin"),
                 "--data", str(data / "source_train.txt"), "--out", str(report)]) == EXIT_OK
    rows = {r[0]: float(r[1]) for r in read_csv(report)[1:]}
    assert rows["sentence_f1"] >= 0.95
