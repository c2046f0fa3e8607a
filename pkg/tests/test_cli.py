"""End-to-end behavior of the durflow command line."""

import csv
import math

import numpy as np
import pytest

from durflow.cli import main
from durflow.data import CorpusSpec, generate, save
from durflow.duration import DurationModel, save_model
from durflow.training import train_model


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def small_corpus_file(tmp_path):
    spec = CorpusSpec(style="read", seed=11, num_sentences=60, max_phones=6)
    path = tmp_path / "small.durcorpus"
    save(generate(spec, "train"), path)
    return str(path)


def tiny_kwargs():
    return dict(encoder_dim=16, hidden=24, noise_dim=8, time_dim=8)


@pytest.fixture()
def tiny_checkpoints(tmp_path):
    """Small trained checkpoints plus a matching corpus file."""
    spec = CorpusSpec(style="spont", seed=4, num_sentences=40, max_phones=6,
                      vocab_size=24)
    corpus = generate(spec, "train")
    corpus_path = tmp_path / "eval.durcorpus"
    save(corpus, corpus_path)
    paths = {}
    for kind in ("det", "fm"):
        model = DurationModel(kind, spec.vocab_size, seed=0, **tiny_kwargs())
        train_model(model, corpus, 15, batch_size=8)
        paths[kind] = str(tmp_path / f"{kind}.npz")
        save_model(model, paths[kind])
    return paths, str(corpus_path)


# ---------------------------------------------------------------- gen


def test_gen_is_byte_identical_and_reports_counts(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    code, out, _ = run(["gen", "--style", "spont", "--seed", "7",
                        "--out", str(a)], capsys)
    assert code == 0
    code, _, _ = run(["gen", "--style", "spont", "--seed", "7",
                      "--out", str(b)], capsys)
    assert code == 0
    for name in ("train.durcorpus", "val.durcorpus"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    # spontaneous style must actually contain pauses and fillers
    for line in out.strip().splitlines():
        parts = line.split()
        assert int(parts[parts.index("pauses,") - 1]) > 0
        assert int(parts[parts.index("fillers") - 1]) > 0
    assert (a / "config.txt").exists()


def test_gen_different_seed_differs(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["gen", "--seed", "1", "--out", str(a)], capsys)[0] == 0
    assert run(["gen", "--seed", "2", "--out", str(b)], capsys)[0] == 0
    assert (a / "train.durcorpus").read_bytes() != (b / "train.durcorpus").read_bytes()


def test_invalid_style_is_usage_error(tmp_path, capsys):
    code, _, err = run(["gen", "--style", "operatic", "--out", str(tmp_path)],
                       capsys)
    assert code == 1
    assert "usage" in err or "error" in err


def test_unknown_command_is_usage_error(capsys):
    assert run(["polish"], capsys)[0] == 1


def test_missing_required_flag_is_usage_error(capsys):
    assert run(["train"], capsys)[0] == 1


# ---------------------------------------------------------------- train


def read_losses(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "loss"]
    return np.array([float(r[1]) for r in rows[1:]])


def test_train_writes_checkpoint_and_decreasing_loss(tmp_path, capsys,
                                                     small_corpus_file):
    out = tmp_path / "run"
    code, _, _ = run(["train", "--corpus", small_corpus_file, "--kind", "det",
                      "--steps", "120", "--batch", "8", "--out", str(out)],
                     capsys)
    assert code == 0
    assert (out / "model-det.npz").exists()
    losses = read_losses(out / "loss-det.csv")
    assert len(losses) == 120
    assert losses[-20:].mean() < losses[:20].mean()


def test_train_same_seed_reproduces_loss_file(tmp_path, capsys,
                                              small_corpus_file):
    outs = [tmp_path / "r1", tmp_path / "r2", tmp_path / "r3"]
    for out, seed in zip(outs, ("5", "5", "6")):
        code, _, _ = run(["train", "--corpus", small_corpus_file,
                          "--kind", "fm", "--steps", "25", "--batch", "8",
                          "--seed", seed, "--out", str(out)], capsys)
        assert code == 0
    a, b, c = (out.joinpath("loss-fm.csv").read_bytes() for out in outs)
    assert a == b
    assert a != c


def test_train_missing_corpus_is_runtime_error(tmp_path, capsys):
    code, _, err = run(["train", "--corpus", str(tmp_path / "nope.durcorpus"),
                        "--out", str(tmp_path / "run")], capsys)
    assert code == 2
    assert "error:" in err and "nope.durcorpus" in err


# ---------------------------------------------------------------- config file


def test_config_file_overrides_defaults_and_flags_win(tmp_path, capsys,
                                                      small_corpus_file):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("steps=18\nbatch=4  # small batches\n")
    out1 = tmp_path / "from-file"
    code, _, _ = run(["train", "--corpus", small_corpus_file, "--config",
                      str(cfg), "--out", str(out1)], capsys)
    assert code == 0
    assert len(read_losses(out1 / "loss-det.csv")) == 18

    out2 = tmp_path / "flag-wins"
    code, _, _ = run(["train", "--corpus", small_corpus_file, "--config",
                      str(cfg), "--steps", "9", "--out", str(out2)], capsys)
    assert code == 0
    assert len(read_losses(out2 / "loss-det.csv")) == 9
    echoed = (out2 / "config.txt").read_text()
    assert "steps=9" in echoed and "batch=4" in echoed


def test_config_file_unknown_key_is_usage_error(tmp_path, capsys,
                                                small_corpus_file):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("stepz=18\n")
    code, _, err = run(["train", "--corpus", small_corpus_file, "--config",
                        str(cfg), "--out", str(tmp_path / "x")], capsys)
    assert code == 1
    assert "stepz" in err


def test_config_file_bad_value_is_usage_error(tmp_path, capsys,
                                              small_corpus_file):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("steps=plenty\n")
    code, _, err = run(["train", "--corpus", small_corpus_file, "--config",
                        str(cfg), "--out", str(tmp_path / "x")], capsys)
    assert code == 1
    assert "line 1" in err


# ---------------------------------------------------------------- sample


def test_sample_det_realisations_identical(tmp_path, capsys, tiny_checkpoints):
    paths, corpus_path = tiny_checkpoints
    out = tmp_path / "s"
    code, _, _ = run(["sample", "--checkpoint", paths["det"], "--corpus",
                      corpus_path, "--reps", "3", "--out", str(out)], capsys)
    assert code == 0
    lines = (out / "durations.txt").read_text().splitlines()
    assert lines[0].startswith("#durations model=det ")
    by_sentence = {}
    for line in lines[1:]:
        sent_id, rep, *durs = line.split()
        by_sentence.setdefault(sent_id, []).append(durs)
    for reps in by_sentence.values():
        assert len(reps) == 3
        assert reps[0] == reps[1] == reps[2]


def test_sample_fm_temperature_zero_realisations_identical(tmp_path, capsys,
                                                           tiny_checkpoints):
    paths, corpus_path = tiny_checkpoints
    out = tmp_path / "s"
    code, _, _ = run(["sample", "--checkpoint", paths["fm"], "--corpus",
                      corpus_path, "--temperature", "0", "--nfe", "4",
                      "--reps", "3", "--out", str(out)], capsys)
    assert code == 0
    lines = (out / "durations.txt").read_text().splitlines()[1:]
    by_sentence = {}
    for line in lines:
        sent_id, rep, *durs = line.split()
        by_sentence.setdefault(sent_id, []).append(durs)
    for reps in by_sentence.values():
        assert reps[0] == reps[1] == reps[2]


def test_sample_fm_seeded_run_reproduces(tmp_path, capsys, tiny_checkpoints):
    paths, corpus_path = tiny_checkpoints
    outs = []
    for name in ("s1", "s2"):
        out = tmp_path / name
        code, _, _ = run(["sample", "--checkpoint", paths["fm"], "--corpus",
                          corpus_path, "--nfe", "4", "--seed", "9",
                          "--out", str(out)], capsys)
        assert code == 0
        outs.append((out / "durations.txt").read_bytes())
    assert outs[0] == outs[1]


def test_sample_fm_default_five_realisations(tmp_path, capsys, tiny_checkpoints):
    paths, corpus_path = tiny_checkpoints
    out = tmp_path / "s"
    code, _, _ = run(["sample", "--checkpoint", paths["fm"], "--corpus",
                      corpus_path, "--nfe", "2", "--out", str(out)], capsys)
    assert code == 0
    lines = (out / "durations.txt").read_text().splitlines()
    assert "reps=5" in lines[0]
    first_id = lines[1].split()[0]
    assert sum(1 for ln in lines[1:] if ln.split()[0] == first_id) == 5


def test_sample_kind_mismatch_is_runtime_error(tmp_path, capsys,
                                               tiny_checkpoints):
    paths, corpus_path = tiny_checkpoints
    code, _, err = run(["sample", "--checkpoint", paths["fm"], "--corpus",
                        corpus_path, "--kind", "det",
                        "--out", str(tmp_path / "s")], capsys)
    assert code == 2
    assert "'fm'" in err


# ---------------------------------------------------------------- eval


def test_eval_writes_reports_and_reruns_identically(tmp_path, capsys,
                                                    tiny_checkpoints):
    paths, corpus_path = tiny_checkpoints
    outs = []
    for name in ("e1", "e2"):
        out = tmp_path / name
        code, _, _ = run(["eval", "--det", paths["det"], "--fm", paths["fm"],
                          "--corpus", corpus_path, "--out", str(out)], capsys)
        assert code == 0
        for csv_name in ("residual.csv", "dist.csv", "bench.csv"):
            assert (out / csv_name).exists()
        outs.append(out)
    for csv_name in ("residual.csv", "dist.csv"):
        assert (outs[0] / csv_name).read_bytes() == (outs[1] / csv_name).read_bytes()

    with open(outs[0] / "residual.csv", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    det_values = {r[3] for r in rows if r[0] == "det" and r[1] != "all"}
    assert len(det_values) == 1  # constant across nfe
    fm_rows = [r for r in rows if r[0] == "fm" and r[1] == "spont"]
    assert len(fm_rows) == 7

    with open(outs[0] / "dist.csv", newline="") as fh:
        dist_rows = list(csv.reader(fh))[1:]
    assert all(r[0] in ("det", "fm") for r in dist_rows)

    with open(outs[0] / "bench.csv", newline="") as fh:
        bench_rows = list(csv.reader(fh))[1:]
    assert [r[:2] for r in bench_rows] == [
        ["det", "10"], ["det", "20"], ["fm", "10"], ["fm", "20"]]
    for r in bench_rows:
        assert float(r[2]) > 0
        # both columns are rounded to three decimals in the file
        assert math.isclose(float(r[3]), float(r[2]) / int(r[1]), abs_tol=2e-3)


def test_eval_missing_checkpoint_named(tmp_path, capsys, tiny_checkpoints):
    paths, corpus_path = tiny_checkpoints
    missing = str(tmp_path / "ghost.npz")
    code, _, err = run(["eval", "--det", missing, "--fm", paths["fm"],
                        "--corpus", corpus_path, "--out", str(tmp_path / "e")],
                       capsys)
    assert code == 2
    assert "ghost.npz" in err


def test_eval_swapped_checkpoints_rejected(tmp_path, capsys, tiny_checkpoints):
    paths, corpus_path = tiny_checkpoints
    code, _, err = run(["eval", "--det", paths["fm"], "--fm", paths["det"],
                        "--corpus", corpus_path, "--out", str(tmp_path / "e")],
                       capsys)
    assert code == 2
    assert "error:" in err
