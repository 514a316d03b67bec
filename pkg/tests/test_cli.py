import pytest

from s2a.cli import main, parse_config, CLIError

TRAIN_CFG = """\
# tiny run
layers = 1
heads = 2
d_model = 32
d_ff = 64
dropout = 0.1
max_steps = 40
warmup_steps = 10
base_lr = 0.002
batch_tokens = 512
log_every = 10
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--toy", "120", "--n", "120", "--seed", "1", "--out", str(d / "train.tsv")]) == 0
    assert main(["synth", "--toy", "20", "--n", "20", "--seed", "2", "--out", str(d / "test.tsv"), "--gold", str(d / "test.m2")]) == 0
    (d / "run.cfg").write_text(TRAIN_CFG + f"corpus = {d / 'train.tsv'}\n")
    assert main(["train", "--config", str(d / "run.cfg"), "--out-dir", str(d / "model"), "--seed", "3"]) == 0
    lines = (d / "test.tsv").read_text().splitlines()
    (d / "src.txt").write_text("".join(l.split("\t")[0] + "\n" for l in lines))
    (d / "tgt.txt").write_text("".join(l.split("\t")[1] + "\n" for l in lines))
    return d


def test_train_writes_artifacts(workdir):
    out = workdir / "model"
    for name in ("vocab.txt", "run.cfg", "metrics.log", "checkpoint_best.bin", "checkpoint_40.bin", "checkpoint_best.bin.cfg"):
        assert (out / name).is_file(), name
    resolved = parse_config((out / "run.cfg").read_text())
    assert resolved["seed"] == "3" and resolved["lambda"] == "0.4"


def test_rerun_from_resolved_config_is_identical(workdir, tmp_path):
    assert main(["train", "--config", str(workdir / "model" / "run.cfg"), "--out-dir", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "checkpoint_best.bin").read_bytes() == (workdir / "model" / "checkpoint_best.bin").read_bytes()


def test_correct_then_evaluate(workdir, capsys):
    ck = str(workdir / "model" / "checkpoint_best.bin")
    assert main(["correct", "--checkpoint", ck, "--input", str(workdir / "src.txt"), "--output", str(workdir / "hyp.txt")]) == 0
    assert main(["correct", "--checkpoint", ck, "--input", str(workdir / "src.txt"), "--output", str(workdir / "hyp1.txt"), "--beam", "1"]) == 0
    assert (workdir / "hyp.txt").read_text() == (workdir / "hyp1.txt").read_text()
    assert len((workdir / "hyp.txt").read_text().splitlines()) == 20
    capsys.readouterr()
    assert main(["evaluate", "--source", str(workdir / "src.txt"), "--hypothesis", str(workdir / "hyp.txt"), "--gold", str(workdir / "test.m2")]) == 0
    out = capsys.readouterr().out
    assert "Precision" in out and "F1 GEN frag" in out


def test_ensemble_and_beam(workdir):
    ck = str(workdir / "model" / "checkpoint_best.bin")
    args = ["correct", "--checkpoint", ck, "--input", str(workdir / "src.txt")]
    assert main(args + ["--output", str(workdir / "ens.txt"), "--ensemble", ck]) == 0
    assert (workdir / "ens.txt").read_text() == (workdir / "hyp.txt").read_text()
    assert main(args + ["--output", str(workdir / "beam.txt"), "--beam", "3"]) == 0


def test_evaluate_identical_prints_one(workdir, capsys):
    assert main(["evaluate", "--source", str(workdir / "src.txt"), "--hypothesis", str(workdir / "tgt.txt"), "--gold", str(workdir / "test.m2")]) == 0
    out = capsys.readouterr().out
    assert "F0.5        : 1.0000" in out


def test_align_dump(workdir):
    out = workdir / "aligned.txt"
    assert main(["align", "--parallel", str(workdir / "test.tsv"), "--vocab", str(workdir / "model" / "vocab.txt"), "--out", str(out)]) == 0
    blocks = out.read_text().strip().split("\n\n")
    assert len(blocks) == 20
    assert [l.split(":")[0] for l in blocks[0].splitlines()] == ["X", "Y", "Z", "A", "XT", "YIN", "YOUT"]


def test_baseline_flag_forces_lambda_one(workdir, tmp_path):
    assert main(["train", "--config", str(workdir / "run.cfg"), "--out-dir", str(tmp_path), "--baseline", "--max-steps", "12"]) == 0
    resolved = parse_config((tmp_path / "run.cfg").read_text())
    assert resolved["lambda"] == "1.0" and resolved["baseline"] == "true"
    assert "lambda = 1.0" in (tmp_path / "checkpoint_best.bin.cfg").read_text()


def test_errors_exit_nonzero(workdir, tmp_path, capsys):
    assert main(["evaluate", "--source", str(tmp_path / "missing"), "--hypothesis", "x", "--gold", "y"]) == 1
    assert "not found" in capsys.readouterr().err
    (tmp_path / "bad.cfg").write_text("nonsense_key = 3\n")
    assert main(["train", "--config", str(tmp_path / "bad.cfg")]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code != 0
    with pytest.raises(CLIError):
        parse_config("just words")
