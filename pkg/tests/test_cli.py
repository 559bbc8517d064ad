import json
import subprocess
import sys

import pytest

from spanptr.cli import COMMANDS, load_config, run
from spanptr.data import load_tsv
from spanptr.frames import SPAN


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run(["gen-data", "--n", "120", "--out", str(d / "train.tsv"), "--seed", "1",
                "--max-depth", "1", "--vocab-size", "15"]) == 0
    assert run(["gen-data", "--n", "30", "--out", str(d / "dev.tsv"), "--seed", "2", "--split-name", "dev",
                "--max-depth", "1", "--vocab-size", "15"]) == 0
    return d


@pytest.fixture(scope="module")
def model_path(work):
    path = work / "m.pt"
    code = run(["train", "--train", str(work / "train.tsv"), "--dev", str(work / "dev.tsv"),
                "--out", str(path), "--epochs", "3", "--d-model", "16", "--n-heads", "2", "--d-ff", "32",
                "--report", str(work / "r.jsonl")])
    assert code == 0
    return path


@pytest.mark.parametrize("cmd", COMMANDS)
def test_help_documents_exit_codes(cmd, capsys):
    assert run([cmd, "--help"]) == 0
    assert "Exit status" in capsys.readouterr().out


class TestUsageErrors:
    @pytest.mark.parametrize("argv", [[], ["nope"], ["stats", "--bogus"], ["stats"], ["transform", "--in", "x"],
                                      ["eval", "--gold", "x"], ["spis", "--k", "x"]])
    def test_exit_two(self, argv, capsys):
        assert run(argv) == 2
        err = capsys.readouterr().err
        assert "error" in err and "Traceback" not in err

    def test_unknown_config_key(self, work, capsys):
        cfg = work / "bad.cfg"
        cfg.write_text("frobnicate = 3\n")
        assert run(["stats", "--config", str(cfg), "--in", str(work / "train.tsv")]) == 2
        assert "frobnicate" in capsys.readouterr().err


class TestDataErrors:
    def test_missing_file(self, capsys):
        assert run(["stats", "--in", "/nonexistent/x.tsv"]) == 1
        assert "Traceback" not in capsys.readouterr().err

    def test_bad_k(self, work, capsys):
        assert run(["spis", "--in", str(work / "train.tsv"), "--k", "0"]) == 1

    def test_not_a_checkpoint(self, work):
        assert run(["predict", "--model", str(work / "train.tsv"), "--in", str(work / "dev.tsv")]) == 1

    def test_all_lines_bad(self, tmp_path):
        bad = tmp_path / "bad.tsv"
        bad.write_text("hello\tnot a frame\n")
        assert run(["stats", "--in", str(bad)]) == 1


class TestCommands:
    def test_transform_round_trip(self, work):
        span, back = work / "t.span.tsv", work / "t.back.tsv"
        assert run(["transform", "--form", "span", "--in", str(work / "train.tsv"), "--out", str(span)]) == 0
        assert all(ex.gold.form == SPAN for ex in load_tsv(span, SPAN))
        assert run(["transform", "--form", "canonical", "--in-form", "span", "--in", str(span),
                    "--out", str(back)]) == 0
        assert back.read_bytes() == (work / "train.tsv").read_bytes()

    def test_spis_is_deterministic(self, work):
        outs = []
        for name in ("a.tsv", "b.tsv"):
            assert run(["spis", "--k", "10", "--seed", "7", "--in", str(work / "train.tsv"),
                        "--out", str(work / name)]) == 0
            outs.append((work / name).read_bytes())
        assert outs[0] == outs[1] and outs[0]

    def test_stats_side_by_side(self, work, capsys):
        assert run(["stats", "--in", str(work / "train.tsv"), "--json"]) == 0
        stats = json.loads(capsys.readouterr().out)
        assert set(stats) == {"canonical", "span"}
        assert stats["span"]["mean_lengths_per_skeleton"] == 1.0

    def test_stats_table_and_figure(self, work, capsys):
        assert run(["stats", "--in", str(work / "train.tsv"), "--figures", str(work / "figs")]) == 0
        out = capsys.readouterr().out
        assert "num_length_classes" in out and "canonical" in out
        assert (work / "figs" / "length_histogram.png").exists()

    def test_config_supplies_defaults_and_flags_win(self, work, capsys):
        cfg = work / "c.cfg"
        cfg.write_text("# defaults\nin = %s\nforms = span\njson = true\n" % (work / "train.tsv"))
        assert run(["stats", "--config", str(cfg)]) == 0
        assert set(json.loads(capsys.readouterr().out)) == {"span"}
        assert run(["stats", "--config", str(cfg), "--forms", "canonical"]) == 0
        assert set(json.loads(capsys.readouterr().out)) == {"canonical"}

    def test_train_report(self, work, model_path):
        rows = [json.loads(line) for line in (work / "r.jsonl").read_text().splitlines()]
        assert [r["epoch"] for r in rows] == [1, 2, 3]
        assert "wall_time" not in rows[0]

    def test_train_is_reproducible(self, work, model_path, capsys):
        other = work / "again"
        other.mkdir(exist_ok=True)
        assert run(["train", "--train", str(work / "train.tsv"), "--dev", str(work / "dev.tsv"),
                    "--out", str(other / "m.pt"), "--epochs", "3", "--d-model", "16", "--n-heads", "2",
                    "--d-ff", "32", "--report", str(other / "r.jsonl")]) == 0
        assert (other / "r.jsonl").read_bytes() == (work / "r.jsonl").read_bytes()
        assert (other / "m.pt").read_bytes() == model_path.read_bytes()

    def test_predict_and_eval_agree(self, work, model_path, capsys):
        preds = work / "p.jsonl"
        assert run(["predict", "--model", str(model_path), "--in", str(work / "dev.tsv"), "--out", str(preds),
                    "--k", "3"]) == 0
        assert len(preds.read_text().splitlines()) == 30
        capsys.readouterr()
        assert run(["eval", "--gold", str(work / "dev.tsv"), "--predictions", str(preds)]) == 0
        offline = json.loads(capsys.readouterr().out)
        assert run(["eval", "--gold", str(work / "dev.tsv"), "--model", str(model_path), "--k", "3"]) == 0
        online = json.loads(capsys.readouterr().out)
        assert offline["em"] == online["em"] and online["n"] == 30

    def test_gradcheck(self, capsys):
        assert run(["gradcheck", "--examples", "2", "--d-model", "4"]) == 0
        res = json.loads(capsys.readouterr().out)
        assert res["passed"] and res["max_rel_error"] < 1e-3

    def test_bench(self, work, model_path, capsys):
        out = work / "bench.jsonl"
        assert run(["bench", "--model", str(model_path), "--in", str(work / "dev.tsv"), "--beam", "1,2",
                    "--warmup", "1", "--out", str(out), "--figures", str(work / "figs")]) == 0
        assert "p99 ms" in capsys.readouterr().out
        assert [json.loads(line)["k"] for line in out.read_text().splitlines()] == [1, 2]
        assert (work / "figs" / "bench.png").exists()


def test_load_config_normalizes_keys(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("--d-model = 32\n# comment\nlr=0.01\n")
    assert load_config(path) == {"d_model": "32", "lr": "0.01"}


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "spanptr", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 2 and "Traceback" not in proc.stderr
