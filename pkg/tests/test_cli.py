import io
import json
from pathlib import Path

import numpy as np
import pytest

from emoreact import cli, net, synthetic
from emoreact.synthetic import write_raw_corpora
from emoreact.textprep import Vocabulary

MANIFEST = cli.MANIFEST
SMALL = ["--epochs", "2", "--d-emb", "6", "--d-h", "5", "--lr", "0.01", "-q"]


@pytest.fixture(scope="module")
def raw(tmp_path_factory):
    return write_raw_corpora(tmp_path_factory.mktemp("raw"), seed=0, n_posts=300, n_unlabeled=80, n_per_set=60)


def prepare(raw, out, *extra):
    return cli.main(["prepare", "--posts", raw["posts"], "--affective", raw["affective"], "--isear", raw["isear"],
                     "--fairy", raw["fairy"], "--unlabeled", raw["unlabeled"], "--test-set", "fairy",
                     "--seed", "1", "--out", str(out), *extra])


@pytest.fixture(scope="module")
def trained(raw, tmp_path_factory):
    run = tmp_path_factory.mktemp("run") / "run1"
    assert prepare(raw, run) == 0
    assert cli.main(["train", str(run), "--variant", "constr", "--seed", "1", *SMALL]) == 0
    return run


class TestPrepare:
    def test_outputs(self, raw, tmp_path):
        out = tmp_path / "run"
        assert prepare(raw, out) == 0
        assert {p.name for p in out.iterdir()} == {"train.jsonl", "val.jsonl", "test.jsonl", "vocab.txt", MANIFEST}
        manifest = json.loads((out / MANIFEST).read_text())
        assert manifest["config"]["tau"] == 20 and manifest["config"]["gamma"] == 0.4
        assert manifest["seed"] == 1
        assert set(manifest["inputs"]) == {"posts", "affective", "isear", "fairy", "unlabeled"}
        assert manifest["artifacts"]["vocab_hash"] == Vocabulary.load(out / "vocab.txt").digest()
        rec = json.loads((out / "test.jsonl").read_text().splitlines()[-1])
        assert rec["source"] == "fairy"

    def test_deterministic(self, raw, tmp_path):
        prepare(raw, tmp_path / "a")
        prepare(raw, tmp_path / "b")
        for name in ("train.jsonl", "val.jsonl", "test.jsonl", "vocab.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_missing_file(self, raw, tmp_path, capsys):
        out = tmp_path / "run"
        code = cli.main(["prepare", "--posts", str(tmp_path / "nope.tsv"), "--affective", raw["affective"],
                         "--isear", raw["isear"], "--fairy", raw["fairy"], "--test-set", "isear", "--out", str(out)])
        assert code == 2
        assert not out.exists()
        assert "not found" in capsys.readouterr().err
        assert [p for p in tmp_path.iterdir()] == []

    def test_malformed_posts(self, raw, tmp_path):
        bad = tmp_path / "bad.tsv"
        bad.write_text("text\tlove\twow\thaha\tsad\tangry\nhi\t1\tx\t0\t0\t0\n")
        out = tmp_path / "run"
        code = cli.main(["prepare", "--posts", str(bad), "--affective", raw["affective"], "--isear", raw["isear"],
                         "--fairy", raw["fairy"], "--test-set", "isear", "--out", str(out)])
        assert code == 2 and not out.exists()

    def test_data_dir_env(self, raw, tmp_path, monkeypatch):
        base = Path(raw["posts"]).parent
        monkeypatch.setenv(cli.DATA_DIR_ENV, str(base))
        monkeypatch.chdir(tmp_path)
        code = cli.main(["prepare", "--posts", "posts.tsv", "--affective", "affective.tsv", "--isear", "isear.tsv",
                         "--fairy", "fairy.tsv", "--test-set", "affective", "--out", "run"])
        assert code == 0 and (tmp_path / "run" / "vocab.txt").exists()


class TestRules:
    def test_default_listing(self, capsys):
        assert cli.main(["rules"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 11
        assert "HAHA + LOVE - HAHA*LOVE" in lines[8]
        assert "w=0.2" in lines[3]

    def test_check_grid(self, capsys):
        assert cli.main(["rules", "--check-grid"]) == 0
        assert "grid check: PASS" in capsys.readouterr().out

    def test_parse_error(self, tmp_path, capsys):
        f = tmp_path / "r.fol"
        f.write_text("HAHA => joy\n")
        assert cli.main(["rules", "--rules", str(f)]) == 2
        assert "line 1" in capsys.readouterr().err


class TestTrainEval:
    def test_artifacts(self, trained):
        log = [json.loads(l) for l in (trained / "train_log.jsonl").read_text().splitlines()]
        assert [e["epoch"] for e in log] == [1, 2]
        manifest = json.loads((trained / MANIFEST).read_text())
        assert manifest["stages"]["train"]["config"]["train"]["variant"] == "constr"
        assert manifest["artifacts"]["checkpoint"] == "checkpoint.npz"

    def test_eval(self, trained, capsys):
        assert cli.main(["eval", str(trained)]) == 0
        metrics = json.loads((trained / "metrics.json").read_text())
        assert {t["task"] for t in metrics["tasks"]} == {"reaction", "emotion"}
        assert "Macro Avg" in capsys.readouterr().out
        assert (trained / "metrics.txt").exists()

    def test_eval_reproducible(self, trained, tmp_path, raw):
        run = tmp_path / "again"
        prepare(raw, run)
        cli.main(["train", str(run), "--variant", "constr", "--seed", "1", *SMALL])
        a, _ = net.load_checkpoint(trained / "checkpoint.npz")
        b, _ = net.load_checkpoint(run / "checkpoint.npz")
        assert all(np.array_equal(a[k], b[k]) for k in a.names())

    def test_aggregate(self, trained, tmp_path, capsys):
        assert cli.main(["eval", "--splits", str(trained), str(trained), "--out", str(tmp_path)]) == 0
        agg = json.loads((tmp_path / "metrics_aggregate.json").read_text())
        assert all(t["splits"] == 2 for t in agg["tasks"])
        assert "(0.000)" in capsys.readouterr().out

    def test_config_file_and_overrides(self, raw, tmp_path):
        run = tmp_path / "r"
        prepare(raw, run)
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"lambda_c": 0.5, "max_epochs": 5, "model": {"hidden_e": [4]}}))
        assert cli.main(["train", str(run), "--config", str(cfg), "--epochs", "1", "--d-emb", "4", "--d-h", "3",
                         "-q"]) == 0
        stage = json.loads((run / MANIFEST).read_text())["stages"]["train"]["config"]
        assert stage["train"]["lambda_c"] == 0.5 and stage["train"]["max_epochs"] == 1
        assert stage["model"]["hidden_e"] == [4]

    def test_bad_config_key(self, trained, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"learning_rate": 1}))
        assert cli.main(["train", str(trained), "--config", str(cfg), "-q"]) == 2

    def test_vocab_mismatch(self, trained, tmp_path, raw):
        run = tmp_path / "other"
        assert cli.main(["prepare", "--posts", raw["posts"], "--affective", raw["affective"], "--isear",
                         raw["isear"], "--fairy", raw["fairy"], "--test-set", "fairy", "--vocab-size", "20",
                         "--out", str(run)]) == 0
        (run / "checkpoint.npz").write_bytes((trained / "checkpoint.npz").read_bytes())
        assert cli.main(["eval", str(run)]) == 2

    def test_train_without_prepare(self, tmp_path):
        assert cli.main(["train", str(tmp_path)]) == 2

    def test_embeddings(self, raw, tmp_path):
        run = tmp_path / "emb"
        prepare(raw, run)
        words = Vocabulary.load(run / "vocab.txt").tokens[:3]
        emb = tmp_path / "vec.txt"
        emb.write_text("".join(f"{w} " + " ".join(["0.1"] * 7) + "\n" for w in words))
        assert cli.main(["train", str(run), "--embeddings", str(emb), "--epochs", "1", "--d-h", "3", "-q"]) == 0
        params, _ = net.load_checkpoint(run / "checkpoint.npz")
        assert params.config.d_emb == 7 and params.config.hidden_r == (25,)


class TestPredict:
    def test_tsv(self, trained, tmp_path):
        inp = tmp_path / "in.txt"
        inp.write_text("qqqq zzzz xxxx\nhello there\n")
        out = tmp_path / "out.tsv"
        assert cli.main(["predict", str(trained), str(inp), "--out", str(out)]) == 0
        rows = [l.split("\t") for l in out.read_text().splitlines()]
        assert rows[0][:2] == ["text", "emotion"] and rows[0][8] == "reaction"
        assert len(rows) == 3
        for row in rows[1:]:
            p_e = np.array(row[2:8], dtype=float)
            p_r = np.array(row[9:14], dtype=float)
            assert abs(p_e.sum() - 1) < 1e-5 and abs(p_r.sum() - 1) < 1e-5
            assert row[1] == ["anger", "disgust", "fear", "happiness", "sadness", "surprise"][int(np.argmax(p_e))]

    def test_unk_and_empty_lines(self, trained, tmp_path, capsys, monkeypatch):
        monkeypatch.setattr("sys.stdin", io.StringIO("!!! ???\nhttp://only.url\n"))
        assert cli.main(["predict", str(trained)]) == 0
        rows = capsys.readouterr().out.splitlines()
        assert len(rows) == 3


class TestSynthetic:
    def test_tiny(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setattr(synthetic.ExperimentSettings, "dims", 4)
        code = cli.main(["synthetic", "--seeds", "1", "--epochs", "1", "--patience", "1", "-q",
                         "--json", str(tmp_path / "s.json")])
        out = capsys.readouterr().out
        assert code in (0, 1)
        assert ("PASS" in out) or ("FAIL" in out)
        data = json.loads((tmp_path / "s.json").read_text())
        assert set(data["scores"]) == {"plain", "constr", "artificial"}
        assert code == (0 if data["passed"] else 1)
