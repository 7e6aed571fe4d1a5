import json
import os

import numpy as np
from PIL import Image

from conftest import GLYPH_DB
from estr import EXIT_DATA, EXIT_OK, EXIT_TRANSPORT, EXIT_USAGE, main
from event_utils import read_events

CORPUS = "三只松鼠\n三只松鼠很可爱\n我有三只猫\n"


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def _jsonl(rows):
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows)


def test_usage_errors(capsys):
    assert main(["stats"]) == EXIT_USAGE
    assert main(["stack", "--bogus"]) == EXIT_USAGE
    assert main(["no-such-command"]) == EXIT_USAGE


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "bench" in capsys.readouterr().out


def test_bad_event_file_is_data_error(tmp_path, capsys):
    path = _write(tmp_path / "e.csv", "0,0,1,2\n")
    assert main(["stats", "--width", "4", "--height", "4", path]) == EXIT_DATA
    assert "polarity at record 1" in capsys.readouterr().err


def test_stats_on_event_file(tmp_path, capsys):
    path = _write(tmp_path / "e.csv", "x,y,t,p\n0,0,10,1\n3,3,20,-1\n")
    assert main(["stats", "--width", "4", "--height", "4", path]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["n_events"] == 2
    assert out["duration_us"] == 10


def test_simulate_then_stack(tmp_path, capsys):
    a = np.full((6, 8), 50, dtype=np.uint8)
    b = a.copy()
    b[2:4, 2:4] = 200
    Image.fromarray(a).save(tmp_path / "a.pgm")
    Image.fromarray(b).save(tmp_path / "b.pgm")
    events = str(tmp_path / "out.evs1")
    assert main(["simulate", str(tmp_path / "a.pgm"), str(tmp_path / "b.pgm"), events]) == EXIT_OK
    stream = read_events(events)
    assert (stream.width, stream.height) == (8, 6)
    assert len(stream) > 0 and set(stream.p.tolist()) == {1}

    outdir = tmp_path / "frames"
    assert main(["stack", "--t", "4", events, str(outdir)]) == EXIT_OK
    assert sorted(os.listdir(outdir)) == [f"frame_0{i}.ppm" for i in range(4)]


def test_synth_split_and_manifest_stats(tmp_path, capsys):
    corpus = _write(tmp_path / "corpus.txt", "\n".join(f"TEXT {i}" for i in range(20)) + "\n")
    assert main(["synth", "--frames", "3", corpus, str(tmp_path / "data")]) == EXIT_OK
    manifest = str(tmp_path / "data" / "manifest.jsonl")
    capsys.readouterr()

    assert main(["stats", manifest]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["records"] == 20

    assert main(["split", "--seed", "1", manifest, str(tmp_path / "split")]) == EXIT_OK
    assert capsys.readouterr().out.split() == ["train:", "14", "val:", "2", "test:", "4"]
    with open(tmp_path / "split" / "val.jsonl", encoding="utf-8") as f:
        assert len(f.readlines()) == 2


def test_correct_with_bigram_scorer(tmp_path):
    pred = _write(tmp_path / "pred.jsonl", _jsonl([{"id": "a", "text": "三只枫鼠"}, {"id": "b", "text": "你好"}]))
    corpus = _write(tmp_path / "corpus.txt", CORPUS)
    out = tmp_path / "fixed.jsonl"
    assert main(["correct", "--db", GLYPH_DB, "--scorer", corpus, "--out", str(out), pred]) == EXIT_OK
    rows = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
    assert rows == [
        {"id": "a", "text": "三只枫鼠", "corrected": "三只松鼠"},
        {"id": "b", "text": "你好", "corrected": "你好"},
    ]


def test_correct_needs_scorer_for_bigram(tmp_path, capsys):
    pred = _write(tmp_path / "pred.jsonl", _jsonl([{"id": "a", "text": "三"}]))
    assert main(["correct", "--db", GLYPH_DB, pred]) == EXIT_USAGE


def test_correct_over_http(tmp_path, live_backend, capsys):
    pred = _write(tmp_path / "pred.jsonl", _jsonl([{"id": "a", "text": "三只枫鼠"}]))
    url, _ = live_backend("identity")
    assert main(["correct", "--db", GLYPH_DB, "--backend", "http", "--endpoint", url, pred]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["corrected"] == "三只枫鼠"

    url, _ = live_backend("fail")
    assert main(["correct", "--db", GLYPH_DB, "--backend", "http", "--endpoint", url, pred]) == EXIT_TRANSPORT
    assert "HTTP 500" in capsys.readouterr().err


def test_score(tmp_path, capsys):
    pred = _write(tmp_path / "p.jsonl", _jsonl([{"id": "a", "text": "三只松鼠"}, {"id": "b", "text": "MULIVE"}]))
    gt = _write(tmp_path / "g.jsonl", _jsonl([{"id": "b", "text": "mulive"}, {"id": "a", "text": "三只松鼠"}]))
    assert main(["score", "--metric", "acc", "--pred", pred, "--gt", gt]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["word_accuracy"] == 1.0

    assert main(["score", "--metric", "acc-cjk", "--pred", pred, "--gt", gt]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["metric"] == "acc-cjk"

    assert main(["score", "--metric", "bleu", "--pred", pred, "--gt", gt]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["corpus"]["bleu_1"] == 1.0
    assert set(report["sentence_mean"]) == {"bleu_1", "bleu_2", "bleu_3", "bleu_4"}

    missing = _write(tmp_path / "m.jsonl", _jsonl([{"id": "zzz", "text": "x"}]))
    assert main(["score", "--metric", "bleu", "--pred", missing, "--gt", gt]) == EXIT_DATA


def test_memtest(capsys):
    assert main(["memtest", "--cases", "20"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["passed"] is True


def test_bench_end_to_end(tmp_path, capsys):
    labels = ["三只松鼠", "three squirrels", "a cap and a deed"] * 4
    lines = _write(tmp_path / "labels.txt", "\n".join(labels) + "\n")
    assert main(["synth", "--frames", "2", lines, str(tmp_path / "data")]) == EXIT_OK
    corpus = _write(tmp_path / "corpus.txt", "\n".join(labels) + "\n")
    capsys.readouterr()

    argv = [
        "bench",
        "--manifest", str(tmp_path / "data" / "manifest.jsonl"),
        "--db", GLYPH_DB,
        "--scorer", corpus,
        "--t", "4", "--k", "4", "--m-count", "8", "--noise-rate", "0",
        "--out", str(tmp_path / "out"),
        "--xlsx", str(tmp_path / "out" / "ablation.xlsx"),
        "--sweep-k", "1,2",
    ]
    assert main(argv) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert all(arm["bleu"] == [1.0, 1.0, 1.0, 1.0] for arm in report["arms"])
    assert report["config"]["t_count"] == 4
    written = sorted(os.listdir(tmp_path / "out"))
    assert written == sorted([
        "ablation.xlsx", "pred_baseline.jsonl", "pred_gecm.jsonl",
        "pred_gecm_mm.jsonl", "pred_mm.jsonl", "report.json",
    ])


def test_bench_rejects_bad_config(tmp_path, capsys):
    cfg = _write(tmp_path / "bench.cfg", "k = 0\n")
    manifest = _write(tmp_path / "manifest.jsonl", "")
    corpus = _write(tmp_path / "corpus.txt", CORPUS)
    argv = ["bench", "--manifest", manifest, "--db", GLYPH_DB, "--scorer", corpus, "--config", cfg]
    assert main(argv) == EXIT_DATA
    assert "k must be" in capsys.readouterr().err
