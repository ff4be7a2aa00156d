import json
import logging

import pytest
from typer.testing import CliRunner

from latency.data import MetricKind
from main import app
from src.pipeline import score_segment
from test.util import segment

runner = CliRunner()

REFS = "a b c\nx y z\n"

TABLES = [
    {
        "source_words": [
            {"word": "eins", "start_ms": 0, "end_ms": 800},
            {"word": "zwei", "start_ms": 800, "end_ms": 1500},
            {"word": "drei", "start_ms": 1500, "end_ms": 2500},
        ],
        "links": [[0, 0], [1, 1], [2, 2]],
    },
    {
        "source_words": [
            {"word": "x", "start_ms": 0, "end_ms": 400},
            {"word": "y", "start_ms": 400, "end_ms": 900},
            {"word": "z", "start_ms": 900, "end_ms": 1400},
        ],
        "links": [[0, 0], [1, 1], [2, 2]],
    },
]

SYSTEMS = {
    "early": ([900, 1600, 2600], [500, 1000, 1500]),
    "steady": ([1000, 2000, 3000], [500, 3000, 3000]),
    "late": ([2000, 2800, 3000], [2500, 3000, 3000]),
}

MANIFEST = [
    {"start_ms": 0, "duration_ms": 1000, "reference": "hello world"},
    {"start_ms": 1000, "duration_ms": 1500, "reference": "good night"},
]


def write_log(path, first, second):
    lines = [
        {"index": 0, "prediction": "a b c", "delays": first, "source_length": 3000},
        {"index": 1, "prediction": "x y z", "delays": second, "source_length": 3000},
    ]
    path.write_text("".join(json.dumps(line) + "\n" for line in lines), encoding="utf-8")
    return path


@pytest.fixture
def short_form(tmp_path):
    refs = tmp_path / "tst.txt"
    refs.write_text(REFS, encoding="utf-8")
    tables = tmp_path / "tables.jsonl"
    tables.write_text("".join(json.dumps(table) + "\n" for table in TABLES), encoding="utf-8")
    log = write_log(tmp_path / "steady.jsonl", *SYSTEMS["steady"])
    return log, refs, tables


@pytest.fixture
def long_form(tmp_path):
    log = tmp_path / "stream.jsonl"
    log.write_text(
        json.dumps({"prediction": "hello world good night", "delays": [500, 900, 1600, 2100], "source_length": 2500})
        + "\n",
        encoding="utf-8",
    )
    manifest = tmp_path / "talk.json"
    manifest.write_text(json.dumps(MANIFEST), encoding="utf-8")
    return log, manifest


@pytest.fixture
def runs_dir(tmp_path, short_form):
    _, refs, tables = short_form
    runs = tmp_path / "runs"
    runs.mkdir()
    for system, delays in SYSTEMS.items():
        log = write_log(tmp_path / f"{system}.jsonl", *delays)
        args = ["eval", "--logs", log, "--refs", refs, "--align-tables", tables]
        result = runner.invoke(app, [*map(str, args), "--lang-pair", "en-de", "--out", str(runs / f"{system}.json")])
        assert result.exit_code == 0, result.output
    return runs


@pytest.mark.cli
def test_eval(tmp_path, short_form):
    log, refs, tables = short_form
    out = tmp_path / "report.json"
    args = ["eval", "--logs", log, "--refs", refs, "--align-tables", tables, "--metrics", "AL,LAAL,YAAL", "--out", out]

    result = runner.invoke(app, [str(arg) for arg in args])
    assert result.exit_code == 0, result.output

    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["kind"] == "run"
    assert report["system_id"] == "steady"
    assert report["testset_id"] == "tst"
    assert report["regime"] == "short-form"
    assert report["config"]["metrics"] == ["AL", "LAAL", "YAAL"]
    assert {name: entry["value"] for name, entry in report["corpus"].items()} == pytest.approx(
        {"AL": 1125.0, "LAAL": 1125.0, "YAAL": 750.0}
    )
    assert report["tail_fraction"] == pytest.approx(0.5)
    assert report["true_latency"]["value"] == pytest.approx(225.0)
    assert [segment["n_tail"] for segment in report["segments"]] == [1, 2]
    assert report["segments"][0]["tl_gaps"] == [200.0, 500.0]


@pytest.mark.cli
def test_eval_tsv(tmp_path, short_form):
    log, refs, _ = short_form
    out = tmp_path / "report.tsv"

    result = runner.invoke(
        app,
        ["eval", "--logs", str(log), "--refs", str(refs), "--metrics", "AL,YAAL", "--format", "tsv", "-o", str(out)],
    )
    assert result.exit_code == 0, result.output

    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "index\tn_tokens\tn_tail\tsource_duration_ms\tAL\tYAAL\tTL"
    assert lines[1] == "0\t3\t1\t3000.0000\t1000.0000\t1000.0000\tNA"
    assert lines[-1] == "corpus\t6\t3\tNA\t1125.0000\t750.0000\tNA"


@pytest.mark.cli
def test_eval_without_references(tmp_path, short_form):
    log, _, _ = short_form

    result = runner.invoke(app, ["eval", "--logs", str(log), "--metrics", "AL,YAAL"])
    assert result.exit_code == 2
    assert "refs" in result.output

    out = tmp_path / "report.json"
    result = runner.invoke(app, ["eval", "--logs", str(log), "--metrics", "AP,DAL,ATD", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert set(json.loads(out.read_text(encoding="utf-8"))["corpus"]) == {"AP", "DAL", "ATD"}


@pytest.mark.cli
def test_eval_char_mode(tmp_path):
    log = tmp_path / "zh.jsonl"
    log.write_text(
        json.dumps({"prediction": "你好", "delays": [100, 200], "source_length": 1000}) + "\n", encoding="utf-8"
    )
    refs = tmp_path / "zh.txt"
    refs.write_text("你好。\n", encoding="utf-8")
    out = tmp_path / "report.json"

    result = runner.invoke(
        app, ["eval", "--logs", str(log), "--refs", str(refs), "--lang-mode", "char", "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["segments"][0]["n_tokens"] == 2
    assert report["corpus"]["AL"]["value"] == pytest.approx((100 + 200 - 1000 / 3) / 2)


@pytest.mark.cli
def test_eval_invalid_log(tmp_path, short_form):
    _, refs, _ = short_form
    log = write_log(tmp_path / "broken.jsonl", [300, 200, 400], [100, 200, 300])
    out = tmp_path / "report.json"

    result = runner.invoke(app, ["eval", "--logs", str(log), "--refs", str(refs), "--out", str(out)])
    assert result.exit_code == 1
    assert "non-monotone" in result.output
    assert not out.exists()

    result = runner.invoke(
        app, ["eval", "--logs", str(log), "--refs", str(refs), "--fix-monotonic", "--out", str(out)]
    )
    assert result.exit_code == 0, result.output


@pytest.mark.cli
def test_eval_config_file(tmp_path, short_form):
    log, refs, _ = short_form
    config = tmp_path / "config.json"
    out = tmp_path / "report.json"

    config.write_text(json.dumps({"metrics": "AP", "system": "from-config"}), encoding="utf-8")
    result = runner.invoke(app, ["eval", "--logs", str(log), "--config", str(config), "--out", str(out)])
    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["system_id"] == "from-config"
    assert list(report["corpus"]) == ["AP"]

    config.write_text(json.dumps({"colour": "red"}), encoding="utf-8")
    result = runner.invoke(app, ["eval", "--logs", str(log), "--config", str(config)])
    assert result.exit_code == 1
    assert "Unknown config keys: colour" in result.output


@pytest.mark.cli
def test_truelat(tmp_path, short_form):
    log, _, tables = short_form
    out = tmp_path / "tl.json"

    result = runner.invoke(app, ["truelat", "--logs", str(log), "--align-tables", str(tables), "--out", str(out)])
    assert result.exit_code == 0, result.output

    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["corpus"]["value"] == pytest.approx(225.0)
    assert [segment["true_latency"] for segment in report["segments"]] == pytest.approx([350.0, 100.0])
    assert [segment["n_eligible"] for segment in report["segments"]] == [2, 1]


@pytest.mark.cli
def test_reseg(tmp_path, long_form):
    log, manifest = long_form
    out = tmp_path / "reseg.json"

    result = runner.invoke(app, ["reseg", "--logs", str(log), "--manifest", str(manifest), "--out", str(out)])
    assert result.exit_code == 0, result.output

    (stream,) = json.loads(out.read_text(encoding="utf-8"))["streams"]
    assert [segment["tokens"] for segment in stream["segments"]] == [["hello", "world"], ["good", "night"]]
    assert stream["segments"][1]["delays_rel_ms"] == [600.0, 1100.0]
    assert stream["score"] == 4.0


@pytest.mark.cli
def test_longeval(tmp_path, long_form):
    log, manifest = long_form
    segmentation = tmp_path / "segments.txt"
    segmentation.write_text("hello world\ngood night\n", encoding="utf-8")
    out = tmp_path / "long.json"

    result = runner.invoke(
        app,
        ["longeval", "--logs", str(log), "--manifest", str(manifest), "--segmentation", str(segmentation)]
        + ["--out", str(out)],
    )
    assert result.exit_code == 0, result.output

    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["regime"] == "long-form"
    assert set(report["corpus"]) == {"LongAP", "LongAL", "LongLAAL", "LongDAL", "LongATD", "LongYAAL", "StreamLAAL"}
    assert report["corpus"]["LongYAAL"]["value"] == pytest.approx(462.5)
    assert report["corpus"]["StreamLAAL"]["value"] == pytest.approx(report["corpus"]["LongLAAL"]["value"])
    assert [segment["n_tokens"] for segment in report["segments"]] == [2, 2]


@pytest.mark.cli
def test_longeval_with_reseg_output(tmp_path, long_form):
    log, manifest = long_form
    reseg = tmp_path / "reseg.json"
    out = tmp_path / "long.json"

    result = runner.invoke(app, ["reseg", "--logs", str(log), "--manifest", str(manifest), "--out", str(reseg)])
    assert result.exit_code == 0, result.output
    result = runner.invoke(
        app,
        ["longeval", "--logs", str(log), "--manifest", str(manifest), "--segmentation", str(reseg)]
        + ["--metrics", "LAAL", "--format", "tsv", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output

    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "stream\tkind\tvalue\tskipped"
    assert "talk\tStreamLAAL\t462.5000\t0" in lines
    assert "corpus\tLongLAAL\t462.5000\t0" in lines


@pytest.mark.cli
def test_compare(tmp_path, runs_dir):
    out, pairs = tmp_path / "compare.tsv", tmp_path / "pairs.tsv"
    args = ["compare", "--runs", str(runs_dir), "--bootstrap-n", "200", "--format", "tsv", "--out", str(out)]

    result = runner.invoke(app, [*args, "--pairs-out", str(pairs)])
    assert result.exit_code == 0, result.output

    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "metric\tbucket\tsubset\taccuracy\tci_low\tci_high\tn_pairs\tstatus"
    rows = [line.split("\t") for line in lines[1:]]
    assert [row[0] for row in rows] == ["AP", "AL", "LAAL", "DAL", "ATD", "YAAL"]
    assert {(row[1], row[2], row[6]) for row in rows} == {("all", "all", "3")}
    assert "best" in [row[7] for row in rows]
    assert len(pairs.read_text(encoding="utf-8").splitlines()) == 4

    first = out.read_bytes()
    result = runner.invoke(app, args)
    assert result.exit_code == 0, result.output
    assert out.read_bytes() == first


@pytest.mark.cli
def test_compare_json(tmp_path, runs_dir):
    out = tmp_path / "compare.json"

    result = runner.invoke(
        app,
        ["compare", "--runs", str(runs_dir), "--metrics", "YAAL,TL", "--bootstrap-n", "100", "--correlations"]
        + ["--exclude-anomalous", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output

    report = json.loads(out.read_text(encoding="utf-8"))
    assert (report["n_runs"], report["n_pairs"], report["skipped_pairs"]) == (3, 3, 0)
    rows = {(row["metric"], row["subset"]): row for row in report["rows"] if row["bucket"] == "all"}
    assert rows["TL", "all"]["accuracy"] == 1.0
    assert rows["TL", "all"]["status"] == "best"
    assert "pearson" in rows["YAAL", "all"]


@pytest.mark.cli
def test_anomalous(tmp_path, runs_dir):
    out = tmp_path / "anomalous.tsv"

    result = runner.invoke(app, ["anomalous", "--runs", str(runs_dir), "--format", "tsv", "--out", str(out)])
    assert result.exit_code == 0, result.output

    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "system\tO\tO_e(YAAL)\tO_e_raw\tflag"
    assert [line.split("\t")[0] for line in lines[1:]] == ["early", "late", "steady"]
    assert lines[1].split("\t")[1] == "1.0000"


@pytest.mark.cli
def test_tails(tmp_path, runs_dir):
    out = tmp_path / "tails.json"

    result = runner.invoke(app, ["tails", "--runs", str(runs_dir), "--metric", "AL", "--out", str(out)])
    assert result.exit_code == 0, result.output

    bins = json.loads(out.read_text(encoding="utf-8"))["bins"]
    assert sum(b["n_systems"] for b in bins) == 3
    assert all(0.0 <= b["tail_fraction"] <= 1.0 for b in bins)


@pytest.mark.cli
def test_longeval_without_tables_or_segmentation(tmp_path, long_form):
    log, manifest = long_form
    out = tmp_path / "long.json"

    result = runner.invoke(app, ["longeval", "--logs", str(log), "--manifest", str(manifest), "--out", str(out)])
    assert result.exit_code == 0, result.output

    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["corpus"]["LongYAAL"]["value"] == pytest.approx(462.5)
    assert "StreamLAAL" not in report["corpus"]
    assert report["true_latency"] is None


@pytest.mark.cli
def test_longeval_with_an_offline_stream(tmp_path, long_form):
    log, manifest = long_form
    offline = {"prediction": "hello world good night", "delays": [2500] * 4, "source_length": 2500}
    with log.open("a", encoding="utf-8") as file:
        file.write(json.dumps(offline) + "\n")
    out = tmp_path / "long.json"

    result = runner.invoke(
        app, ["longeval", "--logs", str(log), "--manifest", str(manifest), "--manifest", str(manifest), "-o", str(out)]
    )
    assert result.exit_code == 0, result.output

    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["corpus"]["LongYAAL"] == {"value": pytest.approx(462.5), "n_defined": 1, "skipped": 2}
    yaal = [entry for entry in report["streams"] if entry["kind"] == "LongYAAL"]
    assert [entry["value"] for entry in yaal] == [pytest.approx(462.5), None]
    assert report["tail_fraction"] == pytest.approx(0.5)


@pytest.mark.cli
def test_longeval_with_an_empty_stream(tmp_path, long_form):
    log, manifest = long_form
    log.write_text(json.dumps({"prediction": "", "delays": [], "source_length": 2500}) + "\n", encoding="utf-8")
    out = tmp_path / "long.json"

    result = runner.invoke(app, ["longeval", "--logs", str(log), "--manifest", str(manifest), "-o", str(out)])
    assert result.exit_code == 0, result.output

    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["corpus"]["LongAP"]["value"] is None
    assert report["corpus"]["LongYAAL"]["skipped"] == 2
    assert report["tail_fraction"] is None


@pytest.mark.cli
def test_undefined_segment_is_logged(caplog):
    with caplog.at_level(logging.WARNING):
        scored = score_segment(0, segment([], 1000), 3, [MetricKind.AL, MetricKind.YAAL], None)

    assert scored.entry["metrics"] == {"AL": None, "YAAL": None}
    assert any(record.levelno == logging.WARNING and "AL" in record.getMessage() for record in caplog.records)
