from __future__ import annotations

import csv
import filecmp
import json
import shutil

import pytest

from thunderlens.cli import build_parser, main
from thunderlens.ingestion import write_fixture
from thunderlens.synth import generate, scenario_at

from conftest import GOLDEN, GOLDEN_TX, GOLDEN_SPANS
from rpc_node import Node

RESULTS = ("flashloans.jsonl", "primitives.jsonl", "advanced.jsonl")


@pytest.fixture
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert main(["synth", "-n", "60", "--seed", "7", "-o", str(root)]) == 0
    return root


def stderr_lines(capsys):
    return [json.loads(line) for line in capsys.readouterr().err.splitlines() if line.strip()]


def test_identify_golden(tmp_path):
    assert main(["identify", "--fixtures", str(GOLDEN), "-o", str(tmp_path)]) == 0
    (line,) = (tmp_path / "flashloans.jsonl").read_text().splitlines()
    assert json.loads(line)["span"] == {"intStart": 2, "intEnd": 188}


def test_identify_missing_directory(tmp_path, capsys):
    assert main(["identify", "--fixtures", str(tmp_path / "nope"), "-o", str(tmp_path)]) == 1
    assert stderr_lines(capsys)[-1]["code"] == "input_error"


def test_identify_bad_registry(tmp_path, capsys):
    bad = tmp_path / "bad.tomlish"
    bad.write_text("mode = extend\n")
    assert main(["identify", "--fixtures", str(GOLDEN), "--registry", str(bad), "-o", str(tmp_path)]) == 2
    assert stderr_lines(capsys)[-1]["code"] == "config_error"


def test_no_input_is_config_error(tmp_path):
    assert main(["identify", "-o", str(tmp_path)]) == 2


def test_bad_flags_exit_2(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["identify", "--workers", "0"])
    assert err.value.code == 2


def test_pipeline_writes_all_files(corpus, tmp_path):
    args = ["--fixtures", str(corpus / "fixtures"), "--registry", str(corpus / "registry.json")]
    assert main(["classify", "--pipeline", *args, "-o", str(tmp_path)]) == 0
    for name in RESULTS:
        assert (tmp_path / name).read_text()


def test_classify_after_identify_matches_pipeline(corpus, tmp_path):
    args = ["--fixtures", str(corpus / "fixtures"), "--registry", str(corpus / "registry.json")]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["classify", "--pipeline", *args, "-o", str(a)]) == 0
    assert main(["identify", *args, "-o", str(b)]) == 0
    assert main(["classify", *args, "-o", str(b)]) == 0
    for name in RESULTS:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_classify_without_phase1(tmp_path):
    assert main(["classify", "--fixtures", str(GOLDEN), "-o", str(tmp_path)]) == 1


def test_empty_corpus(tmp_path):
    (tmp_path / "in").mkdir()
    out = tmp_path / "out"
    assert main(["classify", "--pipeline", "--fixtures", str(tmp_path / "in"), "-o", str(out)]) == 0
    assert all((out / name).read_text() == "" for name in RESULTS)
    assert main(["report", "-o", str(out)]) == 0
    doc = json.loads((out / "report_distribution.json").read_text())
    assert doc["totals"] == {"txCount": 0, "uniqueBorrowers": 0}


def test_report_golden_span_table(tmp_path):
    assert main(["classify", "--pipeline", "--fixtures", str(GOLDEN), "-o", str(tmp_path)]) == 0
    assert main(["report", "--tx", GOLDEN_TX, "-o", str(tmp_path)]) == 0
    with open(tmp_path / f"span_{GOLDEN_TX}.csv") as fh:
        rows = list(csv.reader(fh))[1:]
    assert [(b, int(s), int(e)) for b, s, e in rows] == list(GOLDEN_SPANS)


def test_report_without_results(tmp_path):
    assert main(["report", "-o", str(tmp_path)]) == 1


def test_report_unknown_tx(tmp_path):
    assert main(["classify", "--pipeline", "--fixtures", str(GOLDEN), "-o", str(tmp_path)]) == 0
    assert main(["report", "--tx", "0x" + "00" * 32, "-o", str(tmp_path)]) == 1


def test_report_with_changed_registry_is_stale(corpus, tmp_path):
    args = ["--fixtures", str(corpus / "fixtures"), "--registry", str(corpus / "registry.json")]
    assert main(["classify", "--pipeline", *args, "-o", str(tmp_path)]) == 0
    assert main(["report", "-o", str(tmp_path), "--registry", str(corpus / "registry.json")]) == 0
    shutil.copy(corpus / "registry.json", tmp_path / "reg.json")
    doc = json.loads((tmp_path / "reg.json").read_text())
    doc["address_book"]["bzx_itokens"] = doc["address_book"]["bzx_itokens"][:-1]
    (tmp_path / "reg.json").write_text(json.dumps(doc))
    assert main(["report", "-o", str(tmp_path), "--registry", str(tmp_path / "reg.json")]) == 1


def test_synth_is_deterministic(tmp_path):
    assert main(["synth", "-n", "100", "--seed", "7", "-o", str(tmp_path / "a")]) == 0
    assert main(["synth", "-n", "100", "--seed", "7", "-o", str(tmp_path / "b")]) == 0
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    fixtures = filecmp.dircmp(tmp_path / "a" / "fixtures", tmp_path / "b" / "fixtures")
    assert not fixtures.diff_files and len(fixtures.same_files) == 101


def test_synth_zero(tmp_path):
    assert main(["synth", "-n", "0", "-o", str(tmp_path)]) == 0
    assert list((tmp_path / "fixtures").iterdir()) == []
    assert (tmp_path / "ground_truth.jsonl").read_text() == ""


def test_fetch_unreachable(tmp_path, capsys):
    assert main(["fetch", "--rpc-url", "http://127.0.0.1:9", GOLDEN_TX, "-o", str(tmp_path)]) == 1
    assert stderr_lines(capsys)[-1]["code"] == "input_error"


def test_fetch_without_endpoint(tmp_path, monkeypatch):
    monkeypatch.delenv("THUNDERLENS_RPC_URL", raising=False)
    assert main(["fetch", GOLDEN_TX, "-o", str(tmp_path)]) == 2


def test_fetch_and_identify_over_rpc(tmp_path, golden, monkeypatch):
    node = Node([golden])
    try:
        assert main(["fetch", "--rpc-url", node.url, GOLDEN_TX, "-o", str(tmp_path / "fx")]) == 0
        assert (tmp_path / "fx" / f"{GOLDEN_TX}.json").read_bytes() == GOLDEN.read_bytes()
        monkeypatch.setenv("THUNDERLENS_RPC_URL", node.url)
        args = build_parser().parse_args(["identify", "--tx", GOLDEN_TX])
        assert args.rpc_url == node.url
        assert main(["identify", "--rpc-url", node.url, "--tx", GOLDEN_TX, "-o", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "flashloans.jsonl").read_text().count("\n") == 1
    finally:
        node.close()


def test_diagnostics_are_json_lines(tmp_path, capsys):
    bundle, _ = generate(scenario_at(7, 4))
    write_fixture(bundle, tmp_path / "in")
    assert main(["identify", "--fixtures", str(tmp_path / "in"), "-o", str(tmp_path / "o")]) == 0
    lines = stderr_lines(capsys)
    assert lines and all("code" in d for d in lines)
    assert "detector_disabled" in {d["code"] for d in lines}


def test_end_to_end_determinism_and_workers(corpus, tmp_path):
    args = ["--fixtures", str(corpus / "fixtures"), "--registry", str(corpus / "registry.json")]
    for name, extra in (("a", []), ("b", []), ("c", ["--workers", "2"])):
        out = tmp_path / name
        assert main(["classify", "--pipeline", *args, *extra, "-o", str(out)]) == 0
        assert main(["report", "-o", str(out)]) == 0
    for other in ("b", "c"):
        for f in (tmp_path / "a").iterdir():
            if f.name == "manifest.json":
                left = json.loads(f.read_text())
                right = json.loads((tmp_path / other / f.name).read_text())
                left.pop("createdAt"), right.pop("createdAt")
                assert left == right
            else:
                assert f.read_bytes() == (tmp_path / other / f.name).read_bytes(), f.name
