import json
from pathlib import Path

import pytest

from malgraph.cli import main
from malgraph.depgraph import DepEdge, DepGraph, DepNode, save_graph
from malgraph.ir import INT64

TWO_LINE_TRACE = "%1 = add i64 %in, %in\n%2 = mul i64 %1, %1\n"


def run(argv, capsys):
    try:
        code = main([str(a) for a in argv])
    except SystemExit as e:
        code = e.code
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """An easy corpus plus a model trained to perfection on it."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["corpus", "--out", str(root / "c"), "--benign", "8",
                 "--malicious", "8", "--seed", "3", "--easy"]) == 0
    assert main(["train", "--manifest", str(root / "c" / "manifest.jsonl"),
                 "--out", str(root / "model.json"), "--epochs", "30",
                 "--hidden", "8", "--layers", "4", "--seed", "0",
                 "--lr", "0.05", "--history", str(root / "hist.csv")]) == 0
    return root


# ---------------------------------------------------------------- compile

def test_compile_two_line_trace(tmp_path, capsys):
    src = tmp_path / "tiny.trace"
    src.write_text(TWO_LINE_TRACE)
    code, out, _ = run(["compile", src, "--out", tmp_path], capsys)
    assert code == 0
    assert "2 nodes, 1 edge" in out
    assert (tmp_path / "tiny.json").exists()


def test_compile_missing_path_exits_1(tmp_path, capsys):
    code, _, err = run(["compile", tmp_path / "nope.trace"], capsys)
    assert code == 1
    assert "nope.trace" in err


def test_compile_directory_of_three(tmp_path, capsys):
    src = tmp_path / "src"
    src.mkdir()
    for i in range(3):
        (src / f"u{i}.trace").write_text(TWO_LINE_TRACE)
    (src / "notes.txt").write_text("ignored")
    out_dir = tmp_path / "graphs"
    code, out, _ = run(["compile", src, "--out", out_dir], capsys)
    assert code == 0
    assert len(list(out_dir.glob("*.json"))) == 3


def test_compile_malformed_names_path_and_line(tmp_path, capsys):
    bad = tmp_path / "bad.trace"
    bad.write_text("%1 = add i64 %a, %b\n%broken\n")
    code, _, err = run(["compile", bad, "--out", tmp_path], capsys)
    assert code == 1
    assert "bad.trace" in err and "line 2" in err


def test_compile_attaches_label_and_family(tmp_path, capsys):
    src = tmp_path / "t.trace"
    src.write_text(TWO_LINE_TRACE)
    code, _, _ = run(["compile", src, "--out", tmp_path, "--label", "1",
                      "--family", "worm"], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "t.json").read_text())
    assert doc["label"] == 1 and doc["family"] == "worm"


def test_compile_edge_flags_add_edges(tmp_path, capsys):
    src = tmp_path / "m.trace"
    src.write_text(
        "store i64 %v, i64* %p ; addr=0x10\n"
        "%1 = load i64, i64* %q ; addr=0x10\n"
        "br label %done\n"
        "ret void\n"
    )
    code, out, _ = run(["compile", src, "--out", tmp_path / "plain"], capsys)
    assert code == 0 and "0 edges" in out
    code, out, _ = run(["compile", src, "--out", tmp_path / "full",
                        "--mem-deps", "--control-edges"], capsys)
    assert code == 0 and "2 edges" in out


# ---------------------------------------------------------------- corpus

def test_corpus_writes_traces_and_manifest(tmp_path, capsys):
    code, _, _ = run(["corpus", "--out", tmp_path / "c", "--benign", "2",
                      "--malicious", "2", "--seed", "1"], capsys)
    assert code == 0
    assert len(list((tmp_path / "c" / "traces").glob("*.trace"))) == 4
    assert (tmp_path / "c" / "manifest.jsonl").exists()


def test_corpus_repeat_identical(tmp_path, capsys):
    for name in ("a", "b"):
        run(["corpus", "--out", tmp_path / name, "--benign", "2",
             "--malicious", "2", "--seed", "1"], capsys)
    for f in (tmp_path / "a" / "traces").glob("*.trace"):
        assert f.read_bytes() == (tmp_path / "b" / "traces" / f.name).read_bytes()


def test_corpus_zero_count_is_usage_error(tmp_path, capsys):
    code, _, _ = run(["corpus", "--out", tmp_path, "--benign", "0"], capsys)
    assert code == 2


# ---------------------------------------------------------------- train

def test_train_writes_model_history_and_metrics(trained, capsys):
    assert (trained / "model.json").exists()
    hist = (trained / "hist.csv").read_text().splitlines()
    assert hist[0] == "epoch,train_loss,test_acc,test_auroc"
    assert len(hist) == 31
    code, out, _ = run(["eval", "--model", trained / "model.json",
                        "--manifest", trained / "c" / "manifest.jsonl"], capsys)
    assert code == 0
    assert out.splitlines()[0] == "acc 1.000000"


def test_train_rejects_unknown_layer_count(tmp_path, capsys):
    code, _, _ = run(["train", "--manifest", tmp_path / "m.jsonl",
                      "--layers", "5"], capsys)
    assert code == 2


def test_train_rejects_bad_split(trained, tmp_path, capsys):
    code, _, _ = run(["train", "--manifest", trained / "c" / "manifest.jsonl",
                      "--out", tmp_path / "m.json", "--split", "1.5"], capsys)
    assert code == 2


def test_train_missing_manifest_exits_1(tmp_path, capsys):
    code, _, err = run(["train", "--manifest", tmp_path / "nope.jsonl"], capsys)
    assert code == 1
    assert "nope.jsonl" in err


# ---------------------------------------------------------------- predict

def test_predict_line_format(trained, tmp_path, capsys):
    traces = sorted((trained / "c" / "traces").glob("*.trace"))[:2]
    run(["compile", *traces, "--out", tmp_path], capsys)
    graphs = sorted(tmp_path.glob("*.json"))
    code, out, _ = run(["predict", "--model", trained / "model.json", *graphs],
                       capsys)
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 2
    for line, g in zip(lines, graphs):
        path, score, verdict = line.split("\t")
        assert path == str(g)
        assert verdict in ("malicious", "benign")
        s = float(score)
        assert score == f"{s:.6f}"
        assert (verdict == "malicious") == (s >= 0.5)


def test_predict_out_of_vocab_graph_scores(trained, tmp_path, capsys):
    g = DepGraph(
        nodes=(DepNode(0, "frobnicate", INT64), DepNode(1, "quux", INT64)),
        edges=(DepEdge(0, 1, 8, "data"),),
    )
    path = tmp_path / "odd.json"
    save_graph(g, path)
    code, out, _ = run(["predict", "--model", trained / "model.json", path],
                       capsys)
    assert code == 0
    path_out, score, verdict = out.strip().split("\t")
    assert path_out == str(path)
    assert 0.0 <= float(score) <= 1.0
    assert verdict in ("malicious", "benign")


def test_predict_empty_graph_exits_1(trained, tmp_path, capsys):
    path = tmp_path / "empty.json"
    path.write_text('{"version":1,"origin":"x","label":null,"family":null,'
                    '"nodes":[],"edges":[]}')
    code, _, err = run(["predict", "--model", trained / "model.json", path],
                       capsys)
    assert code == 1
    assert "empty.json" in err


# ---------------------------------------------------------------- eval

def test_eval_perfect_model(trained, capsys):
    code, out, _ = run(["eval", "--model", trained / "model.json",
                        "--manifest", trained / "c" / "manifest.jsonl"], capsys)
    assert code == 0
    assert out.splitlines() == ["acc 1.000000", "auroc 1.000000", "f1 1.000000"]


def test_eval_per_family_rows(trained, capsys):
    code, out, _ = run(["eval", "--model", trained / "model.json",
                        "--manifest", trained / "c" / "manifest.jsonl",
                        "--per-family"], capsys)
    assert code == 0
    lines = out.splitlines()
    header = lines.index("family samples acc")
    rows = lines[header + 1:]
    families = {r.split()[0] for r in rows}
    assert "benign" in families
    total = sum(int(r.split()[1]) for r in rows)
    assert total == 16


def test_eval_json_matches_human_output(trained, capsys):
    code, out, _ = run(["eval", "--model", trained / "model.json",
                        "--manifest", trained / "c" / "manifest.jsonl",
                        "--json", "--per-family"], capsys)
    assert code == 0
    doc = json.loads(out)
    _, human, _ = run(["eval", "--model", trained / "model.json",
                       "--manifest", trained / "c" / "manifest.jsonl",
                       "--per-family"], capsys)
    lines = human.splitlines()
    assert float(lines[0].split()[1]) == doc["acc"]
    assert float(lines[1].split()[1]) == doc["auroc"]
    assert float(lines[2].split()[1]) == doc["f1"]
    for row in lines[lines.index("family samples acc") + 1:]:
        fam, samples, acc = row.split()
        assert doc["per_family"][fam]["samples"] == int(samples)
        assert doc["per_family"][fam]["acc"] == float(acc)


def test_eval_single_class_warns_and_omits_auroc(trained, tmp_path, capsys):
    src = (trained / "c" / "manifest.jsonl").read_text().splitlines()
    benign_only = [l for l in src if '"label":0' in l]
    m = tmp_path / "single.jsonl"
    m.write_text("\n".join(benign_only) + "\n")
    # the manifest's relative paths must still resolve
    (tmp_path / "traces").symlink_to(trained / "c" / "traces")
    code, out, err = run(["eval", "--model", trained / "model.json",
                          "--manifest", m, "--json"], capsys)
    assert code == 0
    assert "single-class" in err
    assert json.loads(out)["auroc"] is None


# ---------------------------------------------------------------- features

def test_features_p3_row(tmp_path, capsys):
    g = DepGraph(
        nodes=(DepNode(0, "add", INT64), DepNode(1, "mul", INT64),
               DepNode(2, "xor", INT64)),
        edges=(DepEdge(0, 1, 8, "data"), DepEdge(1, 2, 8, "data")),
    )
    path = tmp_path / "p3.json"
    save_graph(g, path)
    code, out, _ = run(["features", path], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "origin,label,nodes,edges,avg_degree_c,avg_closeness_c,avg_betweenness_c"
    assert lines[1] == f"{path},,3,2,0.666667,0.777778,0.333333"


def test_features_manifest_line_count(trained, tmp_path, capsys):
    out_csv = tmp_path / "f.csv"
    code, _, _ = run(["features", "--manifest", trained / "c" / "manifest.jsonl",
                      "--csv", out_csv], capsys)
    assert code == 0
    assert len(out_csv.read_text().splitlines()) == 17


def test_features_csv_file_matches_stdout(trained, tmp_path, capsys):
    out_csv = tmp_path / "f.csv"
    run(["features", "--manifest", trained / "c" / "manifest.jsonl",
         "--csv", out_csv], capsys)
    code, out, _ = run(["features", "--manifest",
                        trained / "c" / "manifest.jsonl"], capsys)
    assert code == 0
    assert out == out_csv.read_text()


def test_features_without_inputs_is_usage_error(capsys):
    code, _, _ = run(["features"], capsys)
    assert code == 2


def test_features_with_both_inputs_is_usage_error(trained, tmp_path, capsys):
    g = tmp_path / "g.json"
    g.write_text("{}")
    code, _, _ = run(["features", g, "--manifest",
                      trained / "c" / "manifest.jsonl"], capsys)
    assert code == 2


# ---------------------------------------------------------------- help

@pytest.mark.parametrize("cmd,flags", [
    ("compile", ["--out", "--control-edges", "--mem-deps", "--label", "--family"]),
    ("corpus", ["--out", "--benign", "--malicious", "--seed", "--easy"]),
    ("train", ["--manifest", "--out", "--epochs", "--batch-size", "--lr",
               "--seed", "--layers", "--hidden", "--no-embedding",
               "--activation", "--split", "--vocab-scope", "--history"]),
    ("predict", ["--model"]),
    ("eval", ["--model", "--manifest", "--per-family", "--json"]),
    ("features", ["--manifest", "--csv"]),
])
def test_help_lists_documented_flags(cmd, flags, capsys):
    code, out, _ = run([cmd, "--help"], capsys)
    assert code == 0
    for flag in flags:
        assert flag in out
