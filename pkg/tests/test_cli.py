import csv
import subprocess
import sys

import pytest

from misrank.cli import main


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    code = main(["synth", "--out", str(out), "--n-companies", "150", "--year-range", "1998", "2004",
                 "--episode-start-rate", "0.05", "--text-length", "30", "--seed", "2"])
    assert code == 0
    return out


def write_config(path, data, out, **extra):
    lines = {
        "panel_path": str(data / "panel.csv"), "filings_dir": str(data / "filings"), "output_dir": str(out),
        "feature_set": "financial, text", "losses": "logistic", "C": "0.1, 1", "inner_k": "3",
    }
    lines.update({k: str(v) for k, v in extra.items()})
    path.write_text("".join(f"{k} = {v}\n" for k, v in lines.items()))
    return path


def run(argv, capsys):
    code = main(argv)
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def test_synth_outputs(synth_dir):
    assert {p.name for p in synth_dir.iterdir()} == {"panel.csv", "episodes.csv", "filings", "synth_params.txt"}
    assert len(list((synth_dir / "filings").iterdir())) == 150 * 7


def test_synth_prevalence_flag(tmp_path, capsys):
    code, out, _ = run(["synth", "--out", str(tmp_path), "--n-companies", "20", "--prevalence", "0.01"], capsys)
    assert code == 0 and out.splitlines()[0] == "year,pos,neg,total,neg_pos_ratio"
    code, _, err = run(["synth", "--out", str(tmp_path), "--prevalence", "0.01", "--episode-start-rate", "0.1"], capsys)
    assert code == 1 and len(err.strip().splitlines()) == 1


def test_ingest_prints_stats(synth_dir, tmp_path, capsys):
    out_csv = tmp_path / "aligned.csv"
    code, out, _ = run(["ingest", str(synth_dir / "panel.csv"), "--filings", str(synth_dir / "filings"),
                        "--out", str(out_csv)], capsys)
    assert code == 0
    rows = list(csv.reader(out.splitlines()))
    assert rows[0] == ["year", "pos", "neg", "total", "neg_pos_ratio"]
    assert [r[0] for r in rows[1:]] == [str(y) for y in range(1998, 2005)] + ["all"]
    assert out_csv.read_bytes() == (synth_dir / "panel.csv").read_bytes()


@pytest.mark.parametrize("argv, code", [
    ([], 1),
    (["frobnicate"], 1),
    (["run"], 1),
    (["synth", "--out", "x", "--n-companies", "many"], 1),
    (["synth", "--out", "x", "--delay-p", "1.5"], 1),
    (["ingest", "/nonexistent/panel.csv"], 2),
    (["run", "/nonexistent/config.txt"], 2),
])
def test_exit_codes_and_single_line_diagnostic(argv, code, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    got, out, err = run(argv, capsys)
    assert got == code
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("misrank: error:")


def test_bad_panel_is_data_error(synth_dir, tmp_path, capsys):
    lines = (synth_dir / "panel.csv").read_text().splitlines(keepends=True)
    bad = tmp_path / "panel.csv"
    bad.write_text("".join(lines[:3] + lines[2:3]))
    code, _, err = run(["ingest", str(bad)], capsys)
    assert code == 2 and "DuplicateKey" in err


def test_config_errors_are_usage_errors(synth_dir, tmp_path, capsys):
    cfg = write_config(tmp_path / "c.txt", synth_dir, tmp_path / "o", window="three")
    code, _, err = run(["run", str(cfg)], capsys)
    assert code == 1 and "ConfigError" in err
    cfg.write_text(cfg.read_text().replace("three", "3") + "colour = blue\n")
    code, _, _ = run(["run", str(cfg)], capsys)
    assert code == 1


def test_plan_only(synth_dir, tmp_path, capsys):
    cfg = write_config(tmp_path / "c.txt", synth_dir, tmp_path / "o", gap=2, label_mode="hard")
    code, out, _ = run(["run", str(cfg), "--plan-only"], capsys)
    assert code == 0
    assert out.splitlines() == [
        "test_year,gap,train_year_min,train_year_max,mode",
        "2003,2,1998,2000,hard",
        "2004,2,1999,2001,hard",
    ]
    assert not (tmp_path / "o").exists()


@pytest.fixture(scope="module")
def finished_run(synth_dir, tmp_path_factory):
    base = tmp_path_factory.mktemp("run")
    cfg = write_config(base / "c.txt", synth_dir, base / "out", label_mode="hard")
    assert main(["run", str(cfg)]) == 0
    return base, cfg


def test_run_outputs(finished_run):
    base, _ = finished_run
    out = base / "out"
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    assert len(rows) == 4 * 2  # folds x feature sets
    assert {r["feature_set"] for r in rows} == {"financial", "text"}
    assert [int(r["test_year"]) for r in rows] == sorted(int(r["test_year"]) for r in rows)
    for r in rows:
        assert r["label_mode"] == "hard" and r["loss"] == "logistic" and float(r["C"]) in (0.1, 1.0)
        assert 0 <= float(r["roc_auc"]) <= 1
    ranking = list(csv.DictReader(open(out / "rankings" / "text" / "2002.csv")))
    assert len(ranking) == 150
    assert [int(r["rank"]) for r in ranking] == list(range(1, 151))
    scores = [float(r["score"]) for r in ranking]
    assert scores == sorted(scores, reverse=True)
    assert (out / "fold_plan.csv").read_text().splitlines()[1] == "2001,0,1998,2000,hard"
    assert (out / "flip_fractions.csv").exists()


def test_rerun_is_byte_identical(finished_run, capsys):
    base, cfg = finished_run
    again = base / "again"
    assert main(["run", str(cfg), "--output-dir", str(again)]) == 0
    capsys.readouterr()
    first = sorted(p.relative_to(base / "out") for p in (base / "out").rglob("*") if p.is_file())
    second = sorted(p.relative_to(again) for p in again.rglob("*") if p.is_file())
    assert [p for p in first if p.name != "config.txt"] == [p for p in second if p.name != "config.txt"]
    for rel in first:
        if rel.name != "config.txt":  # records its own output_dir
            assert (base / "out" / rel).read_bytes() == (again / rel).read_bytes(), rel


def test_missing_restatement_date_in_hard_mode(synth_dir, tmp_path, capsys):
    lines = (synth_dir / "panel.csv").read_text().splitlines(keepends=True)
    for i, line in enumerate(lines):
        cells = line.split(",")
        if cells[2] == "1" and int(cells[1]) <= 2001:
            cells[3] = ""
            lines[i] = ",".join(cells)
            break
    (tmp_path / "panel.csv").write_text("".join(lines))
    cfg = tmp_path / "c.txt"
    cfg.write_text("panel_path = panel.csv\noutput_dir = out\nlabel_mode = hard\nlosses = logistic\nC = 1\n")
    code, _, err = run(["run", str(cfg)], capsys)
    assert code == 2 and "MissingRestatementDate" in err
    assert not (tmp_path / "out").exists()


def test_report_compares_runs(finished_run, tmp_path, capsys):
    base, _ = finished_run
    code, out, _ = run(["report", str(base / "out"), str(base / "out"), "--metric", "roc_auc"], capsys)
    assert code == 0
    rows = list(csv.DictReader(out.splitlines()))
    assert len(rows) >= 8
    assert all(float(r[next(k for k in r if k.startswith("delta_"))]) == 0 for r in rows if r["test_year"].isdigit())


def test_featurize_exports(synth_dir, tmp_path, capsys):
    cfg = write_config(tmp_path / "c.txt", synth_dir, tmp_path / "o")
    code, _, _ = run(["featurize", str(cfg), "--out", str(tmp_path / "f"), "--test-year", "2002"], capsys)
    assert code == 0
    fin, text = tmp_path / "f" / "financial" / "2002", tmp_path / "f" / "text" / "2002"
    assert {p.name for p in fin.iterdir()} >= {"train.npz", "test.npz", "train_keys.csv", "test_keys.csv", "scaler.csv"}
    assert (text / "vocab.tsv").exists()
    code, _, _ = run(["featurize", str(cfg), "--out", str(tmp_path / "f"), "--test-year", "1998"], capsys)
    assert code == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "misrank", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("misrank ")
