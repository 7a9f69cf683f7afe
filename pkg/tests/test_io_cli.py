import csv
import json
import logging
import subprocess
import sys

import numpy as np
import pytest

from mixknock.cli import main
from mixknock.data import Categorical, Continuous
from mixknock.errors import InputError
from mixknock.io import ColumnSchema, RunManifest, ingest_csv


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    rng = np.random.default_rng(0)
    n = 120
    Z = rng.standard_normal((n, 4))
    site = rng.choice(["north", "south", "east"], n)
    y = 1.5 * Z[:, 0] - 1.2 * Z[:, 2] + 1.0 * (site == "east") + rng.standard_normal(n)
    rows = [[f"{Z[i, 0]:.6f}", f"{Z[i, 1]:.6f}", site[i], f"{Z[i, 2]:.6f}", f"{Z[i, 3]:.6f}", f"{y[i]:.6f}"]
            for i in range(n)]
    path = tmp_path_factory.mktemp("data") / "trial.csv"
    return _write(path, ["age", "bmi", "site", "crp", "esr", "score"], rows)


def test_missing_cell_drops_row(tmp_path, caplog):
    path = _write(tmp_path / "m.csv", ["a", "b", "y"],
                  [["1.5", "2", "0.1"], ["2.5", "", "0.2"], ["3.5", "7", "0.3"], ["4.5", "NA", "0.4"]])
    with caplog.at_level(logging.WARNING):
        X, y, report = ingest_csv(path, "y", [{"name": "b", "type": "continuous"}])
    assert X.n == 2 and report.rows_dropped == 2 and report.rows_read == 4
    assert "dropped 2 of 4 rows" in caplog.text
    np.testing.assert_array_equal(y, [0.1, 0.3])


def test_labels_become_categorical_in_first_seen_order(tmp_path):
    path = _write(tmp_path / "c.csv", ["g", "x", "y"],
                  [["B", "1.1", "1"], ["A", "2.2", "2"], ["B", "3.3", "3"]] +
                  [["A", str(i + 0.5), str(i)] for i in range(10)])
    X, _, report = ingest_csv(path, "y")
    assert isinstance(X.columns[0], Categorical)
    assert X.columns[0].levels == ("B", "A")
    assert report.types == {"g": "categorical", "x": "continuous"}


def test_few_distinct_numbers_are_categorical_unless_declared(tmp_path):
    rows = [[str(i % 3), str(i)] for i in range(15)]
    path = _write(tmp_path / "k.csv", ["dose", "y"], rows)
    X, _, _ = ingest_csv(path, "y")
    assert isinstance(X.columns[0], Categorical) and X.columns[0].levels == ("0", "1", "2")
    X, _, _ = ingest_csv(path, "y", [ColumnSchema("dose", "continuous")])
    assert isinstance(X.columns[0], Continuous)


def test_schema_transform_and_drop(tmp_path):
    rows = [[str(v), str(i), str(2 * i)] for i, v in enumerate([5, 1, 9, 3, 7, 11, 13, 2, 8, 6, 4, 10])]
    path = _write(tmp_path / "s.csv", ["lab", "junk", "y"], rows)
    X, _, _ = ingest_csv(path, "y", [{"name": "lab", "transform": "normal_score"},
                                     {"name": "junk", "role": "drop"}])
    assert X.names == ["lab"]
    assert abs(X.columns[0].values.sum()) < 1e-12


def test_ingest_errors(tmp_path):
    good = _write(tmp_path / "g.csv", ["a", "y"], [["1", "2"], ["3", "4"]])
    with pytest.raises(InputError, match="response"):
        ingest_csv(good, "zz")
    with pytest.raises(InputError, match="response"):
        ingest_csv(good)
    with pytest.raises(InputError, match="fields"):
        ingest_csv(_write(tmp_path / "r.csv", ["a", "y"], [["1", "2", "3"]]), "y")
    with pytest.raises(InputError, match="no rows"):
        ingest_csv(_write(tmp_path / "e.csv", ["a", "y"], [["", "1"]]), "y")
    with pytest.raises(InputError, match="numeric"):
        ingest_csv(_write(tmp_path / "t.csv", ["a", "y"], [["1", "x"], ["2", "y"]]), "y")
    with pytest.raises(InputError, match="declared continuous"):
        ingest_csv(_write(tmp_path / "d.csv", ["a", "y"], [["p", "1"], ["q", "2"]]), "y",
                   [{"name": "a", "type": "continuous"}])
    with pytest.raises(InputError):
        ingest_csv(tmp_path / "absent.csv", "y")
    with pytest.raises(InputError):
        ColumnSchema("a", "ordinal")


def test_missing_response_exits_2_without_outputs(dataset, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["filter", "--input", str(dataset), "--out-dir", str(out)]) == 2
    assert "--response" in capsys.readouterr().err
    assert not out.exists()


def test_unknown_column_exits_2(dataset, tmp_path):
    assert main(["filter", "--input", str(dataset), "--response", "nope",
                 "--out-dir", str(tmp_path / "o")]) == 2


def test_numerical_failure_exits_3(tmp_path):
    rng = np.random.default_rng(1)
    x = rng.standard_normal(60)
    rows = [[f"{x[i]:.8f}", f"{2 * x[i]:.8f}", f"{rng.standard_normal():.4f}"] for i in range(60)]
    path = _write(tmp_path / "col.csv", ["a", "b", "y"], rows)
    assert main(["filter", "--input", str(path), "--response", "y", "--out-dir", str(tmp_path / "o")]) == 3


def test_filter_and_single_draw_multi_agree(dataset, tmp_path):
    assert main(["filter", "--input", str(dataset), "--response", "score", "--seed", "7",
                 "--out-dir", str(tmp_path / "f")]) == 0
    assert main(["multi", "--input", str(dataset), "--response", "score", "--seed", "7", "--B", "1",
                 "--out-dir", str(tmp_path / "m")]) == 0
    sel = json.loads((tmp_path / "f" / "selection.json").read_text())
    cons = json.loads((tmp_path / "m" / "consensus.json").read_text())
    assert sel["selected"] == cons["selected"]
    assert sel["selected_names"] == cons["selected_names"]
    assert sel["generator"] == "sequential"
    man = RunManifest.read(tmp_path / "f" / "manifest.json")
    assert man.command == "filter" and man.master_seed == 7
    assert list(man.input_digests) == [str(dataset)]


def test_heatmap_rows_and_rerun_determinism(dataset, tmp_path):
    out = tmp_path / "m"
    assert main(["multi", "--input", str(dataset), "--response", "score", "--B", "4",
                 "--plot", "--out-dir", str(out)]) == 0
    with open(out / "heatmap.csv") as fh:
        assert len(list(csv.reader(fh))) == 1 + 4 * 5
    assert main(["rerun", str(out / "manifest.json"), "--out-dir", str(tmp_path / "again"),
                 "--threads", "2"]) == 0
    for name in ("consensus.json", "heatmap.csv", "heatmap_freq.csv", "heatmap.svg"):
        assert (out / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_rerun_refuses_changed_input(dataset, tmp_path):
    copy = tmp_path / "copy.csv"
    copy.write_bytes(dataset.read_bytes())
    assert main(["filter", "--input", str(copy), "--response", "score", "--generator", "gaussian",
                 "--out-dir", str(tmp_path / "f")]) == 2  # categorical column blocks gaussian
    path = _write(tmp_path / "num.csv", ["a", "b", "c", "y"],
                  [[f"{v:.5f}" for v in row] for row in np.random.default_rng(2).standard_normal((40, 4))])
    assert main(["filter", "--input", str(path), "--response", "y", "--generator", "gaussian",
                 "--out-dir", str(tmp_path / "g")]) == 0
    with open(path, "a") as fh:
        fh.write("0.1,0.2,0.3,0.4\n")
    assert main(["rerun", str(tmp_path / "g" / "manifest.json")]) == 2


def test_config_file_and_flag_precedence(dataset, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"input": str(dataset), "response": "score", "q": 0.1,
                               "generator": "sequential", "out_dir": str(tmp_path / "c")}))
    assert main(["filter", "--config", str(cfg)]) == 0
    assert RunManifest.read(tmp_path / "c" / "manifest.json").config["q"] == 0.1
    assert main(["filter", "--config", str(cfg), "--q", "0.3"]) == 0
    assert RunManifest.read(tmp_path / "c" / "manifest.json").config["q"] == 0.3
    cfg.write_text(json.dumps({"input": str(dataset), "response": "score", "colour": "red"}))
    assert main(["filter", "--config", str(cfg)]) == 2


def test_simulate_curves_have_one_row_per_method_and_amplitude(tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["simulate", "--config", "desk_fig1", "--n-sim", "2", "--methods", "bh,by",
                 "--out-dir", str(out), "--plot"]) == 0
    with open(out / "curves.csv") as fh:
        rows = list(csv.DictReader(fh))
    for kind in ("equicorrelated", "ar1"):
        pairs = [(r["method"], float(r["a"])) for r in rows if r["cov_kind"] == kind]
        assert len(pairs) == len(set(pairs)) == 2 * 6
    assert (out / "fdr.svg").exists() and (out / "power.svg").exists()
    assert main(["rerun", str(out / "manifest.json"), "--out-dir", str(tmp_path / "s2"),
                 "--threads", "2"]) == 0
    for name in ("records.csv", "records.json", "curves.csv", "fdr.svg", "power.svg"):
        assert (out / name).read_bytes() == (tmp_path / "s2" / name).read_bytes()


def test_simulate_list_and_bad_config(tmp_path, capsys):
    assert main(["simulate", "--list"]) == 0
    assert "desk_fig1" in capsys.readouterr().out.split()
    assert main(["simulate", "--config", "no_such_config", "--out-dir", str(tmp_path)]) == 2
    assert main(["simulate", "--out-dir", str(tmp_path)]) == 2


def test_console_script_runs():
    res = subprocess.run([sys.executable, "-m", "mixknock.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "mixknock" in res.stdout
