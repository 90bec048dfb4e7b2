import json

import numpy as np
import pytest

from vvlcml.cli import main
from vvlcml.dataset import DS2_HEADER


@pytest.fixture(scope="module")
def small_ds2(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["gen", "--task", "pathloss", "--count", "400", "--seed", "5",
                 "--out", str(out)]) == 0
    return out / "ds2.csv"


def test_gen_writes_csv_and_report(tmp_path):
    out = tmp_path / "g"
    assert main(["gen", "--task", "pathloss", "--count", "50", "--seed", "1",
                 "--out", str(out)]) == 0
    csv = (out / "ds2.csv").read_text().splitlines()
    assert csv[0] == DS2_HEADER
    assert len(csv) == 51
    report = json.loads((out / "report.json").read_text())
    assert report["n_samples"] == 50
    assert report["config"]["seed"] == 1


def test_gen_cfr(tmp_path):
    out = tmp_path / "g1"
    assert main(["gen", "--task", "cfr", "--count", "30", "--seed", "2",
                 "--out", str(out)]) == 0
    assert (out / "ds1.csv").exists()


def test_fit_all_families(small_ds2, tmp_path):
    out = tmp_path / "f"
    assert main(["fit", "--data", str(small_ds2), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report["fits"]) == {"lambertian", "linear", "exponential", "two_term"}
    for fit in report["fits"].values():
        assert np.isfinite(fit["rmse_db"])


def test_fit_single_family_alias(small_ds2, tmp_path):
    out = tmp_path / "f2"
    assert main(["fit", "--model", "twoterm", "--data", str(small_ds2),
                 "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert list(report["fits"]) == ["two_term"]


def test_train_eval_round_trip(small_ds2, tmp_path):
    train_out = tmp_path / "t"
    assert main(["train", "--task", "pathloss", "--model", "forest",
                 "--data", str(small_ds2), "--seed", "3", "--out", str(train_out)]) == 0
    assert (train_out / "model.json").exists()
    eval_out = tmp_path / "e"
    assert main(["eval", "--task", "pathloss",
                 "--model-file", str(train_out / "model.json"),
                 "--data", str(small_ds2), "--seed", "3", "--out", str(eval_out)]) == 0
    report = json.loads((eval_out / "report.json").read_text())
    assert report["eval"]["n"] == 400
    assert (eval_out / "residual_cdf.csv").exists()


def test_train_with_fraction(small_ds2, tmp_path):
    out = tmp_path / "tf"
    assert main(["train", "--task", "pathloss", "--model", "forest",
                 "--data", str(small_ds2), "--seed", "3", "--train-frac", "30",
                 "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    n_kept = 400 - report["outlier_filter"]["removed"]
    split = report["split"]
    assert split["train"] + split["validation"] + split["test"] == n_kept
    assert split["train"] / n_kept == pytest.approx(0.3, abs=0.01)


def test_gridsearch_writes_table(small_ds2, tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"params": {"spread": [0.5, 2.0]}}))
    out = tmp_path / "gs"
    assert main(["gridsearch", "--task", "pathloss", "--model", "rbf",
                 "--data", str(small_ds2), "--seed", "4", "--grid", str(grid),
                 "--out", str(out)]) == 0
    table = (out / "grid_results.csv").read_text().splitlines()
    assert table[0] == "spread,val_rmse"
    assert len(table) == 3
    report = json.loads((out / "report.json").read_text())
    assert report["grid_search"]["best_params"]["spread"] in (0.5, 2.0)


def test_importance_csv(small_ds2, tmp_path):
    out = tmp_path / "imp"
    assert main(["importance", "--data", str(small_ds2), "--seed", "5",
                 "--repeats", "2", "--out", str(out)]) == 0
    lines = (out / "importance.csv").read_text().splitlines()
    assert lines[0] == "feature,raw,normalized"
    assert len(lines) == 7
    report = json.loads((out / "report.json").read_text())
    assert report["ranking"][0]["feature"] == "distance_m"


def test_report_cfr(tmp_path):
    out = tmp_path / "rc"
    assert main(["report", "--task", "cfr", "--model", "rbf", "--seed", "6",
                 "--config", _gen_config(tmp_path, 200), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert len(report["per_frequency_rmse"]) == 19


def test_report_sweep(small_ds2, tmp_path):
    out = tmp_path / "rs"
    assert main(["report", "--task", "pathloss", "--model", "forest",
                 "--data", str(small_ds2), "--seed", "7", "--sweep",
                 "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert [row["train_fraction"] for row in report["sweep"]] == [0.1, 0.3, 0.6, 0.8, 0.9]


def _gen_config(tmp_path, count):
    from vvlcml.synthgen import GeneratorConfig
    path = tmp_path / "gen.json"
    path.write_text(GeneratorConfig(sample_count=count).to_json())
    return str(path)


def test_missing_data_file_is_stage_tagged(tmp_path, capsys):
    out = tmp_path / "x"
    code = main(["fit", "--data", str(tmp_path / "nope.csv"), "--out", str(out)])
    assert code == 1
    assert "[ingest]" in capsys.readouterr().err


def test_cfr_forest_rejected(tmp_path, capsys):
    code = main(["train", "--task", "cfr", "--model", "forest",
                 "--seed", "1", "--out", str(tmp_path / "y")])
    assert code == 1
    assert "[config]" in capsys.readouterr().err


def test_bad_model_name_rejected_by_parser():
    with pytest.raises(SystemExit):
        main(["train", "--model", "nonsense"])


def test_eval_rejects_garbage_model(tmp_path, capsys):
    bad = tmp_path / "m.json"
    bad.write_text("{\"kind\": \"unknown\"}")
    data = tmp_path / "d.csv"
    data.write_text(DS2_HEADER + "\n10.0,100.0,0.0,1,0,40.0,0.0,0.0,0.0\n")
    code = main(["eval", "--model-file", str(bad), "--data", str(data),
                 "--out", str(tmp_path / "o")])
    assert code == 1
    assert "[persist]" in capsys.readouterr().err
