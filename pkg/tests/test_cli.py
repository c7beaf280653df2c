import json
import os

import numpy as np
import pytest

from gacm.cli import main, read_data_csv


def run_cli(*args):
    return main([str(a) for a in args])


def read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


SIM = ["simulate", "--n", 120, "--p", 12, "--seed", 3]


class TestSimulate:
    def test_writes_expected_shape(self, tmp_path):
        assert run_cli(*SIM, "--out", tmp_path) == 0
        lines = read_lines(tmp_path / "data.csv")
        assert lines[0].startswith("# config: ")
        header = lines[1].split(",")
        assert header == ["y"] + [f"x{k}" for k in (1, 2)] + [f"t{l + 1}" for l in range(12)]
        assert len(lines) == 2 + 120

    def test_same_seed_identical_files(self, tmp_path):
        run_cli(*SIM, "--out", tmp_path)
        first_data = (tmp_path / "data.csv").read_bytes()
        first_truth = (tmp_path / "truth.json").read_bytes()
        run_cli(*SIM, "--out", tmp_path)
        assert (tmp_path / "data.csv").read_bytes() == first_data
        assert (tmp_path / "truth.json").read_bytes() == first_truth

    def test_truth_round_trips(self, tmp_path):
        from gacm.simlab import TruthSpec

        run_cli(*SIM, "--out", tmp_path)
        payload = json.loads((tmp_path / "truth.json").read_text())
        truth = TruthSpec.from_dict(payload["truth"])
        assert truth.signal == (0, 1, 2, 3)
        assert payload["config"]["seed"] == 3

    def test_config_embedded_in_header(self, tmp_path):
        run_cli(*SIM, "--out", tmp_path)
        header = read_lines(tmp_path / "data.csv")[0]
        cfg = json.loads(header.removeprefix("# config: "))
        assert cfg["n"] == 120 and cfg["p"] == 12 and cfg["command"] == "simulate"


class TestReadData:
    def test_round_trip(self, tmp_path):
        run_cli(*SIM, "--out", tmp_path)
        ds = read_data_csv(tmp_path / "data.csv")
        assert ds.n == 120 and ds.d == 2 and ds.p == 12

    def test_malformed_header_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("y,x1,wrong,t1\n0,0.1,0.2,1\n1,0.9,0.8,0\n")
        code = run_cli("select", "--data", bad, "--out", tmp_path)
        assert code == 2
        assert "wrong" in capsys.readouterr().err

    def test_missing_value_rejected(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("y,x1,t1\n0,,1\n1,0.9,0\n")
        with pytest.raises(Exception, match="x1"):
            read_data_csv(bad)

    def test_non_numeric_rejected(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("y,x1,t1\n0,abc,1\n1,0.9,0\n")
        code = run_cli("select", "--data", bad, "--out", tmp_path)
        assert code == 2


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("pipeline")
    assert run_cli("simulate", "--n", 250, "--p", 16, "--seed", 11, "--out", path) == 0
    return path


@pytest.fixture(scope="module")
def selected_dir(sim_dir):
    assert run_cli("select", "--data", sim_dir / "data.csv", "--out", sim_dir, "--seed", 11) == 0
    return sim_dir


class TestSelect:
    def test_selection_json_schema(self, selected_dir):
        payload = json.loads((selected_dir / "selection.json").read_text())
        for key in ("config", "i1", "stage1", "stage2", "inverse_weights", "empty_selection"):
            assert key in payload
        assert payload["stage1"]["lambda"] == sorted(payload["stage1"]["lambda"], reverse=True)
        assert len(payload["inverse_weights"]) == 16

    def test_signal_recovered_majority(self, selected_dir):
        payload = json.loads((selected_dir / "selection.json").read_text())
        assert set(payload["i1"]) >= {1, 2, 3} or set(payload["i1"]) >= {1, 2, 4}

    def test_idempotent_rerun(self, selected_dir, tmp_path):
        out2 = tmp_path / "again"
        run_cli("select", "--data", selected_dir / "data.csv", "--out", out2, "--seed", 11)
        a = json.loads((selected_dir / "selection.json").read_text())
        b = json.loads((out2 / "selection.json").read_text())
        a["config"].pop("out"), b["config"].pop("out")
        assert a == b


class TestScb:
    def test_band_files(self, selected_dir):
        code = run_cli(
            "scb", "--data", selected_dir / "data.csv", "--out", selected_dir,
            "--boot", 12, "--grid", 10, "--seed", 5,
        )
        assert code == 0
        payload = json.loads((selected_dir / "selection.json").read_text())
        i1 = payload["i1"]
        assert i1
        for l in i1:
            for k in (1, 2):
                for variant in ("unsmoothed", "smoothed"):
                    lines = read_lines(selected_dir / f"band_{l}_{k}_{variant}.csv")
                    assert lines[1] == "grid,center,sd,lower,upper"
                    assert len(lines) == 2 + 11
        # smoothed and unsmoothed centers differ
        l, k = i1[0], 1
        u = np.loadtxt(selected_dir / f"band_{l}_{k}_unsmoothed.csv", delimiter=",", skiprows=2)
        s = np.loadtxt(selected_dir / f"band_{l}_{k}_smoothed.csv", delimiter=",", skiprows=2)
        assert not np.allclose(u[:, 1], s[:, 1])
        assert np.all(u[:, 3] <= u[:, 1]) and np.all(u[:, 1] <= u[:, 4])

    def test_rerun_byte_identical(self, selected_dir, tmp_path):
        out2 = tmp_path / "scb2"
        os.makedirs(out2)
        import shutil

        shutil.copy(selected_dir / "selection.json", out2 / "selection.json")
        args = ["scb", "--data", selected_dir / "data.csv", "--boot", 12, "--grid", 10, "--seed", 5]
        run_cli(*args, "--out", out2)
        payload = json.loads((selected_dir / "selection.json").read_text())
        l, k = payload["i1"][0], 1
        name = f"band_{l}_{k}_smoothed.csv"
        first = (selected_dir / name).read_bytes()
        second = (out2 / name).read_bytes()
        # config headers differ in out path; compare data rows
        assert first.split(b"\n", 1)[1].split(b"\n", 1)[1] == second.split(b"\n", 1)[1].split(b"\n", 1)[1]

    def test_missing_selection_errors(self, sim_dir, tmp_path):
        code = run_cli("scb", "--data", sim_dir / "data.csv", "--out", tmp_path / "nowhere")
        assert code == 2


class TestBench:
    def test_smoke_tables(self, tmp_path):
        code = run_cli(
            "bench", "--reps", 2, "--n", 150, "--p", 12, "--boot", 8,
            "--grid", 8, "--seed", 2, "--out", tmp_path,
        )
        assert code == 0
        t1 = read_lines(tmp_path / "table1.csv")
        assert t1[1] == "method,C,O,I,TP,FP,MR"
        assert t1[2].startswith("AGL,") and t1[3].startswith("GL,")
        t2 = read_lines(tmp_path / "table2.csv")
        assert t2[1].startswith("curve,cov_unsmoothed,")
        reps = json.loads((tmp_path / "reps.json").read_text())
        assert len(reps["per_rep"]) == 2

    def test_aggregate_matches_per_rep_log(self, tmp_path):
        run_cli(
            "bench", "--reps", 3, "--n", 150, "--p", 12, "--boot", 8,
            "--grid", 8, "--seed", 4, "--out", tmp_path, "--no-bands",
        )
        reps = json.loads((tmp_path / "reps.json").read_text())["per_rep"]
        rows = read_lines(tmp_path / "table1.csv")
        agl = rows[2].split(",")
        tp = np.mean([r["agl"]["tp"] for r in reps])
        assert float(agl[4]) == pytest.approx(tp)

    def test_threads_do_not_change_output(self, tmp_path):
        a = tmp_path / "t1"
        b = tmp_path / "t8"
        base = ["bench", "--reps", 2, "--n", 150, "--p", 12, "--boot", 8, "--grid", 8, "--seed", 6]
        run_cli(*base, "--out", a, "--threads", 1)
        run_cli(*base, "--out", b, "--threads", 8)
        for name in ("table1.csv", "table2.csv"):
            ta = (a / name).read_text().splitlines()[1:]
            tb = (b / name).read_text().splitlines()[1:]
            assert ta == tb


class TestConfigHandling:
    def test_config_file_overrides(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"q": 3, "nu": 0.25}))
        run_cli("simulate", "--n", 100, "--p", 8, "--out", tmp_path, "--config", cfg)
        header = json.loads(read_lines(tmp_path / "data.csv")[0].removeprefix("# config: "))
        assert header["q"] == 3 and header["nu"] == 0.25

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        code = run_cli("simulate", "--out", tmp_path, "--config", cfg)
        assert code == 2

    def test_env_threads_fallback(self, monkeypatch):
        from gacm.cli import _build_parser, config_from_args

        monkeypatch.setenv("GACM_THREADS", "2")
        args = _build_parser().parse_args(["simulate"])
        assert config_from_args(args).threads == 2

    def test_invalid_alpha_rejected(self, tmp_path):
        code = run_cli("simulate", "--out", tmp_path, "--alpha", 1.5)
        assert code == 1
