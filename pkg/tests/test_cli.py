import json
import math

import numpy as np
import pytest

from cdnarms import io, presets
from cdnarms.cli import main
from cdnarms.inference import forward_backward
from cdnarms.saem import FitConfig, fit
from cdnarms.simulate import simulate


def write(path, text):
    path.write_text(text)
    return path


def run(*argv):
    return main([str(a) for a in argv])


class TestIngest:
    def test_enso_sized_file(self, tmp_path):
        x = np.random.default_rng(0).standard_normal(860)
        lines = ["date,anom"] + [f"{1950 + i // 12}-{i % 12 + 1:02d},{float(v)!r}" for i, v in enumerate(x)]
        path = write(tmp_path / "enso.csv", "\n".join(lines) + "\n")
        got = io.ingest_csv(path, column="anom", history=24, date_column="date")
        assert got.rows == 860 and got.series.H == 24 and got.series.T == 835
        assert got.date_range == ("1950-01", "2021-08")
        assert np.array_equal(got.series.data[:, 0], x)

    def test_headerless_single_column(self, tmp_path):
        path = write(tmp_path / "x.csv", "\n".join(str(v) for v in range(30)) + "\n")
        got = io.ingest_csv(path, history=5)
        assert got.series.H == 5 and got.series[0][0] == 5.0

    def test_default_column_is_x(self, tmp_path):
        path = write(tmp_path / "s.csv", "n,x\n" + "\n".join(f"{i},{i * 2}" for i in range(10)))
        assert io.ingest_csv(path, history=2).series[0][0] == 4.0

    def test_empty_file(self, tmp_path):
        with pytest.raises(io.DataError):
            io.ingest_csv(write(tmp_path / "e.csv", ""))
        with pytest.raises(io.DataError):
            io.ingest_csv(write(tmp_path / "h.csv", "x\n"))

    def test_bad_cell_names_line(self, tmp_path):
        text = "x\n" + "\n".join(["1.0"] * 10) + "\noops\n" + "\n".join(["1.0"] * 30)
        with pytest.raises(io.DataError, match="line 12"):
            io.ingest_csv(write(tmp_path / "b.csv", text), history=5)
        text = "a,x\n" + "\n".join(["1,2"] * 5 + ["1,"] + ["1,2"] * 30)
        with pytest.raises(io.DataError, match="line 7"):
            io.ingest_csv(write(tmp_path / "m.csv", text), history=5)

    def test_too_short(self, tmp_path):
        with pytest.raises(io.DataError):
            io.ingest_csv(write(tmp_path / "t.csv", "1\n2\n3\n"), history=2)

    def test_unknown_column(self, tmp_path):
        with pytest.raises(io.DataError):
            io.ingest_csv(write(tmp_path / "u.csv", "x\n1\n2\n3\n4\n"), column="y", history=1)


class TestRoundTrip:
    def test_series(self, tmp_path):
        sim = simulate(presets.enso_two_layer(), 50, seed=1, history_length=24)
        path = io.write_series(tmp_path / "s.csv", sim.series, sim.regimes, {"seed": 1})
        series, regimes = io.read_series(path)
        assert series == sim.series
        assert np.array_equal(regimes, sim.regimes)
        assert io.read_csv_header(path) == {"seed": 1}

    def test_fit_result(self, tmp_path):
        truth = presets.enso_two_layer(delay=(3.5, 9.5))
        s = simulate(truth, 150, seed=2, history_length=24).series
        res = fit(s, truth, FitConfig(max_iter=2, restarts=1, integer_delays=False, seed=1))
        path = io.write_json(tmp_path / "fit.json", io.fit_to_dict(res), {"seed": 1})
        again = io.load_model(path)
        assert again == res.model
        for k, v in res.model.parameters().items():
            assert again.parameters()[k] == pytest.approx(v, abs=1e-15, rel=0)
        assert io.read_json(path)["loglik_trace"] == res.loglik_trace.tolist()

    def test_ar_model(self):
        model = presets.ar_model([[0.7, 0.3], [0.4, 0.6]], [[0.1, 0.2], [0.3, -0.1]], [1.0, 2.0])
        assert io.model_from_dict(json.loads(json.dumps(io.model_to_dict(model)))) == model

    def test_csv_floats_round_trip(self):
        for v in (0.1, 1 / 3, math.pi * 1e-300, -2.5e17):
            assert float(io.fmt(v)) == v


@pytest.fixture
def simulated(tmp_path):
    out = tmp_path / "sim"
    cfg = write(tmp_path / "sim.ini", "[simulate]\nT = 300\n")
    assert run("simulate", "--config", cfg, "--seed", 5, "--out-dir", out) == 0
    return out


class TestCommands:
    def test_simulate_outputs_and_header(self, simulated):
        header = io.read_csv_header(simulated / "series.csv")
        assert header["seed"] == 5 and header["command"] == "simulate"
        assert "simulate.T" not in header["defaults_applied"]
        assert "fit.restarts" in header["defaults_applied"]
        series, regimes = io.read_series(simulated / "series.csv")
        assert series.T == 300 and series.H == 24 and regimes.shape == (301,)
        assert io.load_model(simulated / "model.json") == presets.enso_two_layer()

    def test_recorded_seed_reproduces(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("simulate", "--out-dir", a) == 0
        seed = io.read_csv_header(a / "series.csv")["seed"]
        assert io.read_json(a / "model.json")["header"]["settings"]["run"]["seed"] == str(seed)
        assert run("simulate", "--out-dir", b, "--seed", seed) == 0
        assert (a / "series.csv").read_bytes() == (b / "series.csv").read_bytes()

    def test_fit_with_zero_iterations_echoes_start(self, simulated, tmp_path):
        cfg = write(tmp_path / "fit.ini", "[fit]\nstart = model\nmax_iter = 0\n")
        out = tmp_path / "fit"
        assert run("fit", "--config", cfg, "--data", simulated / "series.csv", "--out-dir", out) == 0
        doc = io.read_json(out / "fit.json")
        truth = presets.enso_two_layer()
        assert doc["parameters"] == truth.parameters()
        series = io.ingest_csv(simulated / "series.csv", history=24).series
        assert doc["loglik"] == forward_backward(truth, series).loglik
        assert doc["header"]["data"]["T"] == 300

    def test_fit_is_reproducible(self, simulated, tmp_path):
        docs = []
        for name in ("f1", "f2"):
            out = tmp_path / name
            assert run("fit", "--data", simulated / "series.csv", "--iters", 2, "--restarts", 2,
                       "--seed", 3, "--out-dir", out) == 0
            docs.append((out / "fit.json").read_text())
        assert docs[0] == docs[1]

    def test_select(self, simulated, tmp_path):
        out = tmp_path / "sel"
        assert run("select", "--data", simulated / "series.csv", "--layers", "1:2", "--iters", 2,
                   "--restarts", 1, "--seed", 1, "--out-dir", out) == 0
        header = io.read_csv_header(out / "scores.csv")
        rows = (out / "scores.csv").read_text().splitlines()[len(header):]
        assert rows[0] == "L,loglik,param_count,penalty,penalized,T,selected"
        table = [r.split(",") for r in rows[1:]]
        assert [r[0] for r in table] == ["1", "2"]
        for r in table:
            assert float(r[1]) - float(r[3]) == pytest.approx(float(r[4]), abs=1e-9)
        assert sum(int(r[6]) for r in table) == 1
        assert (out / "fit_L1.json").exists() and (out / "fit_L2.json").exists()

    def test_stability(self, tmp_path):
        cfg = write(tmp_path / "st.ini", "[model]\npreset = custom\nkind = ar\ntransition = 0.6 0.4; 0.3 0.7\n"
                    "coefficients = 0.3; 0.9\nsigma = 1, 1\n[stability]\norders = 1, 2\n")
        out = tmp_path / "st"
        assert run("stability", "--config", cfg, "--out-dir", out) == 0
        doc = io.read_json(out / "stability.json")
        assert doc["complete"] and len(doc["moments"]) == 2
        assert doc["stationary"] == pytest.approx([3 / 7, 4 / 7])
        assert doc["contraction_below_threshold"] and not doc["contraction_below_zero"]

    def test_diagnose_with_given_model(self, simulated, tmp_path):
        cfg = write(tmp_path / "d.ini", f"[diagnose]\nmodel = {simulated / 'model.json'}\nn_sims = 5\nmax_lag = 12\n")
        out = tmp_path / "diag"
        assert run("diagnose", "--config", cfg, "--data", simulated / "series.csv", "--seed", 2, "--out-dir", out) == 0
        acf = (out / "acf.csv").read_text().splitlines()
        qq = (out / "qq.csv").read_text().splitlines()
        assert acf[-1].startswith("12,") and sum(not l.startswith("#") for l in acf) == 14
        assert sum(not l.startswith("#") for l in qq) == 10
        assert not (out / "fit.json").exists()

    def test_experiment_shape(self, tmp_path):
        cfg = write(tmp_path / "e.ini", "[experiment]\nreplicates = 5\nlengths = 250, 1000\n"
                    "[fit]\nmax_iter = 1\nrestarts = 1\n")
        out = tmp_path / "exp"
        assert run("experiment", "--config", cfg, "--seed", 4, "--out-dir", out) == 0
        header = io.read_csv_header(out / "errors.csv")
        lines = (out / "errors.csv").read_text().splitlines()[len(header) + 1:]
        by_param = {}
        for line in lines:
            rep, T, name, _ = line.split(",")
            by_param.setdefault(name, []).append((int(rep), int(T)))
        assert by_param.keys() >= {"M", "a[1]", "b[2]", "sigma[1]", "D[2]"}
        for records in by_param.values():
            assert sorted(records) == [(r, T) for r in range(5) for T in (250, 1000)]
        det = (out / "detections.csv").read_text().splitlines()
        assert det[-2].startswith("250,") and det[-1].startswith("1000,")


class TestErrors:
    def test_unknown_command(self, tmp_path):
        assert run("frobnicate", "--out-dir", tmp_path) == 2
        rec = json.loads((tmp_path / "error.json").read_text())
        assert rec["exit_code"] == 2 and rec["error"] == "UsageError"

    def test_bad_config(self, tmp_path):
        cfg = write(tmp_path / "bad.ini", "[fit]\nbogus = 1\n")
        assert run("simulate", "--config", cfg, "--out-dir", tmp_path) == 2
        assert "bogus" in json.loads((tmp_path / "error.json").read_text())["message"]
        assert run("simulate", "--config", tmp_path / "missing.ini", "--out-dir", tmp_path) == 2

    def test_bad_value(self, tmp_path):
        cfg = write(tmp_path / "v.ini", "[simulate]\nT = many\n")
        assert run("simulate", "--config", cfg, "--out-dir", tmp_path) == 2

    def test_missing_data(self, tmp_path):
        assert run("fit", "--out-dir", tmp_path) == 2
        assert run("fit", "--data", tmp_path / "nope.csv", "--out-dir", tmp_path) == 1

    def test_fit_failure(self, tmp_path):
        lines = ["x"] + ["0.0"] * 40 + ["1e308", "-1e308"] + ["0.0"] * 40
        data = write(tmp_path / "d.csv", "\n".join(lines) + "\n")
        cfg = write(tmp_path / "f.ini", "[fit]\nrestarts = 2\nmax_iter = 1\n")
        code = run("fit", "--config", cfg, "--data", data, "--out-dir", tmp_path)
        rec = json.loads((tmp_path / "error.json").read_text())
        assert code == 1 and rec["error"] == "FitError" and len(rec["diagnostics"]) == 2
