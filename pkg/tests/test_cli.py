import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from collspins.cli import benchmark_fit, main
from collspins.config import SCHEMA, ConfigError, RunConfig, parse_config

BASE = """
version: 1
geometry: {kind: chain, params: {n: 3, d: 0.3}}
dipole: [0, 0, 1]
initial: {theta: 1.5707963267948966}
method: mpc
time: {t_end: 1, n_out: 5}
"""


def _write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestConfig:
    def test_defaults_and_float_parsing(self):
        cfg = parse_config(BASE + "integrator: {rtol: 1e-9, atol: 1e-12}\n")
        assert cfg.integrator.rtol == 1e-9 and cfg.integrator.atol == 1e-12
        assert cfg.phi == 0.0 and cfg.seed == 0
        assert cfg.system().n == 3

    @pytest.mark.parametrize(
        "text",
        [
            "version: 2\ngeometry: {kind: chain, params: {n: 3, d: 0.3}}\n",
            BASE + "colour: red\n",
            BASE.replace("d: 0.3", "d: -0.3"),
            BASE.replace("n: 3", "n: 0"),
            BASE.replace("n_out: 5", "n_out: 1"),
            BASE.replace("t_end: 1", "t_end: 0"),
            BASE.replace("method: mpc", "method: exact"),
            BASE.replace("{kind: chain, params: {n: 3, d: 0.3}}", "{kind: chain, params: {n: 3}}"),
            BASE.replace("{kind: chain, params: {n: 3, d: 0.3}}", "{kind: chain, params: {n: 3, d: 1, nx: 2}}"),
            BASE.replace("theta: 1.5707963267948966", "theta: 4.0"),
            BASE + "sweep: {axis: distance}\n",
            BASE + "sweep: {axis: distance, range: {start: 0, stop: 1, num: 3, scale: log}}\n",
            BASE.replace("{kind: chain, params: {n: 3, d: 0.3}}", "{kind: explicit, params: {positions: [[0, 0, 0], [1, 0]]}}"),
            "[1, 2]",
            "a: [",
        ],
    )
    def test_rejections(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_round_trip(self):
        cfg = parse_config(BASE + "sweep: {axis: theta, values: [0.1, 0.2], fit: true}\n")
        again = parse_config(cfg.dump())
        assert again == cfg

    @pytest.mark.parametrize(
        "geom,n",
        [
            ("{kind: square, params: {nx: 2, ny: 3, d: 0.5}}", 6),
            ("{kind: cubic, params: {nx: 2, ny: 2, nz: 2, d: 0.6}}", 8),
            ("{kind: hexagonal, params: {nrings: 1, d: 1.0}}", 7),
            ("{kind: explicit, params: {positions: [[0, 0, 0], [0.5, 0, 0]]}}", 2),
        ],
    )
    def test_geometries(self, geom, n):
        cfg = parse_config(BASE.replace("{kind: chain, params: {n: 3, d: 0.3}}", geom))
        assert cfg.system().n == n

    def test_sweep_values(self):
        cfg = parse_config(BASE + "sweep: {axis: distance, range: {start: 1, stop: 100, num: 3, scale: log}}\n")
        assert cfg.sweep_values() == pytest.approx([1.0, 10.0, 100.0])
        with pytest.raises(ConfigError):
            parse_config(BASE + "sweep: {axis: N, values: [2.5]}\n")

    def test_axis_overrides(self):
        cfg = parse_config(BASE)
        assert cfg.with_axis("N", 5).system().n == 5
        assert cfg.with_axis("theta", 0.2).theta == 0.2
        assert cfg.with_axis("distance", 2.0).geometry["params"]["d"] == 2.0
        assert cfg.geometry["params"]["d"] == 0.3

    def test_schema_is_closed(self):
        assert SCHEMA["additionalProperties"] is False


class TestSimulate:
    def test_csv_layout(self, tmp_path):
        out = tmp_path / "traj.csv"
        assert main(["simulate", "--config", _write(tmp_path, BASE), "--out", str(out)]) == 0
        rows = _read_csv(out)
        assert rows[0] == ["t"] + [f"s{a}_{i}" for i in range(3) for a in "xyz"]
        assert len(rows) == 6
        assert float(rows[1][0]) == 0.0 and float(rows[1][1]) == 1.0
        # shortest round-trip float text
        assert all(repr(float(v)) == v for v in rows[3])

    def test_chain_seven_columns(self, tmp_path):
        text = BASE.replace("n: 3, d: 0.3", "n: 7, d: 0.15")
        out = tmp_path / "t.csv"
        assert main(["simulate", "--config", _write(tmp_path, text), "--out", str(out)]) == 0
        header = _read_csv(out)[0]
        assert header[0] == "t" and header[1] == "sx_0" and header[-1] == "sz_6" and len(header) == 22

    def test_two_rows(self, tmp_path):
        text = BASE.replace("n_out: 5", "n_out: 2")
        out = tmp_path / "t.csv"
        main(["simulate", "--config", _write(tmp_path, text), "--out", str(out)])
        rows = _read_csv(out)
        assert len(rows) == 3 and rows[1][0] == "0.0" and rows[2][0] == "1.0"

    def test_deterministic_and_dump_round_trip(self, tmp_path):
        cfg = _write(tmp_path, BASE)
        dumped = tmp_path / "dumped.yaml"
        assert main(["simulate", "--config", cfg, "--out", str(dumped), "--dump-config"]) == 0
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["simulate", "--config", cfg, "--out", str(a)])
        main(["simulate", "--config", str(dumped), "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_state_dump(self, tmp_path):
        state = tmp_path / "s.json"
        main(["simulate", "--config", _write(tmp_path, BASE), "--out", str(tmp_path / "x.csv"),
              "--state-out", str(state)])
        doc = json.loads(state.read_text())
        assert doc["method"] == "mpc" and len(doc["state"]) == 9 + 27

    def test_method_override(self, tmp_path):
        out = tmp_path / "m.csv"
        assert main(["simulate", "--config", _write(tmp_path, BASE), "--method", "master", "--out", str(out)]) == 0

    def test_exit_codes(self, tmp_path, capsys):
        big = _write(tmp_path, BASE.replace("n: 3", "n: 20").replace("mpc", "master"), "big.yaml")
        assert main(["simulate", "--config", big, "--out", str(tmp_path / "o.csv")]) == 3
        assert "N_max_exact" in capsys.readouterr().err
        bad = _write(tmp_path, BASE + "extra: 1\n", "bad.yaml")
        assert main(["simulate", "--config", bad]) == 2
        assert main(["simulate", "--config", str(tmp_path / "missing.yaml")]) == 2
        stiff = _write(tmp_path, BASE + "integrator: {max_steps: 2}\n", "stiff.yaml")
        assert main(["simulate", "--config", stiff, "--out", str(tmp_path / "o.csv")]) == 4
        assert main(["simulate", "--config", _write(tmp_path, BASE), "--nmax-exact", "15"]) == 2

    def test_nmax_override_warns(self, tmp_path):
        with pytest.warns(UserWarning, match="MiB"):
            main(["simulate", "--config", _write(tmp_path, BASE), "--nmax-exact", "13",
                  "--out", str(tmp_path / "o.csv")])


class TestCompare:
    def test_far_apart_small_errors(self, tmp_path):
        text = BASE.replace("n: 3, d: 0.3", "n: 6, d: 10.0").replace("t_end: 1, n_out: 5", "t_end: 5, n_out: 51")
        out = tmp_path / "c.json"
        assert main(["compare", "--config", _write(tmp_path, text), "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        errs = {r["method"]: r["max_trace_distance"] for r in doc["results"]}
        assert set(errs) == {"independent", "meanfield", "mpc"}
        assert max(errs.values()) < 0.02

    def test_cube_mpc_smallest(self, tmp_path):
        text = BASE.replace("{kind: chain, params: {n: 3, d: 0.3}}", "{kind: cubic, params: {nx: 2, ny: 2, nz: 2, d: 0.6}}")
        text = text.replace("t_end: 1, n_out: 5", "t_end: 4, n_out: 41")
        out = tmp_path / "c.json"
        main(["compare", "--config", _write(tmp_path, text), "--out", str(out)])
        errs = {r["method"]: r["max_trace_distance"] for r in json.loads(out.read_text())["results"]}
        assert errs["mpc"] == min(errs.values())

    def test_master_self(self, tmp_path):
        out = tmp_path / "c.json"
        main(["compare", "--config", _write(tmp_path, BASE), "--method", "master", "--out", str(out)])
        doc = json.loads(out.read_text())
        assert doc["results"][0]["max_trace_distance"] == 0.0


class TestSweep:
    def test_theta_sweep_vanishes_at_ground(self, tmp_path):
        text = BASE.replace("n: 3, d: 0.3", "n: 4, d: 0.5") + (
            "sweep: {axis: theta, range: {start: 0, stop: 3.141592653589793, num: 5}, methods: [meanfield, mpc]}\n"
        )
        out = tmp_path / "s.csv"
        assert main(["sweep", "--config", _write(tmp_path, text), "--out", str(out), "--threads", "1"]) == 0
        rows = _read_csv(out)
        assert rows[0] == ["theta", "meanfield", "mpc"]
        first = [float(v) for v in rows[1]]
        assert first[0] == 0.0 and max(first[1:]) < 1e-12
        assert max(float(v) for v in rows[3][1:]) > 1e-3

    def test_single_value(self, tmp_path):
        text = BASE + "sweep: {axis: N, values: [3], methods: [meanfield]}\n"
        out = tmp_path / "s.csv"
        main(["sweep", "--config", _write(tmp_path, text), "--out", str(out), "--threads", "1"])
        assert len(_read_csv(out)) == 2

    def test_pool_matches_serial(self, tmp_path):
        text = BASE + "sweep: {axis: distance, values: [2.0, 0.3, 1.0], methods: [meanfield], fit: true}\n"
        cfg = _write(tmp_path, text)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["sweep", "--config", cfg, "--out", str(a), "--threads", "1"])
        main(["sweep", "--config", cfg, "--out", str(b), "--threads", "2"])
        assert a.read_bytes() == b.read_bytes()
        rows = _read_csv(a)
        assert [float(r[0]) for r in rows[1:]] == [0.3, 1.0, 2.0]
        fits = json.loads((tmp_path / "a.fit.json").read_text())
        assert fits[0]["method"] == "meanfield" and set(fits[0]["fit"]) == {"c", "k", "residual"}

    def test_convergence_mode(self, tmp_path):
        text = BASE.replace("mpc", "meanfield").replace("t_end: 1, n_out: 5", "t_end: 2, n_out: 41")
        text += "sweep: {axis: N, values: [3, 5, 9], methods: [meanfield], reference_n: 9}\n"
        out = tmp_path / "s.csv"
        assert main(["sweep", "--config", _write(tmp_path, text), "--out", str(out), "--threads", "1"]) == 0
        rows = _read_csv(out)
        assert rows[0] == ["N", "meanfield"] and float(rows[-1][1]) == 0.0

    def test_convergence_reference_too_small(self, tmp_path):
        text = BASE + "sweep: {axis: N, values: [3, 11], methods: [meanfield], reference_n: 9}\n"
        assert main(["sweep", "--config", _write(tmp_path, text), "--threads", "1"]) == 2

    def test_missing_section(self, tmp_path):
        assert main(["sweep", "--config", _write(tmp_path, BASE)]) == 2


class TestBenchmark:
    def test_table_and_fit(self, tmp_path, capsys):
        text = BASE.replace("mpc", "meanfield") + "benchmark: {ns: [10, 20, 40], repeats: 1}\n"
        out = tmp_path / "b.csv"
        assert main(["benchmark", "--config", _write(tmp_path, text), "--out", str(out)]) == 0
        rows = _read_csv(out)
        assert rows[0] == ["method", "N", "seconds"] and [r[1] for r in rows[1:]] == ["10", "20", "40"]
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["method"] == "meanfield" and "slope" in summary

    def test_master_fit_reports_base(self):
        fit = benchmark_fit("master", [4, 5, 6], np.array([1.0, 8.0, 64.0]))
        assert fit["base_per_spin"] == pytest.approx(8.0) and fit["bits_per_spin"] == pytest.approx(3.0)
        assert benchmark_fit("mpc", [10, 20], np.array([1.0, 8.0]))["slope"] == pytest.approx(3.0)

    def test_capacity(self, tmp_path):
        text = BASE.replace("mpc", "master") + "benchmark: {ns: [13]}\n"
        assert main(["benchmark", "--config", _write(tmp_path, text)]) == 3


def test_module_entry_point(tmp_path):
    cfg = _write(tmp_path, BASE)
    res = subprocess.run([sys.executable, "-m", "collspins", "simulate", "--config", cfg, "--dump-config"],
                         capture_output=True, text=True, check=True)
    assert yaml.safe_load(res.stdout)["version"] == 1
