import csv
import json
import subprocess
import sys
from importlib.resources import files

import numpy as np
import pytest

from finsler_lab.cli import main
from finsler_lab.output import dumps, fmt, write_atomic, write_csv

SCENARIOS = files("finsler_lab") / "scenarios"


def scenario(name):
    return str(SCENARIOS / f"{name}.json")


def write_config(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


GEODESIC = {
    "metric": {"family": "riemannian", "tensor": "identity"},
    "chart": {"lower": [-2, -2], "upper": [2, 2]},
    "task": {"command": "geodesic", "p": [0.1, -0.2], "v": [0.3, 0.4], "t_max": 2.0, "samples": 11},
}


class TestFormatting:
    def test_fmt(self):
        assert fmt(0.1) == "0.10000000000000001"
        assert fmt(float("inf")) == "inf" and fmt(-np.inf) == "-inf" and fmt(np.nan) == "nan"
        assert fmt(np.int64(3)) == "3" and fmt(True) == "true" and fmt(None) == ""

    def test_json_non_finite(self):
        assert json.loads(dumps({"a": np.inf, "b": np.float32(0.5)})) == {"a": "inf", "b": 0.5}

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        write_csv(tmp_path / "x.csv", ["a"], [[1.0]])
        assert [p.name for p in tmp_path.iterdir()] == ["x.csv"]

    def test_atomic_write_failure_keeps_old(self, tmp_path):
        target = tmp_path / "x.txt"
        target.write_text("old")

        with pytest.raises(TypeError):
            write_atomic(target, object())  # not writable data
        assert target.read_text() == "old"
        assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]


class TestGeodesicCommand:
    def test_straight_rows(self, tmp_path):
        out = tmp_path / "out"
        assert main(["geodesic", "--config", write_config(tmp_path, GEODESIC), "--out", str(out)]) == 0
        rows = read_csv(out / "geodesic.csv")
        assert len(rows) == 11
        for r in rows:
            t = float(r["t"])
            assert float(r["x0"]) == pytest.approx(0.1 + 0.3 * t, abs=1e-12)
            assert float(r["x1"]) == pytest.approx(-0.2 + 0.4 * t, abs=1e-12)
            assert float(r["speed"]) == pytest.approx(0.5, abs=1e-12)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "success" and manifest["exit_code"] == 0
        assert sorted(manifest["outputs"]) == ["geodesic.csv", "geodesic.json"]
        assert len(manifest["config_hash"]) == 64

    def test_deterministic(self, tmp_path):
        cfg = write_config(tmp_path, GEODESIC)
        main(["geodesic", "--config", cfg, "--out", str(tmp_path / "a")])
        main(["geodesic", "--config", cfg, "--out", str(tmp_path / "b")])
        for name in ("geodesic.csv", "geodesic.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_bundled_scenario(self, tmp_path):
        assert main(["geodesic", "--config", scenario("randers-geodesic"), "--out", str(tmp_path)]) == 0


class TestOtherCommands:
    def test_normal_cone(self, tmp_path):
        assert main(["normal-cone", "--config", scenario("randers-normal-cone"), "--out", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "normals.csv")
        vs = sorted((float(r["v0"]), float(r["v1"])) for r in rows)
        assert vs[0] == pytest.approx((-2.0, 0.0), abs=1e-8)
        assert vs[-1] == pytest.approx((2 / 3, 0.0), abs=1e-8)

    def test_distance_field_and_cache(self, tmp_path):
        cfg = json.loads((SCENARIOS / "randers-distance.json").read_text())
        cfg["oracle"]["resolution"] = 96
        path = write_config(tmp_path, cfg)
        out = tmp_path / "out"
        assert main(["distance-field", "--config", path, "--out", str(out)]) == 0
        first = (out / "distance_field.csv").read_bytes()
        m1 = json.loads((out / "manifest.json").read_text())
        assert main(["distance-field", "--config", path, "--out", str(out)]) == 0
        m2 = json.loads((out / "manifest.json").read_text())
        assert (out / "distance_field.csv").read_bytes() == first
        assert m1["cache"]["hits"] == 0 and m2["cache"]["hits"] == 1
        assert len(list((out / ".cache").glob("*.fld"))) == 1
        queries = read_csv(out / "distance_queries.csv")
        d = [float(r["d"]) for r in queries]
        assert d[0] == pytest.approx(1.5, rel=0.03) and d[1] == pytest.approx(0.5, rel=0.03)

    def test_no_cache_flag(self, tmp_path):
        cfg = json.loads((SCENARIOS / "randers-distance.json").read_text())
        cfg["oracle"]["resolution"] = 32
        path = write_config(tmp_path, cfg)
        assert main(["distance-field", "--config", path, "--out", str(tmp_path), "--no-cache"]) == 0
        assert not (tmp_path / ".cache").exists()

    def test_cut_value(self, tmp_path):
        cfg = json.loads((SCENARIOS / "circle-cut.json").read_text())
        cfg["oracle"]["resolution"] = 128
        cfg["task"].update(resolution=4, fan_resolution=16, sphere_resolution=2)
        assert main(["cut-value", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "cut_values.csv")
        assert len(rows) == 8
        values = {r["side"]: [] for r in rows}
        for r in rows:
            values[r["side"]].append(r["cut_value"])
        finite = [float(v) for vals in values.values() for v in vals if v != "inf"]
        assert len(finite) == 4 and all(abs(v - 1.0) < 1e-2 for v in finite)
        assert sum(v == "inf" for vals in values.values() for v in vals) == 4

    def test_tube_and_verification_exit_codes(self, tmp_path):
        base = json.loads((SCENARIOS / "circle-verify.json").read_text())
        base["oracle"]["resolution"] = 128
        base["task"].update(resolution=12, sphere_resolution=2)
        ok = dict(base, task=dict(base["task"], epsilon=0.9))
        bad = dict(base, task=dict(base["task"], epsilon=1.1))
        assert main(["verify-tube", "--config", write_config(tmp_path, ok, "ok.json"),
                     "--out", str(tmp_path / "ok")]) == 0
        assert main(["verify-tube", "--config", write_config(tmp_path, bad, "bad.json"),
                     "--out", str(tmp_path / "bad")]) == 2
        report = json.loads((tmp_path / "bad" / "verify_tube.json").read_text())
        inj = next(c for c in report["checks"] if c["name"] == "injectivity")
        assert not inj["passed"] and inj["witnesses"]
        manifest = json.loads((tmp_path / "bad" / "manifest.json").read_text())
        assert manifest["status"] == "verification-failed"


class TestErrors:
    def test_invalid_config_exit_1_with_manifest(self, tmp_path, capsys):
        bad = dict(GEODESIC, extra=True)
        assert main(["geodesic", "--config", write_config(tmp_path, bad), "--out", str(tmp_path / "o")]) == 1
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert manifest["status"] == "error"
        assert manifest["errors"][0]["pointer"] == "/extra"
        assert "/extra" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["geodesic", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1
        assert (tmp_path / "manifest.json").exists()

    def test_bad_threads(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["geodesic", "--config", "x.json", "--threads", "0"])

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            main(["teleport", "--config", "x.json"])

    def test_console_script(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "finsler_lab.cli", "--version"], capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout.strip()
