import json

import pytest

from besqmkv.cli import ConfigError, main, parse_config


def run_cli(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


class TestParse:
    def test_defaults_and_types(self):
        cfg = parse_config("simulate", {"n": "50", "dt": "0.01"})
        assert cfg["n"] == 50 and cfg["dt"] == 0.01 and cfg["phi"] == "const:1"

    def test_rejects_unknown_and_nonpositive(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            parse_config("simulate", {"bogus": "1"})
        with pytest.raises(ConfigError, match="positive"):
            parse_config("simulate", {"dt": "0"})
        with pytest.raises(ConfigError):
            parse_config("nope", {})


class TestRun:
    def test_boundary_prints_class(self, tmp_path, capsys):
        code, out = run_cli(tmp_path, "boundary", "m_lambda=1", "phi_inf=1.2", "phi_sup=1.5")
        assert code == 0
        assert "HitsZeroNullLocalTime" in capsys.readouterr().out
        assert "HitsZeroNullLocalTime" in (out / "boundary.csv").read_text()

    def test_simulate_is_reproducible(self, tmp_path):
        args = ["simulate", "n=20", "replicas=6", "T=0.2", "dt=0.01", "seed=5", "delta=0.1", "perturb=0.1"]
        code_a, a = run_cli(tmp_path, *args, "--threads", "1", name="a")
        code_b, b = run_cli(tmp_path, *args, "--threads", "3", name="b")
        assert code_a == code_b == 0
        for f in ("summary.csv", "replicas.csv", "coupling.csv"):
            assert (a / f).read_bytes() == (b / f).read_bytes()
        manifest = json.loads((a / "manifest.json").read_text())
        assert manifest["kind"] == "simulate" and manifest["seed"] == 5
        assert set(manifest["outputs"]) == {"summary.csv", "replicas.csv", "coupling.csv"}

    def test_manifest_round_trip(self, tmp_path):
        code, a = run_cli(tmp_path, "mkv", "N=200", "T=0.2", "dt=0.01", "seed=2", "delta=0.1", name="a")
        assert code == 0
        code, b = run_cli(tmp_path, "--config", str(a / "manifest.json"), name="b")
        assert code == 0
        assert (a / "law.csv").read_bytes() == (b / "law.csv").read_bytes()

    def test_key_value_config_file(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("# stationary check\nphi=logistic:0.25,1,0.5,1.5\n")
        code, out = run_cli(tmp_path, "stationary", "--config", str(f))
        assert code == 0
        assert (out / "stationary.csv").read_text().startswith("phi_star,a,b")

    def test_exit_codes(self, tmp_path):
        assert run_cli(tmp_path, "simulate", "bogus=1")[0] == 1
        assert run_cli(tmp_path, "simulate", "lambda=point:0", "delta=0")[0] == 2
        assert run_cli(tmp_path, "stationary", "phi=const:3")[0] == 2
        assert run_cli(tmp_path, "stationary", "phi=logistic:0.25,1,0.5,1.5", "max_iter=1")[0] == 3

    def test_help_lists_kinds(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        for kind in ("simulate", "mkv", "variance", "stationary", "laplace", "boundary", "ldp", "chaos"):
            assert kind in text
