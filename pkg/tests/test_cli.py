import json
from pathlib import Path

import numpy as np
import pytest

from miximpute.cli import main, parse_loss
from miximpute.errors import ValidationError
from miximpute.rng import RngStream


def write_toy_csv(path, n=80, seed=3, binary_bad=False):
    gen = RngStream(seed).gen
    lines = ["x1,y1,y2"]
    for i in range(n):
        x = gen.standard_normal()
        y1 = 1.0 + x + 0.5 * gen.standard_normal()
        y2 = 1.0 if gen.random() < 0.5 else 0.0
        c1 = "NA" if gen.random() < 0.25 else f"{y1:.6f}"
        c2 = "NA" if gen.random() < 0.25 else f"{y2:.0f}"
        lines.append(f"{x:.6f},{c1},{c2}")
    if binary_bad:
        lines.append("0.0,1.0,2")
    Path(path).write_text("\n".join(lines) + "\n")


def impute_config(tmp_path, csv_path, g=3, m=5):
    cfg = f"""
seed = 7
out = "{tmp_path}/out"

[input]
path = "{csv_path}"
[input.responses]
y1 = "continuous"
y2 = "binary"

[model]
g = {g}

[chain]
burn_in = 20
keep = 50
m_imputations = {m}
"""
    p = tmp_path / "impute.toml"
    p.write_text(cfg)
    return p


class TestImputeCommand:
    def test_writes_m_files(self, tmp_path):
        csv = tmp_path / "toy.csv"
        write_toy_csv(csv)
        cfg = impute_config(tmp_path, csv, m=5)
        assert main(["impute", "--config", str(cfg)]) == 0
        outs = sorted((tmp_path / "out").glob("imputed_*.csv"))
        assert len(outs) == 5
        assert (tmp_path / "out" / "manifest.json").exists()
        assert (tmp_path / "out" / "diagnostics.csv").exists()

    def test_invalid_binary_exits_1_naming_column(self, tmp_path, capsys):
        csv = tmp_path / "bad.csv"
        write_toy_csv(csv, binary_bad=True)
        cfg = impute_config(tmp_path, csv)
        with pytest.raises(SystemExit) as exc:
            main(["impute", "--config", str(cfg)])
        assert exc.value.code == 1
        assert "y2" in capsys.readouterr().err

    def test_seed_determinism_byte_identical(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
        csv = tmp_path / "toy.csv"
        write_toy_csv(csv)
        cfg = impute_config(tmp_path, csv)
        for out in ("a", "b"):
            assert main(["impute", "--config", str(cfg), "--seed", "11",
                         "--out", str(tmp_path / out)]) == 0
        for f in sorted((tmp_path / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_unknown_config_key_rejected(self, tmp_path):
        csv = tmp_path / "toy.csv"
        write_toy_csv(csv)
        p = tmp_path / "bad.toml"
        p.write_text(f'[input]\npath = "{csv}"\nwat = 1\n')
        with pytest.raises(SystemExit) as exc:
            main(["impute", "--config", str(p)])
        assert exc.value.code == 1

    def test_set_override(self, tmp_path):
        csv = tmp_path / "toy.csv"
        write_toy_csv(csv)
        cfg = impute_config(tmp_path, csv, m=5)
        assert main(["impute", "--config", str(cfg), "--out", str(tmp_path / "o2"),
                     "--set", "chain.m_imputations=2"]) == 0
        assert len(list((tmp_path / "o2").glob("imputed_*.csv"))) == 2


class TestIlbCommand:
    def test_complete_data_mean(self, tmp_path):
        gen = RngStream(5).gen
        vals = gen.standard_normal(400)
        lines = ["y1"] + [f"{v:.8f}" for v in vals]
        csv = tmp_path / "c.csv"
        csv.write_text("\n".join(lines) + "\n")
        cfg = tmp_path / "ilb.toml"
        cfg.write_text(f"""
out = "{tmp_path}/out"
[input]
path = "{csv}"
[input.responses]
y1 = "continuous"
[ilb]
loss = "mean:y1"
b = 300
""")
        assert main(["ilb", "--config", str(cfg), "--seed", "2"]) == 0
        summary = json.loads((tmp_path / "out" / "ilb_summary.json").read_text())
        se = vals.std() / np.sqrt(400)
        assert abs(summary["mean"][0] - vals.mean()) < 4 * se / np.sqrt(300) * 20
        assert (tmp_path / "out" / "ilb_samples.csv").exists()

    def test_quantile_loss_runs(self, tmp_path):
        csv = tmp_path / "toy.csv"
        write_toy_csv(csv)
        cfg = tmp_path / "ilb.toml"
        cfg.write_text(f"""
out = "{tmp_path}/out"
[input]
path = "{csv}"
[input.responses]
y1 = "continuous"
y2 = "binary"
[model]
g = 2
[chain]
burn_in = 10
keep = 40
m_imputations = 2
[ilb]
loss = "quantile:y1:0.5"
b = 40
""")
        assert main(["ilb", "--config", str(cfg), "--seed", "3"]) == 0
        summary = json.loads((tmp_path / "out" / "ilb_summary.json").read_text())
        lo, hi = summary["interval"]["lower"][0], summary["interval"]["upper"][0]
        assert lo <= summary["mean"][0] <= hi

    def test_fixed_mode_runs(self, tmp_path):
        csv = tmp_path / "toy.csv"
        write_toy_csv(csv)
        cfg = tmp_path / "ilb.toml"
        cfg.write_text(f"""
out = "{tmp_path}/out"
[input]
path = "{csv}"
[input.responses]
y1 = "continuous"
y2 = "binary"
[model]
g = 2
[chain]
burn_in = 10
keep = 30
m_imputations = 2
[ilb]
loss = "mean:y1"
b = 30
mode = "fixed"
""")
        assert main(["ilb", "--config", str(cfg), "--seed", "8"]) == 0

    def test_invalid_tau_exits_1(self, tmp_path):
        csv = tmp_path / "toy.csv"
        write_toy_csv(csv)
        cfg = tmp_path / "ilb.toml"
        cfg.write_text(f"""
[input]
path = "{csv}"
[input.responses]
y1 = "continuous"
y2 = "binary"
[ilb]
loss = "quantile:y1:1.5"
""")
        with pytest.raises(SystemExit) as exc:
            main(["ilb", "--config", str(cfg)])
        assert exc.value.code == 1

    def test_parse_loss(self, two_component_data):
        ds = two_component_data
        loss = parse_loss("quadreg:y2:y1", ds)
        assert loss.y_col == 1 and loss.x_col == 0
        with pytest.raises(ValidationError):
            parse_loss("mean:nope", ds)
        with pytest.raises(ValidationError):
            parse_loss("entropy:y1", ds)


class TestSimulateCommand:
    def test_single_replication(self, tmp_path):
        cfg = tmp_path / "sim.toml"
        cfg.write_text(f"""
out = "{tmp_path}/out"
[simulate]
scenario = 1
replications = 1
population = 600
sample = 80
g = 2
b = 20
burn_in = 10
keep = 20
m_imputations = 2
""")
        assert main(["simulate", "--config", str(cfg), "--seed", "4"]) == 0
        agg = json.loads((tmp_path / "out" / "aggregate.json").read_text())
        assert agg["replications"] == 1
        assert (tmp_path / "out" / "replications.csv").exists()

    def test_determinism_byte_identical(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
        cfg = tmp_path / "sim.toml"
        cfg.write_text("""
[simulate]
scenario = 2
replications = 2
population = 400
sample = 50
g = 2
b = 10
burn_in = 5
keep = 10
m_imputations = 2
baselines = false
""")
        for out in ("a", "b"):
            assert main(["simulate", "--config", str(cfg), "--seed", "9",
                         "--out", str(tmp_path / out)]) == 0
        for f in sorted((tmp_path / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


class TestCheckCommand:
    def test_fast_sampler_suite_passes(self, capsys):
        assert main(["check", "--suite", "prior", "--fast"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_planted_bug_detected(self, capsys):
        """check must exit nonzero when a known sign error is planted in the
        mixing-coefficient update (validates the suite's power)."""
        code = main(["check", "--suite", "gibbs", "--fast", "--mutate", "alpha-sign"])
        assert code == 1
        assert "FAIL" in capsys.readouterr().out

    def test_unknown_suite(self, capsys):
        with pytest.raises(Exception):
            main(["check", "--suite", "nope"])
