import json
import shutil
from pathlib import Path

import pytest
import yaml

from conformable_sde.cli import main
from conformable_sde.config import ConfigError, validate_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

BASE = {
    "experiment": "moments",
    "simulation": {"alpha": 0.75, "T": 1.0, "n_steps": 32, "lambda": 1.0, "n_paths": 500, "master_seed": 3},
    "sigma": {"kind": "linear", "L": 1.0},
}


def write(tmp_path, doc, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return p


def variant(**changes):
    doc = json.loads(json.dumps(BASE))
    for path, value in changes.items():
        node = doc
        *head, leaf = path.split("__")
        for k in head:
            node = node.setdefault(k, {})
        node[leaf] = value
    return doc


class TestValidate:
    def test_defaults_resolved(self):
        cfg = validate_config(yaml.safe_dump(BASE), output_dir="x")
        r = cfg.resolved()
        assert r["simulation"]["a"] == 0.0 and r["simulation"]["u0"] == 1.0
        assert r["extra"] == {"n_stderr": 4.0}

    def test_collects_all_errors(self):
        doc = variant(simulation__alpha=1.5, simulation__n_paths=0, sigma__L=-1)
        with pytest.raises(ConfigError) as ei:
            validate_config(yaml.safe_dump(doc), output_dir="x")
        errs = ei.value.errors
        assert "alpha out of range (0,1]" in errs
        assert any("n_paths" in e for e in errs) and any("sigma.L" in e for e in errs)

    def test_missing_experiment(self):
        doc = dict(BASE)
        del doc["experiment"]
        with pytest.raises(ConfigError, match="missing experiment kind"):
            validate_config(yaml.safe_dump(doc), output_dir="x")

    def test_unknown_keys(self):
        with pytest.raises(ConfigError, match="unknown"):
            validate_config(yaml.safe_dump(variant(simulation__nsteps=3)), output_dir="x")

    def test_scientific_notation_strings(self):
        cfg = validate_config(yaml.safe_dump(variant(simulation__overflow_threshold="1e6")), output_dir="x")
        assert cfg.simulation.overflow_threshold == 1e6

    def test_beta_below_threshold_warns(self):
        doc = variant(experiment="contraction", extra={"beta_norm": 0.5})
        cfg = validate_config(yaml.safe_dump(doc), output_dir="x")
        assert any("contraction hypothesis violated" in w for w in cfg.warnings)

    def test_low_order_needs_truncation(self):
        with pytest.raises(ConfigError, match="truncated_start"):
            validate_config(yaml.safe_dump(variant(simulation__alpha=0.4)), output_dir="x")
        validate_config(yaml.safe_dump(variant(simulation__alpha=0.4, simulation__truncated_start="auto")), output_dir="x")

    def test_blowup_needs_superlinear(self):
        with pytest.raises(ConfigError, match="superlinear"):
            validate_config(yaml.safe_dump(variant(experiment="blowup")), output_dir="x")

    def test_lambda_grid_checks(self):
        doc = variant(experiment="growth_lambda", extra={"lambdas": [1, 2, 3]})
        with pytest.raises(ConfigError, match="insufficient"):
            validate_config(yaml.safe_dump(doc), output_dir="x")


class TestExitCodes:
    def test_moments_pass(self, tmp_path):
        out = tmp_path / "o"
        assert main(["moments", "--config", str(write(tmp_path, BASE)), "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["status"] == "pass" and summary["experiment"] == "moments"
        assert summary["reproducibility"]["master_seed"] == 3
        assert (out / "moments.csv").read_text().startswith("t,m2,stderr,censored\n")

    def test_bad_alpha(self, tmp_path, capsys):
        out = tmp_path / "o"
        rc = main(["moments", "--config", str(write(tmp_path, variant(simulation__alpha=0))), "--out", str(out)])
        assert rc == 2
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert "alpha out of range (0,1]" in err["errors"]
        assert json.loads((out / "error.json").read_text())["status"] == 2

    def test_subcommand_mismatch(self, tmp_path):
        assert main(["blowup", "--config", str(write(tmp_path, BASE)), "--out", str(tmp_path / "o")]) == 2

    def test_missing_config_file(self, tmp_path):
        assert main(["moments", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == 2

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["moments", "--config", str(write(tmp_path, BASE)), "--out", str(blocker / "sub")]) == 3

    def test_failed_check(self, tmp_path):
        doc = variant(experiment="growth_t", extra={"slope_tolerance": 0.0})
        doc["simulation"]["n_steps"] = 64
        out = tmp_path / "o"
        assert main(["growth-t", "--config", str(write(tmp_path, doc)), "--out", str(out)]) == 1
        assert json.loads((out / "summary.json").read_text())["status"] == "fail"

    def test_usage_error(self):
        assert main(["frobnicate"]) == 2


class TestReproducibility:
    def test_resolved_config_roundtrip(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["moments", "--config", str(write(tmp_path, BASE)), "--out", str(out1)]) == 0
        assert main(["moments", "--config", str(out1 / "config.yaml"), "--out", str(out2)]) == 0
        assert (out1 / "moments.csv").read_bytes() == (out2 / "moments.csv").read_bytes()

    def test_seed_override(self, tmp_path):
        cfg = str(write(tmp_path, BASE))
        main(["moments", "--config", cfg, "--out", str(tmp_path / "a")])
        main(["--seed", "4", "moments", "--config", cfg, "--out", str(tmp_path / "b")])
        main(["moments", "--config", str(write(tmp_path, variant(simulation__master_seed=4), "d.yaml")),
              "--out", str(tmp_path / "c")])
        a, b, c = ((tmp_path / x / "moments.csv").read_bytes() for x in "abc")
        assert a != b and b == c

    def test_threads_do_not_change_output(self, tmp_path):
        cfg = str(write(tmp_path, variant(simulation__n_paths=9000)))
        main(["moments", "--config", cfg, "--threads", "1", "--out", str(tmp_path / "a")])
        main(["moments", "--config", cfg, "--threads", "8", "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "moments.csv").read_bytes() == (tmp_path / "b" / "moments.csv").read_bytes()


def small(name, tmp_path, **sim):
    doc = yaml.safe_load((CONFIGS / f"{name}.yaml").read_text())
    doc["simulation"].update(sim)
    return write(tmp_path, doc, f"{name}.yaml")


class TestSubcommands:
    def test_simulate_csv_and_npz(self, tmp_path):
        cfg = small("simulate", tmp_path, n_paths=4, n_steps=8)
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "c")]) == 0
        lines = (tmp_path / "c" / "ensemble.csv").read_text().splitlines()
        assert lines[0] == "path_id,step,t,u,overflow_flag" and len(lines) == 1 + 4 * 9
        doc = yaml.safe_load(cfg.read_text())
        doc["extra"] = {"dump_format": "npz"}
        assert main(["simulate", "--config", str(write(tmp_path, doc)), "--out", str(tmp_path / "n")]) == 0
        assert (tmp_path / "n" / "ensemble.npz").exists()

    def test_growth_t(self, tmp_path):
        cfg = small("growth_t", tmp_path, n_paths=5000, n_steps=64)
        main(["growth-t", "--config", str(cfg), "--out", str(tmp_path / "o")])
        s = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert {"slope", "r_squared", "theory_lower", "theory_upper"} <= set(s["results"]["fit"])

    def test_growth_lambda(self, tmp_path):
        cfg = small("growth_lambda", tmp_path, n_paths=2000, n_steps=32)
        main(["growth-lambda", "--config", str(cfg), "--out", str(tmp_path / "o")])
        lines = (tmp_path / "o" / "lambda_sweep.csv").read_text().splitlines()
        assert lines[0] == "lambda,lambda_sq,m2,stderr,censored" and len(lines) == 5

    def test_blowup(self, tmp_path):
        cfg = small("blowup", tmp_path, n_paths=1000, n_steps=128)
        assert main(["blowup", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        s = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert s["results"]["t_star_closed_form"] == pytest.approx(0.25)
        assert (tmp_path / "o" / "blowup_ode.csv").read_text().startswith("t,f_numeric,f_closed_form\n")

    @pytest.mark.parametrize("alpha", [0.5, 0.25])
    def test_blowup_low_orders(self, tmp_path, alpha):
        cfg = small("blowup", tmp_path, alpha=alpha, T=4.0 if alpha == 0.5 else 1.0)
        assert main(["blowup", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        s = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert s["results"]["regime"] == ("critical" if alpha == 0.5 else "subcritical")

    def test_contraction(self, tmp_path):
        cfg = small("contraction", tmp_path, n_paths=100000)
        assert main(["contraction", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        lines = (tmp_path / "o" / "contraction.csv").read_text().splitlines()
        assert lines[0] == "k,d,ratio" and len(lines) == 6

    def test_gronwall(self, tmp_path):
        assert main(["gronwall-check", "--config", str(CONFIGS / "gronwall.yaml"), "--out", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "gronwall.csv").read_text().startswith("t,r,bound\n")
