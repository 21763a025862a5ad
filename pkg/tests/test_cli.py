"""CLI behaviour and golden-file checks.

Set FEATPINN_REGEN_GOLDEN=1 to rewrite the expected outputs under
tests/golden/expected from the current build.
"""

import json
import os
import shutil
import subprocess
import sys
from pathlib import Path

import jsonschema
import pytest

from featpinn import cli, pde

GOLDEN = Path(__file__).parent / "golden"
EXPECTED = GOLDEN / "expected"
REGEN = os.environ.get("FEATPINN_REGEN_GOLDEN") == "1"
SCHEMA = json.loads((Path(cli.__file__).parent / "config.schema.json").read_text())


def run_cli(argv, capsys):
    code = cli.run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def stable_report(path: Path) -> str:
    doc = cli.strip_timing(cli.load_report(path))
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def drop_column(text: str, name: str) -> str:
    rows = [line.split(",") for line in text.splitlines()]
    k = rows[0].index(name)
    return "\n".join(",".join(r[:k] + r[k + 1:]) for r in rows) + "\n"


def check_golden(name: str, actual: str):
    path = EXPECTED / name
    if REGEN:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(actual)
    assert path.exists(), f"missing golden file {path}; regenerate with FEATPINN_REGEN_GOLDEN=1"
    assert actual == path.read_text(), f"{name} differs from golden output"


class TestGolden:
    @pytest.mark.parametrize("config", ["train_diffusion", "train_lorenz"])
    def test_train(self, config, tmp_path, capsys):
        code, out, err = run_cli(["train", GOLDEN / f"{config}.json", "--out", tmp_path], capsys)
        assert code == 0, err
        check_golden(f"{config}/report.json", stable_report(tmp_path / "report.json"))
        check_golden(f"{config}/curves.csv", (tmp_path / "curves.csv").read_text())
        check_golden(f"{config}/prediction.csv", (tmp_path / "prediction.csv").read_text())

    def test_train_twice_identical(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert run_cli(["train", GOLDEN / "train_diffusion.json", "--out", d], capsys)[0] == 0
        assert stable_report(a / "report.json") == stable_report(b / "report.json")
        assert (a / "curves.csv").read_bytes() == (b / "curves.csv").read_bytes()
        assert (a / "prediction.csv").read_bytes() == (b / "prediction.csv").read_bytes()

    def test_sweep(self, tmp_path, capsys):
        code, out, err = run_cli(["sweep", GOLDEN / "sweep_xi.json", "--out", tmp_path], capsys)
        assert code == 0, err
        assert json.loads(out) == {"cells": 4, "failed": 0,
                                   "aggregate": str(tmp_path / "aggregate.csv")}
        check_golden("sweep_xi/sweep.csv", drop_column((tmp_path / "sweep.csv").read_text(),
                                                       "wall_s"))
        check_golden("sweep_xi/aggregate.csv", (tmp_path / "aggregate.csv").read_text())

    def test_kernel(self, tmp_path, capsys):
        code, out, err = run_cli(["kernel", GOLDEN / "kernel_rf.json", "--out", tmp_path], capsys)
        assert code == 0, err
        for name in ("spectrum.csv", "decay.csv", "ck_spectrum.csv"):
            check_golden(f"kernel_rf/{name}", (tmp_path / name).read_text())

    def test_surjectivity(self, capsys):
        code, out, _ = run_cli(["surjectivity", "--sigma", "1", "--samples", "100000",
                                "--seed", "7"], capsys)
        assert code == 0
        check_golden("surjectivity.json", out)
        doc = json.loads(out)
        assert doc["analytic_bound"] == pytest.approx(0.3413, abs=1e-4)
        assert doc["mc_probability"] <= doc["analytic_bound"] + 3 * doc["standard_error"]

    def test_list_problems(self, capsys):
        code, out, _ = run_cli(["list-problems"], capsys)
        assert code == 0
        check_golden("list_problems.txt", out)
        assert [line.split("\t")[0] for line in out.splitlines()] == list(pde.PROBLEM_NAMES)


class TestOutputs:
    def test_zero_steps_header_only_curves(self, tmp_path, capsys):
        cfg = json.loads((GOLDEN / "train_diffusion.json").read_text())
        cfg["training"].update(adam_steps=0, lbfgs_steps=0)
        path = tmp_path / "c.json"
        path.write_text(json.dumps(cfg))
        assert run_cli(["train", path, "--out", tmp_path / "o"], capsys)[0] == 0
        text = (tmp_path / "o" / "curves.csv").read_text()
        assert text == "step,loss_total,loss_r,loss_ic,loss_bc\n"

    def test_inverse_curves_have_data_column(self, tmp_path, capsys):
        assert run_cli(["train", GOLDEN / "train_lorenz.json", "--out", tmp_path], capsys)[0] == 0
        header = (tmp_path / "curves.csv").read_text().splitlines()[0]
        assert header == "step,loss_total,loss_r,loss_ic,loss_bc,loss_data"

    def test_report_round_trip(self, tmp_path, capsys):
        assert run_cli(["train", GOLDEN / "train_diffusion.json", "--out", tmp_path], capsys)[0] == 0
        text = (tmp_path / "report.json").read_text()
        doc = json.loads(text)
        assert json.dumps(doc, indent=2, sort_keys=True) + "\n" == text
        assert doc["schema_version"] == cli.SCHEMA_VERSION
        assert set(doc["timing"]) == {"wall_s"}

    def test_wave_prediction_grid_size(self):
        pts = cli.prediction_points(pde.get_problem("wave"), 101)
        assert len(pts) == 10201

    def test_prediction_skips_holes(self):
        p = pde.get_problem("poisson2d")
        assert p.in_domain(cli.prediction_points(p, 41)).all()

    def test_checkpoint_option(self, tmp_path, capsys):
        cfg = json.loads((GOLDEN / "train_diffusion.json").read_text())
        cfg["output"]["checkpoint"] = True
        cfg["training"]["checkpoint_every"] = 10
        path = tmp_path / "c.json"
        path.write_text(json.dumps(cfg))
        assert run_cli(["train", path, "--out", tmp_path / "o"], capsys)[0] == 0
        assert (tmp_path / "o" / "checkpoint.bin").exists()

    def test_unwritable_output(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        code, _, err = run_cli(["train", GOLDEN / "train_diffusion.json", "--out",
                                blocker / "sub"], capsys)
        assert code == 1
        assert json.loads(err)["error"]["stage"] == "output"


class TestErrors:
    def write(self, tmp_path, text):
        path = tmp_path / "cfg.json"
        path.write_text(text)
        return path

    def test_validate_good(self, tmp_path, capsys, monkeypatch):
        monkeypatch.chdir(tmp_path)
        before = set(tmp_path.iterdir())
        code, out, _ = run_cli(["validate", GOLDEN / "train_diffusion.json"], capsys)
        assert code == 0 and json.loads(out)["valid"] is True
        assert set(tmp_path.iterdir()) == before

    def test_malformed_json(self, tmp_path, capsys):
        path = self.write(tmp_path, '{\n  "problem": {"name": "wave"},\n  oops\n}')
        code, _, err = run_cli(["validate", path], capsys)
        e = json.loads(err)["error"]
        assert code == 2 and e["stage"] == "parse" and e["line"] == 3

    def test_unknown_key(self, tmp_path, capsys):
        cfg = json.loads((GOLDEN / "train_diffusion.json").read_text())
        cfg["training"]["epochs"] = 3
        code, _, err = run_cli(["validate", self.write(tmp_path, json.dumps(cfg))], capsys)
        assert code == 2 and json.loads(err)["error"]["key"] == "training.epochs"

    def test_unknown_top_level(self, tmp_path, capsys):
        code, _, err = run_cli(["validate", self.write(tmp_path, '{"extras": {}}')], capsys)
        assert code == 2 and json.loads(err)["error"]["key"] == "config.extras"

    def test_bad_enum(self, tmp_path, capsys):
        cfg = json.loads((GOLDEN / "train_diffusion.json").read_text())
        cfg["feature_map"]["family"] = "wavelet"
        code, _, err = run_cli(["validate", self.write(tmp_path, json.dumps(cfg))], capsys)
        assert code == 2 and "wavelet" in json.loads(err)["error"]["message"]

    def test_missing_section(self, tmp_path, capsys):
        code, _, err = run_cli(["validate", self.write(tmp_path, '{"problem": {"name": "wave"}}')],
                               capsys)
        assert code == 2 and json.loads(err)["error"]["key"] == "feature_map"

    def test_sweep_without_section(self, capsys):
        code, _, err = run_cli(["sweep", GOLDEN / "train_diffusion.json"], capsys)
        assert code == 2 and json.loads(err)["error"]["key"] == "sweep"

    def test_runtime_failure_names_stage(self, tmp_path, capsys, monkeypatch):
        def broken(*args, **kwargs):
            raise FloatingPointError("overflow in layer 2")

        monkeypatch.setattr(cli.kernel, "propagate", broken)
        code, _, err = run_cli(["kernel", GOLDEN / "kernel_rf.json", "--out", tmp_path], capsys)
        e = json.loads(err)["error"]
        assert code == 1 and e["stage"] == "kernel" and "overflow" in e["message"]

    def test_bad_samples(self, capsys):
        code, _, err = run_cli(["surjectivity", "--sigma", "1", "--samples", "10"], capsys)
        assert code == 2

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run_cli(["validate", tmp_path / "nope.json"], capsys)
        assert code == 2 and json.loads(err)["error"]["stage"] == "parse"

    def test_no_command(self, capsys):
        assert run_cli([], capsys)[0] == 2


class TestSchema:
    @pytest.mark.parametrize("name", ["train_diffusion", "train_lorenz", "sweep_xi", "kernel_rf"])
    def test_golden_configs_valid(self, name):
        jsonschema.validate(json.loads((GOLDEN / f"{name}.json").read_text()), SCHEMA)

    def test_sections_match_parser(self):
        props = SCHEMA["properties"]
        assert set(props) == set(cli.SECTIONS)
        assert set(props["problem"]["properties"]) == set(cli.PROBLEM_KEYS)
        assert set(props["network"]["properties"]) == set(cli.NETWORK_KEYS)
        assert set(props["training"]["properties"]) == set(cli.TRAINING_KEYS)
        assert set(props["sweep"]["properties"]) == set(cli.SWEEP_KEYS)
        assert set(props["kernel"]["properties"]) == set(cli.KERNEL_KEYS)
        assert set(props["output"]["properties"]) == set(cli.OUTPUT_KEYS)

    def test_enums_match_registries(self):
        from featpinn.analysis import SweepAxis
        from featpinn.featuremap import Family, RbfKind
        props = SCHEMA["properties"]
        assert set(props["problem"]["properties"]["name"]["enum"]) == set(pde.PROBLEM_NAMES)
        fm = props["feature_map"]["properties"]
        assert set(fm["family"]["enum"]) == {f.value for f in Family}
        assert set(fm["rbf_kind"]["enum"]) == {k.value for k in RbfKind}
        assert set(props["sweep"]["properties"]["axis"]["enum"]) == {a.value for a in SweepAxis}

    @pytest.mark.parametrize("mutate", [
        lambda c: c["training"].update(epochs=1),
        lambda c: c["feature_map"].update(family="wavelet"),
        lambda c: c.update(extra={}),
        lambda c: c["problem"].update(name="kdv"),
    ])
    def test_schema_and_parser_agree_on_rejection(self, mutate):
        cfg = json.loads((GOLDEN / "train_diffusion.json").read_text())
        mutate(cfg)
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate(cfg, SCHEMA)
        with pytest.raises(cli.CliError) as info:
            cli.parse_config(json.dumps(cfg))
        assert info.value.code == 2


class TestHelp:
    def test_every_flag_documented(self):
        parser = cli.build_parser()
        sub = next(a for a in parser._actions if a.choices and isinstance(a.choices, dict))
        assert set(sub.choices) == {"train", "sweep", "kernel", "surjectivity", "list-problems",
                                    "validate"}
        for name, p in sub.choices.items():
            text = p.format_help()
            for action in p._actions:
                assert action.help, f"{name}: {action.dest} has no help text"
                for flag in action.option_strings:
                    assert flag in text
                if not action.option_strings:
                    assert action.dest in text

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "featpinn", "--help"], capture_output=True,
                              text=True)
        assert proc.returncode == 0
        for cmd in ("train", "sweep", "kernel", "surjectivity", "list-problems", "validate"):
            assert cmd in proc.stdout

    @pytest.mark.skipif(shutil.which("featpinn") is None, reason="console script not installed")
    def test_console_script(self):
        proc = subprocess.run(["featpinn", "list-problems"], capture_output=True, text=True)
        assert proc.returncode == 0 and "wave" in proc.stdout
