import json
from pathlib import Path

import pytest

from fedhpo.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main, parse_and_validate
from fedhpo.errors import ConfigError

CONFIGS = sorted((Path(__file__).resolve().parents[1] / "configs").glob("*.toml"))

TINY = """
name = "tiny"
clients = 2
rounds = 3
output = "{out}"

[data]
n_samples = 200
d_in = 4
classes = 2

[fixed]
lr = 0.05
local_iters = 3

[agent]
gamma_h = {gamma_h}

[[space.dims]]
name = "lr"
min = 0.01
max = 0.1
log_scaled = true
grid_points = 3

[[space.dims]]
name = "aw"
kind = "simplex"
size = 2
grid_points = 2
"""


@pytest.fixture
def tiny(tmp_path):
    def _write(gamma_h=0.01):
        path = tmp_path / f"tiny-{gamma_h}.toml"
        path.write_text(TINY.format(out=(tmp_path / "out").as_posix(), gamma_h=gamma_h))
        return path

    return _write


class TestParsing:
    def test_seed_override_is_echoed(self, tiny, capsys):
        cmd = parse_and_validate(["run", "--config", str(tiny()), "--seed", "7"])
        assert cmd.config.seed == 7
        assert main(["validate-config", "--config", str(tiny()), "--seed", "7"]) == EXIT_OK
        assert json.loads(capsys.readouterr().out.split("\nok:")[0])["seed"] == 7

    def test_negative_step_names_key(self, tiny, capsys):
        with pytest.raises(ConfigError, match=r"agent\.gamma_h"):
            parse_and_validate(["run", "--config", str(tiny(gamma_h=-1))])
        assert main(["run", "--config", str(tiny(gamma_h=-1))]) == EXIT_CONFIG
        assert "agent.gamma_h" in capsys.readouterr().err

    def test_unknown_verb(self):
        assert main(["train"]) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.toml")]) == EXIT_CONFIG

    def test_mode_alias(self, tiny):
        assert parse_and_validate(["run", "--config", str(tiny()), "--mode", "ds"]).config.agent.mode == "discrete"

    @pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.name)
    def test_shipped_configs_validate(self, path):
        assert main(["validate-config", "--quiet", "--config", str(path)]) == EXIT_OK

    def test_four_reference_configs(self):
        assert {p.name for p in CONFIGS} == {"cifar-like.toml", "covid-like.toml", "pancreas-like.toml", "bandit.toml"}


class TestCommands:
    def test_run_writes_outputs(self, tiny, tmp_path):
        assert main(["run", "--quiet", "--config", str(tiny())]) == EXIT_OK
        out = tmp_path / "out"
        assert (out / "rounds.csv").is_file() and (out / "summary.json").is_file()
        assert (out / "hyperparams.svg").is_file()

    def test_baseline_and_plot_policy_missing(self, tiny, tmp_path, capsys):
        assert main(["baseline", "--quiet", "--config", str(tiny()), "--baseline", "fedavg"]) == EXIT_OK
        assert main(["plot", "--out", str(tmp_path / "out")]) == EXIT_CONFIG
        assert "no policy" in capsys.readouterr().err

    def test_local_only(self, tiny, tmp_path):
        assert main(["local-only", "--quiet", "--config", str(tiny()), "--client", "1"]) == EXIT_OK
        row = json.loads((tmp_path / "out" / "local_only_1.json").read_text())
        assert len(row["test_acc"]) == 2

    def test_bench_search_writes_cost_table(self, tmp_path):
        out = tmp_path / "bench"
        argv = ["bench-search", "--out", str(out), "--cardinalities", "64", "729", "--clients", "2"]
        assert main(argv) == EXIT_OK
        assert (out / "cost.csv").is_file() and (out / "cost.svg").is_file()

    def test_plot_missing_rounds_is_io_error(self, tmp_path):
        assert main(["plot", "--out", str(tmp_path / "empty")]) == EXIT_IO

    def test_plot_rerenders(self, tiny, tmp_path):
        main(["run", "--quiet", "--config", str(tiny())])
        svg = tmp_path / "out" / "hyperparams.svg"
        before = svg.read_bytes()
        svg.unlink()
        assert main(["plot", "--out", str(tmp_path / "out")]) == EXIT_OK
        assert svg.read_bytes() == before

    def test_summary_is_deterministic(self, tiny, tmp_path):
        cfg = tiny()
        summaries = []
        for name in ("a", "b"):
            main(["run", "--quiet", "--config", str(cfg), "--out", str(tmp_path / name)])
            summaries.append((tmp_path / name / "summary.json").read_text())
        a, b = (json.loads(s) for s in summaries)
        a["config"].pop("output"), b["config"].pop("output")
        assert a == b
