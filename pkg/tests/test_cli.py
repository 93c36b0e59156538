import json

import pytest

from grushin_lab.cli import (
    EXPERIMENTS,
    ExperimentConfig,
    apply_overrides,
    list_experiments,
    main,
    run,
)
from grushin_lab.quadrature import ConfigurationError

TINY = {
    "experiment": "metric-volumes",
    "seed": 3,
    "grid": {"m": 1, "k": 1, "alpha": 1.0, "half_width": 2.0, "points": 16},
    "quadrature": {"t_min": 1e-5, "t_max": 1e3, "nodes_per_decade": 8},
}


def write_config(tmp_path, mapping):
    lines = [f'experiment = "{mapping["experiment"]}"',
             f'seed = {mapping["seed"]}']
    for section in ("grid", "quadrature"):
        if section in mapping:
            lines.append(f"[{section}]")
            for key, val in mapping[section].items():
                if isinstance(val, str):
                    lines.append(f'{key} = "{val}"')
                else:
                    lines.append(f"{key} = {val}")
    path = tmp_path / "config.toml"
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def test_list_experiments_metadata():
    table = list_experiments()
    ids = [row[0] for row in table]
    assert ids == sorted(EXPERIMENTS)
    by_id = {row[0]: row for row in table}
    assert "small-beta" in by_id["besov-limits"][2]
    assert "sandwich" in by_id["besov-limits"][2]
    assert "isoperimetric" in by_id["isoperimetric-scan"][2].lower()
    assert "embedding" in by_id["isoperimetric-scan"][2]


def test_list_command(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    for name in EXPERIMENTS:
        assert name in out


@pytest.mark.parametrize("experiment", sorted(EXPERIMENTS))
def test_every_listed_experiment_runs(tmp_path, experiment):
    """Round trip: every id in the table is accepted by run."""
    mapping = dict(TINY, experiment=experiment)
    config = ExperimentConfig.from_mapping(
        mapping, out_dir=str(tmp_path / "out"))
    status = run(config)
    assert status in (0, 1)  # tolerances may fail at toy resolution
    assert (tmp_path / "out" / "results.csv").exists()
    assert (tmp_path / "out" / "summary.json").exists()


def test_determinism_byte_identical(tmp_path):
    cfg = ExperimentConfig.from_mapping(dict(TINY), out_dir=str(tmp_path / "a"))
    run(cfg)
    cfg2 = ExperimentConfig.from_mapping(dict(TINY), out_dir=str(tmp_path / "b"))
    run(cfg2)
    a = (tmp_path / "a" / "results.csv").read_bytes()
    b = (tmp_path / "b" / "results.csv").read_bytes()
    assert a == b


def test_csv_schema(tmp_path):
    cfg = ExperimentConfig.from_mapping(dict(TINY), out_dir=str(tmp_path / "out"))
    run(cfg)
    lines = (tmp_path / "out" / "results.csv").read_text().splitlines()
    assert lines[0] == "experiment,case,value,target,tolerance,provenance,claim,pass"
    for line in lines[1:]:
        fields = line.split(",")
        assert fields[0] == "metric-volumes"
        assert fields[5] in ("paper", "trivial", "derived")
        assert fields[7] in ("true", "false")


def test_summary_contents(tmp_path):
    cfg = ExperimentConfig.from_mapping(dict(TINY), out_dir=str(tmp_path / "out"))
    run(cfg)
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["experiment"] == "metric-volumes"
    assert summary["config"]["grid"]["points"] == [16, 16]
    assert summary["rows"] == summary["passed"] + summary["failed"]
    assert {"python", "numpy", "platform"} <= set(summary["environment"])


def test_unknown_experiment_rejected():
    with pytest.raises(ConfigurationError, match="experiment"):
        ExperimentConfig.from_mapping(dict(TINY, experiment="nope"))


def test_bad_exponent_path_reported():
    mapping = dict(TINY)
    mapping["exponents"] = {"p": 0.5}
    with pytest.raises(ConfigurationError, match="exponents.p"):
        ExperimentConfig.from_mapping(mapping)


def test_perimeter_s_guard_at_parse_time():
    mapping = dict(TINY, experiment="perimeter-coarea")
    mapping["exponents"] = {"s": 0.6}
    with pytest.raises(ConfigurationError, match="exponents.s"):
        ExperimentConfig.from_mapping(mapping)


def test_overrides_dot_paths():
    raw = {"experiment": "metric-volumes", "grid": {"points": 16}}
    out = apply_overrides(raw, ["grid.points=24", "seed=9",
                                'experiment="semigroup-checks"'])
    assert out["grid"]["points"] == 24
    assert out["seed"] == 9
    assert out["experiment"] == "semigroup-checks"


def test_cli_main_config_error(tmp_path, capsys):
    path = write_config(tmp_path, dict(TINY))
    status = main(["run", path, "--override", "exponents.p=0.2"])
    assert status == 2
    assert "exponents.p" in capsys.readouterr().err


def test_cli_main_missing_file(capsys):
    assert main(["run", "/nonexistent/config.toml"]) == 2


def test_threads_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("GRUSHIN_LAB_THREADS", "3")
    cfg = ExperimentConfig.from_mapping(dict(TINY))
    assert cfg.threads == 3
    monkeypatch.delenv("GRUSHIN_LAB_THREADS")
    cfg = ExperimentConfig.from_mapping(dict(TINY), threads=2)
    assert cfg.threads == 2


def test_cli_end_to_end(tmp_path):
    path = write_config(tmp_path, dict(TINY))
    status = main(["run", path, "--out", str(tmp_path / "out"),
                   "--override", "grid.points=12"])
    assert status in (0, 1)
    assert (tmp_path / "out" / "results.csv").exists()
