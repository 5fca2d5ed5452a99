import json
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from hybridgen.generator.container import read_sample
from hybridgen.harness import cli
from hybridgen.harness.config import ConfigError, load_config, parse_config
from hybridgen.harness.experiments import budget, run_experiment
from hybridgen.harness.records import (
    RecordError,
    comparison_rows,
    csv_to_rows,
    first_reaching,
    load_record,
    rows_to_csv,
    smoothed,
    target_table,
    write_record,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
TOY = CONFIGS / "toy_hybrid.yaml"


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def trajectory(directory):
    return [json.loads(line) for line in (Path(directory) / "trajectory.jsonl").read_text().splitlines()]


# --- configuration ------------------------------------------------------------------

def test_shipped_configs_load():
    for path in sorted(CONFIGS.glob("controlled_*.yaml")) + [TOY]:
        assert load_config(path).name


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError, match="hybrid.stpes"):
        parse_config({"hybrid": {"stpes": 3}})
    with pytest.raises(ConfigError):
        parse_config({"colour": "red"})
    with pytest.raises(ConfigError, match="blob.nope"):
        parse_config({"pipeline": {"kind": "toy"}, "start": {"values": {"blob.nope": 1.0}}})


def test_missing_config_is_a_usage_error(tmp_path, capsys):
    missing = tmp_path / "nowhere.yaml"
    assert run_cli("run", "--config", missing) == cli.EXIT_USAGE
    assert str(missing) in capsys.readouterr().err


def test_malformed_config_is_a_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("hybrid: [unclosed\n")
    assert run_cli("run", "--config", bad) == cli.EXIT_USAGE
    assert "bad.yaml" in capsys.readouterr().err


def test_budget_matches_counters():
    for name in ("controlled_hybrid", "controlled_brs", "controlled_fixed_beta"):
        assert budget(load_config(CONFIGS / f"{name}.yaml"))["generator_calls"] == 10_800
    toy = load_config(TOY)
    result = run_experiment(toy)
    assert budget(toy) == {"generator_calls": result.state.counters.generator_calls,
                           "sgd_steps": result.state.counters.sgd_steps}


# --- run --------------------------------------------------------------------------------

def test_toy_run_writes_one_line_per_step(tmp_path):
    started = time.perf_counter()
    assert run_cli("run", "--config", TOY, "--out", tmp_path, "--quiet") == cli.EXIT_OK
    assert time.perf_counter() - started < 10
    run_dir = tmp_path / "toy-hybrid-seed0"
    lines = trajectory(run_dir)
    assert len(lines) == 5
    assert [rec["t"] for rec in lines] == list(range(5))
    record = load_record(run_dir)
    assert record.summary["steps"] == 5 and record.version.startswith("artifact")


def test_output_root_falls_back_to_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert run_cli("run", "--config", TOY, "--quiet") == cli.EXIT_OK
    assert (tmp_path / "env" / "toy-hybrid-seed0" / "summary.json").is_file()


def test_seed_override_changes_the_trajectory(tmp_path):
    assert run_cli("run", "--config", TOY, "--out", tmp_path, "--quiet") == 0
    assert run_cli("run", "--config", TOY, "--out", tmp_path, "--quiet", "--seed", 7) == 0
    a, b = trajectory(tmp_path / "toy-hybrid-seed0"), trajectory(tmp_path / "toy-hybrid-seed7")
    assert [r["L"] for r in a] != [r["L"] for r in b]
    assert load_config(TOY).seed == 0


def test_threaded_run_matches_serial(tmp_path):
    assert run_cli("run", "--config", TOY, "--out", tmp_path / "a", "--quiet") == 0
    assert run_cli("--threads", 3, "run", "--config", TOY, "--out", tmp_path / "b", "--quiet") == 0
    strip = lambda t: [{k: v for k, v in r.items() if k != "wall_ms"} for r in t]  # noqa: E731
    assert strip(trajectory(tmp_path / "a" / "toy-hybrid-seed0")) == strip(trajectory(tmp_path / "b" / "toy-hybrid-seed0"))


def test_failed_run_exits_with_runtime_code(tmp_path, capsys):
    config = yaml.safe_load(TOY.read_text())
    config["train"]["lr"] = 1e6
    path = tmp_path / "diverge.yaml"
    path.write_text(yaml.safe_dump(config))
    assert run_cli("run", "--config", path, "--out", tmp_path, "--quiet") == cli.EXIT_RUNTIME
    assert "outer step 0" in capsys.readouterr().err


# --- records and compare ----------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_records(tmp_path_factory):
    root = tmp_path_factory.mktemp("records")
    base = load_config(TOY)
    dirs = []
    for config in (base, base.updated(method="brs", brs={"steps": 2, "n": 2, "m": 1})):
        result = run_experiment(config)
        directory = root / config.method
        write_record(directory, result.trajectory, config, result.wall_ms)
        dirs.append(directory)
    return dirs


def test_record_audit_catches_tampering(toy_records, tmp_path):
    record = load_record(toy_records[0])
    bad = tmp_path / "bad"
    write_record(bad, record.trajectory, record.config)
    summary = json.loads((bad / "summary.json").read_text())
    summary["best_L"] = 0.0
    (bad / "summary.json").write_text(json.dumps(summary))
    with pytest.raises(RecordError, match="best_L"):
        load_record(bad)
    (bad / "trajectory.jsonl").unlink()
    with pytest.raises(RecordError, match="trajectory.jsonl"):
        load_record(bad)


def test_compare_writes_one_row_per_record(toy_records, tmp_path, capsys):
    out = tmp_path / "cmp.csv"
    assert run_cli("compare", "--runs", *toy_records, "--out", out, "--target", 10.0) == 0
    rows = csv_to_rows(out.read_text())
    lengths = [len(load_record(d).trajectory) for d in toy_records]
    assert len(rows) == sum(lengths)
    assert [r["method"] for r in rows] == ["hybrid"] * lengths[0] + ["brs"] * lengths[1]
    assert "first to reach" in capsys.readouterr().out


def test_compare_with_missing_run_fails(tmp_path):
    assert run_cli("compare", "--runs", tmp_path / "absent", "--out", tmp_path / "x.csv") == cli.EXIT_RUNTIME


def test_csv_round_trip_is_exact(toy_records):
    rows = comparison_rows([load_record(d) for d in toy_records])
    assert csv_to_rows(rows_to_csv(rows)) == rows


def test_smoothing_and_target_search(toy_records):
    assert smoothed([4.0, 2.0, 0.0, 2.0], window=2) == [4.0, 3.0, 1.0, 1.0]
    record = load_record(toy_records[0])
    assert first_reaching(record, -1.0) is None
    hit = first_reaching(record, record.losses()[0])
    assert hit["step"] == 0
    table = target_table([load_record(d) for d in toy_records], 1e9)
    assert table[0]["method"] == "brs"  # fewer generator calls per record
    assert all(row["reached"] for row in table)


# --- render-preview ---------------------------------------------------------------------

def beta_file(tmp_path, data):
    path = tmp_path / "beta.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def test_preview_with_zero_samples_writes_nothing(tmp_path):
    out = tmp_path / "out"
    assert run_cli("render-preview", "--beta", beta_file(tmp_path, {}), "--n", 0, "--out", out) == 0
    assert not list(out.glob("sample_*"))


def test_preview_is_deterministic_and_readable(tmp_path):
    beta = beta_file(tmp_path, {"expand.prob": 0.2})
    for name in ("a", "b"):
        assert run_cli("render-preview", "--beta", beta, "--n", 2, "--out", tmp_path / name,
                       "--resolution", 8, 8) == 0
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    sample = read_sample(tmp_path / "a" / "sample_001.sample")
    assert sample.image.shape[:2] == (8, 8)
    np.testing.assert_allclose(cli.read_pfm(tmp_path / "a" / "sample_001_target.pfm"),
                               sample.target.reshape(8, 8, -1), atol=1e-6)


def test_preview_rejects_unknown_entries(tmp_path, capsys):
    beta = beta_file(tmp_path, {"no.such": 1.0})
    assert run_cli("render-preview", "--beta", beta, "--n", 1, "--out", tmp_path / "o") == cli.EXIT_USAGE
    assert "no.such" in capsys.readouterr().err


def test_pfm_round_trip(tmp_path):
    data = np.random.default_rng(0).standard_normal((3, 5, 3)).astype(np.float32).astype(np.float64)
    cli.write_pfm(tmp_path / "x.pfm", data)
    np.testing.assert_array_equal(cli.read_pfm(tmp_path / "x.pfm"), data)
    mono = data[..., :1]
    cli.write_pfm(tmp_path / "y.pfm", mono)
    np.testing.assert_array_equal(cli.read_pfm(tmp_path / "y.pfm"), mono)
