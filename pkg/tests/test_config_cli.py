from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from spontloc.cli import main
from spontloc.config import ConfigError, SimConfig, parse_config, render_config

FAST = ["--n-sites", "8", "--spacing", "0.5", "--horizon", "0.2", "--samples", "3"]


def _ini(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return str(p)


def test_empty_file_gives_defaults(tmp_path):
    cfg = parse_config(_ini(tmp_path, ""))
    assert cfg == SimConfig()
    assert (cfg.n_sites, cfg.spacing, cfg.y_max, cfg.h) == (16, 0.25, 8.0, 1 / 256)
    assert (cfg.nu, cfg.kappa, cfg.gamma, cfg.hbar, cfg.T, cfg.trajectories) == (2.0, 0.3, 1.0, 1.0, 1.0, 10_000)


def test_flag_overrides_file(tmp_path):
    path = _ini(tmp_path, "[dynamics]\nnu = 2\n")
    assert parse_config(path).nu == 2.0
    assert parse_config(path, {"nu": "4"}).nu == 4.0


def test_bound_violation_names_bound(tmp_path):
    with pytest.raises(ConfigError, match="ν > 0"):
        parse_config(_ini(tmp_path, "[dynamics]\nnu = -1\n"))


@pytest.mark.parametrize("text", ["[dynamics]\nnuu = 2\n", "[grid]\nnu = 2\n", "[extra]\nx = 1\n"])
def test_unknown_keys_rejected(tmp_path, text):
    with pytest.raises(ConfigError, match="unknown"):
        parse_config(_ini(tmp_path, text))


def test_fraction_values_and_bad_numbers(tmp_path):
    assert parse_config(_ini(tmp_path, "[meter]\nh = 1/128\n")).h == 1 / 128
    with pytest.raises(ConfigError):
        parse_config(overrides={"n_sites": "many"})


def test_render_round_trip(tmp_path):
    cfg = SimConfig(nu=3.5, particles=2, packet="skewed", skew=0.25)
    assert parse_config(_ini(tmp_path, render_config(cfg))) == cfg


def test_config_builds_model():
    cfg = SimConfig(n_sites=8, spacing=0.5)
    assert cfg.hamiltonian().entries.shape == (8, 8)
    assert cfg.hamiltonian(2).entries.shape == (64, 64)
    assert abs(cfg.initial_state().norm2 - 1) < 1e-12
    assert cfg.sample_times[-1] == cfg.horizon


def test_povm_check_exit_zero(tmp_path, capsys):
    assert main(["povm-check", "--out", str(tmp_path)]) == 0
    assert "POVM residual" in capsys.readouterr().out
    assert (tmp_path / "povm.csv").exists()


def test_manifest_lists_outputs(tmp_path):
    assert main(["kick", "--out", str(tmp_path), "--seed", "3"] + FAST) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seed"] == 3 and man["subcommand"] == "kick"
    assert man["outputs"] == ["kick.ndjson", "pointer_density.csv"]
    assert "T" not in man and "time" not in json.dumps(man)


def test_manifest_written_before_failure(tmp_path):
    # the run fails after validation; the manifest is already on disk
    code = main(["kick", "--out", str(tmp_path), "--kappa", "1e6", "--n-sites", "8", "--spacing", "0.5"])
    assert code == 1
    assert (tmp_path / "manifest.json").exists()
    assert not (tmp_path / "kick.ndjson").exists()


def test_bad_config_exits_one(tmp_path, capsys):
    assert main(["povm-check", "--out", str(tmp_path), "--nu", "-1"]) == 1
    assert "ν > 0" in capsys.readouterr().err
    assert not (tmp_path / "manifest.json").exists()
    assert main(["povm-check", "--out", str(tmp_path), "--config", str(tmp_path / "missing.ini")]) == 1


def test_out_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SPONTLOC_OUT", str(tmp_path / "env"))
    assert main(["povm-check"]) == 0
    assert (tmp_path / "env" / "povm.csv").exists()


def test_trajectory_is_byte_deterministic(tmp_path):
    args = ["trajectory", "--seed", "11", "--index", "2"] + FAST
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("manifest.json", "trajectory.ndjson"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_trajectory_schema(tmp_path):
    assert main(["trajectory", "--out", str(tmp_path), "--nu", "20"] + FAST) == 0
    rows = [json.loads(line) for line in (tmp_path / "trajectory.ndjson").read_text().splitlines()]
    kinds = {r["kind"] for r in rows}
    assert kinds == {"event", "snapshot"}
    for r in rows:
        assert "t" in r and "y" in r
        if r["kind"] == "snapshot":
            assert r["y"] is None and set(r) == {"kind", "t", "y", "norm2", "mean_x", "var_x"}
    ts = [r["t"] for r in rows]
    assert ts == sorted(ts)


def test_ensemble_csv(tmp_path):
    assert main(["ensemble", "--out", str(tmp_path), "--trajectories", "50"] + FAST) == 0
    with open(tmp_path / "ensemble.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "weight_mean", "weight_sem", "x_mean", "x_sem", "x2_mean", "x2_sem"]
    assert len(rows) == 4
    assert float(rows[1][1]) == pytest.approx(1.0)


def test_mixing_outputs(tmp_path):
    assert main(["mixing", "--out", str(tmp_path), "--particles", "2", "--nonselective-kicks", "5"] + FAST) == 0
    with open(tmp_path / "nonselective_entropy.csv") as fh:
        ent = [float(r[1]) for r in list(csv.reader(fh))[1:]]
    assert len(ent) == 6 and np.all(np.diff(ent) >= -1e-8)
    assert (tmp_path / "entropy.csv").exists() and (tmp_path / "mixing_events.ndjson").exists()


@pytest.mark.parametrize("action,extra", [("mean-field", ["--nus", "50,100", "--dt", "0.002"]),
                                          ("central-limit", ["--nus", "100,400"]),
                                          ("diffusive-sse", ["--trajectories", "20"]),
                                          ("diffusive-density", ["--trajectories", "5"])])
def test_limits_outputs(tmp_path, action, extra):
    assert main(["limits", action, "--out", str(tmp_path)] + FAST + extra) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    for name in man["outputs"]:
        assert (tmp_path / name).stat().st_size > 0


def test_verify_small_ensemble_fails(tmp_path, capsys):
    code = main(["verify", "jump-vs-oracle", "--out", str(tmp_path), "--trajectories", "10",
                 "--tolerance", "0.02"])
    assert code == 2
    assert "FAIL" in capsys.readouterr().out


def test_verify_oracle_pairing_passes(tmp_path):
    code = main(["verify", "jump-oracle-vs-diffusive-oracle", "--out", str(tmp_path), "--nu", "10000",
                 "--gamma", "0.5", "--packet", "gaussian"] + FAST)
    assert code == 0
    with open(tmp_path / "report.csv") as fh:
        assert next(csv.reader(fh)) == ["t", "trace_distance", "sem_band", "tolerance", "passed"]


def test_numbers_have_twelve_significant_digits(tmp_path):
    assert main(["povm-check", "--out", str(tmp_path)] + FAST) == 0
    with open(tmp_path / "povm.csv") as fh:
        for row in list(csv.reader(fh))[1:]:
            for cell in row:
                assert len(cell.lstrip("-").replace(".", "").split("e")[0].lstrip("0")) <= 12
