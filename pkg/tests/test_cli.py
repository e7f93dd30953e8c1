import csv
import json
import math

import numpy as np
import pytest
import yaml

from ssi_sampler import cli
from ssi_sampler.config import bundled_configs, load_config, parse_config
from ssi_sampler.io import read_samples_csv

TINY_SSI = {
    "seed": 3,
    "target": {"name": "gaussian", "params": {"dim": 2}},
    "method": {
        "name": "ssi",
        "M": 5,
        "init_steps": 3,
        "n_outer": 24,
        "block_size": 8,
        "velocity": {"num_steps": 5, "n_particles": 20, "chains": 4},
    },
    "metrics": {"which": ["nll", "mmd", "w2"], "w2_subsample": 16, "w2_repeats": 1},
}


def _write(path, cfg):
    path.write_text(yaml.safe_dump(cfg))
    return path


def _baseline(name, **method):
    return {
        "seed": 0,
        "target": {"name": "gaussian", "params": {"dim": 2}},
        "method": {"name": name, "n_particles": 30, **method},
        "metrics": {"which": ["nll", "mmd", "w2"], "w2_subsample": 16, "w2_repeats": 1},
    }


def _read_table(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# --- diag ----------------------------------------------------------------------------------


def _diag(capsys, *argv):
    code = cli.main(["diag", *argv])
    return code, capsys.readouterr().out


def test_diag_bifurcation_time(capsys):
    code, out = _diag(capsys, "--m", "2")
    assert code == 0
    res = json.loads(out)
    assert res["bifurcation_time"] == pytest.approx(0.3660, abs=1e-4)
    assert res["bifurcation_time_numeric"] == pytest.approx(res["bifurcation_time"], abs=1e-6)


def test_diag_lsi_bound_at_zero_radius(capsys):
    code, out = _diag(capsys, "--R", "0", "--sigma2", "0.5")
    assert code == 0
    assert json.loads(out)["lsi_bound"] == pytest.approx(3.0)


def test_diag_critical_time_matches_bisection(capsys):
    code, out = _diag(capsys, "--R", "2", "--sigma2", "1", "--t-grid", "0.2,0.9")
    res = json.loads(out)
    assert code == 0
    assert res["T_star"] == pytest.approx(0.6339745962155614, abs=1e-12)
    assert res["T_star_bisection"] == pytest.approx(res["T_star"], abs=1e-10)
    betas = [row["beta"] for row in res["beta_t"]]
    assert betas[0] < 0 < betas[1]
    assert "lsi_bound" not in res  # sigma2 = 1 is outside the bound's domain


@pytest.mark.parametrize("argv", [[], ["--R", "1"], ["--R", "1", "--sigma2", "-1"], ["--m", "abc"]])
def test_diag_invalid_arguments(capsys, argv):
    code, out = _diag(capsys, *argv)
    assert code == 2
    assert out == ""


# --- sample ------------------------------------------------------------------------------------


def test_sample_writes_artifacts_and_is_reproducible(tmp_path):
    cfg = _write(tmp_path / "tiny.yaml", TINY_SSI)
    assert cli.main(["sample", str(cfg), "-o", str(tmp_path / "a")]) == 0
    assert cli.main(["sample", str(cfg), "-o", str(tmp_path / "b"), "--workers", "3"]) == 0
    a = (tmp_path / "a" / "samples.csv").read_bytes()
    assert a == (tmp_path / "b" / "samples.csv").read_bytes()
    assert a.splitlines()[0] == b"x0,x1"
    assert b"\r" not in a
    assert read_samples_csv(tmp_path / "a" / "samples.csv").shape == (24, 2)
    meta = json.loads((tmp_path / "a" / "metadata.json").read_text())
    assert meta["seed"] == 3 and meta["complete"]
    metrics = json.loads((tmp_path / "a" / "metrics.json").read_text())
    assert math.isfinite(metrics["nll"]) and math.isfinite(metrics["w2"])


def test_config_echo_replays_bitwise(tmp_path):
    cfg = _write(tmp_path / "tiny.yaml", TINY_SSI)
    assert cli.main(["sample", str(cfg), "-o", str(tmp_path / "a")]) == 0
    echo = json.loads((tmp_path / "a" / "config.json").read_text())
    assert parse_config(echo) == load_config(cfg)
    _write(tmp_path / "replay.yaml", echo)
    assert cli.main(["sample", str(tmp_path / "replay.yaml"), "-o", str(tmp_path / "r")]) == 0
    assert (tmp_path / "a" / "samples.csv").read_bytes() == (tmp_path / "r" / "samples.csv").read_bytes()


def test_sample_seed_override_changes_samples(tmp_path):
    cfg = _write(tmp_path / "tiny.yaml", TINY_SSI)
    assert cli.main(["sample", str(cfg), "-o", str(tmp_path / "a")]) == 0
    assert cli.main(["sample", str(cfg), "-o", str(tmp_path / "b"), "--seed", "4"]) == 0
    assert (tmp_path / "a" / "samples.csv").read_bytes() != (tmp_path / "b" / "samples.csv").read_bytes()


@pytest.mark.parametrize(
    "patch",
    [
        {"method": {**TINY_SSI["method"], "n_outer": 0}},
        {"method": {**TINY_SSI["method"], "bogus": 1}},
        {"surprise": True},
        {"target": {"name": "no_such_target"}},
        {"method": {**TINY_SSI["method"], "T0": 0.995}},
    ],
)
def test_sample_invalid_config_exits_2(tmp_path, patch):
    cfg = _write(tmp_path / "bad.yaml", {**TINY_SSI, **patch})
    assert cli.main(["sample", str(cfg), "-o", str(tmp_path / "out")]) == 2
    assert not (tmp_path / "out" / "samples.csv").exists()


def test_sample_missing_or_malformed_file_exits_2(tmp_path):
    assert cli.main(["sample", str(tmp_path / "nope.yaml")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [unclosed\n")
    assert cli.main(["sample", str(bad)]) == 2
    bad.write_text("- a list\n")
    assert cli.main(["sample", str(bad)]) == 2


def test_sample_runtime_failure_exits_1_and_keeps_metadata(tmp_path):
    # ULA with step 3 on N(0, 1) doubles |x| every step until the score overflows.
    cfg = _write(tmp_path / "ula.yaml", _baseline("ula", step_size=3.0, num_steps=2000))
    out = tmp_path / "out"
    assert cli.main(["sample", str(cfg), "-o", str(out)]) == 1
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["complete"] is False
    assert "score" in meta["error"]
    assert (out / "config.json").exists()


def test_sample_uses_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    cfg = _write(tmp_path / "tiny.yaml", TINY_SSI)
    assert cli.main(["sample", str(cfg)]) == 0
    (run,) = (tmp_path / "root").iterdir()
    assert run.name.startswith("tiny-")
    assert (run / "samples.csv").exists()


# --- compare ---------------------------------------------------------------------------------------


def test_compare_columns_follow_lexical_config_order(tmp_path):
    suite = tmp_path / "suite"
    suite.mkdir()
    _write(suite / "b_ula.yaml", _baseline("ula", step_size=0.1, num_steps=20))
    _write(suite / "a_mala.yaml", _baseline("mala", step_size=0.1, num_steps=20))
    _write(suite / "c_hmc.yaml", _baseline("hmc", step_size=0.1, leapfrog_steps=5, num_transitions=3))
    out = tmp_path / "out"
    assert cli.main(["compare", str(suite), "-o", str(out)]) == 0
    rows = _read_table(out / "table.csv")
    assert rows[0] == ["metric", "a_mala", "b_ula", "c_hmc"]
    assert [r[0] for r in rows[1:]] == ["nll", "mmd", "w2", "modes_found"]
    assert all(math.isfinite(float(v)) for v in rows[1][1:])
    for label in ("a_mala", "b_ula", "c_hmc"):
        assert (out / label / "samples.csv").exists()


def test_compare_failed_method_gives_nan_column(tmp_path):
    suite = tmp_path / "suite"
    suite.mkdir()
    _write(suite / "good.yaml", _baseline("ula", step_size=0.1, num_steps=20))
    _write(suite / "bad.yaml", _baseline("ula", step_size=3.0, num_steps=2000))
    out = tmp_path / "out"
    assert cli.main(["compare", str(suite), "-o", str(out)]) == 1
    rows = _read_table(out / "table.csv")
    assert rows[0] == ["metric", "bad", "good"]
    nll = rows[1]
    assert nll[1] == "nan" and math.isfinite(float(nll[2]))


def test_compare_empty_or_missing_directory_exits_2(tmp_path):
    (tmp_path / "empty").mkdir()
    assert cli.main(["compare", str(tmp_path / "empty")]) == 2
    assert cli.main(["compare", str(tmp_path / "missing")]) == 2


def test_compare_rejects_mixed_targets(tmp_path):
    suite = tmp_path / "suite"
    suite.mkdir()
    _write(suite / "a.yaml", _baseline("ula", step_size=0.1, num_steps=5))
    other = _baseline("ula", step_size=0.1, num_steps=5)
    other["target"] = {"name": "gaussian", "params": {"dim": 3}}
    _write(suite / "b.yaml", other)
    assert cli.main(["compare", str(suite), "-o", str(tmp_path / "out")]) == 2


# --- ablate ------------------------------------------------------------------------------------------


def _ablation_cfg(grid, seeds):
    cfg = dict(TINY_SSI)
    cfg["ablation"] = {"grid": grid, "seeds": seeds, "preconditioning": [False, True]}
    return cfg


def test_ablate_one_point_grid(tmp_path):
    cfg = _write(tmp_path / "abl.yaml", _ablation_cfg([0.3], [0]))
    out = tmp_path / "out"
    assert cli.main(["ablate", str(cfg), "-o", str(out)]) == 0
    long_rows = _read_table(out / "ablation_long.csv")
    assert long_rows[0] == ["T0", "precondition", "seed", "mmd", "w2", "error"]
    assert len(long_rows) == 3
    agg = _read_table(out / "ablation_aggregate.csv")
    assert len(agg) == 3  # header plus one row per preconditioning flag
    assert {r[0] for r in agg[1:]} == {"0.3"}


def test_ablate_aggregate_is_mean_over_seeds(tmp_path):
    cfg = _write(tmp_path / "abl.yaml", _ablation_cfg([0.01, 0.5], [0, 1]))
    out = tmp_path / "out"
    assert cli.main(["ablate", str(cfg), "-o", str(out)]) == 0
    long_rows = _read_table(out / "ablation_long.csv")[1:]
    agg = _read_table(out / "ablation_aggregate.csv")[1:]
    assert len(long_rows) == 8 and len(agg) == 4
    for T0, pre, mmd, w2, n_seeds, n_failed in agg:
        cell = [r for r in long_rows if r[0] == T0 and r[1] == pre]
        assert int(n_seeds) == 2 and int(n_failed) == 0
        assert float(mmd) == pytest.approx(np.mean([float(r[3]) for r in cell]), rel=1e-12)
        assert float(w2) == pytest.approx(np.mean([float(r[4]) for r in cell]), rel=1e-12)


def test_ablate_without_section_exits_2(tmp_path):
    cfg = _write(tmp_path / "plain.yaml", TINY_SSI)
    assert cli.main(["ablate", str(cfg), "-o", str(tmp_path / "out")]) == 2


def test_ablation_section_requires_ssi():
    raw = _baseline("ula", step_size=0.1, num_steps=5)
    raw["ablation"] = {"grid": [0.3]}
    with pytest.raises(ValueError):
        parse_config(raw)


# --- bundled configs ----------------------------------------------------------------------------------


def test_every_bundled_config_validates():
    names = bundled_configs()
    assert {"mog7x7_ssi", "rings_suite", "mog40_suite"} <= set(names)
    for name in names:
        if name.endswith("_suite"):
            continue
        load_config(name)


def test_bundled_mog7x7_config_matches_hyper_parameter_table():
    m = load_config("mog7x7_ssi").method
    assert (m.T0, m.T_end, m.M) == (0.2, 0.99, 100)
    assert (m.init_tau, m.init_steps, m.init_precondition) == (0.1, 100, True)
    v = m.velocity
    assert (v.step_size, v.num_steps, v.n_particles, v.precondition) == (0.01, 100, 800, True)


def test_rings_suite_covers_all_methods():
    from ssi_sampler.config import resolve_config_path

    suite = resolve_config_path("rings_suite")
    methods = sorted(load_config(p).method.name for p in suite.glob("*.yaml"))
    assert methods == ["hmc", "mala", "pula", "ssi", "ula"]


def test_list_command(capsys):
    assert cli.main(["list"]) == 0
    assert "mog7x7_ssi" in capsys.readouterr().out.split()


def test_unknown_command_and_bad_workers(tmp_path):
    assert cli.main(["frobnicate"]) == 2
    cfg = _write(tmp_path / "tiny.yaml", TINY_SSI)
    assert cli.main(["sample", str(cfg), "--workers", "0"]) == 2
