import json
import subprocess
import sys

import numpy as np
import pytest

from vortexsheet.cli import STUDIES, config_hash, main, maximal_sweep, random_densities


def _run(tmp_path, command, cfg=None, *extra, out="out"):
    args = [command]
    if cfg is not None:
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps(cfg))
        args += ["--config", str(path)]
    args += ["--out", str(tmp_path / out), *extra]
    return main(args)


def _csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config_hash: ")
    return lines


def test_simulate_flat_sheet(tmp_path):
    cfg = {"initial": {"oracle": {"kind": "flat_uniform", "N": 32}},
           "evolution": {"dt": 0.01, "t_end": 0.2}}
    assert _run(tmp_path, "simulate", cfg) == 0
    lines = _csv(tmp_path / "out" / "simulate.csv")
    assert lines[1] == "t,total_circulation,centroid_x,centroid_y,max_node_displacement"
    assert len(lines) == 2 + 21
    meta = json.loads((tmp_path / "out" / "metadata.json").read_text())
    assert meta["status"] == "ok" and meta["seed"] == 0
    assert meta["config_hash"] == lines[0].split()[-1]
    traj = (tmp_path / "out" / "trajectory.jsonl").read_text().splitlines()
    assert len(traj) == 21


def test_identical_runs_give_identical_csv(tmp_path):
    cfg = {"initial": {"curve": {"N": 32}},
           "evolution": {"dt": 0.05, "t_end": 0.2, "fourier_filter_level": 1e-13}}
    assert _run(tmp_path, "simulate", cfg, out="a") == 0
    assert _run(tmp_path, "simulate", cfg, out="b") == 0
    a = (tmp_path / "a" / "simulate.csv").read_bytes()
    assert a == (tmp_path / "b" / "simulate.csv").read_bytes()


def test_seed_changes_hash():
    assert config_hash({"seed": 0}) != config_hash({"seed": 1})
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})


@pytest.mark.parametrize("cfg", [
    {"initial": {"oracle": {"kind": "nope"}}},
    {"initial": {"curve": {}, "segment": {}}},
    {"evolution": {"scheme": "leapfrog"}},
    {"evolution": {"dt": -1}},
])
def test_bad_config_exits_2(tmp_path, cfg, capsys):
    assert _run(tmp_path, "simulate", cfg) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["category"] == "config"


def test_unreadable_inputs_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["residual", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "o")]) == 2
    assert main(["residual", "--out", str(tmp_path / "o")]) == 2
    assert _run(tmp_path, "convergence", {"study": "unknown"}) == 2


def test_numerical_abort_exits_3(tmp_path, capsys):
    cfg = {"initial": {"oracle": {"kind": "prandtl_munk", "N": 128}},
           "evolution": {"dt": 0.05, "t_end": 1.0}}
    assert _run(tmp_path, "simulate", cfg) == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["category"] == "self_intersection"


def test_strict_regularity_on_prandtl_munk_exits_4(tmp_path, capsys):
    cfg = {"trajectory": {"oracle": {"kind": "prandtl_munk", "N": 256, "dt": 0.5}},
           "strict": True, "lattice": 8}
    assert _run(tmp_path, "regularity", cfg) == 4
    meta = json.loads((tmp_path / "out" / "metadata.json").read_text())
    assert meta["result"]["summary"]["flag"] == "HYPOTHESIS_VIOLATED"


def test_regularity_on_smooth_sheet_is_ok(tmp_path):
    cfg = {"initial": {"curve": {"N": 64}}, "evolution": {"dt": 0.05, "t_end": 0.1}}
    assert _run(tmp_path, "simulate", cfg, out="sim") == 0
    traj = str(tmp_path / "sim" / "trajectory.jsonl")
    assert main(["regularity", traj, "--out", str(tmp_path / "reg"),
                 "--config", str(tmp_path / "simulate.json")]) == 0
    summary = json.loads((tmp_path / "reg" / "regularity.json").read_text())["summary"]
    assert summary["flag"] == "OK"


def test_residual_on_simulated_trajectory(tmp_path, capsys):
    cfg = {"initial": {"curve": {"N": 32}},
           "evolution": {"dt": 0.05, "t_end": 0.4, "fourier_filter_level": 1e-13}}
    assert _run(tmp_path, "simulate", cfg, out="sim") == 0
    traj = str(tmp_path / "sim" / "trajectory.jsonl")
    assert main(["residual", traj, "--out", str(tmp_path / "res")]) == 0
    printed = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
    assert len(printed) == 12
    lines = _csv(tmp_path / "res" / "residuals.csv")
    assert lines[1].startswith("test_function_id,residual_br,residual_euler")
    payload = json.loads((tmp_path / "res" / "residuals.json").read_text())
    assert len(payload["reports"]) == 12 and payload["not_numerically_certified"]


def test_residual_zero_density(tmp_path):
    cfg = {"initial": {"segment": {"N": 16, "gamma": 0.0}},
           "evolution": {"dt": 0.1, "t_end": 0.4}}
    assert _run(tmp_path, "simulate", cfg, out="sim") == 0
    traj = str(tmp_path / "sim" / "trajectory.jsonl")
    assert main(["residual", traj, "--out", str(tmp_path / "res")]) == 0
    reports = json.loads((tmp_path / "res" / "residuals.json").read_text())["reports"]
    for r in reports:
        assert r["residual_br"] == 0.0 and r["residual_euler"] == 0.0
        assert r["decision_br"] == "PASS_BR"


def test_oracle_check_passes(tmp_path):
    assert _run(tmp_path, "oracle-check") == 0
    lines = _csv(tmp_path / "out" / "oracle-check.csv")
    assert all(line.endswith(",1") for line in lines[2:])


def test_pv_study(tmp_path):
    assert _run(tmp_path, "convergence", {"study": "pv-prandtl-munk",
                                          "resolutions": [32, 64]}) == 0
    assert len(_csv(tmp_path / "out" / "convergence-pv-prandtl-munk.csv")) == 4


def test_studies_listed():
    assert set(STUDIES) == {"pv-prandtl-munk", "reparam-invariance", "residual-refinement",
                            "maximal-sweep"}


def test_random_densities_are_seeded():
    (a, ka), (b, kb) = (random_densities(32, 5, np.random.default_rng(4)) for _ in range(2))
    assert np.array_equal(a, b) and np.array_equal(ka, [2, 4, 8, 16, 2])
    r1, _ = maximal_sweep(32, 6, seed=1, n_eps=4)
    r2, _ = maximal_sweep(32, 6, seed=1, n_eps=4)
    assert np.array_equal(r1, r2)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "vortexsheet", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "oracle-check" in proc.stdout
