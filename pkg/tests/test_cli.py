import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

from thermix import cli
from thermix.dense import thermal_energy
from thermix.hamiltonian import tfim
from thermix.metts import max_workers

TFIM4 = {"preset": "tfim", "n": 4, "J": 1.0, "g": 1.0}

CONFIGS = {
    "gibbs": {"hamiltonian": TFIM4, "temperature": 1.0},
    "metts": {"hamiltonian": TFIM4, "beta": 1.0, "steps": 6, "walkers": 2, "dmax": 8},
    "recovery": {"hamiltonian": {"preset": "tfim", "n": 6}, "temperature": 1.0,
                 "buffer_sizes": [2, 3, 4], "bridge_windows": [2]},
    "mixture": {"hamiltonian": TFIM4, "temperature": 1.0, "l": 1, "c_width": 0},
    "quench": {"hamiltonian": TFIM4, "beta": 1.0, "steps": 4, "flip_site": 1,
               "times": [0.0, 0.2], "dt": 0.1},
}


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def write_config(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


class TestConfig:
    def test_missing_field_is_config_error(self):
        with pytest.raises(cli.ConfigError):
            cli.resolve_config("gibbs", {"hamiltonian": TFIM4}, out="x")

    def test_unknown_field_rejected(self):
        with pytest.raises(cli.ConfigError):
            cli.resolve_config("gibbs", {**CONFIGS["gibbs"], "bogus": 1}, out="x")

    def test_defaults_and_overrides(self):
        cfg = cli.resolve_config("metts", CONFIGS["metts"], seed=7, out="o")
        assert cfg["seed"] == 7 and cfg["out"] == "o"
        assert cfg["burn_in"] == 0 and cfg["schedule"] == "alternating"

    def test_output_directory_required(self):
        with pytest.raises(cli.ConfigError):
            cli.resolve_config("gibbs", CONFIGS["gibbs"])


class TestExitCodes:
    def test_success(self, tmp_path):
        p = write_config(tmp_path, CONFIGS["gibbs"])
        assert cli.main(["gibbs", str(p), "--out", str(tmp_path / "o")]) == 0

    def test_missing_field(self, tmp_path, capsys):
        p = write_config(tmp_path, {"hamiltonian": {"preset": "tfim"}, "temperature": 1.0})
        assert cli.main(["gibbs", str(p), "--out", str(tmp_path / "o")]) == 2
        assert "config error" in capsys.readouterr().err

    def test_unreadable_config(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert cli.main(["gibbs", str(p), "--out", str(tmp_path / "o")]) == 2

    def test_infeasible_plan(self, tmp_path):
        cfg = {**CONFIGS["mixture"], "c_width": 1}
        p = write_config(tmp_path, cfg)
        assert cli.main(["mixture", str(p), "--out", str(tmp_path / "o")]) == 2

    def test_numerical_failure(self, tmp_path, capsys):
        # a strong single-site field at tiny T leaves rho_beta rank deficient
        ham = {"preset": "custom", "n": 4,
               "terms": [{"first_site": k, "width": 1,
                          "matrix": [[-1, 0], [0, 0], [0, 0], [1, 0]]} for k in range(4)]}
        cfg = {"hamiltonian": ham, "temperature": 0.001, "buffer_sizes": [1, 2, 3],
               "kmap": False}
        p = write_config(tmp_path, cfg)
        assert cli.main(["recovery", str(p), "--out", str(tmp_path / "o")]) == 3
        assert "numerical failure" in capsys.readouterr().err

    def test_console_script(self, tmp_path):
        p = write_config(tmp_path, CONFIGS["gibbs"])
        res = subprocess.run([sys.executable, "-m", "thermix.cli", "gibbs", str(p),
                              "--out", str(tmp_path / "o")], capture_output=True)
        assert res.returncode == 0


class TestOutputs:
    def test_gibbs_values(self, tmp_path):
        cli.run("gibbs", CONFIGS["gibbs"], out=tmp_path)
        rows = read_csv(tmp_path / "gibbs.csv")
        assert rows[0] == ["quantity", "site", "value"]
        energy = [float(r[2]) for r in rows if r[0] == "energy"][0]
        assert energy == thermal_energy(tfim(4), 1.0)

    def test_zero_hamiltonian_uniform(self, tmp_path):
        cfg = {"hamiltonian": {"preset": "custom", "n": 3, "terms": []}, "temperature": 1.0}
        cli.run("gibbs", cfg, out=tmp_path)
        rows = {(r[0], r[1]): float(r[2]) for r in read_csv(tmp_path / "gibbs.csv")[1:]}
        assert_allclose(rows[("entropy", "")], 3 * np.log(2), rtol=1e-12)
        assert all(abs(rows[("Z", str(k))]) < 1e-15 for k in range(3))

    def test_metts_single_sample_and_verify(self, tmp_path):
        cfg = {"hamiltonian": {"preset": "tfim", "n": 6}, "beta": 1.0, "steps": 1,
               "verify": True}
        man = cli.run("metts", cfg, out=tmp_path)
        assert len(man["ensemble"]["samples"]) == 1
        dist = float(read_csv(tmp_path / "identity_check.csv")[1][2])
        assert dist <= 1e-10

    def test_recovery_columns(self, tmp_path):
        cli.run("recovery", CONFIGS["recovery"], out=tmp_path)
        rows = read_csv(tmp_path / "profile.csv")
        assert rows[0] == ["buffer_width", "trace_error_petz", "trace_error_kmap", "cmi",
                           "bridge_defect"]
        assert len(rows) == 4
        fit = json.loads((tmp_path / "profile_fit.json").read_text())
        assert set(fit) == {"exp_linear", "exp_sqrt", "monotone"}

    def test_mixture_manifest(self, tmp_path):
        cli.run("mixture", CONFIGS["mixture"], out=tmp_path)
        mix = json.loads((tmp_path / "mixture.json").read_text())
        assert_allclose(sum(t["p"] for t in mix["terms"]), 1.0, rtol=1e-12)
        assert mix["audit"]["bound_holds"]
        assert all((tmp_path / t["file"]).exists() for t in mix["terms"])
        assert read_csv(tmp_path / "audit.csv")[0] == ["term_id", "cut", "rank", "bound"]

    def test_quench_tables(self, tmp_path):
        cli.run("quench", CONFIGS["quench"], out=tmp_path)
        traj = read_csv(tmp_path / "trajectory.csv")
        assert traj[0] == ["time", "site", "observable", "mean", "stderr", "method", "Dmax"]
        assert len(traj) == 1 + 2 * 4
        assert len(read_csv(tmp_path / "reference.csv")) == len(traj)

    @pytest.mark.parametrize("command", sorted(CONFIGS))
    def test_manifest_resolves_config(self, command, tmp_path):
        man = cli.run(command, CONFIGS[command], seed=3, out=tmp_path)
        on_disk = json.loads((tmp_path / "manifest.json").read_text())
        assert on_disk["command"] == command
        assert on_disk["config"]["seed"] == 3
        assert on_disk["outputs"] == sorted(man["outputs"])
        # the echoed config is enough to re-run
        again = cli.resolve_config(command, on_disk["config"])
        assert again == on_disk["config"]


class TestDeterminism:
    @pytest.mark.parametrize("command", sorted(CONFIGS))
    def test_bit_exact_rerun(self, command, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        man = cli.run(command, CONFIGS[command], seed=11, out=a)
        cli.run(command, CONFIGS[command], seed=11, out=b)
        for name in man["outputs"]:
            if name.endswith(".csv") or name.endswith(".mps") or name.endswith(".json"):
                assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_seed_changes_chain(self, tmp_path):
        cli.run("metts", CONFIGS["metts"], seed=1, out=tmp_path / "a")
        cli.run("metts", CONFIGS["metts"], seed=2, out=tmp_path / "b")
        assert (tmp_path / "a/chain_0.csv").read_bytes() != (tmp_path / "b/chain_0.csv").read_bytes()


class TestThreads:
    def test_env_caps_workers(self, monkeypatch):
        monkeypatch.setenv("THERMIX_THREADS", "1")
        assert max_workers() == 1

    def test_unset_uses_cpu_count(self, monkeypatch):
        monkeypatch.delenv("THERMIX_THREADS", raising=False)
        assert max_workers() == max(1, os.cpu_count() or 1)
