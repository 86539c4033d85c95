from __future__ import annotations

import csv
import json
import math
from fractions import Fraction

import numpy as np
import pytest

from triadic import cli
from triadic.exceptions import ConfigMismatch, InvalidProbability, RefusedScale
from triadic.harness import (
    RunConfig,
    ScanConfig,
    cmd_collapse,
    cmd_oracle,
    cmd_run,
    cmd_scan,
    cmd_threshold,
    estimate_threshold,
    propagation_polynomial,
    run_trials,
    trial_seed,
)
from triadic.process import init_process, run_phase1, run_phase2


class TestConfig:
    def test_exactly_one(self):
        with pytest.raises(ConfigMismatch):
            RunConfig(n=10)
        with pytest.raises(ConfigMismatch):
            RunConfig(n=10, c=0.5, p=0.1)

    def test_probability_range(self):
        with pytest.raises(InvalidProbability):
            RunConfig(n=4, c=3.0)
        assert RunConfig(n=100, c=0.5).prob == 0.05

    def test_scan_bracket(self):
        with pytest.raises(ConfigMismatch):
            ScanConfig(n_values=[10], c_lo=0.5, c_hi=0.5)
        with pytest.raises(ConfigMismatch):
            ScanConfig(n_values=[10], trials=0)


class TestRun:
    def test_supercritical_artifacts(self, tmp_path):
        n = 200
        res = cmd_run(RunConfig(n=n, c=0.8, seed=1, out_dir=str(tmp_path), checkpoint_interval=4000))
        assert res.report.propagated
        T = res.params.T
        with open(tmp_path / "checkpoints.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) - 1 == math.floor(T * n * n / 4000) + 1
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["propagated"] and report["final_edges"] == n * (n - 1) // 2
        assert json.loads((tmp_path / "comparison.json").read_text())["checkpoints"] == len(rows) - 1
        assert (tmp_path / "trajectory.csv").exists() and (tmp_path / "rounds.csv").exists()

    def test_subcritical(self):
        n = 400
        res = cmd_run(RunConfig(n=n, c=0.3, seed=2))
        assert not res.report.propagated
        assert res.report.final_edges <= n**1.5 / 2

    def test_p_one(self):
        res = cmd_run(RunConfig(n=10, p=1.0, seed=0))
        assert res.report.propagated

    def test_phase2_only(self):
        res = cmd_run(RunConfig(n=50, c=1.0, seed=0, mode="phase2-only"))
        assert res.report.phase1_steps == 0 and res.checkpoints == []

    def test_matches_batch_kernel(self):
        # the checkpointed Python path and the batch kernel agree seed for seed
        n, c = 120, 0.7
        seeds = [trial_seed(5, n, c, k) for k in range(4)]
        rows = run_trials(n, c / math.sqrt(n), seeds)
        for seed, row in zip(seeds, rows):
            res = cmd_run(RunConfig(n=n, c=c, seed=seed, checkpoints=False))
            assert (res.report.final_edges, res.report.phase1_steps, res.report.phase2_rounds) == tuple(row[:3])

    def test_reproducible_bytes(self, tmp_path):
        for k in (1, 2):
            cmd_run(RunConfig(n=80, c=0.9, seed=3, out_dir=str(tmp_path / str(k))))
        for name in ("checkpoints.csv", "report.json", "comparison.json", "rounds.csv"):
            assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "2" / name).read_bytes()


class TestTrials:
    def test_worker_independent(self):
        n, c = 60, 0.6
        seeds = [trial_seed(1, n, c, k) for k in range(6)]
        a = run_trials(n, c / math.sqrt(n), seeds, workers=1)
        b = run_trials(n, c / math.sqrt(n), seeds, workers=2)
        assert np.array_equal(a, b)

    def test_seed_derivation(self):
        assert trial_seed(1, 100, 0.5, 3) == trial_seed(1, 100, 0.5, 3)
        assert len({trial_seed(1, 100, 0.5, k) for k in range(100)}) == 100

    def test_modes_share_closure(self):
        # the final edge set of standard runs does not depend on the phase-1 length
        n, c = 150, 0.55
        seeds = [trial_seed(2, n, c, k) for k in range(10)]
        full = run_trials(n, c / math.sqrt(n), seeds, max_rounds=n * n)
        p2 = run_trials(n, c / math.sqrt(n), seeds, mode="phase2-only", max_rounds=n * n)
        assert np.array_equal(full[:, 0], p2[:, 0])


class TestScan:
    def test_scan_csv(self, tmp_path):
        cfg = ScanConfig(n_values=[60], c_values=[0.0, 2.0], trials=10, out_dir=str(tmp_path))
        rows = cmd_scan(cfg)
        assert rows[0]["freq"] == 0.0 and rows[1]["freq"] == 1.0
        lines = (tmp_path / "frequency.csv").read_text().splitlines()
        assert lines[0] == "n,c,trials,propagated,freq,mean_edges,mean_rounds"
        assert len(lines) == 3

    def test_deep_supercritical(self):
        row = cmd_scan(ScanConfig(n_values=[500], c_values=[2.0], trials=50))[0]
        assert row["freq"] == 1.0

    def test_monotone_in_c(self):
        cfg = ScanConfig(n_values=[200], c_values=[0.2, 0.4, 0.6, 0.8, 1.0], trials=40, master_seed=3)
        freqs = [r["freq"] for r in cmd_scan(cfg)]
        for a, b in zip(freqs, freqs[1:]):
            sigma = math.sqrt(max(a * (1 - a), b * (1 - b), 1 / 40) / 40)
            assert b >= a - 3 * sigma


class TestThreshold:
    def test_bracket_failure(self):
        est = estimate_threshold(200, ScanConfig(n_values=[200], c_lo=1.5, c_hi=2.0, trials=10))
        assert est.bracket_failure and est.c_hat is None

    def test_wide_tol(self):
        cfg = ScanConfig(n_values=[200], c_lo=0.1, c_hi=1.5, tol=2.0, trials=10)
        est = estimate_threshold(200, cfg)
        assert est.c_hat == pytest.approx(0.8) and len(est.probes) == 2

    def test_json(self, tmp_path):
        cfg = ScanConfig(n_values=[150], c_lo=0.1, c_hi=1.5, tol=0.2, trials=10, out_dir=str(tmp_path))
        est = cmd_threshold(cfg)[0]
        data = json.loads((tmp_path / "threshold.json").read_text())
        assert data[0]["c_hat"] == est.c_hat
        assert est.width <= 0.2


class TestOracle:
    def test_extremes(self):
        for n in range(3, 7):
            assert cmd_oracle(n, 1.0).probability == 1.0
            assert cmd_oracle(n, 0.0).probability == 0.0

    def test_n4_exact(self):
        assert cmd_oracle(4, Fraction(1, 2)).probability == Fraction(5, 16)

    def test_polynomial_total(self):
        counts = propagation_polynomial(5)
        assert sum(counts) <= 2**10 and counts[-1] == 1

    def test_refused(self):
        with pytest.raises(RefusedScale):
            cmd_oracle(7, 0.5)

    def test_matches_bruteforce_python(self):
        # independent closure computation in pure Python for n = 4
        from itertools import combinations

        n = 4
        triples = list(combinations(range(n), 3))
        total = 0.0
        p = 0.3
        for mask in range(1 << len(triples)):
            H = [t for k, t in enumerate(triples) if mask >> k & 1]
            edges = {(0, u) for u in range(1, n)}
            changed = True
            while changed:
                changed = False
                for a, b, c in H:
                    sides = [(a, b), (a, c), (b, c)]
                    if sum(s in edges for s in sides) == 2:
                        edges.update(sides)
                        changed = True
            if len(edges) == 6:
                total += p ** len(H) * (1 - p) ** (4 - len(H))
        assert cmd_oracle(4, p).probability == pytest.approx(total, abs=1e-15)


class TestCollapseCmd:
    def test_supercritical(self, tmp_path):
        rep = cmd_collapse(120, 7, c=1.0, out_dir=str(tmp_path))
        assert rep.propagated and rep.verified and rep.is_hypertree and rep.spanning
        assert rep.oracle_coherent
        assert (tmp_path / "certificate.txt").exists()

    def test_subcritical(self, tmp_path):
        rep = cmd_collapse(200, 1, c=0.2, out_dir=str(tmp_path))
        assert not rep.propagated and rep.verified is None
        assert not (tmp_path / "certificate.txt").exists()


class TestCli:
    def test_run(self, tmp_path, capsys):
        assert cli.main(["run", "--n", "60", "--c", "0.9", "--seed", "2", "--out-dir", str(tmp_path)]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["n"] == 60 and (tmp_path / "checkpoints.csv").exists()

    def test_scan(self, tmp_path, capsys):
        argv = ["scan", "--n", "40", "50", "--c", "0.5", "1.5", "--trials", "4", "--out-dir", str(tmp_path)]
        assert cli.main(argv) == 0
        assert len(json.loads(capsys.readouterr().out)) == 4

    def test_threshold(self, capsys):
        argv = ["threshold", "--n", "80", "--trials", "6", "--c-lo", "0.1", "--c-hi", "2.0", "--tol", "0.5"]
        assert cli.main(argv) == 0
        assert json.loads(capsys.readouterr().out)[0]["n"] == 80

    def test_oracle(self, capsys):
        assert cli.main(["oracle", "--n", "4", "--p", "1/2"]) == 0
        assert json.loads(capsys.readouterr().out)["probability"] == 0.3125

    def test_collapse(self, tmp_path, capsys):
        assert cli.main(["collapse", "--n", "60", "--c", "1.5", "--seed", "1", "--out-dir", str(tmp_path)]) == 0
        assert json.loads(capsys.readouterr().out)["verified"] is True

    def test_config_error_exit(self, capsys):
        assert cli.main(["run", "--n", "4", "--c", "5.0"]) == 2
        assert "error" in capsys.readouterr().err

    def test_non_propagation_exit_zero(self, capsys):
        assert cli.main(["run", "--n", "100", "--c", "0.1"]) == 0
        assert json.loads(capsys.readouterr().out)["propagated"] is False
