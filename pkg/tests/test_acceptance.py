"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run the fast gate with ``pytest -m 'not extended'``; the full suite includes
the two long Monte Carlo studies (bootstrap coverage ~10-15 min, rate
separation ~1-2 min at the pinned sizes).
"""

import json

import numpy as np
import pytest

from sgdboot.cli import dispatch
from sgdboot.experiments import default_config, run_experiment
from sgdboot.linearization import scalar_sigma2


RESULTS: list[str] = []  # echoed by conftest's terminal summary


def report(num: int, description: str, ok: bool) -> bool:
    line = f"ACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} - {description}"
    print(line)
    RESULTS.append(line)
    return ok


def sigma2_direct(n, gamma, c0):
    alpha = c0 / (1.0 + np.arange(n)) ** gamma
    total = 0.0
    for j in range(1, n):
        s = 0.0
        for k in range(j, n):
            p = 1.0
            for l in range(j + 1, k + 1):
                p *= 1.0 - alpha[l]
            s += p
        total += (alpha[j] * s) ** 2
    return total / n


@pytest.fixture(scope="module")
def identity_table():
    return run_experiment(default_config("identity_check"))  # 100 instances


def test_criterion_1_lower_bound_reproduction():
    # gammas {0.5..0.9}, n {2^10..2^20}, c0 = k0 = 1
    cfg = default_config("lower_bound", n_grid=tuple(2**e for e in range(10, 21)))
    table = run_experiment(cfg)
    stats = {}
    for i in range(table.n_rows):
        stats[(table.columns["gamma"][i], table.columns["n"][i])] = table.columns[
            "statistic"
        ][i]
    positive = all(v > 0 for v in stats.values())
    plateau = all(
        abs(stats[(g, 2**20)] - stats[(g, 2**19)]) / stats[(g, 2**19)] < 0.10
        for g in (0.5, 0.6, 0.7, 0.8)
    )
    spot_a = abs(scalar_sigma2(2, 0.5, 1.0) - 0.25) < 1e-12
    s3 = scalar_sigma2(3, 0.5, 1.0)
    spot_b = abs(s3 - sigma2_direct(3, 0.5, 1.0)) < 1e-12 and abs(s3 - 0.44846) < 1e-4
    ok = positive and plateau and spot_a and spot_b
    assert report(1, "lower-bound statistic positive with <10% plateau drift", ok)


def test_criterion_2_matrix_identities(identity_table):
    cols = identity_table.columns
    ok = (
        identity_table.n_rows == 100
        and all(cols["identity_ok"])
        and max(max(cols["residual_sum"]), max(cols["residual_single_max"])) <= 1e-10
    )
    assert report(2, "identity residuals <= 1e-10 on 100 random instances", ok)


def test_criterion_3_spectral_envelopes(identity_table):
    cols = identity_table.columns
    ok = all(cols["envelope_ok"])
    assert report(3, "Q_i and Sigma_n spectral envelopes hold with zero violations", ok)


def test_criterion_4_sigma_n_rate():
    table = run_experiment(default_config("sigma_scan"))
    expected_rows = 3 * 9  # gammas {0.6,0.7,0.8} x n {2^8..2^16}
    ok = table.n_rows == expected_rows and all(table.columns["ok"])
    assert report(4, "||Sigma_n - Sigma_inf|| n^{1-gamma} <= C'_inf on the scan", ok)


def test_criterion_5_second_moment_bound():
    table = run_experiment(default_config("moment_check"))  # R=2000, k up to 4096
    ok = all(table.columns["ok"]) and table.metadata["pass"]
    assert report(5, "E||theta_k - theta*||^2 below its envelope at every checkpoint", ok)


def test_criterion_6_matrix_bernstein():
    table = run_experiment(default_config("concentration_check"))  # n=1024 d=2 R=500
    fraction = table.metadata["headline_metrics"]["violation_fraction"]
    ok = fraction <= 0.01 and table.metadata["pass"]
    assert report(6, f"Bernstein violation fraction {fraction:.4f} <= 0.01", ok)


def test_criterion_7_clt_sanity():
    table = run_experiment(default_config("clt_sanity"))  # d=1 n=4096 R=5000
    worst = table.metadata["headline_metrics"]["max_proxy"]
    ok = worst <= 0.03
    assert report(7, f"whitened-average KS proxy {worst:.4f} <= 0.03", ok)


@pytest.mark.extended
def test_criterion_8_bootstrap_coverage():
    table = run_experiment(default_config("coverage"))  # n=4096 M=400 R=2000
    coverage = table.metadata["headline_metrics"]["coverage_ball"]
    ok = 0.87 <= coverage <= 0.93
    assert report(8, f"norm-ball coverage {coverage:.4f} in [0.87, 0.93]", ok)


@pytest.mark.extended
def test_criterion_9_rate_separation():
    table = run_experiment(default_config("rate_fit"))  # R=1e4 per (gamma, n)
    slope = table.metadata["headline_metrics"]["slope"]
    dominance = table.metadata["headline_metrics"]["sigma_n_dominates"]
    ok = -0.35 <= slope <= -0.05 and dominance
    assert report(
        9, f"Sigma_inf KS slope {slope:.3f} in [-0.35,-0.05]; Sigma_n dominated", ok
    )


_GATE_CONFIGS = {
    "lower-bound": ["--set", "grid.gamma=0.6,0.8", "--set", "grid.n=16,32,64"],
    "sigma-scan": ["--set", "grid.gamma=0.7", "--set", "grid.n=32,64"],
    "coverage": ["--set", "run.replications=6", "--set", "bootstrap.m=60", "--n", "64"],
    "clt-sanity": ["--set", "run.replications=80", "--n", "64", "--set", "est.directions=2",
                   "--set", "est.threshold=1.0"],
    "rate-fit": ["--set", "run.replications=150", "--set", "grid.n=32,64",
                 "--set", "grid.gamma=0.8", "--set", "est.slope_bounds=-99,99"],
    "moment-check": ["--set", "run.replications=8", "--n", "17", "--set", "run.checkpoints=0,16"],
    "concentration-check": ["--set", "run.replications=4", "--n", "32"],
    "identity-check": ["--set", "run.replications=4"],
}


def test_criterion_10_determinism_gate(tmp_path):
    ok = True
    for command, overrides in _GATE_CONFIGS.items():
        outputs = []
        for threads, tag in ((1, "a"), (4, "b"), (1, "c")):
            csv_path = tmp_path / f"{command}-{tag}.csv"
            json_path = tmp_path / f"{command}-{tag}.json"
            argv = [command, *overrides, "--seed", "11", "--threads", str(threads)]
            code = dispatch(argv + ["--out", str(csv_path)])
            assert code in (0, 2), command
            code = dispatch(argv + ["--out", str(json_path), "--format", "json"])
            assert code in (0, 2), command
            outputs.append((csv_path.read_bytes(), json_path.read_bytes()))
        same = outputs[0] == outputs[1] == outputs[2]
        if not same:
            print(f"determinism mismatch for {command}")
        ok = ok and same
    assert report(10, "byte-identical CSV/JSON across reruns and --threads {1,4}", ok)
