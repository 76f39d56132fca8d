"""Command-line interface: end-to-end runs and reproducibility."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from hbe.cli import main
from hbe.kernels import PointSet
from hbe.serialize import save_dataset

EPS, TAU, CHI = "0.6", "0.45", "0.45"


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Dataset, queries, and one built index shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(123)
    coords = 0.05 * rng.standard_normal((40, 3))
    save_dataset(PointSet(coords=coords, R=1.0), root / "data.csv", fmt="csv")
    queries = np.vstack([np.zeros(3), 0.02 * np.ones(3), np.full(3, 9.0)])
    save_dataset(PointSet(coords=queries, R=1.0), root / "queries.csv", fmt="csv")
    # bench sizes its sample counts from 1/kde(x); keep those queries near
    save_dataset(PointSet(coords=queries[:2], R=1.0), root / "bench_q.csv",
                 fmt="csv")
    (root / "vec.txt").write_text(
        "\n".join(str(v) for v in rng.random(40)) + "\n"
    )
    runner = CliRunner()
    res = runner.invoke(main, [
        "build", "--data", str(root / "data.csv"), "--kernel", "exponential",
        "--method", "hbe-exp", "--beta", "1.0", "--eps", EPS, "--tau", TAU,
        "--chi", CHI, "--seed", "3", "--out", str(root / "index.hbe"),
    ])
    assert res.exit_code == 0, res.output
    return root


def test_build_writes_manifest_with_checksum(workdir):
    manifest = json.loads((workdir / "index.hbe.manifest.json").read_text())
    digest = hashlib.sha256((workdir / "index.hbe").read_bytes()).hexdigest()
    assert manifest["sha256"] == digest
    assert manifest["seed"] == 3


def test_build_reproducible(workdir):
    runner = CliRunner()
    res = runner.invoke(main, [
        "build", "--data", str(workdir / "data.csv"), "--kernel", "exponential",
        "--method", "hbe-exp", "--beta", "1.0", "--eps", EPS, "--tau", TAU,
        "--chi", CHI, "--seed", "3", "--out", str(workdir / "index2.hbe"),
    ])
    assert res.exit_code == 0, res.output
    assert (workdir / "index.hbe").read_bytes() == (workdir / "index2.hbe").read_bytes()


def test_query_runs_and_is_reproducible(workdir):
    runner = CliRunner()
    args = [
        "query", "--index", str(workdir / "index.hbe"),
        "--queries", str(workdir / "queries.csv"),
        "--eps", EPS, "--tau", TAU, "--chi", CHI,
    ]
    r1 = runner.invoke(main, args + ["--out", str(workdir / "q1.csv")])
    assert r1.exit_code == 0, r1.output
    r2 = runner.invoke(main, args + ["--out", str(workdir / "q2.csv")])
    assert r2.exit_code == 0, r2.output
    assert (workdir / "q1.csv").read_bytes() == (workdir / "q2.csv").read_bytes()
    lines = (workdir / "q1.csv").read_text().strip().splitlines()
    assert lines[0] == "query_id,estimate,below_threshold,samples_used"
    assert len(lines) == 4
    # the far query is below threshold and must report 0
    far = lines[3].split(",")
    assert far[1] == "0.0" and far[2] == "1"


def test_query_detects_checksum_mismatch(workdir, tmp_path):
    tampered = tmp_path / "index.hbe"
    blob = bytearray((workdir / "index.hbe").read_bytes())
    blob[-1] ^= 0xFF
    tampered.write_bytes(bytes(blob))
    manifest = tmp_path / "index.hbe.manifest.json"
    manifest.write_text((workdir / "index.hbe.manifest.json").read_text())
    runner = CliRunner()
    res = runner.invoke(main, [
        "query", "--index", str(tampered),
        "--queries", str(workdir / "queries.csv"),
        "--eps", EPS, "--tau", TAU, "--chi", CHI,
        "--out", str(tmp_path / "q.csv"),
    ])
    assert res.exit_code != 0
    assert "checksum" in res.output


def test_kmvm_command_reproducible(workdir):
    runner = CliRunner()
    args = [
        "kmvm", "--data", str(workdir / "data.csv"),
        "--vector", str(workdir / "vec.txt"), "--kernel", "exponential",
        "--eps", "0.3", "--tau", "0.01", "--chi", "0.2",
        "--crossover", "1000",
    ]
    r1 = runner.invoke(main, args + ["--out", str(workdir / "y1.txt")])
    assert r1.exit_code == 0, r1.output
    r2 = runner.invoke(main, args + ["--out", str(workdir / "y2.txt")])
    assert r2.exit_code == 0, r2.output
    assert (workdir / "y1.txt").read_bytes() == (workdir / "y2.txt").read_bytes()
    y = [float(v) for v in (workdir / "y1.txt").read_text().split()]
    assert len(y) == 40 and all(v >= 0 for v in y)


def test_verify_passes_and_is_reproducible(workdir, tmp_path):
    runner = CliRunner()
    a, b = tmp_path / "v1.csv", tmp_path / "v2.csv"
    for out in (a, b):
        res = runner.invoke(main, ["verify", "--instances", "300",
                                   "--out", str(out)])
        assert res.exit_code == 0, res.output
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().strip().splitlines()
    assert lines[0] == "check,instances,violations,worst_slack"
    assert all(row.split(",")[2] == "0" for row in lines[1:])


def test_bench_emits_rows(workdir, tmp_path):
    runner = CliRunner()
    out = tmp_path / "bench.csv"
    res = runner.invoke(main, [
        "bench", "--data", str(workdir / "data.csv"),
        "--queries", str(workdir / "bench_q.csv"), "--kernel", "exponential",
        "--methods", "hbe-exp,rs", "--eps", "0.5", "--out", str(out),
    ])
    assert res.exit_code == 0, res.output
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "method,mu_true,estimate,rel_error,samples,wall_time_ns"
    assert len(lines) == 1 + 2 * 2


def test_build_requires_sizing_information(workdir, tmp_path):
    runner = CliRunner()
    res = runner.invoke(main, [
        "build", "--data", str(workdir / "data.csv"),
        "--out", str(tmp_path / "x.hbe"),
    ])
    assert res.exit_code != 0
    assert "n-tables" in res.output or "eps" in res.output
