"""Command-line interface: build, query, bench, kmvm, verify.

Configuration comes from an optional key=value file plus command-line
overrides (overrides win).  Every run is deterministic given (config,
seed): all randomness flows through counter-derived streams, and output
files are written atomically (temp file + rename) so failures never
leave partial results.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import diagnostics, estimation, hbe_core, serialize
from .kmvm import kmvm as _kmvm, kmvm_signed as _kmvm_signed
from ._seeds import derive_rng
from .kernels import KernelSpec, PointSet, kde_exact, normalize_bandwidth

_METHODS = (
    "hbe-exp",
    "hbe-student",
    "hbe-gauss-euclid",
    "hbe-gauss-ball",
    "rs",
    "rff",
)


def _load_config(path: str | None) -> dict:
    cfg = {}
    if path:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise click.ClickException(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            cfg[k.strip().replace("-", "_")] = v.strip()
    return cfg


def _merged(cfg: dict, key: str, value, cast=str):
    """CLI override wins; otherwise config file; otherwise None."""
    if value is not None:
        return value
    if key in cfg:
        return cast(cfg[key])
    return None


def _atomic_write(path: str, text: str) -> None:
    tmp = Path(path).with_suffix(Path(path).suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _make_scheme(method: str, R: float, beta: float, t: float, p: int, q: int,
                 n: int) -> hbe_core.HbeScheme:
    if method == "hbe-exp":
        return hbe_core.make_exponential_hbe(max(R, 1.0), beta)
    if method == "hbe-student":
        return hbe_core.make_student_hbe(p, q)
    if method == "hbe-gauss-euclid":
        return hbe_core.make_gaussian_euclid_hbe(max(R, max(t, 1.0)), t)
    if method == "hbe-gauss-ball":
        return hbe_core.make_gaussian_ball_hbe(max(R, 1.0), beta, n)
    raise click.ClickException(f"method {method} does not build an index")


def _apply_thread_cap() -> None:
    cap = os.environ.get("HBE_THREADS")
    if cap:
        try:
            import numba

            numba.set_num_threads(max(1, int(cap)))
        except (ImportError, ValueError):
            pass


@click.group()
def main() -> None:
    """Hashing-based estimators for kernel density queries."""
    _apply_thread_cap()


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["csv", "bin"]), default=None)
@click.option("--kernel", type=click.Choice(["gaussian", "exponential", "student"]),
              default=None)
@click.option("--bandwidth", type=float, default=None)
@click.option("--p-exponent", type=int, default=None)
@click.option("--method", type=click.Choice(_METHODS), default=None)
@click.option("--beta", type=float, default=None)
@click.option("--t", "t_param", type=float, default=None)
@click.option("--q", "q_param", type=int, default=None)
@click.option("--n-tables", type=int, default=None)
@click.option("--eps", type=float, default=None)
@click.option("--tau", type=float, default=None)
@click.option("--chi", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", required=True, type=click.Path())
def build(data, fmt, kernel, bandwidth, p_exponent, method, beta, t_param, q_param,
          n_tables, eps, tau, chi, seed, config_path, out):
    """Build a serialized index plus a JSON manifest."""
    cfg = _load_config(config_path)
    kernel = _merged(cfg, "kernel", kernel) or "gaussian"
    bandwidth = _merged(cfg, "bandwidth", bandwidth, float) or 1.0
    p_exponent = _merged(cfg, "p_exponent", p_exponent, int) or 2
    method = _merged(cfg, "method", method) or "hbe-exp"
    beta = _merged(cfg, "beta", beta, float) or 0.5
    t_param = _merged(cfg, "t", t_param, float) or 1.0
    q_param = _merged(cfg, "q", q_param, int) or max(1, p_exponent // 2)
    seed = _merged(cfg, "seed", seed, int) or 0
    eps = _merged(cfg, "eps", eps, float)
    tau = _merged(cfg, "tau", tau, float)
    chi = _merged(cfg, "chi", chi, float)
    n_tables = _merged(cfg, "n_tables", n_tables, int)

    P = serialize.load_dataset(data, fmt)
    kern = KernelSpec(kernel, bandwidth, p_exponent)
    P_norm, kern_norm = normalize_bandwidth(P, kern)
    scheme = _make_scheme(method, P_norm.R, beta, t_param, p_exponent, q_param,
                          P_norm.n)
    if n_tables is None:
        if None in (eps, tau, chi):
            raise click.ClickException(
                "give --n-tables or all of --eps/--tau/--chi to size the index"
            )
        # exact worst-case consumption of one query session; the nominal
        # O(log(1/chi) eps^-2 V(tau)) formula under-provisions
        n_tables = estimation.tables_required(eps, tau, chi, scheme.v_fn)
    index = hbe_core.build_index(P_norm, kern_norm, scheme, N=n_tables,
                                 master_seed=seed)
    serialize.save_index(index, out)
    digest = hashlib.sha256(Path(out).read_bytes()).hexdigest()
    manifest = {
        "data": str(data), "kernel": kernel, "bandwidth": bandwidth,
        "method": method, "beta": beta, "t": t_param, "q": q_param,
        "n_tables": n_tables, "seed": seed, "sha256": digest,
    }
    _atomic_write(str(out) + ".manifest.json", json.dumps(manifest, indent=2) + "\n")
    click.echo(f"built {n_tables} tables over n={P.n} d={P.d} -> {out}")


@main.command()
@click.option("--index", "index_path", required=True, type=click.Path(exists=True))
@click.option("--queries", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["csv", "bin"]), default=None)
@click.option("--eps", type=float, default=0.5)
@click.option("--tau", type=float, default=1e-3)
@click.option("--chi", type=float, default=0.1)
@click.option("--budget-factor", type=float, default=estimation.TABLE_BUDGET_FACTOR,
              help="C_N scaling of the index-size precondition")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", required=True, type=click.Path())
def query(index_path, queries, fmt, eps, tau, chi, budget_factor, config_path, out):
    """Answer KDE queries; CSV rows (query_id, estimate, below_threshold,
    samples_used)."""
    cfg = _load_config(config_path)
    eps = float(_merged(cfg, "eps", None, float) or eps)
    tau = float(_merged(cfg, "tau", None, float) or tau)
    chi = float(_merged(cfg, "chi", None, float) or chi)
    index = serialize.load_index(index_path)
    manifest_path = Path(str(index_path) + ".manifest.json")
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        digest = hashlib.sha256(Path(index_path).read_bytes()).hexdigest()
        if manifest.get("sha256") != digest:
            raise click.ClickException("index checksum does not match manifest")
    Q = serialize.load_dataset(queries, fmt)
    X = Q.coords / index.kernel.bandwidth if index.kernel.bandwidth != 1.0 else Q.coords
    lines = ["query_id,estimate,below_threshold,samples_used"]
    reports = estimation.query_kde_batch(index, X, eps, tau, chi,
                                         budget_factor=budget_factor)
    for qi, rep in enumerate(reports):
        lines.append(
            f"{qi},{rep.value!r},{int(rep.below_threshold)},{rep.samples_used}"
        )
    _atomic_write(out, "\n".join(lines) + "\n")
    click.echo(f"answered {len(reports)} queries -> {out}")


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--queries", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["csv", "bin"]), default=None)
@click.option("--kernel", type=click.Choice(["gaussian", "exponential", "student"]),
              default="exponential")
@click.option("--methods", default="hbe-exp,rs")
@click.option("--eps", type=float, default=0.5)
@click.option("--chi", type=float, default=0.1)
@click.option("--beta", type=float, default=0.5)
@click.option("--seed", type=int, default=0)
@click.option("--out", required=True, type=click.Path())
def bench(data, queries, fmt, kernel, methods, eps, chi, beta, seed, out):
    """Compare methods at a fixed target accuracy; CSV rows
    (method, mu_true, estimate, rel_error, samples, wall_time_ns)."""
    P = serialize.load_dataset(data, fmt)
    kern = KernelSpec(kernel)
    P, kern = normalize_bandwidth(P, kern)
    Q = serialize.load_dataset(queries, fmt)
    lines = ["method,mu_true,estimate,rel_error,samples,wall_time_ns"]
    for method in methods.split(","):
        method = method.strip()
        if method not in _METHODS:
            raise click.ClickException(f"unknown method {method}")
        for qi, x in enumerate(Q.coords):
            mu_true = kde_exact(P, kern, x)
            rng = derive_rng(seed, "bench", qi)
            if method == "rs":
                v = 1.0 / max(mu_true, 1e-12)
                sampler = lambda k: np.array(
                    [estimation.rs_sample(P, kern, x, rng) for _ in range(k)]
                )
            elif method == "rff":
                if kern.kind != "gaussian":
                    raise click.ClickException("rff requires the gaussian kernel")
                v = 1.0 / max(mu_true, 1e-12) ** 2
                sampler = lambda k: np.array(
                    [estimation.rff_sample(P, x, rng) for _ in range(k)]
                )
            else:
                scheme = _make_scheme(method, P.R, beta, 1.0, kern.p_exponent,
                                      max(1, kern.p_exponent // 2), P.n)
                v = scheme.v_fn(max(mu_true, 1e-12))
                lazy = hbe_core.build_index(P, kern, scheme, N=1 << 30,
                                            master_seed=seed, materialize=False)
                cursor = hbe_core.TableCursor(N=1 << 30, offset=qi * (1 << 16))
                sampler = lambda k: np.array(
                    [hbe_core.hbe_sample(lazy, cursor, x, rng) for _ in range(k)]
                )
            handle = estimation.EstimatorHandle(
                sampler=sampler, v_fn=lambda m: max(v, 1.0)
            )
            t0 = time.perf_counter_ns()
            est = estimation.median_of_means(handle, v, eps, chi)
            dt = time.perf_counter_ns() - t0
            rel = abs(est - mu_true) / mu_true if mu_true > 0 else float("inf")
            lines.append(f"{method},{mu_true!r},{est!r},{rel!r},{handle.drawn},{dt}")
    _atomic_write(out, "\n".join(lines) + "\n")
    click.echo(f"bench -> {out}")


def _load_vector(path: str) -> np.ndarray:
    blob = Path(path).read_bytes()
    try:
        text = blob.decode()
        vals = [float(v) for v in text.split()]
        return np.asarray(vals, dtype=np.float64)
    except (UnicodeDecodeError, ValueError):
        if len(blob) % 8:
            raise click.ClickException(f"{path}: not text reals or 8-byte blocks")
        return np.frombuffer(blob, dtype="<f8").copy()


@main.command(name="kmvm")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--vector", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["csv", "bin"]), default=None)
@click.option("--kernel", type=click.Choice(["gaussian", "exponential", "student"]),
              default="exponential")
@click.option("--eps", type=float, default=0.5)
@click.option("--tau", type=float, default=1e-3)
@click.option("--chi", type=float, default=0.1)
@click.option("--signed/--nonnegative", default=False)
@click.option("--crossover", type=int, default=64)
@click.option("--seed", type=int, default=0)
@click.option("--oracle", type=click.Path(exists=True), default=None)
@click.option("--out", required=True, type=click.Path())
def kmvm_cmd(data, vector, fmt, kernel, eps, tau, chi, signed, crossover, seed,
             oracle, out):
    """Approximate y = Kz; writes one real per line, plus an error
    report when an oracle vector is supplied."""
    P = serialize.load_dataset(data, fmt)
    kern = KernelSpec(kernel)
    z = _load_vector(vector)
    if signed:
        y = _kmvm_signed(P, kern, z, eps, tau, chi, master_seed=seed,
                                 crossover=crossover)
    else:
        s = float(z.sum())
        if s <= 0:
            raise click.ClickException("nonnegative kmvm needs positive total mass")
        y = s * _kmvm(P, kern, z / s, eps, tau, chi, master_seed=seed,
                              crossover=crossover)
    _atomic_write(out, "\n".join(repr(float(v)) for v in y) + "\n")
    if oracle:
        y_true = _load_vector(oracle)
        bound = 3 * eps * tau * abs(z).sum() + eps * np.abs(y_true)
        ok = np.abs(y - y_true) <= bound
        click.echo(
            f"oracle check: {int(ok.sum())}/{len(y)} coordinates within bound, "
            f"max abs err {np.max(np.abs(y - y_true)):.3e}"
        )
    click.echo(f"kmvm -> {out}")


@main.command()
@click.option("--seed", type=int, default=2024)
@click.option("--instances", type=int, default=10_000)
@click.option("--out", type=click.Path(), default=None)
def verify(seed, instances, out):
    """Run the inequality sweeps; exit nonzero on any violation."""
    rng = derive_rng(seed, "verify", 0)
    rows = []

    def sweep(name, fn, count):
        violations, worst = 0, math.inf
        for _ in range(count):
            chk = fn()
            checks = chk if isinstance(chk, tuple) else (chk,)
            for c in checks:
                violations += not c.holds
                worst = min(worst, c.slack)
        rows.append((name, count, violations, worst))

    def monotone_case():
        n = int(rng.integers(1, 50))
        x = np.sort(rng.random(n) * 0.999 + 0.001)[::-1]
        return diagnostics.check_monotone_holder(x, float(rng.uniform(0.5, 1.0)))

    def two_sided_case():
        n = int(rng.integers(1, 20))
        A = rng.standard_normal((n, n))
        v = rng.random(n) + 0.1
        w = rng.random(n) + 0.1
        S = np.flatnonzero(rng.random(n) < 0.7)
        Sp = np.flatnonzero(rng.random(n) < 0.7)
        if len(S) == 0:
            S = np.array([0])
        if len(Sp) == 0:
            Sp = np.array([0])
        return diagnostics.check_two_sided_holder(
            A, v, w, S, Sp, rng.standard_normal(n)
        )

    def corollary_case():
        n = int(rng.integers(1, 50))
        q = float(rng.uniform(0.2, 3.0))
        return diagnostics.check_holder_corollary(
            rng.standard_normal(n), float(rng.random()), q + float(rng.random()) * 3, q
        )

    sweep("monotone_holder", monotone_case, instances)
    sweep("two_sided_holder", two_sided_case, max(1, instances // 10))
    sweep("holder_corollary", corollary_case, instances)
    text = "check,instances,violations,worst_slack\n" + "\n".join(
        f"{n},{c},{v},{s!r}" for n, c, v, s in rows
    ) + "\n"
    if out:
        _atomic_write(out, text)
    else:
        click.echo(text, nl=False)
    total = sum(v for _, _, v, _ in rows)
    if total:
        raise click.ClickException(f"{total} inequality violations")


if __name__ == "__main__":
    main()
