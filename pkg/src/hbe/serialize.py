"""Binary index and dataset formats, little-endian throughout.

Index format ("HBE1"): header with scheme/kernel parameters, the point
coordinates, then each table's buckets (sorted 64-bit bucket
fingerprints, bucket sizes, and per-bucket delta-encoded point ids).
Hash functions are not stored; they regrow deterministically from the
master seed on first use.  Custom variance certificates attached at
build time are not serialized; loaded indexes carry the default V(mu)
of their scheme.

Dataset format ("KDS1"): magic, n and d as 32-bit unsigned, then n*d
64-bit floats row-major.  CSV datasets are one point per row with an
optional header line.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .hbe_core import (
    BallCarvingSpec,
    EuclideanSpec,
    HbeIndex,
    HbeScheme,
    _Table,
    _clamped_power_v,
    _euclid_p_fn,
)
from .kernels import KernelSpec, PointSet, _KINDS

_INDEX_MAGIC = b"HBE1"
_DATA_MAGIC = b"KDS1"


class FormatError(ValueError):
    """Malformed or mismatched serialized data."""


# ---------------------------------------------------------------------------
# datasets


def save_dataset(P: PointSet, path, fmt: str = "bin") -> None:
    path = Path(path)
    if fmt == "bin":
        with open(path, "wb") as f:
            f.write(_DATA_MAGIC)
            f.write(struct.pack("<II", P.n, P.d))
            f.write(P.coords.astype("<f8").tobytes())
    elif fmt == "csv":
        with open(path, "w") as f:
            for row in P.coords:
                f.write(",".join(repr(float(v)) for v in row) + "\n")
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")


def load_dataset(path, fmt: str | None = None, R: float | None = None) -> PointSet:
    """Read a dataset; R defaults to twice the max centroid distance."""
    path = Path(path)
    if fmt is None:
        fmt = "bin" if path.suffix in (".bin", ".kds") else "csv"
    if fmt == "bin":
        blob = path.read_bytes()
        if blob[:4] != _DATA_MAGIC:
            raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected KDS1")
        n, d = struct.unpack_from("<II", blob, 4)
        coords = np.frombuffer(blob, dtype="<f8", count=n * d, offset=12)
        coords = coords.reshape(n, d).copy()
    elif fmt == "csv":
        rows = []
        width = None
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                fields = line.split(",")
                try:
                    row = [float(v) for v in fields]
                except ValueError:
                    if lineno == 1:
                        continue  # header
                    raise FormatError(f"{path}:{lineno}: non-numeric field")
                if any(not math.isfinite(v) for v in row):
                    raise FormatError(f"{path}:{lineno}: non-finite value")
                if width is None:
                    width = len(row)
                elif len(row) != width:
                    raise FormatError(
                        f"{path}:{lineno}: expected {width} fields, got {len(row)}"
                    )
                rows.append(row)
        if not rows:
            raise FormatError(f"{path}: empty dataset")
        coords = np.asarray(rows, dtype=np.float64)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")
    if R is None:
        center = coords.mean(axis=0)
        R = 2.0 * float(np.max(np.linalg.norm(coords - center, axis=1), initial=0.0))
    return PointSet(coords=coords, R=float(R))


# ---------------------------------------------------------------------------
# indexes


def _write_table(f, table: _Table) -> None:
    b = len(table.fps)
    f.write(struct.pack("<I", b))
    f.write(table.fps.astype("<u8").tobytes())
    sizes = np.diff(table.starts).astype("<u4")
    f.write(sizes.tobytes())
    # per bucket: first id absolute, rest as deltas (ids ascend in bucket)
    ids = table.ids.astype(np.int64)
    deltas = np.diff(ids, prepend=0)
    deltas[table.starts[:-1]] = ids[table.starts[:-1]]
    f.write(deltas.astype("<u4").tobytes())


def _read_table(blob: bytes, off: int, n: int) -> tuple[_Table, int]:
    (b,) = struct.unpack_from("<I", blob, off)
    off += 4
    fps = np.frombuffer(blob, dtype="<u8", count=b, offset=off).astype(np.uint64)
    off += 8 * b
    sizes = np.frombuffer(blob, dtype="<u4", count=b, offset=off).astype(np.int64)
    off += 4 * b
    deltas = np.frombuffer(blob, dtype="<u4", count=n, offset=off).astype(np.int64)
    off += 4 * n
    starts = np.concatenate([[0], np.cumsum(sizes)])
    # undo delta encoding bucket by bucket
    ids = np.empty(n, dtype=np.int64)
    for k in range(b):
        s, e = int(starts[k]), int(starts[k + 1])
        ids[s:e] = np.cumsum(deltas[s:e])
    return (
        _Table(fps=fps, starts=starts.astype(np.int64), ids=ids.astype(np.int32)),
        off,
    )


def save_index(index: HbeIndex, path) -> None:
    """Write a fully materialized index as an HBE1 blob."""
    if index.tables is None:
        raise ValueError("only materialized indexes can be serialized")
    spec = index.scheme.hash_spec
    with open(Path(path), "wb") as f:
        f.write(_INDEX_MAGIC)
        scheme_tag = 1 if isinstance(spec, EuclideanSpec) else 2
        beta = index.scheme.beta
        f.write(
            struct.pack(
                "<IBBHdddd",
                1,  # version
                scheme_tag,
                _KINDS.index(index.kernel.kind),
                index.kernel.p_exponent,
                index.kernel.bandwidth,
                0.0 if math.isnan(beta) else beta,
                index.scheme.M,
                index.points.R,
            )
        )
        f.write(struct.pack("<IIIq", index.points.n, index.points.d, index.N,
                            index.master_seed))
        if scheme_tag == 1:
            f.write(struct.pack("<dI", spec.w, spec.D))
        else:
            f.write(struct.pack("<IdI", spec.t, spec.w, spec.D))
        f.write(index.points.coords.astype("<f8").tobytes())
        for t in index.tables:
            _write_table(f, t)


def load_index(path) -> HbeIndex:
    blob = Path(path).read_bytes()
    if blob[:4] != _INDEX_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected HBE1")
    off = 4
    version, scheme_tag, kind_code, p_exp, bandwidth, beta, M, R = struct.unpack_from(
        "<IBBHdddd", blob, off
    )
    off += struct.calcsize("<IBBHdddd")
    if version != 1:
        raise FormatError(f"unsupported index version {version}")
    n, d, N, master_seed = struct.unpack_from("<IIIq", blob, off)
    off += struct.calcsize("<IIIq")
    if scheme_tag == 1:
        w, D = struct.unpack_from("<dI", blob, off)
        off += struct.calcsize("<dI")
        hash_spec = EuclideanSpec(w=w, D=D)
        p_fn = _euclid_p_fn(w, D)
    elif scheme_tag == 2:
        t, w, D = struct.unpack_from("<IdI", blob, off)
        off += struct.calcsize("<IdI")
        hash_spec = BallCarvingSpec(t=t, w=w, D=D)
        p_fn = _ball_p_fn_from_params(t, w, D, R)
    else:
        raise FormatError(f"unknown scheme tag {scheme_tag}")
    beta = beta if beta > 0.0 else float("nan")
    coords = np.frombuffer(blob, dtype="<f8", count=n * d, offset=off).reshape(n, d)
    off += 8 * n * d
    v_fn = (
        _clamped_power_v(4.0 * M**3, beta)
        if not math.isnan(beta)
        else _clamped_power_v(4.0 * M**3, 1.0)
    )
    scheme = HbeScheme(
        hash_spec=hash_spec, p_fn=p_fn, beta=beta, M=M, v_fn=v_fn,
        complexity=float(D),
    )
    tables = []
    for _ in range(N):
        table, off = _read_table(blob, off, n)
        tables.append(table)
    return HbeIndex(
        points=PointSet(coords=coords.copy(), R=R),
        kernel=KernelSpec(_KINDS[kind_code], bandwidth, max(p_exp, 1)),
        scheme=scheme,
        N=N,
        master_seed=master_seed,
        tables=tables,
    )


def _ball_p_fn_from_params(t: int, w: float, D: int, R: float):
    """Re-tabulate the exact ball-carving collision probability."""
    from . import ballcarving

    r_grid = np.linspace(0.0, max(1.5 * R, 3.0 * w), 128)
    log_p1 = np.array(
        [
            math.log(ballcarving.collision_prob_ball_exact(t, r / w))
            for r in r_grid[1:]
        ]
    )

    def p_fn(r):
        scalar = np.ndim(r) == 0
        r_arr = np.atleast_1d(np.asarray(r, dtype=np.float64))
        lp = np.interp(r_arr, r_grid[1:], log_p1)
        out = np.exp(D * lp)
        out[r_arr == 0.0] = 1.0
        return float(out[0]) if scalar else out

    return p_fn
