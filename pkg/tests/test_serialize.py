"""Dataset and index serialization round-trips."""

import numpy as np
import pytest

from hbe.hbe_core import build_index, make_exponential_hbe, make_gaussian_ball_hbe
from hbe.kernels import KernelSpec, PointSet, kde_exact, point_set_from_coords
from hbe.serialize import (
    FormatError,
    load_dataset,
    load_index,
    save_dataset,
    save_index,
)


def test_dataset_bin_roundtrip(tmp_path, blob_small):
    path = tmp_path / "data.bin"
    save_dataset(blob_small, path, fmt="bin")
    back = load_dataset(path, R=blob_small.R)
    np.testing.assert_array_equal(back.coords, blob_small.coords)
    assert back.R == blob_small.R


def test_dataset_csv_roundtrip(tmp_path, blob_small):
    path = tmp_path / "data.csv"
    save_dataset(blob_small, path, fmt="csv")
    back = load_dataset(path)
    np.testing.assert_array_equal(back.coords, blob_small.coords)


def test_dataset_csv_header_skipped(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("x,y\n1.0,2.0\n3.0,4.0\n")
    P = load_dataset(path)
    np.testing.assert_array_equal(P.coords, [[1.0, 2.0], [3.0, 4.0]])


def test_dataset_csv_errors(tmp_path):
    bad_field = tmp_path / "bad1.csv"
    bad_field.write_text("1.0,2.0\n1.0,zzz\n")
    with pytest.raises(FormatError, match="non-numeric"):
        load_dataset(bad_field)
    ragged = tmp_path / "bad2.csv"
    ragged.write_text("1.0,2.0\n1.0\n")
    with pytest.raises(FormatError, match="expected 2 fields"):
        load_dataset(ragged)
    nonfinite = tmp_path / "bad3.csv"
    nonfinite.write_text("1.0,inf\n")
    with pytest.raises(FormatError, match="non-finite"):
        load_dataset(nonfinite)
    empty = tmp_path / "bad4.csv"
    empty.write_text("\n")
    with pytest.raises(FormatError, match="empty"):
        load_dataset(empty)


def test_dataset_bad_magic(tmp_path):
    path = tmp_path / "data.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError, match="magic"):
        load_dataset(path, fmt="bin")


def _small_index(blob_small):
    kernel = KernelSpec("exponential", 1.0)
    scheme = make_exponential_hbe(max(blob_small.R, 1.0), 0.5)
    return build_index(blob_small, kernel, scheme, N=4, master_seed=21)


def test_index_roundtrip_identical_tables(tmp_path, blob_small):
    index = _small_index(blob_small)
    path = tmp_path / "index.hbe"
    save_index(index, path)
    back = load_index(path)
    assert back.N == index.N and back.master_seed == index.master_seed
    np.testing.assert_array_equal(back.points.coords, index.points.coords)
    for i in range(index.N):
        a, b = index.tables[i], back.tables[i]
        np.testing.assert_array_equal(a.fps, b.fps)
        np.testing.assert_array_equal(a.starts, b.starts)
        np.testing.assert_array_equal(a.ids, b.ids)


def test_index_roundtrip_byte_stable(tmp_path, blob_small):
    index = _small_index(blob_small)
    p1 = tmp_path / "a.hbe"
    p2 = tmp_path / "b.hbe"
    save_index(index, p1)
    save_index(load_index(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_loaded_index_answers_queries(tmp_path, blob_small, rng):
    """Hashes regrow from the master seed: a loaded index serves the
    same samples as the original."""
    index = _small_index(blob_small)
    path = tmp_path / "index.hbe"
    save_index(index, path)
    back = load_index(path)
    x = blob_small.coords[0] + 0.01
    for i in range(index.N):
        s1, e1 = index.query_bucket(index.table(i), x)
        s2, e2 = back.query_bucket(back.table(i), x)
        assert (s1, e1) == (s2, e2)


def test_ball_index_roundtrip(tmp_path, rng):
    coords = 0.2 * rng.standard_normal((25, 4))
    P = point_set_from_coords(coords)
    kernel = KernelSpec("gaussian", 1.0)
    scheme = make_gaussian_ball_hbe(max(P.R, 1.0), 0.5, P.n, r_grid_size=64)
    index = build_index(P, kernel, scheme, N=2, master_seed=13)
    path = tmp_path / "ball.hbe"
    save_index(index, path)
    back = load_index(path)
    for i in range(2):
        np.testing.assert_array_equal(index.tables[i].ids, back.tables[i].ids)
    # reconstructed collision probability matches the builder's tabulation
    rs = np.linspace(0.1, 1.5, 12)
    np.testing.assert_allclose(back.scheme.p_fn(rs), index.scheme.p_fn(rs), rtol=2e-2)


def test_lazy_index_not_serializable(blob_small, tmp_path):
    kernel = KernelSpec("exponential", 1.0)
    scheme = make_exponential_hbe(max(blob_small.R, 1.0), 0.5)
    lazy = build_index(blob_small, kernel, scheme, N=2, master_seed=1,
                       materialize=False)
    with pytest.raises(ValueError, match="materialized"):
        save_index(lazy, tmp_path / "x.hbe")


def test_index_bad_magic(tmp_path):
    path = tmp_path / "x.hbe"
    path.write_bytes(b"XXXX" + b"\x00" * 64)
    with pytest.raises(FormatError, match="magic"):
        load_index(path)
