import numpy as np
import pytest

from fbsdep.model import MarkSpace, TimeGrid
from fbsdep.noise import (NoiseBundle, compensated_jump_integral, dump_bundle, load_bundle,
                          path_generator, sample_noise, worker_count)

GRID = TimeGrid(1.0, 50)
MARKS = MarkSpace((0.5, 1.0), (2.0, 0.5))


def test_shapes_and_read_only():
    b = sample_noise(GRID, MARKS, 20, 3)
    assert b.dW.shape == (20, 50) and b.jump_counts.shape == (20, 50, 2)
    assert b.jump_counts.dtype == np.int32
    with pytest.raises(ValueError):
        b.dW[0, 0] = 1.0


def test_rejects_empty():
    with pytest.raises(ValueError):
        sample_noise(GRID, MARKS, 0, 1)


def test_paths_independent_of_count_and_workers(monkeypatch):
    small = sample_noise(GRID, MARKS, 5, 9)
    monkeypatch.setenv("FBSDEP_WORKERS", "4")
    assert worker_count() == 4
    big = sample_noise(GRID, MARKS, 40, 9)
    assert big.subset(5).same_as(small)


def test_worker_count_bad_value(monkeypatch):
    monkeypatch.setenv("FBSDEP_WORKERS", "lots")
    assert worker_count() == 1


def test_seeds_differ():
    a = sample_noise(GRID, MARKS, 5, 1)
    b = sample_noise(GRID, MARKS, 5, 2)
    assert not np.array_equal(a.dW, b.dW)


def test_brownian_moments():
    b = sample_noise(TimeGrid(1.0, 10), MarkSpace(), 20000, 5)
    w1 = b.dW.sum(axis=1)
    se = w1.std() / np.sqrt(w1.size)
    assert abs(w1.mean()) < 3 * se
    assert abs(w1.var() - 1.0) < 0.05
    assert abs(np.corrcoef(b.dW.ravel(), b.dWt.ravel())[0, 1]) < 0.01


def test_poisson_counts_have_intensity():
    b = sample_noise(TimeGrid(2.0, 100), MARKS, 4000, 6)
    totals = b.jump_counts.sum(axis=1)
    np.testing.assert_allclose(totals.mean(axis=0), [4.0, 1.0], rtol=0.05)


def test_compensated_integral_zero_mean():
    b = sample_noise(TimeGrid(2.0, 100), MARKS, 4000, 7)
    vals = compensated_jump_integral(b, None, lambda t, e: e * np.exp(-t))
    assert abs(vals.mean()) < 3 * vals.std() / np.sqrt(vals.size)
    f = lambda t, e: e  # noqa: E731
    assert compensated_jump_integral(b, 0, f) == pytest.approx(float(compensated_jump_integral(b, None, f)[0]))


def test_jump_events_multiplicity():
    counts = np.zeros((1, 3, 1), dtype=np.int32)
    counts[0, 1, 0] = 2
    b = NoiseBundle(np.zeros((1, 3)), np.zeros((1, 3)), counts, 0, TimeGrid(1.0, 3), MarkSpace((1.0,), (1.0,)))
    assert b.jump_events(0) == [(1, 0), (1, 0)]


def test_dump_load_roundtrip(tmp_path):
    b = sample_noise(GRID, MARKS, 7, 12)
    f = tmp_path / "bundle.bin"
    dump_bundle(b, f)
    assert f.read_bytes()[:8] == b"FBSDNOIS"
    assert load_bundle(f).same_as(b)
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_bundle(bad)


def test_path_generator_deterministic():
    a = path_generator(1, 0, 3).standard_normal(4)
    b = path_generator(1, 0, 3).standard_normal(4)
    np.testing.assert_array_equal(a, b)
