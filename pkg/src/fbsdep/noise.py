"""Reproducible per-path randomness: two Brownian drivers and a Poisson measure.

Each path owns its own Philox substreams keyed by ``(stream, path)`` under the
master seed, so path ``i`` is the same whether 10 or 10,000 paths are drawn
and regardless of how the work is split across threads.
"""

from __future__ import annotations

import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .model import MarkSpace, TimeGrid

STREAM_W, STREAM_WT, STREAM_N, STREAM_X0 = 0, 1, 2, 3
_MAGIC = b"FBSDNOIS"


def path_generator(seed: int, stream: int, path: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(path)))
    return np.random.Generator(np.random.Philox(ss))


def worker_count() -> int:
    """Threads used for path-parallel sampling (env ``FBSDEP_WORKERS``, default 1)."""
    try:
        return max(1, int(os.environ.get("FBSDEP_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True, eq=False)
class NoiseBundle:
    """Sampled increments.  ``jump_counts[p, j, i]`` is the number of mark-``i``
    events in ``(t_j, t_{j+1}]``; they act at ``t_{j+1}`` with left-limit integrands."""

    dW: np.ndarray
    dWt: np.ndarray
    jump_counts: np.ndarray
    seed: int
    grid: TimeGrid
    marks: MarkSpace

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]

    def jump_events(self, path: int) -> list:
        """List of ``(step_index, mark_index)``, repeated by multiplicity."""
        out = []
        steps, idx = np.nonzero(self.jump_counts[path])
        for j, i in zip(steps, idx):
            out.extend([(int(j), int(i))] * int(self.jump_counts[path, j, i]))
        return out

    def compensated_increments(self) -> np.ndarray:
        """ΔN_i - ν_i dt, shape (paths, steps, marks)."""
        return self.jump_counts - self.marks.nu[None, None, :] * self.grid.dt

    def subset(self, n_paths: int) -> "NoiseBundle":
        return NoiseBundle(self.dW[:n_paths], self.dWt[:n_paths], self.jump_counts[:n_paths],
                           self.seed, self.grid, self.marks)

    def coarsen(self, factor: int = 2) -> "NoiseBundle":
        """The same noise on a grid ``factor`` times coarser (increments summed)."""
        n = self.grid.n_steps
        if factor < 1 or n % factor:
            raise ValueError(f"n_steps={n} is not divisible by factor={factor}")
        P, m = self.n_paths, n // factor
        return NoiseBundle(self.dW.reshape(P, m, factor).sum(axis=2),
                           self.dWt.reshape(P, m, factor).sum(axis=2),
                           self.jump_counts.reshape(P, m, factor, -1).sum(axis=2),
                           self.seed, TimeGrid(self.grid.horizon, m), self.marks)

    def same_as(self, other: "NoiseBundle") -> bool:
        return (self.seed == other.seed and self.grid == other.grid and self.marks == other.marks
                and np.array_equal(self.dW, other.dW) and np.array_equal(self.dWt, other.dWt)
                and np.array_equal(self.jump_counts, other.jump_counts))


def _sample_path(seed, p, n, dt, lam):
    sq = np.sqrt(dt)
    dw = path_generator(seed, STREAM_W, p).standard_normal(n) * sq
    dwt = path_generator(seed, STREAM_WT, p).standard_normal(n) * sq
    if lam.size:
        cnt = path_generator(seed, STREAM_N, p).poisson(lam, size=(n, lam.size))
    else:
        cnt = np.zeros((n, 0), dtype=np.int64)
    return dw, dwt, cnt


def sample_noise(grid: TimeGrid, marks: MarkSpace, n_paths: int, seed: int) -> NoiseBundle:
    if int(n_paths) != n_paths or n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    n = grid.n_steps
    lam = marks.nu * grid.dt
    dW = np.empty((n_paths, n))
    dWt = np.empty((n_paths, n))
    counts = np.empty((n_paths, n, marks.size), dtype=np.int32)

    def fill(p):
        dW[p], dWt[p], counts[p] = _sample_path(seed, p, n, grid.dt, lam)

    workers = worker_count()
    if workers > 1 and n_paths > 1:
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(fill, range(n_paths)))
    else:
        for p in range(n_paths):
            fill(p)
    for a in (dW, dWt, counts):
        a.flags.writeable = False
    return NoiseBundle(dW, dWt, counts, int(seed), grid, marks)


def compensated_jump_integral(bundle: NoiseBundle, path: Optional[int],
                              integrand: Callable) -> np.ndarray:
    """Σ_jumps integrand(t_j, e_i) - Σ_j Σ_i integrand(t_j, e_i) ν_i dt.

    ``integrand(t, e)`` receives broadcastable arrays of left grid times and
    marks.  ``path=None`` returns the per-path vector.
    """
    marks = bundle.marks
    if marks.size == 0:
        return 0.0 if path is not None else np.zeros(bundle.n_paths)
    t = bundle.grid.times[:-1][:, None]
    e = np.asarray(marks.marks)[None, :]
    vals = np.broadcast_to(np.asarray(integrand(t, e), dtype=float), (t.shape[0], marks.size))
    comp = float(np.sum(vals * marks.nu[None, :]) * bundle.grid.dt)
    counts = bundle.jump_counts if path is None else bundle.jump_counts[path][None]
    out = np.einsum("pji,ji->p", counts, vals) - comp
    return float(out[0]) if path is not None else out


def dump_bundle(bundle: NoiseBundle, filename) -> None:
    """Write a bundle: magic, uint32 header length, JSON header, then row-major
    little-endian float64 dW, float64 dWt and int32 jump counts."""
    header = json.dumps({
        "seed": bundle.seed,
        "horizon": bundle.grid.horizon,
        "n_steps": bundle.grid.n_steps,
        "n_paths": bundle.n_paths,
        "marks": list(bundle.marks.marks),
        "intensities": list(bundle.marks.intensities),
    }, sort_keys=True).encode()
    with open(filename, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(bundle.dW, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(bundle.dWt, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(bundle.jump_counts, dtype="<i4").tobytes())


def load_bundle(filename) -> NoiseBundle:
    with open(filename, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("not a noise bundle file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        h = json.loads(fh.read(hlen))
        body = fh.read()
    grid = TimeGrid(h["horizon"], h["n_steps"])
    marks = MarkSpace(tuple(h["marks"]), tuple(h["intensities"]))
    p, n, m = h["n_paths"], h["n_steps"], len(h["marks"])
    k = p * n * 8
    dW = np.frombuffer(body[:k], dtype="<f8").reshape(p, n).astype(float)
    dWt = np.frombuffer(body[k:2 * k], dtype="<f8").reshape(p, n).astype(float)
    counts = np.frombuffer(body[2 * k:], dtype="<i4").reshape(p, n, m).astype(np.int32)
    return NoiseBundle(dW, dWt, counts, int(h["seed"]), grid, marks)
