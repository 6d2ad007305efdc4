"""Vectorized sampling of many engine histories at once.

Each history is held as a basis label (qubit s, phonon n).  That is an exact
unravelling here: every channel in the engine maps a sector-collapsed,
phonon-diagonal state to a mixture of such states, and the only coherence the
sideband sweep creates (between |up, n> and |down, n+1>) is destroyed by the
next qubit measurement or phonon-kernel step before anything is read out.
"""
from __future__ import annotations

import numpy as np

from .channels import DetectorModel, RecoilGeometry, recoil_kick
from .fock import DOWN, UP, FockSpace, StochasticKernel, displaced_population


class Ensemble:
    __slots__ = ("s", "n", "leakage", "space")

    def __init__(self, s, n, space: FockSpace, leakage=None):
        self.s = np.asarray(s, dtype=np.int8)
        self.n = np.asarray(n, dtype=np.int64)
        self.space = space
        self.leakage = np.zeros(self.n.shape) if leakage is None else np.asarray(leakage, float)

    @classmethod
    def from_phonon_probs(cls, probs, shots: int, space: FockSpace, rng, s: int = DOWN):
        n = rng.choice(len(probs), size=shots, p=np.asarray(probs) / np.sum(probs))
        return cls(np.full(shots, s), n, space)

    @classmethod
    def basis(cls, s: int, n: int, shots: int, space: FockSpace):
        return cls(np.full(shots, s), np.full(shots, n), space)

    def __len__(self):
        return self.n.size

    def copy(self) -> "Ensemble":
        return Ensemble(self.s.copy(), self.n.copy(), self.space, self.leakage.copy())

    def phonon_histogram(self) -> np.ndarray:
        return np.bincount(self.n, minlength=self.space.dim).astype(float)


def sample_kernel(kernel: StochasticKernel, n, rng):
    """Draw new phonon numbers from the kernel columns selected by ``n``."""
    n = np.asarray(n)
    if n.size == 0:
        return n.copy(), np.zeros(0)
    cdf = np.cumsum(kernel.matrix, axis=0)
    rows = cdf[:, n].T
    u = rng.random(n.size)
    m = np.minimum((u[:, None] > rows).sum(axis=1), kernel.dim - 1)
    return m, kernel.deficit[n]


def sample_recoil(n, n_pairs: int, geom: RecoilGeometry, space: FockSpace, rng, chunk=20000):
    """Apply one independent recoil kick to each listed phonon number."""
    n = np.asarray(n)
    out = n.copy()
    leak = np.zeros(n.size)
    if n_pairs == 0 or n.size == 0:
        return out, leak
    grid = np.arange(space.dim)
    for start in range(0, n.size, chunk):
        sl = slice(start, min(start + chunk, n.size))
        s = np.abs(recoil_kick(n_pairs, geom, rng, size=out[sl].size)) ** 2
        probs = displaced_population(grid[None, :], n[sl, None], s[:, None])
        total = probs.sum(axis=1)
        leak[sl] = np.clip(1.0 - total, 0.0, None)
        cdf = np.cumsum(probs, axis=1) / total[:, None]
        u = rng.random(s.size)
        out[sl] = np.minimum((u[:, None] > cdf).sum(axis=1), space.n_work)
    return out, leak


def bath(ens: Ensemble, p_up: float, rng, mask=None):
    idx = _indices(ens, mask)
    ens.s[idx] = (rng.random(idx.size) < p_up).astype(np.int8)


def measure(ens: Ensemble, det: DetectorModel, geom: RecoilGeometry, rng, mask=None, n_pairs=None):
    """Detect the qubit of the selected histories; returns reported outcomes for them."""
    idx = _indices(ens, mask)
    physical = ens.s[idx]
    reported = np.asarray(det.report(physical, rng), dtype=np.int8)
    pairs = det.n_photon_pairs if n_pairs is None else n_pairs
    bright = idx[physical == UP]
    if pairs > 0 and bright.size:
        ens.n[bright], leak = sample_recoil(ens.n[bright], pairs, geom, ens.space, rng)
        ens.leakage[bright] += leak
    return reported


def transfer(ens: Ensemble, probs, rng, mask=None):
    """Sideband transfer |up, n> <-> |down, n+1> with per-block probability ``probs[n]``.

    ``probs=None`` is the ideal transfer.  Histories stranded on |up, n_work>
    count one unit of leakage.
    """
    idx = _indices(ens, mask)
    n_work = ens.space.n_work
    s, n = ens.s[idx], ens.n[idx]
    q = np.ones(n_work) if probs is None else np.asarray(probs)
    up = (s == UP) & (n < n_work)
    down = (s == DOWN) & (n >= 1)
    block = np.where(up, n, np.where(down, n - 1, 0))
    move = (up | down) & (rng.random(idx.size) < q[block])
    stranded = (s == UP) & (n == n_work)
    ens.leakage[idx[stranded]] += 1.0
    new_s = np.where(move, 1 - s, s).astype(np.int8)
    new_n = np.where(move & up, n + 1, np.where(move & down, n - 1, n))
    ens.s[idx], ens.n[idx] = new_s, new_n
    return idx[move & up], idx[move & down]


def carrier(ens: Ensemble, mask=None):
    idx = _indices(ens, mask)
    ens.s[idx] = 1 - ens.s[idx]


def pump(ens: Ensemble, mask=None):
    idx = _indices(ens, mask)
    ens.s[idx] = DOWN


def heat(ens: Ensemble, kernel: StochasticKernel, rng, mask=None):
    idx = _indices(ens, mask)
    ens.n[idx], leak = sample_kernel(kernel, ens.n[idx], rng)
    ens.leakage[idx] += leak


def _indices(ens, mask):
    if mask is None:
        return np.arange(len(ens))
    mask = np.asarray(mask)
    return np.flatnonzero(mask) if mask.dtype == bool else mask
