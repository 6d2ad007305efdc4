"""Truncated Fock space for a qubit coupled to one motional mode.

Joint basis ordering is ``index = s * dim + n`` with ``s = 0`` for the dark
qubit state (|down>) and ``s = 1`` for the bright one (|up>).  Energies are in
units of one motional quantum; in the rotating frame |up, n> carries n + 1
quanta and |down, n> carries n.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import LeakageExceeded, NonPhysicalState

DOWN = 0
UP = 1

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
NEGATIVE_EIG_TOL = 1e-9
PROB_TOL = 1e-9
DEFAULT_MAX_LEAKAGE = 1e-3


@dataclass(frozen=True)
class FockSpace:
    """Battery cutoff ``n_max`` and the padded workspace cutoff ``n_work``."""

    n_max: int = 10
    n_work: int = 25

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {self.n_max}")
        if self.n_work < self.n_max:
            raise ValueError(f"n_work ({self.n_work}) must be >= n_max ({self.n_max})")

    @classmethod
    def for_cycles(cls, cycles: int, n_max: int = 10, pad: int = 20) -> "FockSpace":
        return cls(n_max=n_max, n_work=n_max + cycles + pad)

    @property
    def dim(self) -> int:
        return self.n_work + 1

    @property
    def joint_dim(self) -> int:
        return 2 * (self.n_work + 1)

    def index(self, s: int, n: int) -> int:
        return s * self.dim + n


@dataclass(frozen=True)
class PhononDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1:
            raise ValueError("phonon distribution must be a vector")
        if np.any(p < -PROB_TOL):
            raise ValueError(f"negative probability {p.min():.3g}")
        if abs(p.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"probabilities sum to {p.sum():.12g}")
        object.__setattr__(self, "probs", np.clip(p, 0.0, None))

    def __len__(self):
        return len(self.probs)

    def mean(self) -> float:
        return float(np.arange(len(self.probs)) @ self.probs)

    def lumped(self, n_max: int) -> "PhononDistribution":
        """Fold all population above ``n_max`` into the ``n_max`` bin."""
        return PhononDistribution(lump(self.probs, n_max))


def lump(probs, n_max: int) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if len(p) <= n_max + 1:
        return np.pad(p, (0, n_max + 1 - len(p)))
    out = p[: n_max + 1].copy()
    out[n_max] += p[n_max + 1 :].sum()
    return out


@dataclass(frozen=True)
class StochasticKernel:
    """Column-stochastic map on phonon populations.

    ``deficit[n]`` is the probability column ``n`` lost to truncation before
    it was renormalized.
    """

    matrix: np.ndarray
    deficit: np.ndarray = None

    def __post_init__(self):
        k = np.asarray(self.matrix, dtype=float)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ValueError("kernel must be a square matrix")
        object.__setattr__(self, "matrix", k)
        d = np.zeros(k.shape[1]) if self.deficit is None else np.asarray(self.deficit, float)
        object.__setattr__(self, "deficit", d)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def leakage(self) -> float:
        return float(self.deficit.max()) if self.deficit.size else 0.0

    def apply(self, probs) -> np.ndarray:
        return self.matrix @ np.asarray(probs, dtype=float)

    def weighted_leakage(self, probs) -> float:
        return float(self.deficit @ np.asarray(probs, dtype=float))

    def is_stochastic(self, tol: float = 1e-9) -> bool:
        k = self.matrix
        return bool(np.all(k >= -tol) and np.allclose(k.sum(axis=0), 1.0, atol=tol))

    def lumped(self, n_max: int) -> "StochasticKernel":
        """Restrict to inputs ``0..n_max`` with outputs above ``n_max`` folded in."""
        k = self.matrix[:, : n_max + 1]
        out = k[: n_max + 1].copy()
        out[n_max] += k[n_max + 1 :].sum(axis=0)
        return StochasticKernel(out, self.deficit[: n_max + 1])


class JointState:
    """Density matrix of the qubit and the truncated oscillator.

    ``leakage`` accumulates truncation losses reported by the channels that
    produced the state.
    """

    __slots__ = ("matrix", "space", "leakage")

    def __init__(self, matrix, space: FockSpace, leakage: float = 0.0, check: bool = True):
        rho = np.array(matrix, dtype=complex)
        if rho.shape != (space.joint_dim, space.joint_dim):
            raise ValueError(f"expected shape {(space.joint_dim,) * 2}, got {rho.shape}")
        if check:
            rho = _physical(rho)
        self.matrix = rho
        self.space = space
        self.leakage = float(leakage)

    def __repr__(self):
        st = state_statistics(self)
        return (
            f"JointState(n_work={self.space.n_work}, nbar={st.mean_phonon:.4g}, "
            f"P_up={st.qubit_up_population:.4g}, leakage={self.leakage:.2g})"
        )

    @classmethod
    def product(cls, qubit_up: float, phonon_probs, space: FockSpace) -> "JointState":
        """Diagonal product state with the given qubit and phonon populations."""
        p = np.zeros(space.dim)
        ph = np.asarray(phonon_probs, dtype=float)
        p[: len(ph)] = ph
        diag = np.concatenate([(1.0 - qubit_up) * p, qubit_up * p])
        return cls(np.diag(diag), space)

    @classmethod
    def basis(cls, s: int, n: int, space: FockSpace) -> "JointState":
        rho = np.zeros((space.joint_dim, space.joint_dim), dtype=complex)
        i = space.index(s, n)
        rho[i, i] = 1.0
        return cls(rho, space, check=False)

    @classmethod
    def mixture(cls, weights, states) -> "JointState":
        states = list(states)
        rho = sum(w * st.matrix for w, st in zip(weights, states))
        leak = sum(w * st.leakage for w, st in zip(weights, states))
        return cls(rho, states[0].space, leak)

    @classmethod
    def thermal(cls, nbar: float, space: FockSpace, qubit_up: float = 0.0) -> "JointState":
        return cls.product(qubit_up, thermal_distribution(nbar, space.dim), space)

    def block(self, s: int, t: int) -> np.ndarray:
        d = self.space.dim
        return self.matrix[s * d : (s + 1) * d, t * d : (t + 1) * d]

    def sector_populations(self) -> np.ndarray:
        """Array of shape (2, dim): populations of |s, n>."""
        return np.real(np.diag(self.matrix)).reshape(2, self.space.dim)

    def replace(self, matrix, extra_leakage: float = 0.0, check: bool = True) -> "JointState":
        return JointState(matrix, self.space, self.leakage + extra_leakage, check=check)


def _physical(rho: np.ndarray) -> np.ndarray:
    herm_err = np.max(np.abs(rho - rho.conj().T)) if rho.size else 0.0
    if herm_err > HERMITIAN_TOL:
        raise NonPhysicalState(f"matrix not Hermitian (max deviation {herm_err:.3g})")
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise NonPhysicalState(f"trace {tr:.15g} != 1")
    evals, evecs = np.linalg.eigh(rho)
    lowest = evals[0]
    if lowest < -NEGATIVE_EIG_TOL:
        raise NonPhysicalState(f"negative eigenvalue {lowest:.3g}")
    if lowest < 0.0:
        evals = np.clip(evals, 0.0, None)
        evals /= evals.sum()
        rho = (evecs * evals) @ evecs.conj().T
    return rho


def thermal_distribution(nbar: float, dim: int) -> np.ndarray:
    """Bose-Einstein populations with mean ``nbar``, truncated and renormalized."""
    if nbar < 0:
        raise ValueError("nbar must be non-negative")
    p = np.zeros(dim)
    if nbar == 0:
        p[0] = 1.0
        return p
    ratio = nbar / (1.0 + nbar)
    p = ratio ** np.arange(dim) / (1.0 + nbar)
    return p / p.sum()


@dataclass(frozen=True)
class StateStatistics:
    mean_phonon: float
    qubit_up_population: float
    phonon_marginal: PhononDistribution = field(repr=False)


def state_statistics(state: JointState) -> StateStatistics:
    pops = state.sector_populations()
    marginal = np.clip(pops.sum(axis=0), 0.0, None)
    marginal /= marginal.sum()
    up = float(np.clip(pops[UP].sum(), 0.0, 1.0))
    return StateStatistics(
        mean_phonon=float(np.arange(state.space.dim) @ marginal),
        qubit_up_population=up,
        phonon_marginal=PhononDistribution(marginal),
    )


def phonon_density_matrix(state: JointState) -> np.ndarray:
    """Reduced oscillator density matrix (qubit traced out)."""
    return state.block(DOWN, DOWN) + state.block(UP, UP)


# -- special functions -----------------------------------------------------


def assoc_laguerre(n, k, x):
    """Generalized Laguerre polynomial L_n^(k)(x) by upward recurrence.

    Broadcasts over array arguments; returns a float for scalar input.
    """
    n_arr, k_arr, x_arr = np.broadcast_arrays(
        np.asarray(n, dtype=int), np.asarray(k, dtype=float), np.asarray(x, dtype=float)
    )
    if np.any(n_arr < 0):
        raise ValueError("Laguerre degree must be non-negative")
    out = np.ones(n_arr.shape)
    nmax = int(n_arr.max()) if n_arr.size else 0
    if nmax >= 1:
        prev = np.ones(n_arr.shape)
        cur = 1.0 + k_arr - x_arr
        out = np.where(n_arr == 1, cur, out)
        for j in range(1, nmax):
            prev, cur = cur, ((2 * j + 1 + k_arr - x_arr) * cur - (j + k_arr) * prev) / (j + 1)
            out = np.where(n_arr == j + 1, cur, out)
    if out.ndim == 0:
        return float(out)
    return out


def _log_displaced_prefactor(lo, hi, s):
    # log(lo!/hi! * s^(hi-lo)); s = 0 handled by the callers
    with np.errstate(divide="ignore", invalid="ignore"):
        return gammaln(lo + 1.0) - gammaln(hi + 1.0) + (hi - lo) * np.log(s)


def displaced_population(m, n, s, *, with_gaussian: bool = True):
    """|<m|D(alpha)|n>|^2 as a function of s = |alpha|^2.

    For m < n the symmetry |<m|D(a)|n>|^2 = |<n|D(-a)|m>|^2 swaps the roles of
    m and n.  ``with_gaussian=False`` drops the overall exp(-s) factor, which
    leaves a polynomial in s (used for exact quadrature).
    """
    m_arr, n_arr, s_arr = np.broadcast_arrays(
        np.asarray(m, dtype=int), np.asarray(n, dtype=int), np.asarray(s, dtype=float)
    )
    if np.any(s_arr < 0):
        raise ValueError("s = |alpha|^2 must be non-negative")
    lo = np.minimum(m_arr, n_arr)
    hi = np.maximum(m_arr, n_arr)
    k = hi - lo
    lag = assoc_laguerre(lo, k, s_arr)
    logpref = _log_displaced_prefactor(lo, hi, s_arr)
    if with_gaussian:
        logpref = logpref - s_arr
    zero = s_arr == 0.0
    safe = np.where(zero, 0.0, logpref)
    val = np.exp(safe) * np.square(lag)
    val = np.where(zero, (k == 0).astype(float), val)
    if with_gaussian:
        val = np.clip(val, 0.0, 1.0)
    if val.ndim == 0:
        return float(val)
    return val


def _laguerre_table(dim: int, s: np.ndarray) -> np.ndarray:
    """T[i, j, k] = L_j^(k)(s[i]) for 0 <= j, k < dim, one recurrence over j."""
    k = np.arange(dim, dtype=float)[None, :]
    x = s[:, None]
    table = np.empty((s.size, dim, dim))
    prev = np.ones((s.size, dim))
    table[:, 0] = prev
    if dim > 1:
        cur = 1.0 + k - x
        table[:, 1] = cur
        for j in range(1, dim - 1):
            prev, cur = cur, ((2 * j + 1 + k - x) * cur - (j + k) * prev) / (j + 1)
            table[:, j + 1] = cur
    return table


def _raw_displacement_kernels(s, dim: int, with_gaussian: bool = True) -> np.ndarray:
    """Untruncated-formula kernels K[i, m, n] for each s[i]; shape (len(s), dim, dim)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s < 0):
        raise ValueError("s = |alpha|^2 must be non-negative")
    grid = np.arange(dim)
    lo = np.minimum(grid[:, None], grid[None, :])
    hi = np.maximum(grid[:, None], grid[None, :])
    lag = _laguerre_table(dim, s)[:, lo, hi - lo]
    zero = s == 0.0
    logs = np.log(np.where(zero, 1.0, s))
    logpref = (gammaln(lo + 1.0) - gammaln(hi + 1.0))[None] + (hi - lo)[None] * logs[:, None, None]
    if with_gaussian:
        logpref = logpref - s[:, None, None]
    val = np.exp(logpref) * np.square(lag)
    if np.any(zero):
        val[zero] = np.eye(dim)
    if with_gaussian:
        val = np.clip(val, 0.0, 1.0)
    return val


def _normalize_columns(raw: np.ndarray, space: FockSpace, max_leakage: float, where: str):
    colsum = raw.sum(axis=0)
    deficit = np.clip(1.0 - colsum, 0.0, None)
    checked = deficit[: space.n_max + 1]
    if max_leakage is not None and checked.size and checked.max() > max_leakage:
        raise LeakageExceeded(checked.max(), max_leakage, where)
    return StochasticKernel(raw / colsum[None, :], deficit)


def displacement_kernel(
    s: float, space: FockSpace, max_leakage: float = DEFAULT_MAX_LEAKAGE
) -> StochasticKernel:
    """Phonon transition kernel of a displacement with |alpha|^2 = s.

    Columns are renormalized after truncation at ``n_work``.  Only columns
    inside the battery range ``0..n_max`` are held to ``max_leakage``; the
    per-column deficits are kept on the kernel so callers can weight them by
    the populations they actually propagate.
    """
    if s < 0:
        raise ValueError("s must be non-negative")
    if s == 0:
        return StochasticKernel(np.eye(space.dim))
    raw = _raw_displacement_kernels([s], space.dim)[0]
    return _normalize_columns(raw, space, max_leakage, f"displacement s={s:.4g}")


def averaged_displacement_kernel(
    s_samples, space: FockSpace, max_leakage: float = DEFAULT_MAX_LEAKAGE, batch: int = 2000
) -> StochasticKernel:
    """Mean of the displacement kernels over a sample of |alpha|^2 values."""
    s_samples = np.asarray(s_samples, dtype=float).ravel()
    if s_samples.size == 0:
        raise ValueError("need at least one sample")
    acc = np.zeros((space.dim, space.dim))
    for start in range(0, s_samples.size, batch):
        acc += _raw_displacement_kernels(s_samples[start : start + batch], space.dim).sum(axis=0)
    return _normalize_columns(acc / s_samples.size, space, max_leakage, "averaged displacement")


def gaussian_displacement_kernel(
    mean_s: float, space: FockSpace, max_leakage: float = DEFAULT_MAX_LEAKAGE
) -> StochasticKernel:
    """Kernel of a phase-averaged displacement whose |alpha|^2 is exponential with mean ``mean_s``.

    This is the Gaussian random-displacement (diffusive heating) channel.  The
    integral over s is done with Gauss-Laguerre quadrature, which is exact
    because each matrix element is exp(-s) times a polynomial of degree m + n.
    """
    if mean_s < 0:
        raise ValueError("mean_s must be non-negative")
    if mean_s == 0:
        return StochasticKernel(np.eye(space.dim))
    dim = space.dim
    nodes, weights = np.polynomial.laguerre.laggauss(dim + 1)
    c = 1.0 + 1.0 / mean_s
    poly = _raw_displacement_kernels(nodes / c, dim, with_gaussian=False)
    raw = np.tensordot(weights, poly, axes=1) / (mean_s * c)
    return _normalize_columns(raw, space, max_leakage, f"gaussian displacement <s>={mean_s:.4g}")
