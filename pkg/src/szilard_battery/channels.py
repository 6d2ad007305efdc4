"""Physical primitives of the engine as channels on :class:`JointState`.

Phonon-changing noise (photon recoil, anomalous heating) is phase covariant,
so it is represented by a stochastic kernel on Fock populations.  Applying a
kernel keeps qubit coherences between equal phonon numbers and drops
coherences between different phonon numbers; every state the engine produces
is diagonal in the phonon basis within each qubit sector, so no reported
quantity depends on the dropped terms.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import CalibrationOutOfRange, DomainError, LeakageExceeded, StepSizeTooCoarse
from .fock import (
    DEFAULT_MAX_LEAKAGE,
    DOWN,
    UP,
    FockSpace,
    JointState,
    StochasticKernel,
    averaged_displacement_kernel,
    displacement_kernel,
    gaussian_displacement_kernel,
    phonon_density_matrix,
)

TWO_PI = 2.0 * np.pi

# Mean recoil disturbance of the 20 us detection and the number of photon
# pairs that reproduce it.
DEFAULT_RECOIL_TARGET = 0.5
DEFAULT_PHOTON_PAIRS = 235
DEFAULT_ETA = 0.0525

# Isotropic emission: f_sx = u^2 with u ~ U[-1, 1].
ISOTROPIC_MEAN_SQRT_FSX = 0.5
ISOTROPIC_MEAN_FSX = 1.0 / 3.0


def isotropic_f_x(target=DEFAULT_RECOIL_TARGET, n_pairs=DEFAULT_PHOTON_PAIRS, eta=DEFAULT_ETA):
    """Closed-form f_x giving E|alpha|^2 = target under isotropic emission."""
    c = target / (n_pairs * eta**2) - ISOTROPIC_MEAN_FSX
    if c < 0:
        raise CalibrationOutOfRange(target, n_pairs * eta**2 * ISOTROPIC_MEAN_FSX, np.inf)
    root = (-2 * ISOTROPIC_MEAN_SQRT_FSX + np.sqrt(4 * ISOTROPIC_MEAN_SQRT_FSX**2 + 4 * c)) / 2
    return float(root**2)


@dataclass(frozen=True)
class DetectorModel:
    """Threshold fluorescence detector.

    ``eps_dark`` is P(report up | physical down) and ``eps_bright`` is
    P(report down | physical up).  With ``count_model`` set, outcomes come from
    Poisson photon counts compared with ``count_threshold`` instead.
    """

    eps_dark: float = 0.022
    eps_bright: float = 0.004
    n_photon_pairs: int = DEFAULT_PHOTON_PAIRS
    mean_bright_counts: float = 7.3
    count_threshold: int = 1
    count_model: bool = False

    def __post_init__(self):
        for name in ("eps_dark", "eps_bright"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.n_photon_pairs < 0:
            raise ValueError("n_photon_pairs must be >= 0")

    @classmethod
    def perfect(cls) -> "DetectorModel":
        return cls(eps_dark=0.0, eps_bright=0.0, n_photon_pairs=0)

    @property
    def mean_dark_counts(self) -> float:
        # background rate that gives P(counts >= 1) = eps_dark
        return float(-np.log1p(-self.eps_dark)) if self.eps_dark < 1 else np.inf

    def confusion(self) -> np.ndarray:
        """2x2 matrix C[reported, physical] of report probabilities."""
        if self.count_model:
            from scipy.stats import poisson

            k = self.count_threshold
            p_up_dark = poisson.sf(k - 1, self.mean_dark_counts)
            p_up_bright = poisson.sf(k - 1, self.mean_bright_counts)
            return np.array([[1 - p_up_dark, 1 - p_up_bright], [p_up_dark, p_up_bright]])
        return np.array(
            [[1 - self.eps_dark, self.eps_bright], [self.eps_dark, 1 - self.eps_bright]]
        )

    def report(self, physical, rng):
        """Sample reported outcomes for physical qubit values (scalar or array)."""
        physical = np.asarray(physical)
        if self.count_model:
            lam = np.where(physical == UP, self.mean_bright_counts, self.mean_dark_counts)
            out = (rng.poisson(lam) >= self.count_threshold).astype(np.int8)
        else:
            flip_p = np.where(physical == UP, self.eps_bright, self.eps_dark)
            flip = rng.random(physical.shape) < flip_p
            out = np.where(flip, 1 - physical, physical).astype(np.int8)
        return int(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RecoilGeometry:
    eta: float = DEFAULT_ETA
    f_x: float = isotropic_f_x()
    emission_model: str = "isotropic"

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not 0.0 <= self.f_x <= 1.0:
            raise ValueError(f"f_x must lie in [0, 1], got {self.f_x}")
        if self.emission_model != "isotropic":
            raise ValueError(f"unknown emission model {self.emission_model!r}")

    def mean_kick_energy(self, n_pairs: int) -> float:
        """Analytic E|alpha|^2 for ``n_pairs`` independent random-phase pairs."""
        f = self.f_x
        per_pair = f + 2 * np.sqrt(f) * ISOTROPIC_MEAN_SQRT_FSX + ISOTROPIC_MEAN_FSX
        return n_pairs * self.eta**2 * per_pair


@dataclass(frozen=True)
class SweepParams:
    """Adiabatic sideband sweep; angular frequencies in rad/s, times in s."""

    omega0: float = TWO_PI * 21e3
    delta0: float = 3 * TWO_PI * 21e3
    tau: float = 244e-6
    pulse_duration: float = 343e-6
    steps: int = 4096

    def __post_init__(self):
        for name in ("omega0", "delta0", "tau", "pulse_duration"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.steps < 256:
            raise ValueError("steps must be >= 256")

    def rabi(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t <= self.tau, self.omega0 * np.sin(np.pi * t / self.tau), 0.0)

    def detuning(self, t):
        return self.delta0 * np.cos(np.pi * np.asarray(t, dtype=float) / self.tau)


class Measurement(NamedTuple):
    reported: int
    physical: int
    state: JointState


# -- simple channels -----------------------------------------------------------


def bath_channel(state: JointState, p_up: float) -> JointState:
    """Thermalize the qubit to populations (1 - p_up, p_up); oscillator untouched."""
    if not 0.0 <= p_up <= 0.5:
        raise DomainError(f"p_up must lie in [0, 0.5], got {p_up}")
    osc = phonon_density_matrix(state)
    return state.replace(np.kron(np.diag([1.0 - p_up, p_up]), osc))


def carrier_pi(state: JointState) -> JointState:
    """Microwave pi pulse: |up, n> <-> |down, n>."""
    d = state.space.dim
    perm = np.r_[d : 2 * d, 0:d]
    return state.replace(state.matrix[np.ix_(perm, perm)], check=False)


def optical_pump(state: JointState) -> JointState:
    """Reset the qubit to |down>, keeping the oscillator state."""
    osc = phonon_density_matrix(state)
    return state.replace(np.kron(np.diag([1.0, 0.0]), osc))


def apply_phonon_kernel(
    state: JointState, kernel: StochasticKernel, sectors=(DOWN, UP), max_leakage=None
) -> JointState:
    """Apply a phase-covariant phonon kernel to the listed qubit sectors."""
    d = state.space.dim
    if kernel.dim != d:
        raise ValueError("kernel dimension does not match the state")
    rho = state.matrix.copy()
    leak = 0.0
    for s in (DOWN, UP):
        for t in (DOWN, UP):
            if s not in sectors and t not in sectors:
                continue
            if s not in sectors or t not in sectors:
                # coherence between a kicked and an untouched sector is lost
                rho[s * d : (s + 1) * d, t * d : (t + 1) * d] = 0.0
                continue
            blk = rho[s * d : (s + 1) * d, t * d : (t + 1) * d]
            new = np.diag(kernel.matrix @ np.diag(blk))
            if s == t:
                leak += kernel.weighted_leakage(np.real(np.diag(blk)))
            rho[s * d : (s + 1) * d, t * d : (t + 1) * d] = new
    if max_leakage is not None and leak > max_leakage:
        raise LeakageExceeded(leak, max_leakage, "kernel application")
    return state.replace(rho, extra_leakage=leak)


@lru_cache(maxsize=64)
def heating_kernel(delta_nbar: float, space: FockSpace) -> StochasticKernel:
    return gaussian_displacement_kernel(delta_nbar, space)


def heating_channel(
    state: JointState, delta_nbar: float, space: FockSpace = None, max_leakage=DEFAULT_MAX_LEAKAGE
) -> JointState:
    """Diffusive heating: Gaussian random displacement with E|alpha|^2 = delta_nbar."""
    if delta_nbar < 0:
        raise DomainError("delta_nbar must be non-negative")
    space = space or state.space
    if delta_nbar == 0:
        return state
    return apply_phonon_kernel(state, heating_kernel(float(delta_nbar), space), max_leakage=max_leakage)


def heating_per_cycle(rate_per_ms: float, cycle_time_us: float) -> float:
    return rate_per_ms * cycle_time_us * 1e-3


# -- measurement and recoil ----------------------------------------------------


def recoil_kick(n_pairs: int, geom: RecoilGeometry, rng, size=None):
    """Phase-space displacement from ``n_pairs`` absorption/emission pairs.

    Each pair kicks by eta*(sqrt(f_x) + |u|) with a uniformly random phase;
    u ~ U[-1, 1] is the emission direction cosine along x.
    """
    if n_pairs < 0:
        raise ValueError("n_pairs must be >= 0")
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    if n_pairs == 0:
        return 0j if size is None else np.zeros(shape, dtype=complex)
    a, b = _pair_sums(n_pairs, rng, shape)
    alpha = geom.eta * (np.sqrt(geom.f_x) * a + b)
    return complex(alpha) if size is None else alpha


def _pair_sums(n_pairs, rng, shape, chunk=20000):
    """Per shot: A = sum exp(i phi_j) and B = sum |u_j| exp(i phi_j)."""
    total = int(np.prod(shape)) if shape else 1
    a = np.empty(total, dtype=complex)
    b = np.empty(total, dtype=complex)
    for start in range(0, total, chunk):
        m = min(chunk, total - start)
        phase = np.exp(1j * TWO_PI * rng.random((m, n_pairs)))
        u = np.abs(rng.uniform(-1.0, 1.0, (m, n_pairs)))
        a[start : start + m] = phase.sum(axis=1)
        b[start : start + m] = (u * phase).sum(axis=1)
    return a.reshape(shape), b.reshape(shape)


def project_qubit(state: JointState, s: int) -> JointState:
    """Normalized state conditioned on the qubit being in sector ``s``."""
    d = state.space.dim
    rho = np.zeros_like(state.matrix)
    sl = slice(s * d, (s + 1) * d)
    rho[sl, sl] = state.matrix[sl, sl]
    weight = np.trace(rho).real
    if weight <= 0:
        raise ValueError(f"qubit sector {s} has zero population")
    return state.replace(rho / weight)


def measure_qubit(state: JointState, det: DetectorModel, geom: RecoilGeometry, rng) -> Measurement:
    """Fluorescence detection with collapse, misreporting and recoil.

    Recoil follows the physical bright state, whatever label the detector
    reports.
    """
    pops = state.sector_populations().sum(axis=1)
    p_up = float(np.clip(pops[UP] / pops.sum(), 0.0, 1.0))
    physical = UP if rng.random() < p_up else DOWN
    post = project_qubit(state, physical)
    reported = det.report(physical, rng)
    if physical == UP and det.n_photon_pairs > 0:
        s = abs(recoil_kick(det.n_photon_pairs, geom, rng)) ** 2
        post = apply_phonon_kernel(post, displacement_kernel(s, state.space, max_leakage=None))
    return Measurement(int(reported), physical, post)


def calibrate_recoil(
    target_mean_phonon: float,
    n_pairs: int,
    geom: RecoilGeometry,
    shots: int,
    rng,
    rel_tol: float = 0.01,
) -> RecoilGeometry:
    """Bisect f_x so that the Monte Carlo E|alpha|^2 hits the target.

    The same kick sample is reused for every trial f_x, which makes the
    estimate a monotone function of f_x.
    """
    if target_mean_phonon <= 0:
        raise ValueError("target must be positive")
    if n_pairs <= 0:
        raise CalibrationOutOfRange(target_mean_phonon, 0.0, 0.0)
    a, b = _pair_sums(n_pairs, rng, (shots,))
    m_aa = np.mean(np.abs(a) ** 2)
    m_ab = np.mean(np.real(a * np.conj(b)))
    m_bb = np.mean(np.abs(b) ** 2)
    eta2 = geom.eta**2

    def energy(f):
        return eta2 * (f * m_aa + 2 * np.sqrt(f) * m_ab + m_bb)

    lo, hi = energy(0.0), energy(1.0)
    if abs(lo - target_mean_phonon) <= rel_tol * target_mean_phonon:
        return replace(geom, f_x=0.0)
    if abs(hi - target_mean_phonon) <= rel_tol * target_mean_phonon:
        return replace(geom, f_x=1.0)
    if not lo < target_mean_phonon < hi:
        raise CalibrationOutOfRange(target_mean_phonon, lo, hi)
    f_lo, f_hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (f_lo + f_hi)
        if energy(mid) < target_mean_phonon:
            f_lo = mid
        else:
            f_hi = mid
        if f_hi - f_lo < 1e-12:
            break
    return replace(geom, f_x=0.5 * (f_lo + f_hi))


def recoil_avg_kernel(
    n_pairs: int,
    geom: RecoilGeometry,
    samples: int,
    space: FockSpace,
    rng,
    max_leakage=DEFAULT_MAX_LEAKAGE,
) -> StochasticKernel:
    """Fluorescence-disturbance kernel averaged over sampled recoil kicks."""
    if samples < 1000:
        raise ValueError("samples must be >= 1000")
    if n_pairs == 0:
        return StochasticKernel(np.eye(space.dim))
    s = np.abs(recoil_kick(n_pairs, geom, rng, size=samples)) ** 2
    return averaged_displacement_kernel(s, space, max_leakage=max_leakage)


# -- adiabatic sideband transfer ----------------------------------------------


def _sideband_pairs(space: FockSpace):
    """Joint indices of the coupled pairs (|up, n>, |down, n+1>), n < n_work."""
    d = space.dim
    n = np.arange(space.n_work)
    return d + n, n + 1


def _transfer_leakage(state: JointState) -> float:
    return float(state.sector_populations()[UP, state.space.n_work])


def adiabatic_ideal(state: JointState) -> JointState:
    """Perfect transfer |up, n> <-> |down, n+1>; |down, 0> is left alone.

    Population on |up, n_work> has no partner inside the workspace and is
    added to the state's leakage tally.
    """
    up_idx, down_idx = _sideband_pairs(state.space)
    perm = np.arange(state.space.joint_dim)
    perm[up_idx] = down_idx
    perm[down_idx] = up_idx
    leak = _transfer_leakage(state)
    return state.replace(state.matrix[np.ix_(perm, perm)], extra_leakage=leak, check=False)


def _su2_exp(vx, vy, vz):
    """exp(-i (v . sigma)) for arrays of real 3-vectors; returns (..., 2, 2)."""
    norm = np.sqrt(vx**2 + vy**2 + vz**2)
    c = np.cos(norm)
    sinc = np.where(norm > 0, np.sin(norm) / np.where(norm > 0, norm, 1.0), 1.0)
    u = np.empty(norm.shape + (2, 2), dtype=complex)
    u[..., 0, 0] = c - 1j * sinc * vz
    u[..., 1, 1] = c + 1j * sinc * vz
    u[..., 0, 1] = -1j * sinc * vx - sinc * vy
    u[..., 1, 0] = -1j * sinc * vx + sinc * vy
    return u


def _propagate_blocks(sw: SweepParams, n_blocks: int, steps: int, record: bool = False):
    """Fourth-order Magnus propagation of all 2x2 sideband blocks at once.

    Block n has H = (delta/2) sz + (Omega sqrt(n+1)/2) sx in the basis
    (|up, n>, |down, n+1>).
    """
    h = sw.pulse_duration / steps
    g = np.sqrt(np.arange(1, n_blocks + 1))
    c1, c2 = 0.5 - np.sqrt(3) / 6, 0.5 + np.sqrt(3) / 6
    u = np.broadcast_to(np.eye(2, dtype=complex), (n_blocks, 2, 2)).copy()
    trace = np.empty((steps, n_blocks)) if record else None
    for k in range(steps):
        t0 = k * h
        t1, t2 = t0 + c1 * h, t0 + c2 * h
        ax1, az1 = 0.5 * sw.rabi(t1) * g, 0.5 * sw.detuning(t1)
        ax2, az2 = 0.5 * sw.rabi(t2) * g, 0.5 * sw.detuning(t2)
        # Omega_4 = -i [ h/2 (a1 + a2) + sqrt(3) h^2 / 6 (a2 x a1) ] . sigma
        vx = 0.5 * h * (ax1 + ax2)
        vz = 0.5 * h * (az1 + az2) * np.ones(n_blocks)
        vy = np.sqrt(3) * h * h / 6 * (az2 * ax1 - ax2 * az1)
        u = _su2_exp(vx, vy, vz) @ u
        if record:
            trace[k] = np.abs(u[:, 1, 0]) ** 2
    return u, trace


@lru_cache(maxsize=32)
def sweep_block_unitaries(sw: SweepParams, n_blocks: int, check: bool = True) -> np.ndarray:
    """2x2 propagators of every sideband block over the full pulse.

    Raises StepSizeTooCoarse when halving ``sw.steps`` moves any block
    population by more than 1e-6.
    """
    u, _ = _propagate_blocks(sw, n_blocks, sw.steps)
    if check:
        u_half, _ = _propagate_blocks(sw, n_blocks, sw.steps // 2)
        diff = np.max(np.abs(np.abs(u) ** 2 - np.abs(u_half) ** 2))
        if diff > 1e-6:
            raise StepSizeTooCoarse(
                f"halving steps from {sw.steps} changes populations by {diff:.2e}"
            )
    u.setflags(write=False)
    return u


def sweep_transfer_probabilities(sw: SweepParams, n_blocks: int) -> np.ndarray:
    """P(|up, n> -> |down, n+1>) for each block n."""
    return np.abs(sweep_block_unitaries(sw, n_blocks)[:, 1, 0]) ** 2


def sweep_population_trace(sw: SweepParams, n_blocks: int):
    """Times (s) and |down, n+1> population vs time for |up, n> inputs."""
    _, trace = _propagate_blocks(sw, n_blocks, sw.steps, record=True)
    times = sw.pulse_duration / sw.steps * np.arange(1, sw.steps + 1)
    return times, trace


def crossing_times(sw: SweepParams, n_blocks: int, threshold: float = 0.99) -> np.ndarray:
    """First time each block's transferred population exceeds ``threshold`` (nan if never)."""
    times, trace = sweep_population_trace(sw, n_blocks)
    above = trace > threshold
    first = np.argmax(above, axis=0)
    return np.where(above.any(axis=0), times[first], np.nan)


def adiabatic_sweep(state: JointState, sw: SweepParams) -> JointState:
    """Time-dependent sideband sweep applied to the joint state."""
    space = state.space
    blocks = sweep_block_unitaries(sw, space.n_work)
    up_idx, down_idx = _sideband_pairs(space)
    u = np.eye(space.joint_dim, dtype=complex)
    u[up_idx, up_idx] = blocks[:, 0, 0]
    u[up_idx, down_idx] = blocks[:, 0, 1]
    u[down_idx, up_idx] = blocks[:, 1, 0]
    u[down_idx, down_idx] = blocks[:, 1, 1]
    leak = _transfer_leakage(state)
    return state.replace(u @ state.matrix @ u.conj().T, extra_leakage=leak)
