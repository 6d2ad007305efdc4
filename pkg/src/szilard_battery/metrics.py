"""Thermodynamic and information measures of the engine and its battery.

Energies are in motional quanta, temperatures as k_B T in the same unit and
information in nats.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy
from scipy.stats import binom

from .errors import DomainError
from .fock import FockSpace, PhononDistribution


@dataclass(frozen=True)
class EnergySpectrum:
    levels: np.ndarray

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=float)
        if lv.ndim != 1 or np.any(np.diff(lv) <= 0):
            raise ValueError("energy levels must be strictly increasing")
        object.__setattr__(self, "levels", lv)

    @classmethod
    def harmonic(cls, n_max: int) -> "EnergySpectrum":
        return cls(np.arange(n_max + 1, dtype=float))


def _probs(dist) -> np.ndarray:
    if isinstance(dist, PhononDistribution):
        return dist.probs
    return np.asarray(dist, dtype=float)


def bath_temperature(p_up: float) -> float:
    """k_B T of a qubit bath with excited population ``p_up``; inf at p_up = 0.5."""
    if not 0.0 < p_up <= 0.5:
        raise DomainError(f"bath temperature needs p_up in (0, 0.5], got {p_up}")
    if p_up == 0.5:
        return np.inf
    return 1.0 / np.log((1.0 - p_up) / p_up)


def mutual_information(p_up: float) -> float:
    """Binary entropy of the measurement outcome, in nats."""
    if not 0.0 <= p_up <= 0.5:
        raise DomainError(f"p_up must lie in [0, 0.5], got {p_up}")
    return float(-xlogy(p_up, p_up) - xlogy(1.0 - p_up, 1.0 - p_up))


def passive_state(dist) -> PhononDistribution:
    """Populations re-sorted in non-increasing order (ties keep their original order)."""
    p = _probs(dist)
    order = np.argsort(-p, kind="stable")
    return PhononDistribution(p[order])


def mean_energy(dist, spectrum: EnergySpectrum = None) -> float:
    p = _probs(dist)
    levels = np.arange(len(p)) if spectrum is None else spectrum.levels
    return float(levels @ p)


def ergotropy(dist, spectrum: EnergySpectrum = None) -> float:
    """Maximum unitarily extractable energy.

    ``dist`` is normally a vector of Fock populations.  A square density
    matrix is also accepted; it is treated in the eigenbasis of the diagonal
    Hamiltonian ``spectrum``.
    """
    arr = dist.probs if isinstance(dist, PhononDistribution) else np.asarray(dist)
    if arr.ndim == 2:
        rho = 0.5 * (arr + arr.conj().T)
        levels = np.arange(rho.shape[0]) if spectrum is None else spectrum.levels
        energy = float(np.real(np.sum(levels * np.diag(rho))))
        evals = np.sort(np.linalg.eigvalsh(rho))[::-1]
        return max(energy - float(levels @ evals), 0.0)
    p = arr.astype(float)
    levels = np.arange(len(p)) if spectrum is None else spectrum.levels
    if len(levels) != len(p):
        raise ValueError("spectrum and distribution lengths differ")
    passive = np.sort(p)[::-1]
    return max(float(levels @ p - levels @ passive), 0.0)


def ideal_phonon_distribution(cycles: int, p_up: float, space: FockSpace) -> PhononDistribution:
    """Binomial battery populations after ``cycles`` error-free cycles from |0>."""
    if cycles > space.n_work:
        raise ValueError(f"cycles ({cycles}) exceed the workspace cutoff {space.n_work}")
    probs = np.zeros(space.dim)
    probs[: cycles + 1] = binom.pmf(np.arange(cycles + 1), cycles, p_up)
    return PhononDistribution(probs)


def binomial_ergotropy(cycles: int, p_up: float) -> float:
    probs = binom.pmf(np.arange(cycles + 1), cycles, p_up)
    return ergotropy(probs)


def ergotropy_asymptotic(cycles: int, p_up: float) -> float:
    """Large-N normal approximation N p - sqrt(2 N p (1 - p) / pi)."""
    if cycles < 1 or not 0.0 < p_up < 1.0:
        raise ValueError("need cycles >= 1 and 0 < p_up < 1")
    return cycles * p_up - np.sqrt(2.0 * cycles * p_up * (1.0 - p_up) / np.pi)


@dataclass(frozen=True)
class EfficiencyReport:
    p_up: float
    k_B_T: float
    mutual_info: float
    mean_work_per_cycle: float
    mean_ergotropy_per_cycle: float
    info_work_eff: float
    charging_eff: float


def efficiencies(p_up: float, mean_work_per_cycle: float, ergotropies) -> EfficiencyReport:
    """Information-to-work and charging efficiencies.

    ``ergotropies[k - 1]`` is the battery ergotropy after cycle ``k``; the
    ergotropy produced per cycle is the run average of ``E_k / k``.  Both
    efficiencies are reported as 0 at p_up = 0.5, where k_B T diverges.  At
    p_up = 0 the ratios are 0/0 and a DomainError is raised; see
    :func:`info_work_efficiency_limit`.
    """
    if p_up == 0.0:
        raise DomainError("efficiencies are undefined at p_up = 0 (zero temperature)")
    erg = np.asarray(ergotropies, dtype=float)
    if erg.ndim != 1 or erg.size < 1:
        raise ValueError("need the ergotropy after at least one cycle")
    kt = bath_temperature(p_up)
    info = mutual_information(p_up)
    erg_per_cycle = float(np.mean(erg / np.arange(1, erg.size + 1)))
    if np.isinf(kt):
        work_eff = charge_eff = 0.0
    else:
        work_eff = mean_work_per_cycle / (kt * info)
        charge_eff = erg_per_cycle / (kt * info)
    return EfficiencyReport(
        p_up=p_up,
        k_B_T=kt,
        mutual_info=info,
        mean_work_per_cycle=mean_work_per_cycle,
        mean_ergotropy_per_cycle=erg_per_cycle,
        info_work_eff=float(work_eff),
        charging_eff=float(charge_eff),
    )


def ideal_ergotropies(cycles: int, p_up: float) -> np.ndarray:
    return np.array([binomial_ergotropy(k, p_up) for k in range(1, cycles + 1)])


def ideal_efficiencies(p_up: float, cycles: int = 10) -> EfficiencyReport:
    return efficiencies(p_up, p_up, ideal_ergotropies(cycles, p_up))


def info_work_efficiency_limit(p_up: float) -> float:
    """Ideal information-to-work efficiency including the p_up -> 0 limit (= 1)."""
    if p_up == 0.0:
        return 1.0
    return ideal_efficiencies(p_up, 1).info_work_eff


def engine_power(p_up: float, cycle_time_us: float) -> float:
    """Ideal mean work per microsecond."""
    if cycle_time_us <= 0:
        raise ValueError("cycle_time must be positive")
    return p_up / cycle_time_us
