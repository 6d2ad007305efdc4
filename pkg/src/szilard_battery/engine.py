"""The cyclic information engine, number-resolving readout and work protocols.

Three backends share one cycle definition (bath, measurement, conditional
sideband transfer, heating):

``exact_channel``
    Deterministic density-matrix propagation.  The measurement is split into
    its two reported-outcome branches, feedback is applied to the bright
    branch, and the branches are recombined before the next cycle.
``trajectory``
    ``shots`` stochastic histories sampled in fixed-size chunks, each chunk
    with its own derived random stream.
``ideal_markov``
    The error-free binomial chain.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from . import ensemble as ens_ops
from .channels import (
    DetectorModel,
    RecoilGeometry,
    SweepParams,
    adiabatic_ideal,
    adiabatic_sweep,
    apply_phonon_kernel,
    bath_channel,
    carrier_pi,
    heating_channel,
    heating_kernel,
    measure_qubit,
    optical_pump,
    project_qubit,
    recoil_avg_kernel,
    recoil_kick,
    sweep_transfer_probabilities,
)
from .ensemble import Ensemble
from .errors import DomainError
from .fock import (
    DEFAULT_MAX_LEAKAGE,
    DOWN,
    UP,
    FockSpace,
    JointState,
    PhononDistribution,
    StochasticKernel,
    displacement_kernel,
    lump,
    state_statistics,
    thermal_distribution,
)
from .metrics import bath_temperature, ergotropy
from .seeding import float_key, stream

BACKENDS = ("exact_channel", "trajectory", "ideal_markov")
CHUNK_SHOTS = 10_000


@dataclass(frozen=True)
class EngineConfig:
    """Physical and numerical parameters of one experiment.

    ``cycle_time`` is in microseconds.  ``pump_photon_pairs`` switches on a
    recoil kick during every optical pumping step of the number-resolving
    readout (off by default).
    """

    p_up: float = 0.5
    cycles: int = 10
    backend: str = "exact_channel"
    detector: DetectorModel = field(default_factory=DetectorModel)
    geometry: RecoilGeometry = field(default_factory=RecoilGeometry)
    sweep: SweepParams = field(default_factory=SweepParams)
    use_sweep: bool = False
    heating_per_cycle: float = 0.02
    cycle_time: float = 455.0
    initial_nbar: float = 0.009
    space: FockSpace = None
    shots: int = 10_000
    seed: int = 0
    recoil_samples: int = 20_000
    pump_photon_pairs: int = 0
    max_leakage: float = DEFAULT_MAX_LEAKAGE
    threads: int = 1

    def __post_init__(self):
        if not 0.0 <= self.p_up <= 0.5:
            raise DomainError(f"p_up must lie in [0, 0.5], got {self.p_up}")
        if self.cycles < 0:
            raise ValueError("cycles must be >= 0")
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}; choose from {BACKENDS}")
        if self.heating_per_cycle < 0 or self.initial_nbar < 0:
            raise ValueError("heating_per_cycle and initial_nbar must be non-negative")
        if self.space is None:
            object.__setattr__(self, "space", FockSpace.for_cycles(self.cycles))

    @classmethod
    def ideal(cls, p_up: float, cycles: int = 10, **kw) -> "EngineConfig":
        """Error-free engine: perfect detector, no recoil, no heating, ground-state start."""
        kw.setdefault("detector", DetectorModel.perfect())
        kw.setdefault("heating_per_cycle", 0.0)
        kw.setdefault("initial_nbar", 0.0)
        return cls(p_up=p_up, cycles=cycles, **kw)

    def with_(self, **changes) -> "EngineConfig":
        if "cycles" in changes and "space" not in changes:
            changes["space"] = None
        return replace(self, **changes)


class CycleRecord(NamedTuple):
    cycle_index: int
    reported_outcome: int
    physical_outcome: int
    feedback_applied: bool
    work_quanta: int
    post_distribution: PhononDistribution
    leakage: float


@dataclass
class CycleStats:
    """Aggregated results after one cycle (or before the first, ``cycle = 0``).

    ``distribution`` is the battery's phonon marginal and ``readout`` what the
    number-resolving detection would report on a copy of the state; both run
    over 0..n_work.
    """

    cycle: int
    distribution: np.ndarray
    readout: np.ndarray
    mean_work: float
    leakage: float
    work_stderr: float = 0.0

    @property
    def mean_phonon(self) -> float:
        return float(np.arange(self.distribution.size) @ self.distribution)

    @property
    def readout_mean(self) -> float:
        return float(np.arange(self.readout.size) @ self.readout)

    def reported(self, n_max: int, readout: bool = True) -> np.ndarray:
        return lump(self.readout if readout else self.distribution, n_max)

    def ergotropy(self, n_max: int, readout: bool = True) -> float:
        return ergotropy(self.reported(n_max, readout))


@dataclass
class EngineRun:
    config: EngineConfig
    seed: int
    initial: CycleStats
    per_cycle: list

    def mean_phonons(self, readout: bool = True, n_max: int = None) -> np.ndarray:
        out = []
        for st in self.per_cycle:
            if n_max is None:
                out.append(st.readout_mean if readout else st.mean_phonon)
            else:
                p = st.reported(n_max, readout)
                out.append(float(np.arange(p.size) @ p))
        return np.array(out)

    def ergotropies(self, n_max: int = None, readout: bool = True) -> np.ndarray:
        n_max = self.config.space.n_max if n_max is None else n_max
        return np.array([st.ergotropy(n_max, readout) for st in self.per_cycle])

    @property
    def mean_work_per_cycle(self) -> float:
        if not self.per_cycle:
            return 0.0
        return float(np.mean([st.mean_work for st in self.per_cycle]))


# -- configuration-derived operators --------------------------------------------


@lru_cache(maxsize=16)
def _recoil_kernel(n_pairs, geom, samples, space, seed, max_leakage, label):
    if n_pairs == 0:
        return StochasticKernel(np.eye(space.dim))
    rng = stream(seed, label)
    return recoil_avg_kernel(n_pairs, geom, samples, space, rng, max_leakage=max_leakage)


def fluorescence_kernel(cfg: EngineConfig) -> StochasticKernel:
    """Recoil kernel of one detection (the disturbance matrix M2), fixed by ``cfg.seed``."""
    return _recoil_kernel(
        cfg.detector.n_photon_pairs,
        cfg.geometry,
        cfg.recoil_samples,
        cfg.space,
        cfg.seed,
        cfg.max_leakage,
        "m2",
    )


def pump_kernel(cfg: EngineConfig) -> StochasticKernel:
    return _recoil_kernel(
        cfg.pump_photon_pairs,
        cfg.geometry,
        cfg.recoil_samples,
        cfg.space,
        cfg.seed,
        cfg.max_leakage,
        "pump",
    )


def transfer_probabilities(cfg: EngineConfig):
    """Per-block sideband transfer probabilities, or None for the ideal transfer."""
    if not cfg.use_sweep:
        return None
    return sweep_transfer_probabilities(cfg.sweep, cfg.space.n_work)


def apply_transfer(state: JointState, cfg: EngineConfig) -> JointState:
    return adiabatic_sweep(state, cfg.sweep) if cfg.use_sweep else adiabatic_ideal(state)


def initial_state(cfg: EngineConfig) -> JointState:
    return JointState.thermal(cfg.initial_nbar, cfg.space)


# -- single trajectory on density matrices -----------------------------------------


def run_cycle(state: JointState, cfg: EngineConfig, rng, cycle_index: int = 0):
    """One selective engine cycle on a density matrix.

    Work is booked by the outcome rule: one quantum when the detector reported
    |up| and the qubit is physically |down> after the feedback.
    """
    leak0 = state.leakage
    state = bath_channel(state, cfg.p_up)
    meas = measure_qubit(state, cfg.detector, cfg.geometry, rng)
    state = meas.state
    feedback = meas.reported == UP
    work = 0
    if feedback:
        state = apply_transfer(state, cfg)
        p_down = float(np.clip(state.sector_populations()[DOWN].sum(), 0.0, 1.0))
        y = DOWN if rng.random() < p_down else UP
        state = project_qubit(state, y)
        work = int(y == DOWN)
    state = heating_channel(state, cfg.heating_per_cycle, max_leakage=None)
    record = CycleRecord(
        cycle_index=cycle_index,
        reported_outcome=meas.reported,
        physical_outcome=meas.physical,
        feedback_applied=feedback,
        work_quanta=work,
        post_distribution=state_statistics(state).phonon_marginal,
        leakage=state.leakage - leak0,
    )
    return state, record


class PNRDResult(NamedTuple):
    measured_n: int
    rounds: int
    saturated: bool


def pnrd(state: JointState, cfg: EngineConfig, rng) -> PNRDResult:
    """Phonon-number-resolving detection on a density matrix.

    Loop: optical pump, sideband transfer, carrier pi pulse, fluorescence
    detection; stop at the first bright report.  The result is the number of
    rounds minus one.  After n_work + 1 dark rounds the result saturates at
    n_work and is flagged.
    """
    n_work = cfg.space.n_work
    for r in range(n_work + 1):
        if cfg.pump_photon_pairs:
            s = abs(recoil_kick(cfg.pump_photon_pairs, cfg.geometry, rng)) ** 2
            if s > 0:
                kick = displacement_kernel(s, cfg.space, max_leakage=None)
                state = apply_phonon_kernel(state, kick, sectors=(UP,))
        state = optical_pump(state)
        state = apply_transfer(state, cfg)
        state = carrier_pi(state)
        meas = measure_qubit(state, cfg.detector, cfg.geometry, rng)
        state = meas.state
        if meas.reported == UP:
            return PNRDResult(r, r + 1, False)
    return PNRDResult(n_work, n_work + 1, True)


# -- exact population bookkeeping ------------------------------------------------


def _transfer_populations(up, down, q):
    """Sideband transfer on sector populations (arrays with phonon index first)."""
    new_up, new_down = up.copy(), down.copy()
    qq = q.reshape((-1,) + (1,) * (up.ndim - 1))
    new_up[:-1] = up[:-1] * (1 - qq) + down[1:] * qq
    new_down[1:] = down[1:] * (1 - qq) + up[:-1] * qq
    return new_up, new_down


@lru_cache(maxsize=16)
def _pnrd_kernel_cached(cfg: EngineConfig) -> StochasticKernel:
    d = cfg.space.dim
    n_work = cfg.space.n_work
    conf = cfg.detector.confusion()
    q = transfer_probabilities(cfg)
    q = np.ones(n_work) if q is None else q
    m2 = fluorescence_kernel(cfg).matrix
    mp = pump_kernel(cfg).matrix if cfg.pump_photon_pairs else None
    up = np.zeros((d, d))
    down = np.eye(d)
    out = np.zeros((d, d))
    for r in range(n_work + 1):
        if mp is not None:
            up = mp @ up
        down, up = down + up, np.zeros_like(up)
        up, down = _transfer_populations(up, down, q)
        up, down = down, up
        out[r] += conf[UP, DOWN] * down.sum(axis=0) + conf[UP, UP] * up.sum(axis=0)
        down = conf[DOWN, DOWN] * down
        up = conf[DOWN, UP] * (m2 @ up)
    out[n_work] += down.sum(axis=0) + up.sum(axis=0)
    return StochasticKernel(out)


def pnrd_kernel(cfg: EngineConfig) -> StochasticKernel:
    """Exact readout kernel K[result, n] of the number-resolving detection."""
    return _pnrd_kernel_cached(_kernel_key(cfg))


def _kernel_key(cfg: EngineConfig) -> EngineConfig:
    # fields that do not affect the readout are normalized for caching
    return replace(cfg, p_up=0.0, cycles=0, backend="exact_channel", shots=1, threads=1,
                   heating_per_cycle=0.0, initial_nbar=0.0, space=cfg.space)


def pnrd_distribution(state: JointState, cfg: EngineConfig) -> np.ndarray:
    """Exact distribution of PNRD results for ``state`` (length n_work + 1)."""
    marginal = state.sector_populations().sum(axis=0)
    return pnrd_kernel(cfg).apply(marginal)


def _measurement_branches(state: JointState, cfg: EngineConfig, recoil: StochasticKernel):
    """Reported-outcome branches {reported: (probability, normalized state)}."""
    conf = cfg.detector.confusion()
    pops = np.clip(state.sector_populations().sum(axis=1), 0.0, None)
    collapsed = {}
    for s in (DOWN, UP):
        if pops[s] > 1e-15:
            st = project_qubit(state, s)
            if s == UP and recoil is not None:
                st = apply_phonon_kernel(st, recoil)
            collapsed[s] = st
    branches = {}
    for r in (DOWN, UP):
        weights = np.array([conf[r, s] * pops[s] for s in collapsed])
        total = weights.sum()
        if total > 1e-15:
            branches[r] = (float(total), JointState.mixture(weights / total, collapsed.values()))
    return branches


def _exact_cycle(state: JointState, cfg: EngineConfig, recoil):
    state = bath_channel(state, cfg.p_up)
    parts = []
    work = 0.0
    for r, (prob, st) in _measurement_branches(state, cfg, recoil).items():
        if r == UP:
            st = apply_transfer(st, cfg)
            work = prob * float(st.sector_populations()[DOWN].sum())
        parts.append((prob, st))
    total = sum(p for p, _ in parts)
    state = JointState.mixture([p / total for p, _ in parts], [st for _, st in parts])
    state = heating_channel(state, cfg.heating_per_cycle, max_leakage=cfg.max_leakage)
    return state, work


def _stats_from_state(cycle, state, cfg, work, leakage):
    marginal = np.clip(state.sector_populations().sum(axis=0), 0.0, None)
    marginal /= marginal.sum()
    return CycleStats(cycle, marginal, pnrd_kernel(cfg).apply(marginal), work, leakage)


def _run_exact(cfg: EngineConfig) -> EngineRun:
    recoil = fluorescence_kernel(cfg) if cfg.detector.n_photon_pairs else None
    state = initial_state(cfg)
    initial = _stats_from_state(0, state, cfg, 0.0, 0.0)
    stats = []
    for c in range(1, cfg.cycles + 1):
        leak0 = state.leakage
        state, work = _exact_cycle(state, cfg, recoil)
        stats.append(_stats_from_state(c, state, cfg, work, state.leakage - leak0))
    return EngineRun(cfg, cfg.seed, initial, stats)


def _run_ideal_markov(cfg: EngineConfig) -> EngineRun:
    d = cfg.space.dim
    p = cfg.p_up
    dist = np.zeros(d)
    dist[0] = 1.0
    initial = CycleStats(0, dist.copy(), dist.copy(), 0.0, 0.0)
    stats = []
    for c in range(1, cfg.cycles + 1):
        stranded = p * dist[-1]
        new = (1 - p) * dist
        new[1:] += p * dist[:-1]
        new[-1] += stranded
        dist = new
        stats.append(CycleStats(c, dist.copy(), dist.copy(), p - stranded, stranded))
    return EngineRun(cfg, cfg.seed, initial, stats)


# -- trajectory backend ----------------------------------------------------------


def _pnrd_ensemble(ens: Ensemble, cfg: EngineConfig, rng, probs=None):
    """PNRD on every history of a copy of ``ens``; returns (results, saturated)."""
    ens = ens.copy()
    n_work = cfg.space.n_work
    result = np.full(len(ens), n_work, dtype=np.int64)
    active = np.ones(len(ens), dtype=bool)
    det = cfg.detector
    for r in range(n_work + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        if cfg.pump_photon_pairs:
            bright = idx[ens.s[idx] == UP]
            ens.n[bright], leak = ens_ops.sample_recoil(
                ens.n[bright], cfg.pump_photon_pairs, cfg.geometry, cfg.space, rng
            )
        ens_ops.pump(ens, idx)
        ens_ops.transfer(ens, probs, rng, idx)
        ens_ops.carrier(ens, idx)
        physical = ens.s[idx]
        reported = np.asarray(det.report(physical, rng))
        # recoil only matters for histories that keep going
        kicked = idx[(physical == UP) & (reported == DOWN)]
        if det.n_photon_pairs and kicked.size:
            ens.n[kicked], _ = ens_ops.sample_recoil(
                ens.n[kicked], det.n_photon_pairs, cfg.geometry, cfg.space, rng
            )
        hit = idx[reported == UP]
        result[hit] = r
        active[hit] = False
    return result, active


def _trajectory_chunk(cfg: EngineConfig, chunk: int, size: int, probs, heat_k):
    rng = stream(cfg.seed, "trajectory", float_key(cfg.p_up), chunk)
    d = cfg.space.dim
    ens = Ensemble.from_phonon_probs(thermal_distribution(cfg.initial_nbar, d), size, cfg.space, rng)
    n_c = cfg.cycles
    hist = np.zeros((n_c + 1, d))
    readout = np.zeros((n_c + 1, d))
    work = np.zeros(n_c + 1)
    work_sq = np.zeros(n_c + 1)
    leak = np.zeros(n_c + 1)
    hist[0] = ens.phonon_histogram()
    res, _ = _pnrd_ensemble(ens, cfg, rng, probs)
    readout[0] = np.bincount(res, minlength=d)
    for c in range(1, n_c + 1):
        leak0 = ens.leakage.sum()
        ens_ops.bath(ens, cfg.p_up, rng)
        reported = ens_ops.measure(ens, cfg.detector, cfg.geometry, rng)
        fb = reported == UP
        ens_ops.transfer(ens, probs, rng, fb)
        w = (fb & (ens.s == DOWN)).astype(float)
        if heat_k is not None:
            ens_ops.heat(ens, heat_k, rng)
        hist[c] = ens.phonon_histogram()
        res, _ = _pnrd_ensemble(ens, cfg, rng, probs)
        readout[c] = np.bincount(res, minlength=d)
        work[c] = w.sum()
        work_sq[c] = (w**2).sum()
        leak[c] = ens.leakage.sum() - leak0
    return hist, readout, work, work_sq, leak


def _run_trajectory(cfg: EngineConfig) -> EngineRun:
    probs = transfer_probabilities(cfg)
    heat_k = heating_kernel(cfg.heating_per_cycle, cfg.space) if cfg.heating_per_cycle else None
    sizes = [min(CHUNK_SHOTS, cfg.shots - start) for start in range(0, cfg.shots, CHUNK_SHOTS)]
    jobs = list(enumerate(sizes))
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            parts = list(pool.map(lambda j: _trajectory_chunk(cfg, j[0], j[1], probs, heat_k), jobs))
    else:
        parts = [_trajectory_chunk(cfg, c, size, probs, heat_k) for c, size in jobs]
    hist, readout, work, work_sq, leak = (sum(p[i] for p in parts) for i in range(5))
    n = cfg.shots
    mean_w = work / n
    var_w = np.clip(work_sq / n - mean_w**2, 0.0, None)
    se_w = np.sqrt(var_w / max(n - 1, 1))
    stats = [
        CycleStats(c, hist[c] / n, readout[c] / n, float(mean_w[c]), float(leak[c] / n), float(se_w[c]))
        for c in range(cfg.cycles + 1)
    ]
    return EngineRun(cfg, cfg.seed, stats[0], stats[1:])


def run_engine(cfg: EngineConfig) -> EngineRun:
    """Run ``cfg.cycles`` engine cycles with the configured backend."""
    if cfg.backend == "ideal_markov":
        return _run_ideal_markov(cfg)
    if cfg.backend == "trajectory":
        return _run_trajectory(cfg)
    return _run_exact(cfg)


# -- calibration matrices ----------------------------------------------------------


def estimate_m1(cfg: EngineConfig, shots: int, rng) -> StochasticKernel:
    """Monte Carlo PNRD confusion matrix on 0..n_max (results above n_max folded in)."""
    if shots < 1000:
        raise ValueError("shots must be >= 1000")
    n_max = cfg.space.n_max
    probs = transfer_probabilities(cfg)
    cols = []
    for i in range(n_max + 1):
        ens = Ensemble.basis(DOWN, i, shots, cfg.space)
        res, _ = _pnrd_ensemble(ens, cfg, rng, probs)
        cols.append(lump(np.bincount(res, minlength=cfg.space.dim) / shots, n_max))
    return StochasticKernel(np.column_stack(cols))


def estimate_m2(cfg: EngineConfig, samples: int, rng) -> StochasticKernel:
    """Fluorescence-disturbance kernel M2 from ``samples`` Monte Carlo kicks."""
    return recoil_avg_kernel(
        cfg.detector.n_photon_pairs, cfg.geometry, samples, cfg.space, rng, max_leakage=cfg.max_leakage
    )


def simulate_disturbed_readout(cfg: EngineConfig, i: int, shots: int, rng) -> np.ndarray:
    """Prepare |up, i>, detect once, then PNRD; result distribution on 0..n_max."""
    ens = Ensemble.basis(UP, i, shots, cfg.space)
    ens_ops.measure(ens, cfg.detector, cfg.geometry, rng)
    res, _ = _pnrd_ensemble(ens, cfg, rng, transfer_probabilities(cfg))
    return lump(np.bincount(res, minlength=cfg.space.dim) / shots, cfg.space.n_max)


def verify_m2(cfg: EngineConfig, m2: StochasticKernel, shots: int, rng, m1: StochasticKernel = None):
    """Total-variation distance between simulated disturbed readouts and M1 M2 |i>.

    ``m1`` defaults to the exact full-workspace PNRD kernel; the product is
    folded onto 0..n_max afterwards.
    """
    n_max = cfg.space.n_max
    m1 = pnrd_kernel(cfg) if m1 is None else m1
    predicted = m1.matrix @ m2.matrix
    tvd = []
    for i in range(n_max + 1):
        sim = simulate_disturbed_readout(cfg, i, shots, rng)
        tvd.append(0.5 * np.abs(sim - lump(predicted[:, i], n_max)).sum())
    return np.array(tvd)


# -- work and the generalized Jarzynski equality ----------------------------------------


@dataclass(frozen=True)
class ForwardResult:
    mean_work: float
    jarzynski_lhs: float
    lhs_stderr: float
    outcome_table: dict


@dataclass(frozen=True)
class BackwardResult:
    gamma: float
    gamma_stderr: float
    p_on: float
    p_off: float


class JarzynskiCheck(NamedTuple):
    lhs: float
    gamma: float
    lhs_stderr: float
    gamma_stderr: float
    agree: bool


def _check_protocol(cfg: EngineConfig, shots: int):
    if shots < 1000:
        raise ValueError("shots must be >= 1000")
    if cfg.p_up == 0.0:
        raise DomainError("the work protocol needs p_up > 0 (k_B T = 0 otherwise)")
    return bath_temperature(cfg.p_up)


def _boltzmann_weight(p_up: float) -> float:
    # exp(hbar omega / k_B T) = (1 - p) / p
    return (1.0 - p_up) / p_up


def _protocol_cfg(cfg):
    return cfg.with_(detector=DetectorModel.perfect(), heating_per_cycle=0.0) if cfg.backend == "ideal_markov" else cfg


def _qubit_report_probs(state: JointState, cfg: EngineConfig) -> np.ndarray:
    pops = np.clip(state.sector_populations().sum(axis=1), 0.0, None)
    return cfg.detector.confusion() @ pops


def _forward_exact(cfg: EngineConfig) -> dict:
    recoil = fluorescence_kernel(cfg) if cfg.detector.n_photon_pairs else None
    state = bath_channel(initial_state(cfg), cfg.p_up)
    table = {}
    for x, (px, st) in _measurement_branches(state, cfg, recoil).items():
        if x == UP:
            st = apply_transfer(st, cfg)
        py = _qubit_report_probs(st, cfg)
        for y in (DOWN, UP):
            table[(x, y)] = px * float(py[y])
    return {k: table.get(k, 0.0) for k in [(DOWN, DOWN), (DOWN, UP), (UP, DOWN), (UP, UP)]}


def work_protocol_forward(cfg: EngineConfig, shots: int, rng) -> ForwardResult:
    """Single cycle followed by a verification measurement y of the qubit.

    One quantum of work is extracted on (x = up, y = down).  ``jarzynski_lhs``
    is the average of exp(-W / k_B T) with W the work done on the system
    (free-energy change zero).  ``outcome_table`` holds probabilities for the
    analytic backends and counts for the trajectory backend, keyed by (x, y)
    with 0 = down and 1 = up.
    """
    _check_protocol(cfg, shots)
    cfg = _protocol_cfg(cfg)
    boltz = _boltzmann_weight(cfg.p_up)
    if cfg.backend != "trajectory":
        table = _forward_exact(cfg)
        success = table[(UP, DOWN)]
        lhs = success * boltz + (1.0 - success)
        return ForwardResult(success, lhs, 0.0, table)
    ens = Ensemble.from_phonon_probs(
        thermal_distribution(cfg.initial_nbar, cfg.space.dim), shots, cfg.space, rng
    )
    ens_ops.bath(ens, cfg.p_up, rng)
    x = ens_ops.measure(ens, cfg.detector, cfg.geometry, rng)
    ens_ops.transfer(ens, transfer_probabilities(cfg), rng, x == UP)
    y = ens_ops.measure(ens, cfg.detector, cfg.geometry, rng, n_pairs=0)
    success = (x == UP) & (y == DOWN)
    values = np.where(success, boltz, 1.0)
    table = {(a, b): int(np.sum((x == a) & (y == b))) for a in (DOWN, UP) for b in (DOWN, UP)}
    se = float(values.std(ddof=1) / np.sqrt(shots))
    return ForwardResult(float(success.mean()), float(values.mean()), se, table)


def _charged_initial(cfg: EngineConfig) -> JointState:
    # battery state at the end of a successful forward path: one extra quantum
    return adiabatic_ideal(JointState.thermal(cfg.initial_nbar, cfg.space, qubit_up=1.0))


def _backward_exact(cfg: EngineConfig):
    recoil = fluorescence_kernel(cfg) if cfg.detector.n_photon_pairs else None
    p_on = 0.0
    state = bath_channel(_charged_initial(cfg), cfg.p_up)
    for y, (py, st) in _measurement_branches(state, cfg, recoil).items():
        if y == DOWN:
            p_on += py * float(_qubit_report_probs(apply_transfer(st, cfg), cfg)[UP])
    p_off = 0.0
    state = bath_channel(initial_state(cfg), cfg.p_up)
    for y, (py, st) in _measurement_branches(state, cfg, recoil).items():
        if y == DOWN:
            p_off += py * float(_qubit_report_probs(st, cfg)[DOWN])
    return p_on, p_off


def work_protocol_backward(cfg: EngineConfig, shots: int, rng) -> BackwardResult:
    """Time-reversed sequences with and without the sideband transfer.

    Reversed sequence: thermal qubit, measurement y, optional transfer,
    measurement x.  The ``on`` run starts from the charged battery left by a
    successful forward cycle.  gamma = P_on(y=down, x=up) + P_off(y=down, x=down).
    """
    _check_protocol(cfg, shots)
    cfg = _protocol_cfg(cfg)
    if cfg.backend != "trajectory":
        p_on, p_off = _backward_exact(cfg)
        return BackwardResult(p_on + p_off, 0.0, p_on, p_off)
    probs = transfer_probabilities(cfg)
    d = cfg.space.dim
    thermal = thermal_distribution(cfg.initial_nbar, d)

    on = Ensemble.from_phonon_probs(thermal, shots, cfg.space, rng)
    on.n = np.minimum(on.n + 1, cfg.space.n_work)
    ens_ops.bath(on, cfg.p_up, rng)
    y = ens_ops.measure(on, cfg.detector, cfg.geometry, rng)
    ens_ops.transfer(on, probs, rng)
    x = ens_ops.measure(on, cfg.detector, cfg.geometry, rng, n_pairs=0)
    p_on = float(np.mean((y == DOWN) & (x == UP)))

    off = Ensemble.from_phonon_probs(thermal, shots, cfg.space, rng)
    ens_ops.bath(off, cfg.p_up, rng)
    y = ens_ops.measure(off, cfg.detector, cfg.geometry, rng)
    x = ens_ops.measure(off, cfg.detector, cfg.geometry, rng, n_pairs=0)
    p_off = float(np.mean((y == DOWN) & (x == DOWN)))

    se = np.sqrt((p_on * (1 - p_on) + p_off * (1 - p_off)) / shots)
    return BackwardResult(p_on + p_off, float(se), p_on, p_off)


EXACT_AGREEMENT_TOL = 1e-10


def jarzynski_check(cfg: EngineConfig, shots: int, rng) -> JarzynskiCheck:
    """Compare <exp((dF - W)/k_B T)> with gamma.

    Agreement means |lhs - gamma| within three combined standard errors (or
    1e-10 for the analytic backends).
    """
    fwd = work_protocol_forward(cfg, shots, rng)
    bwd = work_protocol_backward(cfg, shots, rng)
    combined = np.hypot(fwd.lhs_stderr, bwd.gamma_stderr)
    tol = max(3.0 * combined, EXACT_AGREEMENT_TOL)
    agree = abs(fwd.jarzynski_lhs - bwd.gamma) <= tol
    return JarzynskiCheck(fwd.jarzynski_lhs, bwd.gamma, fwd.lhs_stderr, bwd.gamma_stderr, bool(agree))
