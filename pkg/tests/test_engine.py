from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import binom

from szilard_battery.channels import DetectorModel
from szilard_battery.errors import DomainError
from szilard_battery.engine import (
    EngineConfig,
    estimate_m1,
    estimate_m2,
    fluorescence_kernel,
    jarzynski_check,
    pnrd,
    pnrd_distribution,
    pnrd_kernel,
    run_cycle,
    run_engine,
    verify_m2,
    work_protocol_backward,
    work_protocol_forward,
)
from szilard_battery.ensemble import Ensemble
from szilard_battery.engine import _pnrd_ensemble
from szilard_battery.fock import DOWN, UP, JointState, lump, state_statistics
from szilard_battery.seeding import stream

GOLDEN = Path(__file__).parent / "golden"
P_SET = (0.1, 0.2, 0.3, 0.4, 0.5)


def rng(*key):
    return stream(1234, *key)


# -- configuration -------------------------------------------------------------------------


def test_config_validation():
    EngineConfig(p_up=1e-9)
    with pytest.raises(DomainError):
        EngineConfig(p_up=0.6)
    with pytest.raises(ValueError):
        EngineConfig(cycles=-1)
    with pytest.raises(ValueError):
        EngineConfig(shots=0)
    with pytest.raises(ValueError):
        EngineConfig(backend="magic")


def test_config_sizes_workspace_from_cycles():
    cfg = EngineConfig(cycles=4)
    assert cfg.space.n_work == 10 + 4 + 20
    assert cfg.with_(cycles=6).space.n_work == 36


# -- single cycles -------------------------------------------------------------------------------


def test_cold_bath_never_feeds_back():
    cfg = EngineConfig(p_up=0.0, detector=DetectorModel.perfect(), cycles=3)
    state = JointState.thermal(0.0, cfg.space)
    g = rng("cold")
    for i in range(3):
        state, rec = run_cycle(state, cfg, g, i)
        assert rec.reported_outcome == DOWN and not rec.feedback_applied and rec.work_quanta == 0
    # only heating changed the battery
    assert state_statistics(state).mean_phonon == pytest.approx(3 * 0.02, abs=1e-9)


def test_one_ideal_cycle_charges_half_a_quantum():
    cfg = EngineConfig.ideal(0.5, 1)
    run = run_engine(cfg)
    assert run.per_cycle[0].mean_phonon == pytest.approx(0.5, abs=1e-12)
    g = rng("one")
    works, means = [], []
    for _ in range(2000):
        st_, rec = run_cycle(JointState.thermal(0.0, cfg.space), cfg, g)
        works.append(rec.work_quanta)
        means.append(state_statistics(st_).mean_phonon)
    assert np.mean(means) == pytest.approx(0.5, abs=3 * 0.5 / np.sqrt(2000))
    assert np.mean(works) == pytest.approx(np.mean(means), abs=1e-12)


def test_work_only_after_successful_feedback():
    cfg = EngineConfig(p_up=0.4, cycles=1)
    g = rng("records")
    state = JointState.thermal(cfg.initial_nbar, cfg.space)
    for i in range(200):
        state, rec = run_cycle(state, cfg, g, i)
        if rec.work_quanta:
            assert rec.feedback_applied and rec.reported_outcome == UP


# -- backends ------------------------------------------------------------------------------------------


@pytest.mark.parametrize("p", (0.0, *P_SET))
def test_ideal_markov_is_binomial(p):
    run = run_engine(EngineConfig.ideal(p, 10, backend="ideal_markov"))
    assert len(run.per_cycle) == 10
    for st_ in run.per_cycle:
        ref = binom.pmf(np.arange(st_.distribution.size), st_.cycle, p)
        assert np.allclose(st_.distribution, ref, rtol=0, atol=1e-15)
        assert st_.mean_work == pytest.approx(p)


def test_exact_ideal_matches_markov():
    for p in (0.2, 0.5):
        exact = run_engine(EngineConfig.ideal(p, 10))
        markov = run_engine(EngineConfig.ideal(p, 10, backend="ideal_markov"))
        for a, b in zip(exact.per_cycle, markov.per_cycle):
            assert np.allclose(a.distribution, b.distribution, atol=1e-12)
            assert a.mean_work == pytest.approx(b.mean_work, abs=1e-12)


def test_trajectory_without_errors_matches_markov():
    shots = 100_000
    traj = run_engine(EngineConfig.ideal(0.3, 10, backend="trajectory", shots=shots))
    ref = run_engine(EngineConfig.ideal(0.3, 10, backend="ideal_markov")).per_cycle[-1].distribution
    got = traj.per_cycle[-1].distribution
    sigma = np.sqrt(ref * (1 - ref) / shots)
    assert np.all(np.abs(got - ref) <= 3 * sigma + 1e-12)


def test_trajectory_agrees_with_exact_under_errors():
    shots = 40_000
    for p in (0.2, 0.5):
        exact = run_engine(EngineConfig(p_up=p))
        traj = run_engine(EngineConfig(p_up=p, backend="trajectory", shots=shots))
        for a, b in zip(exact.per_cycle, traj.per_cycle):
            for x, y in ((a.distribution, b.distribution), (a.readout, b.readout)):
                sigma = np.sqrt(x * (1 - x) / shots)
                assert np.all(np.abs(x - y) <= 4.5 * sigma + 2e-4)
            assert a.mean_work == pytest.approx(b.mean_work, abs=4.5 * b.work_stderr + 1e-4)


@pytest.mark.parametrize("backend", ["exact_channel", "ideal_markov", "trajectory"])
def test_distributions_valid_and_mean_nondecreasing(backend):
    cfg = EngineConfig(p_up=0.3, backend=backend, shots=5000)
    run = run_engine(cfg)
    means = [run.initial.mean_phonon] + [st_.mean_phonon for st_ in run.per_cycle]
    assert np.all(np.diff(means) >= -1e-12)
    for st_ in run.per_cycle:
        for dist in (st_.distribution, st_.readout):
            assert np.all(dist >= 0) and dist.sum() == pytest.approx(1.0, abs=1e-9)


def test_default_errors_raise_mean_phonon_above_ideal():
    for p in P_SET:
        run = run_engine(EngineConfig(p_up=p))
        ideal = p * np.arange(1, 11)
        assert np.all(run.mean_phonons() >= ideal)
        assert np.all(run.mean_phonons(readout=False) >= ideal)


def test_engine_work_tracks_outcome_rule():
    run = run_engine(EngineConfig.ideal(0.3, 5))
    assert run.mean_work_per_cycle == pytest.approx(0.3, abs=1e-12)


def test_trajectory_is_deterministic_and_thread_independent():
    base = EngineConfig(p_up=0.3, backend="trajectory", shots=25_000, cycles=3, seed=99)
    a = run_engine(base)
    b = run_engine(replace(base, threads=3))
    c = run_engine(base)
    for x, y, z in zip(a.per_cycle, b.per_cycle, c.per_cycle):
        assert np.array_equal(x.distribution, y.distribution)
        assert np.array_equal(x.readout, y.readout)
        assert np.array_equal(x.distribution, z.distribution)
    d = run_engine(replace(base, seed=100))
    assert not np.array_equal(a.per_cycle[-1].distribution, d.per_cycle[-1].distribution)


# -- number-resolving readout ------------------------------------------------------------------------


def test_pnrd_perfect_examples():
    cfg = EngineConfig.ideal(0.5, 10)
    g = rng("pnrd")
    r = pnrd(JointState.basis(DOWN, 3, cfg.space), cfg, g)
    assert (r.measured_n, r.rounds, r.saturated) == (3, 4, False)
    r = pnrd(JointState.basis(DOWN, 0, cfg.space), cfg, g)
    assert (r.measured_n, r.rounds) == (0, 1)


def test_pnrd_saturates_with_flag():
    cfg = EngineConfig.ideal(0.5, 10, detector=DetectorModel(eps_dark=0.0, eps_bright=1.0, n_photon_pairs=0))
    r = pnrd(JointState.basis(DOWN, 2, cfg.space), cfg, rng("sat"))
    assert r.saturated and r.measured_n == cfg.space.n_work and r.rounds == cfg.space.n_work + 1


def test_pnrd_perfect_is_exact_measurement():
    cfg = EngineConfig.ideal(0.5, 10)
    assert np.allclose(pnrd_kernel(cfg).matrix, np.eye(cfg.space.dim))
    w = np.random.default_rng(3).random(cfg.space.dim)
    w /= w.sum()
    state = JointState.product(0.0, w, cfg.space)
    assert np.allclose(pnrd_distribution(state, cfg), w)
    ens = Ensemble.from_phonon_probs(w, 20_000, cfg.space, rng("pe"))
    res, _ = _pnrd_ensemble(ens, cfg, rng("pe2"))
    assert np.array_equal(res, ens.n)


def test_m1_identity_for_perfect_operations():
    cfg = EngineConfig.ideal(0.5, 10)
    m1 = estimate_m1(cfg, 1000, rng("m1p"))
    assert np.array_equal(m1.matrix, np.eye(11))


def test_m1_default_errors():
    cfg = EngineConfig(p_up=0.5)
    m1 = estimate_m1(cfg, 10_000, rng("m1"))
    assert m1.is_stochastic()
    assert np.all(np.diag(m1.matrix) > 0.5)
    exact = pnrd_kernel(cfg).lumped(10).matrix
    sigma = np.sqrt(exact * (1 - exact) / 10_000)
    assert np.all(np.abs(m1.matrix - exact) <= 4 * sigma + 1e-3)


def test_pnrd_of_five_matches_m1_column():
    cfg = EngineConfig(p_up=0.5)
    m1 = estimate_m1(cfg, 10_000, rng("m1b"))
    shots = 10_000
    g = rng("five")
    res, _ = _pnrd_ensemble(Ensemble.basis(DOWN, 5, shots, cfg.space), cfg, g)
    counts = lump(np.bincount(res, minlength=cfg.space.dim), 10)
    col = m1.matrix[:, 5]
    sigma = np.sqrt(shots * col * (1 - col)) * np.sqrt(2)
    assert np.all(np.abs(counts - shots * col) <= 3 * sigma + 3)


def test_pnrd_single_shots_match_kernel():
    cfg = EngineConfig(p_up=0.5)
    g = rng("single")
    state = JointState.basis(DOWN, 2, cfg.space)
    results = [pnrd(state, cfg, g).measured_n for _ in range(300)]
    expected = pnrd_kernel(cfg).matrix[:, 2]
    assert np.mean(np.array(results) == 2) == pytest.approx(expected[2], abs=4 * np.sqrt(expected[2] * (1 - expected[2]) / 300))


def test_m1_needs_shots():
    with pytest.raises(ValueError):
        estimate_m1(EngineConfig(), 10, rng())


def test_m2_examples():
    cfg = EngineConfig(p_up=0.5, detector=replace(DetectorModel(), n_photon_pairs=0))
    assert np.array_equal(estimate_m2(cfg, 1000, rng()).matrix, np.eye(cfg.space.dim))
    cfg = EngineConfig(p_up=0.5)
    m2 = estimate_m2(cfg, 20_000, rng("m2"))
    assert np.arange(cfg.space.dim) @ m2.matrix[:, 0] == pytest.approx(0.5, abs=0.02)
    tvd = verify_m2(cfg, m2, 10_000, rng("verify"))
    assert np.all(tvd < 0.05)


def test_m1_m2_golden():
    cfg = EngineConfig(p_up=0.5)
    m1 = estimate_m1(cfg, 10_000, stream(0, "golden", "m1")).matrix
    m2 = fluorescence_kernel(cfg).lumped(10).matrix
    gold1 = np.loadtxt(GOLDEN / "m1_default.csv", delimiter=",", comments="#")
    gold2 = np.loadtxt(GOLDEN / "m2_default.csv", delimiter=",", comments="#")
    assert np.allclose(m1, gold1, atol=1e-12)
    assert np.allclose(m2, gold2, atol=1e-10)


# -- work protocols ------------------------------------------------------------------------------------


@pytest.mark.parametrize("p", P_SET)
def test_forward_and_backward_ideal_closed_forms(p):
    cfg = EngineConfig.ideal(p, 1)
    fwd = work_protocol_forward(cfg, 1000, rng("fwd"))
    bwd = work_protocol_backward(cfg, 1000, rng("bwd"))
    assert fwd.mean_work == pytest.approx(p, abs=1e-12)
    assert fwd.jarzynski_lhs == pytest.approx(2 * (1 - p), abs=1e-12)
    assert bwd.gamma == pytest.approx(2 * (1 - p), abs=1e-12)
    chk = jarzynski_check(cfg, 1000, rng("chk"))
    assert abs(chk.lhs - chk.gamma) < 1e-10 and chk.agree


def test_forward_symmetric_bath():
    fwd = work_protocol_forward(EngineConfig.ideal(0.5, 1), 1000, rng())
    assert fwd.jarzynski_lhs == pytest.approx(1.0)
    assert work_protocol_backward(EngineConfig.ideal(0.5, 1), 1000, rng()).gamma == pytest.approx(1.0)


@pytest.mark.parametrize("p", (0.1, 0.3, 0.5))
def test_trajectory_protocol_agrees(p):
    cfg = EngineConfig.ideal(p, 1, backend="trajectory")
    chk = jarzynski_check(cfg, 100_000, rng("traj", int(p * 10)))
    assert chk.agree
    fwd = work_protocol_forward(cfg, 100_000, rng("tf"))
    total = sum(fwd.outcome_table.values())
    assert total == 100_000
    assert fwd.mean_work == pytest.approx(p, abs=4 * np.sqrt(p * (1 - p) / total))


def test_imperfect_feedback_lowers_gamma():
    for p in P_SET:
        cfg = EngineConfig.ideal(p, 1, use_sweep=True)
        assert work_protocol_backward(cfg, 1000, rng()).gamma < 2 * (1 - p)


def test_protocol_preconditions():
    with pytest.raises(DomainError):
        work_protocol_forward(EngineConfig.ideal(0.0, 1), 1000, rng())
    with pytest.raises(ValueError):
        jarzynski_check(EngineConfig.ideal(0.3, 1), 0, rng())
