import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from szilard_battery.errors import DomainError
from szilard_battery.fock import FockSpace
from szilard_battery.metrics import (
    EnergySpectrum,
    bath_temperature,
    binomial_ergotropy,
    efficiencies,
    engine_power,
    ergotropy,
    ergotropy_asymptotic,
    ideal_efficiencies,
    ideal_ergotropies,
    ideal_phonon_distribution,
    info_work_efficiency_limit,
    mean_energy,
    mutual_information,
    passive_state,
)

probability_vectors = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=9).filter(lambda v: sum(v) > 1e-6).map(
    lambda v: np.array(v) / sum(v)
)


def brute_force_ergotropy(p):
    """Energy minus the minimum energy over all rearrangements of the populations."""
    levels = np.arange(len(p))
    best = min(levels @ np.array(perm) for perm in itertools.permutations(p))
    return levels @ p - best


# -- temperature and information ---------------------------------------------------------------


def test_temperature_examples():
    assert bath_temperature(1 / (1 + math.e)) == pytest.approx(1.0)
    assert bath_temperature(0.5) == math.inf
    kt = bath_temperature(0.1)
    assert kt == pytest.approx(1 / math.log(9))
    inverse = brentq(lambda p: 1 / math.log((1 - p) / p) - kt, 1e-6, 0.499)
    assert inverse == pytest.approx(0.1, abs=1e-9)


def test_temperature_domain():
    with pytest.raises(DomainError):
        bath_temperature(0.0)
    with pytest.raises(DomainError):
        bath_temperature(0.7)


def test_mutual_information_examples():
    assert mutual_information(0.5) == pytest.approx(math.log(2))
    assert mutual_information(0.0) == 0.0
    assert mutual_information(0.3) == pytest.approx(0.6109, abs=1e-4)


@given(st.floats(0.0, 0.5))
def test_mutual_information_symmetric_and_bounded(p):
    i = mutual_information(p)
    ref = -sum(x * math.log(x) for x in (p, 1 - p) if x > 0)
    assert i == pytest.approx(ref, abs=1e-12)
    assert i <= math.log(2) + 1e-15


# -- ergotropy ----------------------------------------------------------------------------------


def test_ergotropy_examples():
    assert ergotropy([0.6, 0.3, 0.1]) == 0.0
    assert ergotropy([0.3, 0.7], EnergySpectrum(np.array([0.0, 1.0]))) == pytest.approx(0.4)
    assert binomial_ergotropy(10, 0.5) == pytest.approx(2.92, abs=0.01)


def test_passive_state_examples():
    assert np.allclose(passive_state([0.2, 0.5, 0.3]).probs, [0.5, 0.3, 0.2])
    p = np.array([0.5, 0.3, 0.2])
    assert np.array_equal(passive_state(p).probs, p)


@settings(max_examples=150)
@given(probability_vectors)
def test_ergotropy_matches_permutation_search(p):
    if len(p) > 7:
        p = p[:7] / p[:7].sum() if p[:7].sum() > 0 else np.eye(7)[0]
    assert ergotropy(p) == pytest.approx(brute_force_ergotropy(p), abs=1e-12)


@settings(max_examples=200)
@given(probability_vectors)
def test_ergotropy_properties(p):
    e = ergotropy(p)
    assert e >= 0.0
    assert e <= mean_energy(p) + 1e-12
    assert ergotropy(passive_state(p)) == pytest.approx(0.0, abs=1e-12)
    non_increasing = bool(np.all(np.diff(p) <= 0))
    assert (e == 0.0) == non_increasing or abs(e) < 1e-12


@settings(max_examples=100)
@given(probability_vectors, st.randoms())
def test_passive_energy_is_permutation_invariant(p, rnd):
    perm = list(range(len(p)))
    rnd.shuffle(perm)
    q = p[perm]
    passive_p = mean_energy(p) - ergotropy(p)
    passive_q = mean_energy(q) - ergotropy(q)
    assert passive_p == pytest.approx(passive_q, abs=1e-12)


def test_ergotropy_of_density_matrix():
    # coherent superposition (|0> + |1>)/sqrt(2) is pure: ergotropy = its energy
    psi = np.array([1.0, 1.0]) / np.sqrt(2)
    assert ergotropy(np.outer(psi, psi)) == pytest.approx(0.5)
    assert ergotropy(np.diag([0.3, 0.7])) == pytest.approx(0.4)


# -- ideal distributions and asymptotics ----------------------------------------------------------


def test_ideal_distribution_examples():
    sp = FockSpace(10, 25)
    assert ideal_phonon_distribution(0, 0.3, sp).probs[0] == 1.0
    assert ideal_phonon_distribution(10, 0.5, sp).mean() == pytest.approx(5.0, abs=1e-12)
    assert ideal_phonon_distribution(10, 0.3, sp).mean() == pytest.approx(3.0, abs=1e-12)


def test_ideal_distribution_matches_bernoulli_simulation():
    sp = FockSpace(10, 25)
    p = ideal_phonon_distribution(10, 0.3, sp).probs[:11]
    rng = np.random.default_rng(11)
    shots = 1_000_000
    counts = np.bincount(rng.binomial(10, 0.3, size=shots), minlength=11)
    sigma = np.sqrt(shots * p * (1 - p))
    assert np.all(np.abs(counts - shots * p) <= 3 * sigma + 1)


def test_ideal_distribution_needs_room():
    with pytest.raises(ValueError):
        ideal_phonon_distribution(30, 0.3, FockSpace(10, 25))


def test_asymptotic_examples():
    assert ergotropy_asymptotic(10, 0.5) == pytest.approx(5 - math.sqrt(5 / math.pi))
    exact = binomial_ergotropy(400, 0.5)
    assert abs(ergotropy_asymptotic(400, 0.5) - exact) / exact < 0.05
    assert ergotropy_asymptotic(100, 1 - 1e-12) == pytest.approx(100, abs=1e-3)


# -- efficiencies and power ---------------------------------------------------------------------------


def test_info_work_efficiency_closed_form():
    r = ideal_efficiencies(0.3, cycles=10)
    assert r.info_work_eff == pytest.approx(0.3 * math.log(7 / 3) / 0.6109, abs=1e-4)


def test_efficiencies_vanish_at_half():
    r = ideal_efficiencies(0.5)
    assert r.info_work_eff == 0.0 and r.charging_eff == 0.0


def test_efficiencies_reject_zero_temperature():
    with pytest.raises(DomainError):
        efficiencies(0.0, 0.0, [0.0])
    assert info_work_efficiency_limit(0.0) == 1.0


def test_info_work_efficiency_tends_to_one():
    values = [info_work_efficiency_limit(p) for p in (0.05, 0.01, 1e-3, 1e-5)]
    assert np.all(np.diff(values) > 0)
    # slow approach to 1: ratio -> L / (L + 1) with L = ln(1/p)
    for p in (1e-8, 1e-12):
        big_l = math.log(1 / p)
        assert info_work_efficiency_limit(p) == pytest.approx(big_l / (big_l + 1), abs=1e-3)


def test_charging_peak():
    grid = np.round(np.arange(0.02, 0.5001, 0.01), 2)
    eff = np.array([ideal_efficiencies(p, 10).charging_eff for p in grid])
    peak = grid[np.argmax(eff)]
    assert 0.25 <= peak <= 0.35
    assert eff.max() == pytest.approx(0.090, abs=0.005)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.02, 0.49), st.integers(1, 30))
def test_charging_below_info_work(p, n):
    r = ideal_efficiencies(p, n)
    assert r.charging_eff <= r.info_work_eff + 1e-12
    assert 0.0 <= r.info_work_eff <= 1.0 + 1e-9


def test_charging_gap_shrinks_with_cycles():
    gaps = [
        ideal_efficiencies(0.3, n).info_work_eff - ideal_efficiencies(0.3, n).charging_eff for n in (10, 40, 160)
    ]
    assert gaps[0] > gaps[1] > gaps[2]


def test_ergotropy_per_cycle_uses_run_average():
    erg = ideal_ergotropies(10, 0.3)
    r = efficiencies(0.3, 0.3, erg)
    assert r.mean_ergotropy_per_cycle == pytest.approx(np.mean(erg / np.arange(1, 11)))


def test_power():
    assert engine_power(0.5, 455.0) == pytest.approx(0.0011, rel=0.05)
    assert engine_power(0.0, 455.0) == 0.0
    assert engine_power(0.3, 200.0) == pytest.approx(2 * engine_power(0.3, 400.0))
    with pytest.raises(ValueError):
        engine_power(0.3, 0.0)
