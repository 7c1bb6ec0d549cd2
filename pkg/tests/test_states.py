from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from coherdist.errors import DomainError
from coherdist.linalg import fidelity, projector
from coherdist.states import (PAPER_STATE_NAMES, DistillationInstance, max_coherent, max_coherent_dm,
                              mixture, paper_state, random_density, random_pure_state, smoothed_target)


@given(st.integers(2, 6), st.floats(0, 1))
def test_smoothed_target_has_requested_fidelity(m, eps):
    t = smoothed_target(m, eps)
    assert np.isclose(np.trace(t), 1.0)
    assert np.isclose(np.trace(t @ max_coherent_dm(m)), 1 - eps)
    w = np.linalg.eigvalsh(t)
    assert w[0] > -1e-12


def test_smoothed_target_endpoints():
    assert np.allclose(smoothed_target(3, 0), max_coherent_dm(3))
    # at eps = 1 - 1/m the target is maximally mixed
    assert np.allclose(smoothed_target(3, Fraction(2, 3)), np.eye(3) / 3)
    with pytest.raises(DomainError):
        smoothed_target(1, 0.1)
    with pytest.raises(DomainError):
        smoothed_target(2, 1.5)


def test_max_coherent():
    v = max_coherent(4)
    assert np.allclose(v, 0.5)
    with pytest.raises(DomainError):
        max_coherent(0)


@pytest.mark.parametrize("name", PAPER_STATE_NAMES)
def test_named_states_are_normalised(name):
    v = paper_state(name)
    assert np.isclose(np.linalg.norm(v), 1.0)


def test_named_state_values():
    assert np.allclose(paper_state("main_example"), np.array([3, 1]) / np.sqrt(10))
    assert np.allclose(paper_state("fig2_example"), np.array([1, 3]) / np.sqrt(10))
    with pytest.raises(DomainError):
        paper_state("nope")


def test_named_states_are_copies():
    v = paper_state("v1")
    v[0] = 7
    assert paper_state("v1")[0] == 0.5


def test_mixture():
    r = mixture(0.25, paper_state("u1"), paper_state("u2"))
    assert np.isclose(np.trace(r), 1.0)
    assert np.linalg.matrix_rank(r) == 2
    with pytest.raises(DomainError):
        mixture(1.2, paper_state("u1"), paper_state("u2"))


@given(st.integers(1, 5), st.integers(0, 1000))
def test_random_density_rank_and_determinism(rank, seed):
    dim = 5
    r = random_density(dim, rank, seed)
    assert np.isclose(np.trace(r).real, 1.0)
    w = np.linalg.eigvalsh(r)
    assert np.sum(w > 1e-6) == rank
    assert np.array_equal(r, random_density(dim, rank, seed))


def test_random_pure_state():
    v = random_pure_state(4, 3)
    assert np.isclose(np.linalg.norm(v), 1.0)
    assert np.array_equal(v, random_pure_state(4, 3))
    assert not np.iscomplexobj(random_pure_state(4, 3, real=True))


def test_instance_validation():
    rho = projector(max_coherent(2))
    with pytest.raises(DomainError):
        DistillationInstance(rho, 1, 0)
    with pytest.raises(DomainError):
        DistillationInstance(rho, 2.5, 0)
    with pytest.raises(DomainError):
        DistillationInstance(rho, 2, 1.0)
    with pytest.raises(DomainError):
        DistillationInstance(rho, 2, -0.1)
    with pytest.raises(DomainError):
        DistillationInstance(2 * rho, 2, 0)


def test_trivial_regime_uses_exact_arithmetic():
    rho = projector(max_coherent(2))
    assert DistillationInstance(rho, 3, Fraction(2, 3)).trivial
    assert not DistillationInstance(rho, 3, Fraction(2, 3) - Fraction(1, 10**12)).trivial
    assert DistillationInstance(rho, 2, 0.5).trivial
    assert not DistillationInstance(rho, 2, 0.49).trivial


def test_from_state_matches_projector():
    inst = DistillationInstance.from_state(paper_state("main_example"), 2, 0.1)
    assert np.allclose(inst.rho, projector(paper_state("main_example")))
    assert inst.d == 2 and fidelity(inst.rho, inst.rho) == pytest.approx(1.0)
