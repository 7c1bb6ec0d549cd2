import math
import warnings

import numpy as np
import pytest

from coherdist.catalysis import (MAX_CHOI_SIDE, SWEEP_HEADER, CatalysisInstance, CatalysisResult,
                                 catalysis_sweep, family_state, p_dio_catalytic_mc,
                                 p_dio_catalytic_pure, sweep_csv)
from coherdist.distill import OpClass, forbidden_entries
from coherdist.errors import DomainError, ResourceError
from coherdist.linalg import apply_choi, partial_trace, projector, tensor
from coherdist.states import max_coherent, smoothed_target

# independent dense-Choi oracle (cvxpy / Clarabel) for the v family at q = 1/2,
# m = 2, eps = 0.01, catalyst Psi_2; delta > 0 keeps the returned catalyst full
# rank so the oracle has a strictly feasible point
ORACLE_UNASSISTED = 0.4719252177
ORACLE_ASSISTED = {0.01: 0.5607226576, 1e-3: 0.5353695835}


def headline_instance(delta):
    return CatalysisInstance(family_state("v", 0.5), max_coherent(2), 2, 0.01, delta)


@pytest.fixture(scope="module")
def headline():
    base = p_dio_catalytic_mc(headline_instance(0.0))
    out = {0.0: base}
    for delta in (1e-3, 0.01):
        out[delta] = p_dio_catalytic_mc(headline_instance(delta), unassisted=base.unassisted)
    return out


def test_unassisted_matches_oracle(headline):
    assert headline[0.0].unassisted == pytest.approx(ORACLE_UNASSISTED, abs=1e-6)


@pytest.mark.parametrize("delta", sorted(ORACLE_ASSISTED))
def test_assisted_matches_oracle(headline, delta):
    assert headline[delta].probability == pytest.approx(ORACLE_ASSISTED[delta], abs=1e-6)


def test_headline_enhancement(headline):
    res = headline[0.0]
    assert res.status == "Optimal"
    assert res.enhancement_ratio >= 0.115
    assert res.probability == pytest.approx(0.5296121808, abs=1e-6)


def test_assisted_nondecreasing_in_delta(headline):
    ps = [headline[d].probability for d in (0.0, 1e-3, 0.01)]
    assert all(b >= a - 1e-6 for a, b in zip(ps, ps[1:]))
    assert all(headline[d].enhancement_ratio >= -1e-6 for d in headline)


def test_pure_route_matches_mc_at_delta_zero(headline):
    res = p_dio_catalytic_pure(headline_instance(0.0), unassisted=headline[0.0].unassisted)
    assert res.probability == pytest.approx(headline[0.0].probability, abs=1e-6)


def test_pure_route_contains_mc_route(headline):
    res = p_dio_catalytic_pure(headline_instance(0.01), unassisted=headline[0.0].unassisted)
    assert res.probability >= headline[0.01].probability - 1e-6


def test_extracted_channel_is_valid_dio(headline):
    res = headline[0.0]
    inst = headline_instance(0.0)
    d_in, d_out = inst.d * inst.k, 2 * inst.m * inst.k
    J = res.solution.X[0]
    assert J.shape == (d_in * d_out, d_in * d_out) == (MAX_CHOI_SIDE, MAX_CHOI_SIDE)
    assert np.linalg.eigvalsh(J)[0] >= -1e-8
    assert np.allclose(partial_trace(J, (d_in, d_out), keep=0), np.eye(d_in), atol=1e-7)
    assert max(abs(J[a, b]) for a, b in forbidden_entries(d_in, d_out, OpClass.DIO)) <= 1e-7
    cat = smoothed_target(2, 0.0)
    expected = (res.probability * tensor(np.diag([1.0, 0.0]), smoothed_target(2, 0.01), cat)
                + (1 - res.probability) * tensor(np.diag([0.0, 1.0]), np.eye(2) / 2, cat))
    sigma = np.kron(inst.rho, projector(inst.catalyst))
    assert np.allclose(apply_choi(J, sigma, d_in, d_out), expected, atol=1e-6)


def test_perfect_input_needs_no_catalyst():
    psi = np.zeros(4)
    psi[[0, 1]] = 1 / np.sqrt(2)
    inst = CatalysisInstance(projector(psi), max_coherent(2), 2, 0.0, 0.0)
    res = p_dio_catalytic_mc(inst)
    assert res.probability == pytest.approx(1.0, abs=1e-6)
    assert res.unassisted == pytest.approx(1.0, abs=1e-6)


def test_incoherent_input_gives_zero():
    gamma = np.array([0.8, 0.6])
    inst = CatalysisInstance(np.diag([0.4, 0.6]), gamma, 2, 0.0, 0.0)
    res = p_dio_catalytic_pure(inst)
    assert res.probability <= 1e-7


def test_mc_route_rejects_other_catalysts():
    inst = CatalysisInstance(family_state("v", 0.5), np.array([0.8, 0.6]), 2, 0.01, 0.0)
    with pytest.raises(DomainError, match="maximally coherent"):
        p_dio_catalytic_mc(inst)


def test_oversized_choi_is_a_resource_error():
    inst = CatalysisInstance(family_state("v", 0.5), max_coherent(3), 2, 0.01, 0.0)
    assert inst.choi_side > MAX_CHOI_SIDE
    with pytest.raises(ResourceError):
        p_dio_catalytic_mc(inst)
    with pytest.raises(ResourceError):
        p_dio_catalytic_pure(inst)


@pytest.mark.parametrize("kw", [{"delta": 1.0}, {"eps": -0.1}, {"m": 1}])
def test_instance_validation(kw):
    args = {"rho": family_state("v", 0.5), "catalyst": max_coherent(2), "m": 2, "eps": 0.01, "delta": 0.0}
    args.update(kw)
    with pytest.raises(DomainError):
        CatalysisInstance(**args)


def test_instance_rejects_non_density():
    with pytest.raises(DomainError):
        CatalysisInstance(np.diag([1.0, 1.0]), max_coherent(2), 2)


def test_ratio_is_nan_without_baseline():
    assert math.isnan(CatalysisResult(0.3, 0.0, 0.0, "Optimal").enhancement_ratio)
    assert CatalysisResult(0.3, 0.2, 0.0, "Optimal").enhancement_ratio == pytest.approx(0.5)


def test_family_states_are_densities():
    for fam in ("v", "u"):
        for q in (0.0, 0.3, 1.0):
            rho = family_state(fam, q)
            assert np.trace(rho) == pytest.approx(1.0)
            assert np.linalg.eigvalsh(rho)[0] >= -1e-12


def test_sweep_rows_and_csv(headline):
    rows = catalysis_sweep("v", [0.5], [0.0, 0.01])
    assert [(r["q"], r["delta"]) for r in rows] == [(0.5, 0.0), (0.5, 0.01)]
    assert rows[0]["p_assisted"] == pytest.approx(headline[0.0].probability, abs=1e-7)
    assert rows[1]["p_assisted"] >= rows[0]["p_assisted"] - 1e-6
    text = sweep_csv(rows)
    lines = text.splitlines()
    assert lines[0] == ",".join(SWEEP_HEADER)
    assert len(lines) == 3
    assert sweep_csv(rows) == text


def test_sweep_warns_outside_studied_range():
    with pytest.warns(UserWarning, match="outside"):
        rows = catalysis_sweep("v", [0.6], [0.0])
    assert rows[0]["ratio"] >= -1e-6
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        catalysis_sweep("u", [0.2], [0.0])
