import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from treeqms import dense
from treeqms.errors import BudgetExceededError, RegionError, SiteDimensionError
from treeqms.ising import ModelSpec, build_amplitude
from treeqms.operators import (PauliString, RegionOperator, from_records, multiply, pauli_basis, to_records)

O, A1, A2 = (), (1,), (2,)
FORK = (O, A1, A2)
SITES = [O, A1, A2, (1, 1)]
MATS = {"I": np.eye(2), "X": np.array([[0, 1], [1, 0]]), "Y": np.array([[0, -1j], [1j, 0]]),
        "Z": np.diag([1, -1])}


def oracle(op: RegionOperator, region) -> np.ndarray:
    """Dense matrix from the letter table, independent of RegionOperator.to_dense."""
    out = np.zeros((2 ** len(region),) * 2, dtype=complex)
    for ps, c in op.terms():
        letters = ps.as_dict()
        m = np.ones((1, 1))
        for v in region:
            m = np.kron(m, MATS[letters.get(v, "I")])
        out += c * m
    return out


coeff = st.complex_numbers(max_magnitude=2, allow_nan=False, allow_infinity=False)


@st.composite
def operators(draw, sites=tuple(SITES[:3]), letters="IXYZ", max_terms=5):
    region = tuple(sorted(draw(st.sets(st.sampled_from(sites), min_size=1)), key=lambda v: (len(v), v)))
    terms = {}
    for _ in range(draw(st.integers(0, max_terms))):
        ps = PauliString.of({v: draw(st.sampled_from(letters)) for v in region})
        terms[ps] = terms.get(ps, 0) + draw(coeff)
    return RegionOperator.from_strings(region, terms)


def Z(*vs):
    return RegionOperator.pauli({v: "Z" for v in vs})


def test_multiply_examples():
    assert (Z(O) @ Z(O)).allclose(RegionOperator.identity((O,)))
    lhs = Z(O, A1).embed(FORK) @ Z(O, A2).embed(FORK)
    assert lhs.allclose(Z(A1, A2).embed(FORK))
    np.testing.assert_allclose(oracle(lhs, FORK), oracle(Z(O, A1), FORK) @ oracle(Z(O, A2), FORK), atol=1e-12)
    a = RegionOperator.pauli({O: "X", A1: "Y"}, 0.5 - 1j)
    assert multiply(RegionOperator.identity(), a).allclose(a)


def test_pauli_product_table():
    for p in "IXYZ":
        for q in "IXYZ":
            prod = RegionOperator.pauli({O: p}, region=(O,)) @ RegionOperator.pauli({O: q}, region=(O,))
            np.testing.assert_allclose(prod.to_dense(), MATS[p] @ MATS[q], atol=0)


def test_multiply_site_dimension_mismatch():
    a, b = Z(O), Z(O)
    b.site_dim = 3
    with pytest.raises(SiteDimensionError):
        a @ b
    with pytest.raises(SiteDimensionError):
        RegionOperator((O,), site_dim=3)


def test_normalized_trace_examples():
    assert RegionOperator.identity(FORK).normalized_trace() == 1
    assert Z(O).normalized_trace() == 0
    op = RegionOperator.identity(FORK) * 2.25 + Z(O, A1).embed(FORK) * 0.75
    assert op.normalized_trace() == pytest.approx(2.25)


def test_partial_trace_examples():
    keep = (O,)
    assert Z(A1, A2).embed(FORK).partial_trace(keep).allclose(RegionOperator.zero(keep))
    assert Z(O).embed(FORK).partial_trace(keep).allclose(Z(O))
    amp = build_amplitude(ModelSpec(math.log(2), 0)).operator
    red = (amp @ amp @ Z(O, A1)).partial_trace(keep)
    assert red.allclose(RegionOperator.identity(keep) * 3.75, atol=1e-12)
    mat = oracle(amp @ amp @ Z(O, A1).embed(FORK), FORK)
    np.testing.assert_allclose(dense.partial_trace(mat, FORK, keep), 3.75 * np.eye(2), atol=1e-12)
    with pytest.raises(RegionError):
        Z(O).partial_trace(((1, 1),))


def test_embed_examples():
    big = Z(O).embed(FORK)
    assert big.region == FORK and big.coefficient({O: "Z"}) == 1
    assert RegionOperator.identity().embed(FORK).allclose(RegionOperator.identity(FORK))
    assert big.partial_trace((O,)).allclose(Z(O))
    with pytest.raises(RegionError):
        Z(O, A1).embed((O,))


def test_to_dense_examples():
    np.testing.assert_array_equal(Z(O).to_dense(), np.diag([1, -1]))
    np.testing.assert_array_equal(Z(A1).embed((O, A1)).to_dense(), np.diag([1, -1, 1, -1]))
    amp = build_amplitude(ModelSpec(0.0, 0.0)).operator
    np.testing.assert_allclose(amp.embed(FORK).to_dense(), np.eye(8), atol=0)


def test_dense_budget_guard():
    region = tuple((i,) for i in range(1, 9))
    with pytest.raises(BudgetExceededError):
        RegionOperator.identity(region).to_dense()
    with pytest.raises(BudgetExceededError):
        RegionOperator.from_dense(np.eye(4), (O, A1), max_sites=1)


def test_pauli_basis_spans():
    basis = list(pauli_basis((O, A1)))
    assert len(basis) == 16
    gram = np.array([[(a.adjoint() @ b).normalized_trace() for b in basis] for a in basis])
    np.testing.assert_allclose(gram, np.eye(16), atol=0)
    assert len(list(pauli_basis(FORK, "IZ"))) == 8


def test_records_round_trip():
    op = RegionOperator.pauli({O: "Z", (1, 2): "X"}, 0.5 + 0.25j) + RegionOperator.identity() * 2
    back = from_records(to_records(op), op.region)
    assert back.allclose(op.embed(back.region))
    assert to_records(Z(O, A1)) == [{"coefficient": [1.0, 0.0], "letters": {"o": "Z", "1": "Z"}}]
    with pytest.raises(ValueError):
        from_records([{"coefficient": 1, "letters": {}, "extra": 0}])


@settings(max_examples=60, deadline=None)
@given(operators(), operators())
def test_dense_oracle_multiply(a, b):
    region = tuple(sorted(set(a.region) | set(b.region), key=lambda v: (len(v), v)))
    np.testing.assert_allclose((a @ b).to_dense(), oracle(a, region) @ oracle(b, region), atol=1e-12)
    np.testing.assert_allclose(a.embed(region).to_dense(), oracle(a, region), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(operators(), st.data())
def test_dense_oracle_partial_trace(a, data):
    keep = tuple(v for v in a.region if data.draw(st.booleans()))
    expected = dense.partial_trace(oracle(a, a.region), a.region, keep)
    np.testing.assert_allclose(a.partial_trace(keep).to_dense(), expected, atol=1e-12)
    assert a.normalized_trace() == pytest.approx(np.trace(oracle(a, a.region)) / 2 ** len(a.region), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(operators())
def test_from_dense_inverts_to_dense(a):
    back = RegionOperator.from_dense(a.to_dense(), a.region)
    assert back.max_abs_diff(a) < 1e-12


@settings(max_examples=60, deadline=None)
@given(operators(), operators())
def test_trace_cyclicity(a, b):
    assert (a @ b).normalized_trace() == pytest.approx((b @ a).normalized_trace(), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(operators(sites=tuple(SITES)), st.data())
def test_embed_then_trace_back(a, data):
    extra = data.draw(st.sets(st.sampled_from([(2, 1), (2, 2), (1, 2)])))
    assert a.embed(set(a.region) | extra).partial_trace(a.region).allclose(a, atol=0)


@settings(max_examples=60, deadline=None)
@given(operators(), operators(letters="IZ"))
def test_adjoint_properties(a, d):
    assert a.adjoint().adjoint().allclose(a, atol=0)
    np.testing.assert_allclose(a.adjoint().to_dense(), a.to_dense().conj().T, atol=1e-12)
    real = RegionOperator(d.region, {k: c.real for k, c in d.raw_terms().items()})
    assert real.adjoint().allclose(real, atol=0)


def test_norms_and_commutator():
    x, z = RegionOperator.pauli({O: "X"}), Z(O)
    comm = x.commutator(z)
    assert comm.norm_op() == pytest.approx(2.0)
    assert comm.norm_l1() == pytest.approx(2.0)
    assert Z(O).commutator(Z(O, A1)).n_terms == 0
