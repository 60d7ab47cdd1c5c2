import time

import numpy as np
import pytest

from conftest import LN2, oracle_fork_amplitude, perturbed
from treeqms import dense
from treeqms.engine import (FallbackWarning, QmsHandle, evaluate, evaluate_localized, evaluate_nested,
                            marginal_density, restrict_to_subtree)
from treeqms.errors import BudgetExceededError, InvalidSubtreeError, NotPositiveError, RegionError
from treeqms.ising import ModelSpec, build_qms, evaluate_explicit_ising
from treeqms.operators import RegionOperator, pauli_basis
from treeqms.tree import ball

O = ()
rng = np.random.default_rng(11)


def Z(*vs):
    return RegionOperator.pauli({v: "Z" for v in vs})


def random_basis_element(region):
    return RegionOperator.from_codes(region, rng.integers(0, 4, size=len(region)))


def random_op(region):
    n = len(region)
    m = rng.normal(size=(2**n, 2**n)) + 1j * rng.normal(size=(2**n, 2**n))
    return RegionOperator.from_dense(m, region)


def test_identity_is_normalized(ising_11):
    for vol in range(0, 6):
        assert abs(evaluate_nested(ising_11, RegionOperator.identity(), vol) - 1) < 1e-12


def test_two_point_value_and_odd_string(ising_ln2):
    assert abs(evaluate_nested(ising_ln2, Z(O, (1,))) - 0.6) < 1e-12
    for beta, J in [(LN2, 0.0), (1.0, 1.0), (0.5, 2.0)]:
        h = build_qms(ModelSpec(beta, J))
        assert abs(evaluate_nested(h, Z(O))) < 1e-12


def test_two_point_against_independent_dense_formula():
    amp = oracle_fork_amplitude(LN2, 0.0)
    alpha = 1.0 / (np.trace(amp @ amp).real / 8)
    zz = np.kron(np.kron(np.diag([1, -1]), np.diag([1, -1])), np.eye(2))
    assert alpha * np.trace(amp @ zz @ amp).real / 8 == pytest.approx(0.6, abs=1e-12)


def test_observable_checks(ising_ln2):
    deep = Z(tuple([1] * 7))
    with pytest.raises(RegionError):
        evaluate_nested(ising_ln2, deep)
    with pytest.raises(RegionError):
        evaluate_nested(ising_ln2, Z((1, 1)), volume=1)
    with pytest.raises(ValueError):
        evaluate_nested(ising_ln2, Z(O), method="other")


def test_compatibility_across_volumes(ising_11):
    region = ball(2, 2)
    for _ in range(40):
        a = random_basis_element(region)
        base = evaluate_nested(ising_11, a, 2)
        assert abs(evaluate_nested(ising_11, a, 3) - base) < 1e-9
        assert abs(evaluate_nested(ising_11, a, 4) - base) < 1e-9


def test_positivity(ising_11):
    region = ball(1, 2)
    for _ in range(10):
        a = random_op(region)
        assert evaluate_nested(ising_11, a.adjoint() @ a).real > -1e-9


def test_pauli_matches_dense(ising_11):
    region = ball(2, 2)
    for _ in range(10):
        a = random_op(region)
        assert abs(evaluate_nested(ising_11, a, 2) - evaluate_nested(ising_11, a, 2, method="dense")) < 1e-9
    with pytest.raises(BudgetExceededError):
        evaluate_nested(ising_11, Z(O), 3, method="dense")


def test_marginal_density_reproduces_values(ising_11):
    rho, region = marginal_density(ising_11, 2)
    assert region == ball(2, 2)
    assert np.linalg.eigvalsh(dense.hermitian_part(rho)).min() > 0
    for _ in range(5):
        a = random_op(region)
        assert abs(dense.normalized_trace(rho @ a.to_dense()) - evaluate_nested(ising_11, a, 2)) < 1e-9


def test_nested_equals_explicit_on_every_basis_string():
    m = ModelSpec(1.0, 1.0)
    h = build_qms(m)
    worst = 0.0
    for a in pauli_basis(ball(2, 2)):
        worst = max(worst, abs(evaluate_nested(h, a) - evaluate_explicit_ising(m, a, 2)))
    assert worst < 1e-9


def test_explicit_dense_agrees():
    m = ModelSpec(LN2, 0.0)
    for _ in range(10):
        a = random_basis_element(ball(1, 2))
        assert abs(evaluate_explicit_ising(m, a) - evaluate_explicit_ising(m, a, method="dense")) < 1e-12


def test_explicit_examples():
    m = ModelSpec(LN2, 0.0)
    assert evaluate_explicit_ising(m, RegionOperator.identity(), 1) == pytest.approx(1.0)
    assert evaluate_explicit_ising(m, Z(O, (1,))) == pytest.approx(0.6)
    free = ModelSpec(0.0, 1.5)
    assert evaluate_explicit_ising(free, Z((1,), (2,))) == pytest.approx(0.0, abs=1e-15)
    assert evaluate_explicit_ising(free, Z((1,), (2,)), method="dense") == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(BudgetExceededError):
        evaluate_explicit_ising(m, Z(O), 4)


def test_explicit_competing_pair_at_positive_beta():
    # successors' correlation in one fork: (delta^2 + gamma eta) / (gamma^2 + 2 delta^2 + eta^2) * 2
    m = ModelSpec(1.0, 1.0)
    amp = oracle_fork_amplitude(1.0, 1.0)
    zz = np.kron(np.eye(2), np.kron(np.diag([1, -1]), np.diag([1, -1])))
    expected = np.trace(amp @ zz @ amp).real / np.trace(amp @ amp).real
    assert evaluate_explicit_ising(m, Z((1,), (2,))) == pytest.approx(expected, abs=1e-12)
    assert evaluate_nested(build_qms(m), Z((1,), (2,))) == pytest.approx(expected, abs=1e-12)


def test_localized_matches_nested(ising_ln2):
    x = (1, 2)
    a = Z(x, (1, 2, 1))
    loc = evaluate_localized(ising_ln2, a)
    assert loc.path == "localized" and not loc.fallback
    assert abs(loc.value - evaluate_nested(ising_ln2, a)) < 1e-12
    ident = evaluate_localized(ising_ln2, RegionOperator.identity(((1,), (1, 2), (1, 2, 1), (1, 2, 2))), x)
    assert abs(ident.value - 1) < 1e-12
    region = (O, (1,), (1, 2), (1, 2, 1), (1, 2, 2))
    for _ in range(30):
        b = random_basis_element(region)
        assert abs(evaluate_localized(ising_ln2, b, x).value - evaluate_nested(ising_ln2, b)) < 1e-9


def test_localized_rejects_off_path_support(ising_ln2):
    with pytest.raises(RegionError):
        evaluate_localized(ising_ln2, Z((1, 1), (2, 1)), (1, 1))


def test_localized_falls_back_without_certificate(perturbed_ln2):
    a = Z(O, (1,))
    with pytest.warns(FallbackWarning):
        res = evaluate_localized(perturbed_ln2, a)
    assert res.fallback and res.path == "nested"
    assert res.value == evaluate_nested(perturbed_ln2, a)


def test_localized_level_ten_path_is_fast():
    h = build_qms(ModelSpec(1.0, 1.0), n_max=11)
    x = tuple([1, 2] * 5)
    a = Z(O, x[:3], x, x + (1,))
    start = time.perf_counter()
    res = evaluate_localized(h, a, x)
    assert time.perf_counter() - start < 1.0
    assert res.volume == 12
    with pytest.raises(BudgetExceededError):
        evaluate_nested(h, a, method="dense")


def test_evaluate_record(ising_ln2):
    res = evaluate(ising_ln2, Z(O, (1,)))
    assert res.volume == 2 and res.path == "nested" and abs(res.value - 0.6) < 1e-12


def test_restrict_full_tree_is_identity(ising_ln2):
    assert restrict_to_subtree(ising_ln2) is ising_ln2
    assert restrict_to_subtree(ising_ln2, root=O) is ising_ln2


def test_restricted_values_agree(ising_11):
    sub = restrict_to_subtree(ising_11, root=(1,))
    a = Z((1,), (1, 2)) + Z((1, 1), (1, 2)) * 0.5
    assert abs(evaluate_nested(sub, a) - evaluate_nested(ising_11, a)) < 1e-12
    with pytest.raises(RegionError):
        evaluate_nested(sub, Z((2,)))


def test_subtree_translation_homogeneous(ising_11):
    sub = restrict_to_subtree(ising_11, root=(2,))
    for a in list(pauli_basis(ball(1, 2)))[::5]:
        shifted = RegionOperator.from_strings(tuple((2,) + v for v in a.region), {
            type(ps).of({(2,) + v: s for v, s in ps.letters}): c for ps, c in a.terms()})
        assert abs(evaluate_nested(sub, shifted) - evaluate_nested(ising_11, a)) < 1e-12


def test_path_subtree(ising_11):
    sub = restrict_to_subtree(ising_11, [O, (1,)])
    assert abs(evaluate_nested(sub, RegionOperator.identity((O, (1,)))) - 1) < 1e-12
    assert sub.level_vertices(1) == ((1,),)
    with pytest.raises(InvalidSubtreeError):
        restrict_to_subtree(ising_11, [(1,), (2,)])


def test_handle_validation(ising_ln2):
    with pytest.raises(NotPositiveError):
        QmsHandle(2, np.diag([2.0, -0.5]), ising_ln2.default)
    with pytest.raises(NotPositiveError):
        QmsHandle(2, 2 * np.eye(2), ising_ln2.default)
    with pytest.raises(RegionError):
        QmsHandle(2, np.eye(2), ising_ln2.default, {(1,): ising_ln2.default})
    with pytest.raises(KeyError):
        QmsHandle(2, np.eye(2), None, {O: ising_ln2.default}, n_max=2)


def test_root_marginal(ising_ln2, perturbed_ln2):
    np.testing.assert_allclose(ising_ln2.root_marginal(), np.eye(2), atol=1e-12)
    assert not perturbed(ising_ln2).certified
    assert abs(np.trace(perturbed_ln2.root_marginal()) / 2 - 1.1) < 1e-12
