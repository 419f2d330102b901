"""Diagonal contraction semigroup: action, generator, certified bounds."""

import numpy as np
import pytest

from mvmsim.semigroup import DiagonalSemigroup, SemigroupBound, SemigroupError
from mvmsim.space import SeminormFamily, pairing

FAM = SeminormFamily(4)


def test_identity_at_time_zero():
    sg = DiagonalSemigroup([1.0, 2.0, 3.0, 4.0])
    psi = np.array([0.3, -1.2, 5.0, 0.0])
    np.testing.assert_array_equal(sg.apply(0.0, psi), psi)


def test_halving_at_log_two():
    # lambda = (1, 2), t = ln 2: multipliers 1/2 and 1/4
    sg = DiagonalSemigroup([1.0, 2.0])
    out = sg.apply(np.log(2.0), np.array([1.0, 1.0]))
    np.testing.assert_allclose(out, [0.5, 0.25], rtol=1e-15)


def test_semigroup_law():
    sg = DiagonalSemigroup(1.0 + np.arange(4.0), shift=0.3)
    psi = np.array([1.0, -2.0, 0.5, 3.0])
    for t, s in ((0.2, 0.5), (1.3, 0.05), (0.0, 0.9)):
        lhs = sg.apply(t, sg.apply(s, psi))
        rhs = sg.apply(t + s, psi)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12, rtol=0.0)


def test_dual_action_respects_pairing():
    sg = DiagonalSemigroup([0.5, 1.0, 2.0, 4.0])
    gen = np.random.default_rng(3)
    f = gen.standard_normal(4)
    psi = gen.standard_normal(4)
    for t in (0.1, 0.7, 2.0):
        assert pairing(sg.apply_dual(t, f), psi) == pytest.approx(
            pairing(f, sg.apply(t, psi)), rel=1e-14)


def test_generator_values_and_linearity():
    sg = DiagonalSemigroup([1.0, 3.0], shift=0.0)
    psi = np.array([1.0, -2.0])
    np.testing.assert_allclose(sg.generator(psi), [-1.0, 6.0], atol=0.0)
    phi = np.array([0.5, 0.25])
    np.testing.assert_allclose(sg.generator(2.0 * psi + phi),
                               2.0 * sg.generator(psi) + sg.generator(phi),
                               atol=1e-15)
    np.testing.assert_allclose(sg.generator_dual(psi), sg.generator(psi),
                               atol=0.0)


def test_generator_is_first_order_limit():
    # (S(h)psi - psi)/h -> A psi with O(h) error: ratio ~ 10 between h decades
    sg = DiagonalSemigroup([1.0, 3.0])
    psi = np.array([1.0, -2.0])
    errs = []
    for h in (1e-3, 1e-4):
        fd = (sg.apply(h, psi) - psi) / h
        errs.append(np.abs(fd - sg.generator(psi)).max())
    assert errs[0] / errs[1] == pytest.approx(10.0, rel=0.05)


def test_apply_is_linear():
    sg = DiagonalSemigroup([0.7, 1.1, 2.2, 0.0])
    gen = np.random.default_rng(9)
    psi = gen.standard_normal(4)
    phi = gen.standard_normal(4)
    lhs = sg.apply(0.4, 3.0 * psi - phi)
    rhs = 3.0 * sg.apply(0.4, psi) - sg.apply(0.4, phi)
    np.testing.assert_allclose(lhs, rhs, atol=1e-14)


def test_certify_bound_default_contraction():
    sg = DiagonalSemigroup([1.0, 2.0, 3.0, 4.0])
    bound = sg.certify_bound(FAM, 1)
    assert isinstance(bound, SemigroupBound)
    assert bound.M == 1.0
    assert bound.theta == 0.0
    assert bound.level == 1


def test_certify_bound_with_shift():
    sg = DiagonalSemigroup([0.5, 1.0, 2.0, 3.0], shift=0.7)
    bound = sg.certify_bound(FAM, 0)
    assert bound.M == 1.0
    assert bound.theta == 0.7


def test_negative_spectrum_rejected():
    with pytest.raises(SemigroupError):
        DiagonalSemigroup([1.0, -1.0])
    with pytest.raises(SemigroupError):
        DiagonalSemigroup([1.0, 2.0], shift=-0.1)


def test_negative_time_rejected():
    sg = DiagonalSemigroup([1.0, 2.0])
    with pytest.raises(SemigroupError):
        sg.decay(-0.5)
    with pytest.raises(SemigroupError):
        sg.apply(-1e-9, np.ones(2))


def test_strong_continuity_at_zero():
    # p_1(S(t)psi - psi) -> 0 linearly as t -> 0
    sg = DiagonalSemigroup([1.0, 2.0, 3.0, 4.0])
    psi = np.array([1.0, 0.5, -0.25, 2.0])
    gaps = [FAM.seminorm(1, sg.apply(t, psi) - psi)
            for t in (1e-2, 5e-3, 2.5e-3)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[0] / gaps[1] == pytest.approx(2.0, rel=0.05)
    assert gaps[1] / gaps[2] == pytest.approx(2.0, rel=0.05)
