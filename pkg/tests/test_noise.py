"""Cylindrical martingale noise: rings, atomic measures, paths, evaluation."""

import numpy as np
import pytest

from mvmsim.noise import (LevyMeasure, LevyTriplet, MvmSpec, NoiseError,
                          RingSet, compensated_poisson_integral,
                          levy_components, levy_value, mvm_evaluate,
                          simulate_path, simulate_sum_path, sum_mvm)
from mvmsim.space import SeminormFamily, SpaceError

GRID = np.linspace(0.0, 1.0, 33)
SEED = 13


def _mean_and_stderr(values):
    values = np.asarray(values, dtype=float)
    n = values.size
    return values.mean(), values.std(ddof=1) / np.sqrt(n)


def _assert_within_sigmas(mean, stderr, target, sigmas=4.0, bias=0.0):
    assert abs(mean - target) <= sigmas * stderr + bias, \
        "mean %.6g vs target %.6g (stderr %.3g)" % (mean, target, stderr)


# ring sets


def test_ring_set_algebra():
    A = RingSet.of_atoms(0, 2)
    B = RingSet.of_atoms(1)
    W = RingSet.wiener()
    assert A.is_disjoint(B)
    assert A.is_disjoint(W)
    assert not A.is_disjoint(RingSet.of_atoms(2))
    assert A.union(B).union(W) == RingSet(atoms=(0, 1, 2),
                                          include_wiener=True)
    assert RingSet.everything(3) == RingSet(atoms=(0, 1, 2),
                                            include_wiener=True)
    assert RingSet.empty() == RingSet()
    assert hash(RingSet.of_atoms(1, 0)) == hash(RingSet.of_atoms(0, 1))


# atomic measures


def test_levy_measure_moments():
    m = LevyMeasure([[2.0, 0.0], [0.0, 1.0]], [3.0, 0.5])
    phi = np.array([1.0, 1.0])
    # sum_k c_k (u_k . phi)^2
    assert m.second_moment(phi) == pytest.approx(3.0 * 4.0 + 0.5 * 1.0,
                                                 abs=1e-15)
    np.testing.assert_allclose(m.compensator_vector(),
                               3.0 * np.array([2.0, 0.0])
                               + 0.5 * np.array([0.0, 1.0]), atol=0.0)
    sub = RingSet.of_atoms(1)
    assert m.second_moment(phi, sub) == pytest.approx(0.5, abs=1e-15)


def test_levy_measure_validation():
    with pytest.raises(NoiseError):
        LevyMeasure([[1.0]], [0.0])  # nonpositive rate
    with pytest.raises(NoiseError):
        LevyMeasure([[0.0, 0.0]], [1.0])  # zero atom
    with pytest.raises(NoiseError):
        LevyMeasure([[1.0], [2.0]], [1.0])  # rate count mismatch


def test_levy_measure_restrict():
    m = LevyMeasure([[1.0, 0.0], [0.0, 2.0], [3.0, 0.0]], [1.0, 2.0, 3.0])
    sub, idx = m.restrict(np.array([True, False, True]))
    assert sub.n_atoms == 2
    np.testing.assert_array_equal(idx, [0, 2])
    np.testing.assert_array_equal(sub.rates, [1.0, 3.0])


def test_radial_gaussian_atomization():
    direction = np.array([1.0, 0.0])
    m = LevyMeasure.from_radial_gaussian(direction, intensity=2.0,
                                         scale=1.5, n_atoms=8)
    assert m.n_atoms == 8
    np.testing.assert_allclose(m.rates, np.full(8, 0.25), atol=0.0)
    # symmetric midpoint-quantile atoms cancel in the mean
    np.testing.assert_allclose(m.compensator_vector(), [0.0, 0.0],
                               atol=1e-12)
    # frozen midpoint-quantile second moment along the direction
    expected = 3.8297293800055217
    assert m.second_moment(direction) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(NoiseError):
        LevyMeasure.from_radial_gaussian(direction, 1.0, 1.0, n_atoms=7)
    with pytest.raises(NoiseError):
        LevyMeasure.from_radial_gaussian(direction, 1.0, 1.0, n_atoms=0)


# specs and paths


def test_zero_spec_gives_zero_path():
    spec = MvmSpec(np.zeros((2, 2)))
    p = simulate_path(spec, GRID, seed=3, path_id=0)
    assert not p.dW.any()
    assert p.jump_times.size == 0
    phi = np.array([1.0, -1.0])
    for t in (0.25, 1.0):
        assert mvm_evaluate(p, 0.0, t, spec.everything(), phi) == 0.0


def test_non_psd_Q_rejected():
    with pytest.raises(SpaceError):
        MvmSpec(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_grid_must_start_at_zero():
    spec = MvmSpec(np.eye(1))
    with pytest.raises(NoiseError):
        simulate_path(spec, np.linspace(0.5, 1.0, 8), seed=1, path_id=0)


def test_wiener_unit_variance():
    spec = MvmSpec(np.eye(1))
    phi = np.array([1.0])
    vals = []
    for b in range(20000):
        p = simulate_path(spec, GRID, seed=SEED, path_id=b)
        vals.append(mvm_evaluate(p, 0.0, 1.0, RingSet.wiener(), phi) ** 2)
    mean, stderr = _mean_and_stderr(vals)
    _assert_within_sigmas(mean, stderr, 1.0)


def test_jump_count_mean():
    # rate-3 single atom on [0, 2]: expected count 6
    spec = MvmSpec(None, LevyMeasure([[1.0]], [3.0]), dimension=1)
    grid = np.linspace(0.0, 2.0, 17)
    counts = []
    for b in range(20000):
        p = simulate_path(spec, grid, seed=SEED, path_id=b)
        counts.append(p.jump_times.size)
    mean, stderr = _mean_and_stderr(counts)
    _assert_within_sigmas(mean, stderr, 6.0)


def test_mvm_evaluate_null_and_additivity():
    spec = MvmSpec(np.eye(2), LevyMeasure([[2.0, 0.0], [0.0, 1.0]],
                                          [3.0, 1.0]))
    phi = np.array([1.0, 0.5])
    p = simulate_path(spec, GRID, seed=SEED, path_id=4)
    t0, t1, t2 = GRID[0], GRID[16], GRID[32]
    assert mvm_evaluate(p, t0, t1, RingSet.empty(), phi) == 0.0
    assert mvm_evaluate(p, t1, t1, spec.everything(), phi) == 0.0
    # additivity in time, exactly
    left = mvm_evaluate(p, t0, t1, spec.everything(), phi)
    right = mvm_evaluate(p, t1, t2, spec.everything(), phi)
    total = mvm_evaluate(p, t0, t2, spec.everything(), phi)
    assert left + right == pytest.approx(total, abs=1e-12)
    # additivity in disjoint rings, exactly
    a = mvm_evaluate(p, t0, t2, RingSet.wiener(), phi)
    b = mvm_evaluate(p, t0, t2, RingSet.of_atoms(0), phi)
    c = mvm_evaluate(p, t0, t2, RingSet.of_atoms(1), phi)
    assert a + b + c == pytest.approx(total, abs=1e-12)


def test_mvm_evaluate_rejects_bad_sets_and_times():
    spec = MvmSpec(np.eye(1), LevyMeasure([[1.0]], [1.0]))
    p = simulate_path(spec, GRID, seed=SEED, path_id=0)
    phi = np.array([1.0])
    with pytest.raises(NoiseError):
        mvm_evaluate(p, 0.0, 1.0, RingSet.of_atoms(5), phi)
    with pytest.raises(NoiseError):
        mvm_evaluate(p, 0.0, 1.0, "everything", phi)
    with pytest.raises(NoiseError):
        mvm_evaluate(p, 0.5, 0.25, spec.everything(), phi)


def test_mvm_second_moment_compensated_atom():
    # c = 3, u0[phi] = 2, t - s = 1: E M((s,t],{u0})(phi)^2 = 12
    spec = MvmSpec(None, LevyMeasure([[2.0]], [3.0]), dimension=1)
    phi = np.array([1.0])
    assert spec.second_moment(0.0, 1.0, spec.everything(), phi) == \
        pytest.approx(12.0, abs=1e-12)
    vals = []
    for b in range(20000):
        p = simulate_path(spec, GRID, seed=SEED, path_id=b)
        vals.append(mvm_evaluate(p, 0.0, 1.0, spec.everything(), phi) ** 2)
    mean, stderr = _mean_and_stderr(vals)
    _assert_within_sigmas(mean, stderr, 12.0)


def test_compensated_poisson_integral_values():
    spec = MvmSpec(None, LevyMeasure([[1.0]], [0.5]), dimension=1)
    phi = np.array([1.0])
    A = spec.everything()
    # on a path with no jumps the value is minus the compensator
    no_jump = None
    for b in range(200):
        p = simulate_path(spec, GRID, seed=SEED, path_id=b)
        if p.jump_times.size == 0:
            no_jump = p
            break
    assert no_jump is not None
    assert compensated_poisson_integral(no_jump, 1.0, A, phi) == \
        pytest.approx(-0.5, abs=1e-14)
    # mean zero, second moment t * c * u0[phi]^2
    vals = []
    for b in range(20000):
        p = simulate_path(spec, GRID, seed=SEED, path_id=b)
        vals.append(compensated_poisson_integral(p, 1.0, A, phi))
    vals = np.asarray(vals)
    mean, stderr = _mean_and_stderr(vals)
    _assert_within_sigmas(mean, stderr, 0.0)
    m2, se2 = _mean_and_stderr(vals ** 2)
    _assert_within_sigmas(m2, se2, 0.5)


def test_sum_mvm_with_zero_second_component():
    a = MvmSpec(np.eye(2), LevyMeasure([[1.0, 0.0]], [2.0]))
    b = MvmSpec(np.zeros((2, 2)))
    s = sum_mvm(a, b)
    np.testing.assert_array_equal(s.Q, a.Q)
    assert s.n_atoms == 1
    pa = simulate_path(a, GRID, seed=SEED, path_id=2)
    p1, p2, psum = simulate_sum_path(a, b, GRID, seed=SEED, path_id=2)
    assert not p2.dW.any() and p2.jump_times.size == 0
    np.testing.assert_array_equal(psum.dW, p1.dW)
    np.testing.assert_array_equal(psum.jump_times, p1.jump_times)
    assert pa.jump_times.size == p1.jump_times.size


def test_sum_mvm_concatenates_disjoint_atoms():
    a = MvmSpec(np.diag([1.0, 0.0]), LevyMeasure([[1.0, 0.0]], [2.0]))
    b = MvmSpec(np.diag([0.0, 0.5]), LevyMeasure([[0.0, 3.0]], [1.0]))
    s = sum_mvm(a, b)
    assert s.n_atoms == 2
    np.testing.assert_array_equal(s.Q, a.Q + b.Q)
    pa, pb, psum = simulate_sum_path(a, b, GRID, seed=SEED, path_id=7)
    assert psum.jump_times.size == pa.jump_times.size + pb.jump_times.size
    assert np.all(np.diff(psum.jump_times) >= 0.0)
    np.testing.assert_array_equal(psum.dW, pa.dW + pb.dW)


def test_sum_mvm_variance_adds():
    a = MvmSpec(np.array([[1.0]]))
    b = MvmSpec(np.array([[0.5]]))
    s = sum_mvm(a, b)
    phi = np.array([1.0])
    vals = []
    for bid in range(20000):
        _, _, psum = simulate_sum_path(a, b, GRID, seed=SEED, path_id=bid)
        vals.append(mvm_evaluate(psum, 0.0, 1.0, RingSet.wiener(), phi) ** 2)
    mean, stderr = _mean_and_stderr(vals)
    _assert_within_sigmas(mean, stderr, 1.5)


def test_increments_independent_of_past():
    # E[ M((s,t],A)(phi) * G ] = 0 for functionals G of the path up to s
    spec = MvmSpec(np.eye(2), LevyMeasure([[0.0, 1.5]], [2.0]))
    phi = np.array([1.0, 0.25])
    s, t = GRID[16], GRID[32]
    prods = [[], [], []]
    for b in range(20000):
        p = simulate_path(spec, GRID, seed=SEED, path_id=b)
        inc = mvm_evaluate(p, s, t, spec.everything(), phi)
        w_s = p.wiener(s) @ phi
        m_jump = mvm_evaluate(p, 0.0, s, RingSet.of_atoms(0), phi)
        sgn = np.sign(p.wiener(GRID[8]) @ phi)
        for slot, g in enumerate((w_s, m_jump, sgn)):
            prods[slot].append(inc * g)
    for slot in range(3):
        mean, stderr = _mean_and_stderr(prods[slot])
        _assert_within_sigmas(mean, stderr, 0.0)


def test_path_bit_identity_and_stream_separation():
    spec = MvmSpec(np.eye(2), LevyMeasure([[1.0, 0.0]], [2.0]))
    p1 = simulate_path(spec, GRID, seed=99, path_id=5)
    p2 = simulate_path(spec, GRID, seed=99, path_id=5)
    np.testing.assert_array_equal(p1.dW, p2.dW)
    np.testing.assert_array_equal(p1.jump_times, p2.jump_times)
    p3 = simulate_path(spec, GRID, seed=99, path_id=6)
    assert not np.array_equal(p1.dW, p3.dW)
    p4 = simulate_path(spec, GRID, seed=99, path_id=5, component=1)
    assert not np.array_equal(p1.dW, p4.dW)


# triplets and dual-ball bookkeeping


def _default_triplet(d=4):
    fam = SeminormFamily(d)
    atoms = np.zeros((4, d))
    atoms[0, 1 % d] = 0.5
    atoms[1, 0] = 1.6
    atoms[2, 1 % d] = 7.0
    atoms[3, 2 % d] = 20.0
    levy = LevyMeasure(atoms, [2.0, 1.0, 0.5, 0.25])
    return LevyTriplet(np.zeros(d), 0.2 * np.eye(d), levy, fam, radius=1.0)


def test_atom_levels_frozen():
    trip = _default_triplet()
    np.testing.assert_array_equal(trip.atom_levels(), [1, 2, 2, 3])
    mask1 = trip.ball_mask(1)
    np.testing.assert_array_equal(mask1, [True, False, False, False])
    mask3 = trip.ball_mask(3)
    assert mask3.all()


def test_atom_levels_escape_raises():
    fam = SeminormFamily(2)
    levy = LevyMeasure([[1e9, 0.0]], [1.0])
    trip = LevyTriplet(np.zeros(2), np.eye(2), levy, fam, radius=1.0)
    with pytest.raises(NoiseError):
        trip.atom_levels(max_level=3)


def test_escape_time_matches_manual_scan():
    trip = _default_triplet()
    spec = trip.mvm_spec()
    levels = trip.atom_levels()
    for b in range(40):
        p = simulate_path(spec, GRID, seed=SEED, path_id=b)
        for n in (1, 2):
            tau = trip.escape_time(p, n)
            outside = p.jump_times[levels[p.jump_atoms] > n]
            expected = outside[0] if outside.size else np.inf
            assert tau == expected


def test_filter_atoms_shares_wiener_and_renumbers():
    trip = _default_triplet()
    spec = trip.mvm_spec()
    p = simulate_path(spec, GRID, seed=SEED, path_id=11)
    mask = trip.ball_mask(2)
    sub = p.filter_atoms(mask)
    np.testing.assert_array_equal(sub.dW, p.dW)
    keep = mask[p.jump_atoms]
    np.testing.assert_array_equal(sub.jump_times, p.jump_times[keep])
    assert sub.jump_atoms.size == 0 or sub.jump_atoms.max() < mask.sum()


def test_levy_value_decomposes():
    trip = _default_triplet()
    spec = trip.mvm_spec()
    phi = np.array([1.0, -0.5, 0.25, 0.0])
    for b in range(10):
        p = simulate_path(spec, GRID, seed=SEED, path_id=b)
        for t in (0.5, 1.0):
            parts = levy_components(p, trip, t, phi)
            total = sum(parts.values())
            assert levy_value(p, trip, t, phi) == pytest.approx(total,
                                                                abs=1e-12)
            # large-jump slot is the raw (uncompensated) sum outside U_1
            mask = trip.ball_mask(1)
            idx = p.jumps_in(0.0, t)
            ja = p.jump_atoms[idx]
            raw = float(np.sum(spec.levy.atoms[ja[~mask[ja]]] @ phi))
            assert parts["large"] == pytest.approx(raw, abs=1e-12)
