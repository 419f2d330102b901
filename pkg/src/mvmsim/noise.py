"""Simulation of martingale-valued measures with Wiener and atomic jump parts.

A measure is specified by a covariance Q for the Wiener slot and a
finite atomic jump intensity sum_k c_k delta_{u_k}; the measurable sets
it can be evaluated on form the ring generated by the Wiener slot {0}
and subsets of the atoms (RingSet).  A simulated path stores per-step
Wiener increments with covariance Q dt and the exact (time, atom) jump
list, so every evaluation M((s,t], A)[phi] is exact given the path:

    M((s,t], A)[phi] = 1_{0 in A} (W_t - W_s)[phi]
                       + sum_{jumps in (s,t], atom in A} u[phi]
                       - (t-s) sum_{atoms in A} c_k u_k[phi].

Per-path randomness comes from counter-based streams keyed by
(seed, path_id, component, tag); see rng.  Arrival times use the
order-statistics construction (Poisson count, then sorted uniforms), one
substream per atom, so adding an atom never perturbs the others.
"""

import numpy as np

from . import rng
from .space import JumpSeminormFamily, SpaceError, as_vector

try:
    from scipy.stats import norm as _scipy_norm
except ImportError:  # pragma: no cover
    _scipy_norm = None


class NoiseError(ValueError):
    """Structural violation in a measure spec, ring set, or path query."""


class GridError(NoiseError):
    """Evaluation time is not a point of the simulation grid."""


def grid_index(grid, t, what="time"):
    """Index of t in the grid; raises GridError unless t is a grid point."""
    i = int(np.searchsorted(grid, t))
    for k in (i, i - 1, i + 1):
        if 0 <= k < len(grid) and abs(grid[k] - t) <= 1e-12 * max(1.0, abs(t)):
            return k
    raise GridError("%s %r is not a grid point" % (what, t))


class RingSet:
    """Element of the ring generated by {0} (the Wiener slot) and atom subsets."""

    def __init__(self, atoms=(), include_wiener=False):
        self.atoms = frozenset(int(k) for k in atoms)
        if any(k < 0 for k in self.atoms):
            raise NoiseError("atom indices must be nonnegative")
        self.include_wiener = bool(include_wiener)

    @classmethod
    def wiener(cls):
        return cls((), include_wiener=True)

    @classmethod
    def of_atoms(cls, *indices):
        return cls(indices)

    @classmethod
    def everything(cls, n_atoms):
        return cls(range(int(n_atoms)), include_wiener=True)

    @classmethod
    def empty(cls):
        return cls()

    def union(self, other):
        return RingSet(self.atoms | other.atoms,
                       self.include_wiener or other.include_wiener)

    def is_disjoint(self, other):
        return not (self.atoms & other.atoms) and not (
            self.include_wiener and other.include_wiener)

    def __eq__(self, other):
        return (isinstance(other, RingSet) and self.atoms == other.atoms
                and self.include_wiener == other.include_wiener)

    def __hash__(self):
        return hash((self.atoms, self.include_wiener))

    def __repr__(self):
        return "RingSet(atoms=%s, include_wiener=%s)" % (
            sorted(self.atoms), self.include_wiener)


class LevyMeasure:
    """Finite atomic jump intensity: atoms u_k (rows) with rates c_k > 0."""

    def __init__(self, atoms, rates):
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        rates = np.atleast_1d(np.asarray(rates, dtype=float))
        if atoms.shape[0] != rates.shape[0]:
            raise NoiseError("need one rate per atom")
        if atoms.size and not np.all(np.isfinite(atoms)):
            raise NoiseError("non-finite atom coordinates")
        if np.any(rates <= 0):
            raise NoiseError("rates must be positive")
        if atoms.shape[0] and np.any(np.all(atoms == 0.0, axis=1)):
            raise NoiseError("atoms must be nonzero (no mass at the origin)")
        self.atoms = atoms
        self.rates = rates

    @classmethod
    def empty(cls, dimension):
        m = cls.__new__(cls)
        m.atoms = np.zeros((0, int(dimension)))
        m.rates = np.zeros(0)
        return m

    @classmethod
    def from_radial_gaussian(cls, direction, intensity, scale, n_atoms=8):
        """Atomize a centered Gaussian jump-size profile along a direction.

        Places n_atoms atoms at the midpoint quantiles scale *
        Phi^-1((k+1/2)/n) of N(0, scale^2) along `direction`, each with
        rate intensity/n.  Even n_atoms avoids an atom at the origin.
        """
        if _scipy_norm is None:  # pragma: no cover
            raise NoiseError("scipy is required for the Gaussian atomization")
        direction = as_vector(direction)
        n = int(n_atoms)
        if n < 2 or n % 2:
            raise NoiseError("n_atoms must be even and >= 2")
        q = _scipy_norm.ppf((np.arange(n) + 0.5) / n) * float(scale)
        atoms = q[:, None] * direction[None, :]
        rates = np.full(n, float(intensity) / n)
        return cls(atoms, rates)

    @property
    def n_atoms(self):
        return self.atoms.shape[0]

    @property
    def dimension(self):
        return self.atoms.shape[1]

    def check_ring(self, A):
        if not isinstance(A, RingSet):
            raise NoiseError("expected a RingSet, got %r" % (A,))
        if any(k >= self.n_atoms for k in A.atoms):
            raise NoiseError("ring set names atoms outside the measure: %s"
                             % sorted(k for k in A.atoms if k >= self.n_atoms))
        return A

    def atom_list(self, A):
        return np.asarray(sorted(self.check_ring(A).atoms), dtype=int)

    def second_moment(self, phi, A=None):
        """int_A |u[phi]|^2 nu(du) = sum_{k in A} c_k (u_k . phi)^2."""
        phi = as_vector(phi, self.dimension) if self.n_atoms else as_vector(phi)
        idx = np.arange(self.n_atoms) if A is None else self.atom_list(A)
        if idx.size == 0:
            return 0.0
        proj = self.atoms[idx] @ phi
        return float(np.sum(self.rates[idx] * proj ** 2))

    def compensator_vector(self, A=None):
        """int_A u nu(du) = sum_{k in A} c_k u_k."""
        idx = np.arange(self.n_atoms) if A is None else self.atom_list(A)
        if idx.size == 0:
            return np.zeros(self.dimension)
        return self.rates[idx] @ self.atoms[idx]

    def restrict(self, mask):
        """Sub-measure of the atoms selected by a boolean mask, with index map."""
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.n_atoms,):
            raise NoiseError("mask must have one entry per atom")
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            return LevyMeasure.empty(self.dimension), idx
        return LevyMeasure(self.atoms[idx], self.rates[idx]), idx


def _psd_factor(Q):
    # eigh-based square root; tolerates semidefinite Q where Cholesky fails
    vals, vecs = np.linalg.eigh(Q)
    vals = np.clip(vals, 0.0, None)
    return vecs * np.sqrt(vals)[None, :]


class MvmSpec:
    """Wiener covariance Q plus a finite atomic jump measure.

    The induced covariance seminorms live in .seminorms (the Wiener slot
    carries Q, an atom u carries |u[phi]|), and the second-moment oracle

        E |M((s,t], A)[phi]|^2 = (t-s) (1_{0 in A} phi'Q phi
                                  + sum_{k in A} c_k (u_k[phi])^2)

    is evaluated exactly by second_moment().
    """

    def __init__(self, Q=None, levy=None, dimension=None):
        if Q is None and levy is None and dimension is None:
            raise NoiseError("need Q, a jump measure, or an explicit dimension")
        if dimension is None:
            dimension = np.asarray(Q).shape[0] if Q is not None else levy.dimension
        dimension = int(dimension)
        self.levy = levy if levy is not None else LevyMeasure.empty(dimension)
        if self.levy.dimension != dimension:
            raise NoiseError("jump measure dimension %d != %d"
                             % (self.levy.dimension, dimension))
        self.seminorms = JumpSeminormFamily(Q, dimension=dimension)
        self.Q = self.seminorms.Q
        self.dimension = dimension
        self._factor = _psd_factor(self.Q)
        self.has_wiener = bool(np.any(self.Q != 0.0))

    @property
    def n_atoms(self):
        return self.levy.n_atoms

    def everything(self):
        return RingSet.everything(self.n_atoms)

    def check_ring(self, A):
        if not isinstance(A, RingSet):
            raise NoiseError("expected a RingSet, got %r" % (A,))
        self.levy.check_ring(A)
        return A

    def second_moment(self, s, t, A, phi):
        """Exact E|M((s,t],A)[phi]|^2."""
        A = self.check_ring(A)
        phi = as_vector(phi, self.dimension)
        out = 0.0
        if A.include_wiener:
            out += float(phi @ self.Q @ phi)
        out += self.levy.second_moment(phi, A)
        return (float(t) - float(s)) * out

    def mu_quadratic(self, phi, A=None):
        """int_A q_u(phi)^2 mu(du) with mu = delta_0 + nu (per unit time)."""
        phi = as_vector(phi, self.dimension)
        if A is None:
            A = self.everything()
        out = float(phi @ self.Q @ phi) if A.include_wiener else 0.0
        return out + self.levy.second_moment(phi, A)


def sum_mvm(a, b):
    """Independent sum of two measure specs: covariances add, atom lists concatenate."""
    if a.dimension != b.dimension:
        raise NoiseError("dimension mismatch: %d vs %d" % (a.dimension, b.dimension))
    atoms = np.vstack([a.levy.atoms, b.levy.atoms])
    rates = np.concatenate([a.levy.rates, b.levy.rates])
    levy = LevyMeasure(atoms, rates) if rates.size else LevyMeasure.empty(a.dimension)
    return MvmSpec(a.Q + b.Q, levy)


class NoisePath:
    """One simulated path: grid, Wiener increments, exact jump list."""

    def __init__(self, spec, grid, dW, jump_times, jump_atoms, seed=None,
                 path_id=None, component=0):
        self.spec = spec
        self.grid = np.asarray(grid, dtype=float)
        self.dW = np.asarray(dW, dtype=float)
        self.jump_times = np.asarray(jump_times, dtype=float)
        self.jump_atoms = np.asarray(jump_atoms, dtype=int)
        self.seed = seed
        self.path_id = path_id
        self.component = component
        self._W = None

    @property
    def T(self):
        return float(self.grid[-1])

    @property
    def n_steps(self):
        return len(self.grid) - 1

    def cumulative_wiener(self):
        if self._W is None:
            W = np.zeros((len(self.grid), self.spec.dimension))
            np.cumsum(self.dW, axis=0, out=W[1:])
            self._W = W
        return self._W

    def wiener(self, t):
        """W_t as a dual vector; t must be a grid point."""
        return self.cumulative_wiener()[grid_index(self.grid, t)]

    def jumps_in(self, s, t, atoms=None):
        """Indices into the jump list with time in (s, t] (and atom in `atoms`)."""
        mask = (self.jump_times > s) & (self.jump_times <= t)
        if atoms is not None:
            mask &= np.isin(self.jump_atoms, np.asarray(list(atoms), dtype=int))
        return np.nonzero(mask)[0]

    def filter_atoms(self, mask, spec=None):
        """Path of the sub-measure keeping only jumps of masked-in atoms.

        The Wiener increments are shared (same driving noise); atom
        indices are renumbered to the restricted measure.
        """
        levy, idx = self.spec.levy.restrict(mask)
        if spec is None:
            spec = MvmSpec(self.spec.Q, levy)
        renumber = -np.ones(self.spec.n_atoms, dtype=int)
        renumber[idx] = np.arange(idx.size)
        keep = np.asarray(mask, dtype=bool)[self.jump_atoms]
        return NoisePath(spec, self.grid, self.dW, self.jump_times[keep],
                         renumber[self.jump_atoms[keep]], seed=self.seed,
                         path_id=self.path_id, component=self.component)


class LevyTriplet:
    """Characteristics (drift, Q, finite atomic nu) with nested jump domains.

    The domains U_n are dual-seminorm balls {u : p_n'(u) <= n * radius};
    dual seminorms decrease in the level, so U_1 in U_2 in ... holds
    automatically and every atom lies in all U_n from its level on.
    Jumps inside U_1 are compensated in the path decomposition, jumps
    outside enter raw:

        L_t = t drift + W_t + (compensated jumps in U_1) + (raw jumps outside).
    """

    def __init__(self, drift, Q, levy, family, radius=1.0):
        self.drift = as_vector(drift)
        self.spec = MvmSpec(Q, levy, dimension=self.drift.shape[0])
        self.levy = self.spec.levy
        self.family = family
        self.radius = float(radius)
        if self.radius <= 0:
            raise NoiseError("ball radius scale must be positive")
        if family.dimension != self.spec.dimension:
            raise NoiseError("seminorm family dimension mismatch")

    @property
    def dimension(self):
        return self.spec.dimension

    def mvm_spec(self):
        return self.spec

    def ball_mask(self, n):
        """Boolean mask of the atoms lying in U_n."""
        n = int(n)
        if n < 1:
            raise NoiseError("ball levels start at 1")
        dual = np.array([self.family.dual_seminorm(n, u) for u in self.levy.atoms])
        return dual <= n * self.radius + 1e-12

    def atom_levels(self, max_level=64):
        """Smallest ball level containing each atom."""
        levels = np.full(self.levy.n_atoms, -1, dtype=int)
        for n in range(1, max_level + 1):
            mask = self.ball_mask(n)
            levels[(levels < 0) & mask] = n
            if np.all(levels > 0):
                return levels
        raise NoiseError("atoms escape every ball level up to %d" % max_level)

    def escape_time(self, path, n):
        """tau_n: first jump time whose atom lies outside U_n (inf if none)."""
        outside = ~self.ball_mask(n)
        if path.jump_times.size == 0 or not np.any(outside[path.jump_atoms]):
            return np.inf
        return float(path.jump_times[outside[path.jump_atoms]][0])


def levy_components(path, triplet, t, phi):
    """Independent pieces of the characteristics decomposition at time t.

    Returns dict with drift, wiener, small (compensated jumps in U_1) and
    large (raw jumps outside U_1) contributions to L_t[phi]; t must be a
    grid point for the Wiener read-off.
    """
    phi = as_vector(phi, triplet.dimension)
    t = float(t)
    small = triplet.ball_mask(1)
    proj = triplet.levy.atoms @ phi if triplet.levy.n_atoms else np.zeros(0)
    idx = path.jumps_in(0.0, t)
    jumps = path.jump_atoms[idx]
    small_sum = float(np.sum(proj[jumps[small[jumps]]])) if idx.size else 0.0
    large_sum = float(np.sum(proj[jumps[~small[jumps]]])) if idx.size else 0.0
    comp = t * float(np.sum(triplet.levy.rates[small] * proj[small])) if small.any() else 0.0
    return {
        "drift": t * float(triplet.drift @ phi),
        "wiener": float(path.wiener(t) @ phi),
        "small": small_sum - comp,
        "large": large_sum,
    }


def levy_value(path, triplet, t, phi):
    """L_t[phi] via the characteristics decomposition."""
    return sum(levy_components(path, triplet, t, phi).values())


def _arrival_times(gen, rate, T):
    n = int(gen.poisson(rate * T))
    if n == 0:
        return np.zeros(0)
    return np.sort(gen.uniform(0.0, T, size=n))


def wiener_increments(spec, grid, seed, path_id, component=0):
    """Per-step Wiener increments with covariance Q dt (one stream per path)."""
    grid = np.asarray(grid, dtype=float)
    dt = np.diff(grid)
    if np.any(dt <= 0):
        raise NoiseError("grid must be strictly increasing")
    K = len(dt)
    if not spec.has_wiener:
        return np.zeros((K, spec.dimension))
    z = rng.stream(seed, path_id, component, rng.TAG_WIENER).standard_normal(
        (K, spec.dimension))
    return (z @ spec._factor.T) * np.sqrt(dt)[:, None]


def simulate_path(spec, grid, seed, path_id, component=0):
    """Simulate one path of the measure on the given grid.

    Wiener increments and each atom's arrival process draw from disjoint
    counter-based streams keyed by (seed, path_id, component, tag), so
    the path is a pure function of those integers.
    """
    if isinstance(spec, LevyTriplet):
        spec = spec.mvm_spec()
    grid = np.asarray(grid, dtype=float)
    if grid[0] != 0.0:
        raise NoiseError("grid must start at 0")
    dW = wiener_increments(spec, grid, seed, path_id, component)
    T = float(grid[-1])
    times, atoms = [], []
    for k in range(spec.n_atoms):
        gen = rng.stream(seed, path_id, component, rng.TAG_JUMP, k)
        tk = _arrival_times(gen, spec.levy.rates[k], T)
        times.append(tk)
        atoms.append(np.full(len(tk), k, dtype=int))
    if times:
        times = np.concatenate(times)
        atoms = np.concatenate(atoms)
        order = np.lexsort((atoms, times))
        times, atoms = times[order], atoms[order]
    else:
        times = np.zeros(0)
        atoms = np.zeros(0, dtype=int)
    return NoisePath(spec, grid, dW, times, atoms, seed=seed, path_id=path_id,
                     component=component)


def simulate_sum_path(spec_a, spec_b, grid, seed, path_id):
    """Coupled paths of two independent measures and of their sum.

    The sum path is built from the component paths (Wiener increments
    add, jump lists merge with atoms renumbered into the concatenated
    table), so integrals against it decompose exactly.
    """
    pa = simulate_path(spec_a, grid, seed, path_id, component=0)
    pb = simulate_path(spec_b, grid, seed, path_id, component=1)
    total = sum_mvm(spec_a, spec_b)
    times = np.concatenate([pa.jump_times, pb.jump_times])
    atoms = np.concatenate([pa.jump_atoms, pb.jump_atoms + spec_a.n_atoms])
    order = np.lexsort((atoms, times))
    psum = NoisePath(total, pa.grid, pa.dW + pb.dW, times[order], atoms[order],
                     seed=seed, path_id=path_id)
    return pa, pb, psum


def mvm_evaluate(path, s, t, A, phi):
    """Exact M((s,t], A)[phi] read off a simulated path.

    s and t must be grid points (the Wiener increment is only stored
    stepwise); the jump part uses exact jump times and subtracts the
    compensator (t-s) sum_{k in A} c_k u_k[phi].
    """
    spec = path.spec
    A = spec.check_ring(A)
    phi = as_vector(phi, spec.dimension)
    s, t = float(s), float(t)
    if t < s:
        raise NoiseError("need s <= t")
    i0 = grid_index(path.grid, s, "interval start")
    i1 = grid_index(path.grid, t, "interval end")
    out = 0.0
    if A.include_wiener:
        out += float(path.dW[i0:i1].sum(axis=0) @ phi)
    if A.atoms:
        idx = path.jumps_in(s, t, A.atoms)
        if idx.size:
            out += float(np.sum(spec.levy.atoms[path.jump_atoms[idx]] @ phi))
        out -= (t - s) * float(spec.levy.compensator_vector(
            RingSet(A.atoms)) @ phi)
    return out


def compensated_poisson_integral(path, t, A, phi):
    """Jump sum minus compensator over the atoms of A up to time t.

    Equals M((0,t], A \\ {0})[phi]; t need not be a grid point because
    only jump times and the length t enter.
    """
    spec = path.spec
    A = spec.check_ring(A)
    phi = as_vector(phi, spec.dimension)
    t = float(t)
    out = 0.0
    if A.atoms:
        idx = path.jumps_in(0.0, t, A.atoms)
        if idx.size:
            out += float(np.sum(spec.levy.atoms[path.jump_atoms[idx]] @ phi))
        out -= t * float(spec.levy.compensator_vector(RingSet(A.atoms)) @ phi)
    return out
