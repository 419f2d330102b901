"""Weak stochastic integrals against simulated measure paths.

An integrand maps (time, path history, noise slot) to a test-function
vector; the slot is None for the Wiener part and an atom vector for the
jump part.  Integration is predictable by construction:

  * the Wiener part and the jump compensator are accumulated by
    left-point quadrature on the grid (the evaluator is called at the
    left endpoint and its value used on the step),
  * jumps contribute u[X(t*, u)] at their exact times, with the history
    truncated strictly before t* so the integrand cannot see the jump it
    is being paired with.

One path-wise convention defines the integral at an arbitrary time t:
full grid steps with right endpoint <= t plus jumps at times <= t.
Stopping times and (s0, t0] windows are applied structurally (which
steps and jumps are active), so the stopped and restricted integral
identities hold to machine precision even when the stopping time is a
jump time.  Histories are truncated views of the path; an evaluator
that reads past its cutoff raises, which is how anticipating integrands
are rejected.
"""

import numpy as np

from .noise import GridError, NoiseError, RingSet, grid_index, simulate_sum_path
from .space import as_vector

try:
    from scipy.integrate import quad as _quad
except ImportError:  # pragma: no cover
    _quad = None


class IntegrandError(ValueError):
    """Anticipation, moment-class misuse, or malformed integrand structure."""


class PathHistory:
    """Read-only view of a noise path up to a cutoff time.

    Wiener values are available at grid times <= cutoff; the jump list
    is truncated at the cutoff (strictly before it when
    include_boundary_jumps is False, which is how the integrand is kept
    from seeing the jump it is evaluated against).  Queries past the
    cutoff raise IntegrandError.
    """

    def __init__(self, path, cutoff, include_boundary_jumps=True):
        self.path = path
        self.cutoff = float(cutoff)
        self.include_boundary_jumps = bool(include_boundary_jumps)

    @property
    def time(self):
        return self.cutoff

    def wiener(self, t):
        if t > self.cutoff + 1e-12:
            raise IntegrandError(
                "anticipating evaluator: asked for W at %g with history up to %g"
                % (t, self.cutoff))
        return self.path.wiener(t)

    def jumps(self):
        """(times, atom indices) of the jumps visible at the cutoff."""
        times = self.path.jump_times
        if self.include_boundary_jumps:
            mask = times <= self.cutoff
        else:
            mask = times < self.cutoff
        return times[mask], self.path.jump_atoms[mask]


class WeakIntegrand:
    """Predictable integrand (r, history, u) -> test-function vector.

    u is None on the Wiener slot and an atom vector on the jump slot.
    moment "square" declares a finite second-moment norm; "local"
    integrands may only be integrated through a stopping rule.  Setting
    time_only=True promises the evaluator ignores the history, which
    lets ensembles precompute per-grid coefficient tables once.

    Site conventions (overridable by structured subclasses): step_value
    is the value used on the step to the right of r, jump_value the
    value at the exact jump time r.
    """

    def __init__(self, evaluator, dimension, moment="square", time_only=False,
                 name=None):
        if moment not in ("square", "local"):
            raise IntegrandError("moment must be 'square' or 'local'")
        self.evaluator = evaluator
        self.dimension = int(dimension)
        self.moment = moment
        self.time_only = bool(time_only)
        self.name = name
        self._tables = {}

    def step_value(self, r, history):
        return as_vector(self.evaluator(r, history, None), self.dimension)

    def comp_value(self, r, history, u):
        return as_vector(self.evaluator(r, history, u), self.dimension)

    def jump_value(self, r, history, u):
        return as_vector(self.evaluator(r, history, u), self.dimension)

    def tables(self, path):
        """Cached per-grid tables (Wiener coefficients, compensator pairings)
        for time_only integrands."""
        if not self.time_only:
            raise IntegrandError("coefficient tables need a time_only integrand")
        atoms = path.spec.levy.atoms
        key = (path.grid.tobytes(), atoms.tobytes())
        if key not in self._tables:
            left = path.grid[:-1]
            C = np.array([self.step_value(r, None) for r in left])
            J = np.zeros((len(left), len(atoms)))
            for k, u in enumerate(atoms):
                J[:, k] = [u @ self.comp_value(r, None, u) for r in left]
            self._tables[key] = (C, J)
        return self._tables[key]


def _wiener_norm_rate(X, spec, r):
    v = X.step_value(r, None)
    return float(v @ spec.Q @ v)


def _jump_norm_rate(X, spec, r):
    out = 0.0
    for k, u in enumerate(spec.levy.atoms):
        out += spec.levy.rates[k] * float(u @ X.comp_value(r, None, u)) ** 2
    return out


def norm_sq_quadrature(X, spec, T, tol=1e-12):
    """Second-moment norm ||X||^2 = int_0^T int q_u(X)^2 mu(du) dr for a
    deterministic (time_only) integrand, by adaptive quadrature."""
    if _quad is None:  # pragma: no cover
        raise IntegrandError("scipy is required for the quadrature oracle")
    if not X.time_only:
        raise IntegrandError("quadrature norm needs a time_only integrand")
    total, _ = _quad(lambda r: _wiener_norm_rate(X, spec, r)
                     + _jump_norm_rate(X, spec, r),
                     0.0, float(T), epsabs=tol, epsrel=tol, limit=500)
    return float(total)


def _contributions(X, path, compensate=None):
    """Per-site contributions of the integral against one path.

    Returns (wiener (K,), comp (K,), jump times (J,), jump values (J,)):
    the integral at time t is the sum of wiener - comp over steps with
    right endpoint <= t plus jump values at times <= t.  `compensate`
    masks which atoms are compensated (None = all).
    """
    spec = path.spec
    grid = path.grid
    left = grid[:-1]
    dt = np.diff(grid)
    K = len(left)
    atoms = spec.levy.atoms
    rates = spec.levy.rates.copy()
    if compensate is not None:
        mask = np.asarray(compensate, dtype=bool)
        if mask.shape != (spec.n_atoms,):
            raise IntegrandError("compensate mask must have one entry per atom")
        rates[~mask] = 0.0

    if X.time_only:
        C, J = X.tables(path)
        wiener = np.einsum("kd,kd->k", C, path.dW) if spec.has_wiener else np.zeros(K)
        comp = dt * (J @ rates) if len(atoms) else np.zeros(K)
    else:
        wiener = np.zeros(K)
        comp = np.zeros(K)
        for i, r in enumerate(left):
            hist = PathHistory(path, r, include_boundary_jumps=True)
            if spec.has_wiener:
                wiener[i] = X.step_value(r, hist) @ path.dW[i]
            if len(atoms):
                acc = 0.0
                for k, u in enumerate(atoms):
                    if rates[k]:
                        acc += rates[k] * float(u @ X.comp_value(r, hist, u))
                comp[i] = dt[i] * acc

    jt = path.jump_times
    jv = np.zeros(len(jt))
    for j, (tj, kj) in enumerate(zip(jt, path.jump_atoms)):
        hist = None if X.time_only else PathHistory(
            path, tj, include_boundary_jumps=False)
        u = atoms[kj]
        jv[j] = float(u @ X.jump_value(tj, hist, u))
    return wiener, comp, jt, jv


def integrate(X, path, t, stop=None, window=None, compensate=None):
    """Weak integral of X against the path up to time t.

    stop=sigma restricts to [0, sigma] (full steps with right endpoint
    <= sigma, jumps at times <= sigma); window=(s0, t0) or
    (s0, t0, event) restricts to (s0, t0] with s0 a grid point, scaled
    by the event's indicator evaluated on the history at s0.
    compensate is an optional boolean mask naming which atoms'
    compensators are subtracted (raw Poisson parts use all-False).
    """
    if X.moment == "local" and stop is None:
        raise IntegrandError(
            "integrand is only locally square; integrate through a stopping rule")
    t = float(t)
    hi = t if stop is None else min(t, float(stop))
    lo = None
    if window is not None:
        s0, t0 = float(window[0]), float(window[1])
        event = window[2] if len(window) > 2 else None
        grid_index(path.grid, s0, "window start")  # must be grid-aligned
        if event is not None:
            if not event(PathHistory(path, s0, include_boundary_jumps=True)):
                return 0.0
        lo = s0
        hi = min(hi, t0)

    wiener, comp, jt, jv = _contributions(X, path, compensate)
    right = path.grid[1:]
    steps = right <= hi + 1e-12 * max(1.0, abs(hi))
    if lo is not None:
        steps &= path.grid[:-1] >= lo - 1e-12 * max(1.0, abs(lo))
    jumps = jt <= hi
    if lo is not None:
        jumps &= jt > lo
    return float(wiener[steps].sum() - comp[steps].sum() + jv[jumps].sum())


def running_values(X, path, compensate=None):
    """Integral values at every grid point and jump time, in time order.

    Returns (times, values) with the same conventions as integrate();
    used for supremum statistics and continuity moduli.
    """
    wiener, comp, jt, jv = _contributions(X, path, compensate)
    times = np.concatenate([path.grid[1:], jt])
    incs = np.concatenate([wiener - comp, jv])
    order = np.argsort(times, kind="stable")
    return times[order], np.cumsum(incs[order])


def integrate_localized(X, path, t, stopping_rule, max_level=64):
    """Integral of a locally square integrand through a stopping rule.

    stopping_rule(path, n) must return stopping times increasing to
    infinity in n; the value at t is the stopped integral at the first
    level whose stopping time has not been passed, which is consistent
    across all later levels on {t <= tau_n}.
    """
    t = float(t)
    prev = -np.inf
    for n in range(1, int(max_level) + 1):
        tau = float(stopping_rule(path, n))
        if tau < prev - 1e-12:
            raise IntegrandError("stopping rule is not increasing at level %d" % n)
        prev = tau
        if tau >= t:
            return integrate(X, path, t, stop=tau)
    raise IntegrandError(
        "stopping rule did not reach t=%g within %d levels" % (t, max_level))


class Event:
    """History predicate with an optionally known probability (for oracles)."""

    def __init__(self, fn, prob=None, name=None):
        self.fn = fn
        self.prob = prob
        self.name = name

    def __call__(self, history):
        return bool(self.fn(history))


OMEGA = Event(lambda history: True, prob=1.0, name="omega")


class SimpleTerm:
    """One block 1_{(s,t]} 1_event 1_ring phi of a simple integrand."""

    def __init__(self, s, t, ring, phi, event=OMEGA):
        self.s = float(s)
        self.t = float(t)
        if not self.s < self.t:
            raise IntegrandError("need s < t in a simple term")
        if not isinstance(ring, RingSet):
            raise IntegrandError("ring must be a RingSet")
        self.ring = ring
        self.phi = as_vector(phi)
        self.event = event


class SimpleIntegrand:
    """Finite sum of (interval x event x ring set x test function) blocks.

    integrate_simple evaluates it exactly through point evaluations of
    the measure; norm_sq gives the closed-form second-moment norm, which
    requires the blocks' (interval x ring) supports to be pairwise
    disjoint and every event probability to be known.
    """

    def __init__(self, terms, dimension):
        self.terms = list(terms)
        self.dimension = int(dimension)
        for tm in self.terms:
            if tm.phi.shape[0] != self.dimension:
                raise IntegrandError("term dimension mismatch")

    def norm_sq(self, spec, T=None):
        for i, a in enumerate(self.terms):
            if a.event.prob is None:
                raise IntegrandError("term %d has no known event probability" % i)
            for b in self.terms[i + 1:]:
                if a.s < b.t and b.s < a.t and not a.ring.is_disjoint(b.ring):
                    raise IntegrandError(
                        "overlapping non-normalized terms: intervals and ring "
                        "sets both intersect")
        out = 0.0
        for tm in self.terms:
            hi = tm.t if T is None else min(tm.t, float(T))
            if hi <= tm.s:
                continue
            out += tm.event.prob * (hi - tm.s) * spec.mu_quadratic(tm.phi, tm.ring)
        return float(out)

    def as_weak(self, spec, moment="square"):
        """Weak-integrand view against the given measure spec (the spec's
        atom table resolves ring membership on the jump slot)."""
        return _SimpleAsWeak(self, spec, moment)


class _SimpleAsWeak(WeakIntegrand):
    """Weak-integrand view of a simple integrand with exact site conventions:
    step and compensator sites take the right limit (active iff s <= r < t),
    jump sites the exact time (active iff s < r <= t)."""

    def __init__(self, simple, spec, moment="square"):
        super().__init__(None, simple.dimension, moment=moment,
                         time_only=all(tm.event is OMEGA for tm in simple.terms),
                         name="simple")
        self.simple = simple
        self.spec = spec

    def _atom_index(self, u):
        hits = np.nonzero(np.all(self.spec.levy.atoms == np.asarray(u), axis=1))[0]
        if hits.size == 0:
            raise IntegrandError("jump vector is not an atom of the measure")
        return int(hits[0])

    def _sum(self, r, history, u, right_limit):
        out = np.zeros(self.dimension)
        kj = self._atom_index(u) if u is not None else None
        for tm in self.simple.terms:
            active = (tm.s <= r < tm.t) if right_limit else (tm.s < r <= tm.t)
            if not active:
                continue
            if u is None:
                if not tm.ring.include_wiener:
                    continue
            elif kj not in tm.ring.atoms:
                continue
            if tm.event is not OMEGA:
                if history is None:
                    raise IntegrandError("event term evaluated without a history")
                if not tm.event(PathHistory(history.path, tm.s,
                                            include_boundary_jumps=True)):
                    continue
            out += tm.phi
        return out

    def step_value(self, r, history):
        return self._sum(r, history, None, right_limit=True)

    def comp_value(self, r, history, u):
        return self._sum(r, history, u, right_limit=True)

    def jump_value(self, r, history, u):
        return self._sum(r, history, u, right_limit=False)


def integrate_simple(X, path, t):
    """Exact integral of a simple integrand via point evaluations of the measure.

    Interval endpoints must be grid points; events are evaluated on the
    history at each term's left endpoint.
    """
    from .noise import mvm_evaluate
    t = float(t)
    out = 0.0
    for tm in X.terms:
        s_eff, t_eff = min(tm.s, t), min(tm.t, t)
        if t_eff <= s_eff:
            continue
        if tm.event is not OMEGA:
            if not tm.event(PathHistory(path, tm.s, include_boundary_jumps=True)):
                continue
        out += mvm_evaluate(path, s_eff, t_eff, tm.ring, tm.phi)
    return out


def stopped_integral_identity(X, path, sigma, t, compensate=None):
    """(lhs, rhs) of I_t(1_{[0, sigma]} X) = I_{t and sigma}(X)."""
    lhs = integrate(X, path, t, stop=sigma, compensate=compensate)
    rhs = integrate(X, path, min(float(t), float(sigma)), compensate=compensate)
    return lhs, rhs


def subinterval_restriction(X, path, s0, t0, event, t, compensate=None):
    """(lhs, rhs) of I_t(1_{(s0,t0] x F} X) = 1_F (I_{t and t0}(X) - I_{t and s0}(X))."""
    lhs = integrate(X, path, t, window=(s0, t0, event), compensate=compensate)
    ind = 1.0
    if event is not None:
        ind = float(event(PathHistory(path, s0, include_boundary_jumps=True)))
    rhs = ind * (integrate(X, path, min(float(t), float(t0)), compensate=compensate)
                 - integrate(X, path, min(float(t), float(s0)), compensate=compensate))
    return lhs, rhs


def sum_decomposition(X, spec_a, spec_b, grid, seed, path_id, t):
    """(lhs, rhs) of the integral against an independent sum of measures:
    lhs integrates against the coupled sum path, rhs adds the component
    integrals."""
    pa, pb, psum = simulate_sum_path(spec_a, spec_b, grid, seed, path_id)
    lhs = integrate(X, psum, t)
    rhs = integrate(X, pa, t) + integrate(X, pb, t)
    return lhs, rhs


def fubini_pair(Xs, weights, path, t, compensate=None):
    """(lhs, rhs) of the finite interchange: integrating the weighted
    combination versus combining the individual integrals."""
    weights = [float(w) for w in weights]
    if len(weights) != len(Xs):
        raise IntegrandError("need one weight per integrand")
    dim = Xs[0].dimension
    combined = _CombinedIntegrand(Xs, weights, dim)
    lhs = integrate(combined, path, t, compensate=compensate)
    rhs = sum(w * integrate(X, path, t, compensate=compensate)
              for w, X in zip(weights, Xs))
    return lhs, rhs


class _CombinedIntegrand(WeakIntegrand):
    def __init__(self, Xs, weights, dimension):
        super().__init__(None, dimension, moment="square",
                         time_only=all(X.time_only for X in Xs), name="combined")
        self.Xs = list(Xs)
        self.weights = list(weights)

    def step_value(self, r, history):
        return sum(w * X.step_value(r, history)
                   for w, X in zip(self.weights, self.Xs))

    def comp_value(self, r, history, u):
        return sum(w * X.comp_value(r, history, u)
                   for w, X in zip(self.weights, self.Xs))

    def jump_value(self, r, history, u):
        return sum(w * X.jump_value(r, history, u)
                   for w, X in zip(self.weights, self.Xs))
