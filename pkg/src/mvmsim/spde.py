"""Mild-solution machinery for stochastic evolution equations.

The equation dX = (A'X + B(r, X)) dr + int F(r, u, X) M(dr, du) is solved
in mild form by Picard iteration of

    A(X)_t = S(t)'Z0 + int_0^t S(t-r)'B(r, X_r) dr
             + int_0^t int S(t-r)'F(r, u, X_r) M(dr, du)

per path on a frozen noise realization (the computable shadow of the L2
contraction argument: on a fixed grid with fixed noise the discretized
map is a deterministic contraction under the same constants).  The
semigroup is diagonal, so S(t-r)' folds into integrands exactly and the
convolutions accumulate by an exponential-integrator recursion: one
sweep over the grid multiplies the running convolution by the step decay
and adds the left-point drift, Wiener, and compensator increments, with
jumps entering at exact times through their exact remaining decay.  The
recursion reproduces the strong-integral convolution pointwise by
construction (same left-point conventions).

Iteration distance is the damped sup norm sup_t e^{-upsilon t} times the
squared level-n dual seminorm of the difference; upsilon defaults to the
smallest value (bracketing search) whose contraction constant

    C = sqrt(2 C1 + 2 C2),
    C1 = M^2 e^{2 theta T} (int_0^T sup_psi a^2 dr) (int_0^T e^{-ur} dr),
    C2 = M^2 e^{2 theta T} (int_0^T sup_psi b^2 dr)^{1/2}
                           (int_0^T e^{-2ur} dr)^{1/2},

is below one half.  Solves on a batch of paths freeze each path at its
own convergence iteration, so batched and single-path results are
bit-identical.
"""

import numpy as np

from . import strong_integral as si
from . import weak_integral as wi
from . import rng
from .noise import MvmSpec, NoiseError, simulate_path
from .space import as_vector

try:
    from scipy.integrate import quad as _quad
except ImportError:  # pragma: no cover
    _quad = None


class CoefficientError(ValueError):
    """Growth/Lipschitz violation or missing envelope data."""


class PicardError(RuntimeError):
    """Non-convergence of the fixed-point iteration; carries the trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class EscapingPathError(RuntimeError):
    """A jump left every configured localization level before T."""


class Coefficients:
    """Drift B(r, g), noise operator F(r, u, g) and per-psi envelopes.

    B(r, g) -> dual vector; g may carry a leading batch axis (library
    coefficients broadcast).  F(r, u, g) -> (d x d) matrix for a single
    state; u is None on the Wiener slot.  F_apply(r, u, g, v), when
    given, applies F to the dual vector v with batched g and is what the
    solver sweep calls (the default builds matrices row by row).

    The envelopes a(psi, r), b(psi, r) certify

        |B(r,g)[psi]|            <= a(psi,r) (1 + |g[psi]|)
        int q_u(F(r,u,g)'psi)^2 mu(du) <= b(psi,r)^2 (1 + |g[psi]|)^2

    and the same bounds with (1 + |g[psi]|) replaced by the pairing
    difference for Lipschitz continuity (b enters squared there too).
    They are certified on the scaled-basis set realizing the bounded
    index set, not on arbitrary psi.  a_sq_integral(T)/b_sq_integral(T)
    are optional closed forms of int_0^T sup_psi a^2 dr (resp. b^2).
    """

    def __init__(self, B, F, a=None, b=None, a_sq_integral=None,
                 b_sq_integral=None, F_apply=None, name=None):
        self.B = B
        self.F = F
        self.a = a
        self.b = b
        self.a_sq_integral = a_sq_integral
        self.b_sq_integral = b_sq_integral
        self._F_apply = F_apply
        self.name = name

    def apply_F(self, r, u, g, v):
        """F(r, u, g) applied to dual vector(s) v; g, v broadcast together."""
        if self._F_apply is not None:
            return self._F_apply(r, u, g, v)
        g2 = np.atleast_2d(np.asarray(g, dtype=float))
        v2 = np.broadcast_to(np.asarray(v, dtype=float), g2.shape)
        out = np.empty_like(g2)
        for i in range(g2.shape[0]):
            out[i] = si.as_matrix(self.F(r, u, g2[i])) @ v2[i]
        return out if np.asarray(g).ndim > 1 else out[0]

    def envelope_sup_sq(self, which, K_set, r):
        fn = self.a if which == "a" else self.b
        if fn is None:
            raise CoefficientError("no %s envelope configured" % which)
        return max(float(fn(psi, r)) ** 2 for psi in K_set)

    def envelope_sq_integral(self, which, T, K_set=None, tol=1e-12):
        closed = self.a_sq_integral if which == "a" else self.b_sq_integral
        if closed is not None:
            return float(closed(T))
        if K_set is None:
            raise CoefficientError(
                "need a K set to integrate the %s envelope numerically" % which)
        if _quad is None:  # pragma: no cover
            raise CoefficientError("scipy required for envelope quadrature")
        val, _ = _quad(lambda r: self.envelope_sup_sq(which, K_set, r),
                       0.0, float(T), epsabs=tol, epsrel=tol, limit=500)
        return float(val)


def noise_quadratic(coeffs, spec, r, g, psi):
    """int q_u(F(r,u,g)'psi)^2 mu(du): Wiener form plus the atom sum."""
    psi = as_vector(psi, spec.dimension)
    F0 = si.as_matrix(coeffs.F(r, None, g))
    w = F0.T @ psi
    out = float(w @ spec.Q @ w)
    for k, u in enumerate(spec.levy.atoms):
        Fu = si.as_matrix(coeffs.F(r, u, g)) @ u
        out += spec.levy.rates[k] * float(Fu @ psi) ** 2
    return out


def check_growth(coeffs, spec, K_set, times, states, tol=1e-9):
    """Largest violation of the growth envelopes over the sample grid."""
    worst = -np.inf
    for r in times:
        for g in states:
            for psi in K_set:
                gp = abs(float(np.asarray(g) @ psi))
                lhs = abs(float(np.asarray(coeffs.B(r, np.asarray(g))) @ psi))
                worst = max(worst, lhs - float(coeffs.a(psi, r)) * (1.0 + gp))
                lhs2 = noise_quadratic(coeffs, spec, r, np.asarray(g), psi)
                worst = max(worst,
                            lhs2 - float(coeffs.b(psi, r)) ** 2 * (1.0 + gp) ** 2)
    return worst


def check_lipschitz(coeffs, spec, K_set, times, state_pairs, tol=1e-9):
    """Largest violation of the Lipschitz envelopes (b enters squared)."""
    worst = -np.inf
    for r in times:
        for g1, g2 in state_pairs:
            g1 = np.asarray(g1, dtype=float)
            g2 = np.asarray(g2, dtype=float)
            for psi in K_set:
                dp = abs(float((g1 - g2) @ psi))
                lhs = abs(float(np.asarray(coeffs.B(r, g1)) @ psi)
                          - float(np.asarray(coeffs.B(r, g2)) @ psi))
                worst = max(worst, lhs - float(coeffs.a(psi, r)) * dp)
                F0d = si.as_matrix(coeffs.F(r, None, g1)) - si.as_matrix(
                    coeffs.F(r, None, g2))
                w = F0d.T @ psi
                lhs2 = float(w @ spec.Q @ w)
                for k, u in enumerate(spec.levy.atoms):
                    Fu = (si.as_matrix(coeffs.F(r, u, g1))
                          - si.as_matrix(coeffs.F(r, u, g2))) @ u
                    lhs2 += spec.levy.rates[k] * float(Fu @ psi) ** 2
                worst = max(worst, lhs2 - float(coeffs.b(psi, r)) ** 2 * dp ** 2)
    return worst


def scaled_basis(family, level):
    """The finite realization of the bounded index set: e_j / sqrt(w_j(n))."""
    return [row.copy() for row in family.orthonormal_basis(level)]


def _exp_integral(upsilon, T, m=1):
    """int_0^T e^{-m upsilon r} dr."""
    mu = m * float(upsilon)
    if mu == 0.0:
        return float(T)
    return float(-np.expm1(-mu * T) / mu)


class ContractionReport:
    """Constants of the damped-norm contraction estimate."""

    def __init__(self, T, upsilon, M, theta, a_sq_int, b_sq_int, C1, C2):
        self.T = T
        self.upsilon = upsilon
        self.M = M
        self.theta = theta
        self.a_sq_int = a_sq_int
        self.b_sq_int = b_sq_int
        self.C1 = C1
        self.C2 = C2
        self.C = float(np.sqrt(2.0 * C1 + 2.0 * C2))
        self.contracts = self.C < 1.0

    def __repr__(self):
        return ("ContractionReport(upsilon=%g, C1=%g, C2=%g, C=%g, contracts=%s)"
                % (self.upsilon, self.C1, self.C2, self.C, self.contracts))


def contraction_constants(coeffs, bound, T, upsilon, K_set=None):
    """Exact evaluation of the contraction constants at damping upsilon."""
    T = float(T)
    upsilon = float(upsilon)
    pref = bound.M ** 2 * np.exp(2.0 * bound.theta * T)
    a_int = coeffs.envelope_sq_integral("a", T, K_set)
    b_int = coeffs.envelope_sq_integral("b", T, K_set)
    C1 = pref * a_int * _exp_integral(upsilon, T, 1)
    C2 = pref * np.sqrt(b_int) * np.sqrt(_exp_integral(upsilon, T, 2))
    return ContractionReport(T, upsilon, bound.M, bound.theta, a_int, b_int,
                             C1, C2)


def pick_upsilon(coeffs, bound, T, K_set=None, target=0.5, resolution=1e-6):
    """Smallest damping (bracketing search) with contraction constant < target."""
    def C(u):
        return contraction_constants(coeffs, bound, T, u, K_set).C

    if C(0.0) < target:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(80):
        if C(hi) < target:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise CoefficientError(
            "no damping below %g makes the contraction constant < %g" % (hi, target))
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if C(mid) < target:
            hi = mid
        else:
            lo = mid
    return hi


class SolutionPath:
    """Grid-aligned states of one mild solve with solver metadata."""

    def __init__(self, grid, states, z0, upsilon, iterations, distance_trace,
                 seed=None, path_id=None):
        self.grid = np.asarray(grid, dtype=float)
        self.states = np.asarray(states, dtype=float)
        self.z0 = np.asarray(z0, dtype=float)
        self.upsilon = float(upsilon)
        self.iterations = int(iterations)
        self.distance_trace = list(distance_trace)
        self.seed = seed
        self.path_id = path_id

    @property
    def fixed_point_residual(self):
        return self.distance_trace[-1] if self.distance_trace else np.nan

    def state(self, t):
        from .noise import grid_index
        return self.states[grid_index(self.grid, t)]

    def pair(self, t, psi):
        return float(self.state(t) @ as_vector(psi, self.states.shape[1]))


def _floor_index(grid, r):
    """Largest i with grid[i] <= r (left state/time lookup for integrands)."""
    i = int(np.searchsorted(grid, r, side="right")) - 1
    return max(0, min(i, len(grid) - 2))


def _jumps_by_step(path):
    out = [[] for _ in range(path.n_steps)]
    if path.jump_times.size:
        idx = np.searchsorted(path.grid, path.jump_times, side="left") - 1
        idx = np.clip(idx, 0, path.n_steps - 1)
        for tj, kj, i in zip(path.jump_times, path.jump_atoms, idx):
            out[int(i)].append((float(tj), int(kj)))
    return out


def _mild_sweep(coeffs, semigroup, spec, z0b, grid, dWb, jump_steps, states,
                rates):
    """One application of the mild map on a batch of frozen paths.

    states (B, K+1, d) is the current iterate; z0b (B, d); dWb
    (B, K, d); jump_steps[b][i] lists (time, atom) jumps of path b in
    step i; rates are the effective (possibly masked) compensator rates.
    """
    Bn, Kp1, d = states.shape
    K = Kp1 - 1
    dt = np.diff(grid)
    step_decay = semigroup.decay(dt)            # (K, d)
    atoms = spec.levy.atoms
    out = np.empty_like(states)
    out[:, 0] = z0b
    conv = np.zeros((Bn, d))
    for i in range(K):
        r = grid[i]
        g = states[:, i]
        inc = dt[i] * np.asarray(coeffs.B(r, g), dtype=float)
        if spec.has_wiener:
            inc = inc + coeffs.apply_F(r, None, g, dWb[:, i])
        for k in range(len(atoms)):
            if rates[k]:
                inc = inc - dt[i] * rates[k] * coeffs.apply_F(r, atoms[k], g,
                                                              atoms[k])
        conv = step_decay[i] * (conv + inc)
        for b in range(Bn):
            for tj, kj in jump_steps[b][i]:
                Fu = coeffs.apply_F(r, atoms[kj], g[b], atoms[kj])
                conv[b] += semigroup.decay(grid[i + 1] - tj) * Fu
        out[:, i + 1] = semigroup.decay(grid[i + 1]) * z0b + conv
    return out


def _damped_distance(grid, delta, weights, upsilon):
    """sup_t e^{-upsilon t} ||delta_t||^2 per path; delta (B, K+1, d)."""
    sq = np.einsum("bkd,d->bk", delta ** 2, 1.0 / weights)
    return (np.exp(-upsilon * grid)[None, :] * sq).max(axis=1)


def _resolve_z0(z0, dimension, seed, path_ids):
    if callable(z0):
        return np.array([as_vector(z0(seed, b), dimension) for b in path_ids])
    z0 = as_vector(z0, dimension)
    return np.broadcast_to(z0, (len(path_ids), dimension)).copy()


def resolve_upsilon(upsilon, coeffs, semigroup, family, norm_level, T,
                    K_set=None):
    if upsilon != "auto":
        return float(upsilon)
    if coeffs.a is None or coeffs.b is None:
        raise CoefficientError("automatic damping needs envelope functions")
    if K_set is None:
        K_set = scaled_basis(family, norm_level)
    bound = semigroup.certify_bound(family, norm_level)
    return pick_upsilon(coeffs, bound, T, K_set)


def solve_mild_ensemble(coeffs, semigroup, spec, z0, grid, seed, path_ids,
                        family, tol=1e-10, max_iter=12, upsilon="auto",
                        norm_level=1, paths=None, compensate=None,
                        check_coefficients=False):
    """Picard solves on a batch of paths; returns one SolutionPath each.

    Paths are simulated from (seed, path_id) streams unless given.  Each
    path freezes at its own convergence iteration (identical to solving
    it alone); non-convergence of any path within max_iter raises
    PicardError carrying the distance trace.
    """
    grid = np.asarray(grid, dtype=float)
    d = spec.dimension
    path_ids = list(path_ids)
    if paths is None:
        paths = [simulate_path(spec, grid, seed, b) for b in path_ids]
    if check_coefficients:
        _reject_bad_coefficients(coeffs, spec, family, norm_level, grid)
    ups = resolve_upsilon(upsilon, coeffs, semigroup, family, norm_level,
                          grid[-1])
    weights = family.weights(norm_level)
    z0b = _resolve_z0(z0, d, seed, path_ids)
    dWb = np.stack([p.dW for p in paths])
    jump_steps = [_jumps_by_step(p) for p in paths]
    rates = spec.levy.rates.copy()
    if compensate is not None:
        mask = np.asarray(compensate, dtype=bool)
        rates[~mask] = 0.0

    Bn = len(path_ids)
    states = semigroup.decay(grid)[None, :, :] * z0b[:, None, :]
    active = np.ones(Bn, dtype=bool)
    iterations = np.zeros(Bn, dtype=int)
    traces = [[] for _ in range(Bn)]
    for k in range(1, int(max_iter) + 1):
        new = _mild_sweep(coeffs, semigroup, spec, z0b, grid, dWb, jump_steps,
                          states, rates)
        new[~active] = states[~active]
        dist = _damped_distance(grid, new - states, weights, ups)
        for b in range(Bn):
            if active[b]:
                traces[b].append(float(dist[b]))
                if dist[b] < tol:
                    active[b] = False
                    iterations[b] = k
        states = new
        if not active.any():
            break
    if active.any():
        bad = int(np.nonzero(active)[0][0])
        raise PicardError(
            "Picard iteration did not converge within %d sweeps for path %s "
            "(distance trace %s)" % (max_iter, path_ids[bad], traces[bad]),
            trace=traces[bad])
    return [SolutionPath(grid, states[b], z0b[b], ups, iterations[b], traces[b],
                         seed=seed, path_id=path_ids[b])
            for b in range(Bn)]


def solve_mild(coeffs, semigroup, spec, z0, grid, seed, path_id, family,
               tol=1e-10, max_iter=12, upsilon="auto", norm_level=1,
               path=None, compensate=None, check_coefficients=True):
    """Single-path mild solve; see solve_mild_ensemble."""
    sols = solve_mild_ensemble(
        coeffs, semigroup, spec, z0, grid, seed, [path_id], family, tol=tol,
        max_iter=max_iter, upsilon=upsilon, norm_level=norm_level,
        paths=None if path is None else [path], compensate=compensate,
        check_coefficients=check_coefficients)
    return sols[0]


def _reject_bad_coefficients(coeffs, spec, family, norm_level, grid):
    if coeffs.a is None or coeffs.b is None:
        return  # nothing to certify against
    K_set = scaled_basis(family, norm_level)
    times = np.linspace(grid[0], grid[-1], 5)
    gen = rng.stream(12345, 0, rng.TAG_AUX)
    states = [np.zeros(spec.dimension)] + [gen.standard_normal(spec.dimension)
                                           for _ in range(4)]
    pairs = [(states[i], states[i + 1]) for i in range(len(states) - 1)]
    v1 = check_growth(coeffs, spec, K_set, times, states)
    v2 = check_lipschitz(coeffs, spec, K_set, times, pairs)
    if max(v1, v2) > 1e-9:
        raise CoefficientError(
            "coefficients violate the sampled growth/Lipschitz envelopes "
            "(worst excess %g)" % max(v1, v2))


def picard_distance_profile(coeffs, semigroup, spec, z0, grid, seed, path_ids,
                            family, n_iters, upsilon="auto", norm_level=1,
                            compensate=None, batch=1024):
    """Ensemble-norm distances of successive Picard iterates.

    Returns dist[k] = sup_t e^{-upsilon t} E eta(X^{k+1}_t - X^k_t)^2
    estimated over the ensemble, for k = 0 .. n_iters-1; the geometric
    decay of this sequence is the contraction estimate made visible.
    """
    grid = np.asarray(grid, dtype=float)
    ups = resolve_upsilon(upsilon, coeffs, semigroup, family, norm_level,
                          grid[-1])
    weights = family.weights(norm_level)
    acc = np.zeros((int(n_iters), len(grid)))
    total = 0
    path_ids = list(path_ids)
    rates = spec.levy.rates.copy()
    if compensate is not None:
        rates[~np.asarray(compensate, dtype=bool)] = 0.0
    for start in range(0, len(path_ids), int(batch)):
        ids = path_ids[start:start + int(batch)]
        paths = [simulate_path(spec, grid, seed, b) for b in ids]
        z0b = _resolve_z0(z0, spec.dimension, seed, ids)
        dWb = np.stack([p.dW for p in paths])
        jump_steps = [_jumps_by_step(p) for p in paths]
        states = semigroup.decay(grid)[None, :, :] * z0b[:, None, :]
        for k in range(int(n_iters)):
            new = _mild_sweep(coeffs, semigroup, spec, z0b, grid, dWb,
                              jump_steps, states, rates)
            sq = np.einsum("bkd,d->bk", (new - states) ** 2, 1.0 / weights)
            acc[k] += sq.sum(axis=0)
            states = new
        total += len(ids)
    profile = (np.exp(-ups * grid)[None, :] * (acc / total)).max(axis=1)
    return profile, ups


def stochastic_convolution(F, semigroup, path, t, solution=None,
                           moment="square"):
    """int_0^t S(t-r)' F(r, u, X_r) M(dr, du) via the strong integral.

    F is an OperatorIntegrand (used as is) or a callable (r, u, g); the
    state is looked up from `solution` at the left grid point (None for
    state-free F).  The diagonal semigroup folds into the integrand
    exactly.
    """
    t = float(t)
    d = path.spec.dimension

    if isinstance(F, si.OperatorIntegrand):
        base_step = lambda r, h: F.step_matrix(r, h)
        base_slot = lambda r, h, u: F.comp_matrix(r, h, u)
        time_only = F.time_only
    else:
        def base_step(r, h):
            g = None if solution is None else solution.states[
                _floor_index(solution.grid, r)]
            return si.as_matrix(F(r, None, g), d, d)

        def base_slot(r, h, u):
            g = None if solution is None else solution.states[
                _floor_index(solution.grid, r)]
            return si.as_matrix(F(_left_time(path.grid, r), u, g), d, d)
        time_only = solution is None

    def folded(r, h, u):
        m = base_step(r, h) if u is None else base_slot(r, h, u)
        return semigroup.decay(t - r)[:, None] * m

    R = si.OperatorIntegrand(folded, d, d, moment=moment, time_only=time_only,
                             name="folded-convolution")
    return si.integrate_strong_direct(R, path, t)


def _left_time(grid, r):
    return grid[_floor_index(grid, r)]


def deterministic_convolution(B, semigroup, grid, t, solution=None):
    """Left-point quadrature of int_0^t S(t-r)'B(r, X_r) dr."""
    grid = np.asarray(grid, dtype=float)
    t = float(t)
    out = None
    for i in range(len(grid) - 1):
        if grid[i + 1] > t + 1e-12 * max(1.0, abs(t)):
            break
        g = None if solution is None else solution.states[i]
        v = np.asarray(B(grid[i], g), dtype=float)
        term = (grid[i + 1] - grid[i]) * semigroup.decay(t - grid[i]) * v
        out = term if out is None else out + term
    if out is None:
        dim = len(semigroup.spectrum)
        return np.zeros(dim)
    return out


def deterministic_convolution_exact(semigroup, b_const, t):
    """Closed form of int_0^t S(t-r)' b dr for constant b and diagonal S."""
    b = as_vector(b_const, semigroup.dimension)
    lam = semigroup.spectrum - semigroup.shift
    t = float(t)
    out = np.where(lam == 0.0, t * np.ones_like(lam), -np.expm1(-lam * t) / np.where(lam == 0.0, 1.0, lam))
    return out * b


def convolution_second_moment_bound(R, spec, family, level, bound, T):
    """Analytic bound M^2 e^{2 theta T} ||R~||^2 for sup_t E p'(conv_t)^2
    (equal seminorm levels make every inclusion factor one)."""
    return (bound.M ** 2 * np.exp(2.0 * bound.theta * float(T))
            * si.hs_norm_sq(R, spec, family, level, T))


class _ResidualIntegrand(wi.WeakIntegrand):
    """(r, u) -> F(t_left(r), u, X_left(r))' psi along a solution path."""

    def __init__(self, coeffs, solution, psi, dimension):
        super().__init__(None, dimension, moment="square", time_only=False,
                         name="residual")
        self.coeffs = coeffs
        self.solution = solution
        self.psi = np.asarray(psi, dtype=float)

    def _value(self, r, u):
        i = _floor_index(self.solution.grid, r)
        g = self.solution.states[i]
        m = si.as_matrix(self.coeffs.F(self.solution.grid[i], u, g))
        return m.T @ self.psi

    def step_value(self, r, history):
        return self._value(r, None)

    def comp_value(self, r, history, u):
        return self._value(r, u)

    def jump_value(self, r, history, u):
        return self._value(r, u)


def weak_residual(solution, coeffs, semigroup, path, psi, t, compensate=None):
    """Tested-equation defect of a solution path at time t:

        X_t[psi] - X_0[psi] - int_0^t (X_r[A psi] + B(r, X_r)[psi]) dr
                 - (weak integral of F' psi).

    Left-point quadrature for the drift, the shared site conventions for
    the noise term; small (first order in the step) for mild solutions.
    """
    psi = as_vector(psi, path.spec.dimension)
    t = float(t)
    grid = solution.grid
    Apsi = semigroup.generator(psi)
    drift = 0.0
    for i in range(len(grid) - 1):
        if grid[i + 1] > t + 1e-12 * max(1.0, abs(t)):
            break
        g = solution.states[i]
        drift += (grid[i + 1] - grid[i]) * (
            float(g @ Apsi) + float(np.asarray(coeffs.B(grid[i], g)) @ psi))
    noise = wi.integrate(_ResidualIntegrand(coeffs, solution, psi,
                                            path.spec.dimension),
                         path, t, compensate=compensate)
    from .noise import grid_index
    i_t = grid_index(grid, t)
    return (float(solution.states[i_t] @ psi) - float(solution.z0 @ psi)
            - drift - noise)


def weak_residual_vector(solution, coeffs, semigroup, path, t, compensate=None):
    """Dual vector R with weak_residual(psi) = R[psi] for every psi.

    Accumulates the drift quadrature and the noise increments once
    instead of per test function; agrees with weak_residual up to float
    associativity.
    """
    t = float(t)
    grid = solution.grid
    spec = path.spec
    d = spec.dimension
    from .noise import grid_index
    i_t = grid_index(grid, t)
    rates = spec.levy.rates.copy()
    if compensate is not None:
        rates[~np.asarray(compensate, dtype=bool)] = 0.0
    acc = np.zeros(d)
    for i in range(len(grid) - 1):
        if grid[i + 1] > t + 1e-12 * max(1.0, abs(t)):
            break
        g = solution.states[i]
        dt = grid[i + 1] - grid[i]
        acc += dt * (semigroup.generator_dual(g)
                     + np.asarray(coeffs.B(grid[i], g), dtype=float))
        if spec.has_wiener:
            acc += coeffs.apply_F(grid[i], None, g, path.dW[i])
        for k in range(spec.n_atoms):
            if rates[k]:
                acc -= dt * rates[k] * coeffs.apply_F(grid[i], spec.levy.atoms[k],
                                                      g, spec.levy.atoms[k])
    for j in path.jumps_in(0.0, t):
        tj = path.jump_times[j]
        u = spec.levy.atoms[path.jump_atoms[j]]
        i = _floor_index(grid, tj)
        acc += coeffs.apply_F(grid[i], u, solution.states[i], u)
    return solution.states[i_t] - solution.z0 - acc


class _LevyLevelCoefficients(Coefficients):
    """Level-n coefficients: drift gains the exact atomic compensation of
    the jumps in U_n \\ U_1 (those the level measure compensates but the
    original equation does not)."""

    def __init__(self, base, extra_atoms, extra_rates):
        super().__init__(None, base.F, F_apply=base._F_apply,
                         name=(base.name or "coeffs") + "+levy-drift")
        self.base = base
        self.extra_atoms = np.asarray(extra_atoms, dtype=float)
        self.extra_rates = np.asarray(extra_rates, dtype=float)
        self.B = self._drift
        sqrt_c = float(np.sqrt(self.extra_rates).sum()) if self.extra_rates.size else 0.0
        if base.a is not None and base.b is not None:
            self.a = lambda psi, r: base.a(psi, r) + sqrt_c * base.b(psi, r)
            self.b = base.b

    def _drift(self, r, g):
        out = np.asarray(self.base.B(r, g), dtype=float)
        for u, c in zip(self.extra_atoms, self.extra_rates):
            out = out + c * self.base.apply_F(r, u, g, u)
        return out


class LevySolution:
    """Per-level solves, escape times, and the patched solution."""

    def __init__(self, patched, levels, taus, path, coupling_max):
        self.patched = patched
        self.levels = levels
        self.taus = taus
        self.path = path
        self.coupling_max = coupling_max


def solve_levy(coeffs, semigroup, triplet, z0, grid, seed, path_id, n_levels,
               family, tol=1e-10, max_iter=12, upsilon="auto", norm_level=1,
               coupling_tol=1e-8):
    """Localized solves of the jump-driven equation and their patching.

    One path of the full measure is simulated; level n solves the
    equation driven by the jumps inside U_n (all compensated) with the
    drift corrected by the exact atomic integral over U_n \\ U_1.  The
    escape times tau_n are read off the jump list; the patched solution
    takes its states from the first level whose escape time has not
    passed.  Coupled levels must agree on {t <= tau_m} within
    coupling_tol (they share increments, so this is discretization-exact);
    a path jumping outside every level before T raises EscapingPathError.
    """
    return solve_levy_ensemble(
        coeffs, semigroup, triplet, z0, grid, seed, [path_id], n_levels,
        family, tol=tol, max_iter=max_iter, upsilon=upsilon,
        norm_level=norm_level, coupling_tol=coupling_tol)[0]


def solve_levy_ensemble(coeffs, semigroup, triplet, z0, grid, seed, path_ids,
                        n_levels, family, tol=1e-10, max_iter=12,
                        upsilon="auto", norm_level=1, coupling_tol=1e-8,
                        full_paths=None):
    """Localized solves on a batch of paths (one LevySolution each).

    Every level is one batched Picard solve over the whole ensemble; the
    per-path freeze makes each result identical to solving that path
    alone.
    """
    grid = np.asarray(grid, dtype=float)
    path_ids = list(path_ids)
    spec = triplet.mvm_spec()
    n_levels = int(n_levels)
    if full_paths is None:
        full_paths = [simulate_path(triplet, grid, seed, b) for b in path_ids]
    base_mask = triplet.ball_mask(1)
    if upsilon == "auto":
        # the widest level has the largest drift envelope, so its damping
        # contracts every level
        top = triplet.ball_mask(n_levels) & ~base_mask
        coeffs_top = (_LevyLevelCoefficients(coeffs, spec.levy.atoms[top],
                                             spec.levy.rates[top])
                      if top.any() else coeffs)
        upsilon = resolve_upsilon("auto", coeffs_top, semigroup, family,
                                  norm_level, grid[-1])
    level_sols = {}
    for n in range(1, n_levels + 1):
        mask = triplet.ball_mask(n)
        levy_n, _ = spec.levy.restrict(mask)
        spec_n = MvmSpec(spec.Q, levy_n, dimension=spec.dimension)
        paths_n = [p.filter_atoms(mask, spec_n) for p in full_paths]
        extra = mask & ~base_mask
        if extra.any():
            coeffs_n = _LevyLevelCoefficients(coeffs, spec.levy.atoms[extra],
                                              spec.levy.rates[extra])
        else:
            coeffs_n = coeffs
        level_sols[n] = solve_mild_ensemble(
            coeffs_n, semigroup, spec_n, z0, grid, seed, path_ids, family,
            tol=tol, max_iter=max_iter, upsilon=upsilon,
            norm_level=norm_level, paths=paths_n, check_coefficients=False)

    T = float(grid[-1])
    out = []
    for i, b in enumerate(path_ids):
        taus = {n: triplet.escape_time(full_paths[i], n)
                for n in range(1, n_levels + 1)}
        if taus[n_levels] < T:
            raise EscapingPathError(
                "path %s jumps outside every localization level at t=%g"
                % (b, taus[n_levels]))
        levels = {n: level_sols[n][i] for n in range(1, n_levels + 1)}
        coupling_max = 0.0
        for m in range(1, n_levels + 1):
            for n in range(m + 1, n_levels + 1):
                overlap = grid <= taus[m]
                diff = np.abs(levels[n].states[overlap]
                              - levels[m].states[overlap])
                if diff.size:
                    coupling_max = max(coupling_max, float(diff.max()))
        if coupling_max > coupling_tol:
            raise PicardError(
                "coupled level solves disagree by %g on the overlap for "
                "path %s" % (coupling_max, b))
        # serving level at t: the narrowest whose escape time has not passed
        serve = np.full(len(grid), n_levels, dtype=int)
        for n in range(n_levels, 0, -1):
            serve[grid <= taus[n]] = n
        stacked = np.stack([levels[n].states for n in range(1, n_levels + 1)])
        states = stacked[serve - 1, np.arange(len(grid))]
        patched = SolutionPath(grid, states, levels[1].z0, levels[1].upsilon,
                               max(s.iterations for s in levels.values()),
                               levels[n_levels].distance_trace, seed=seed,
                               path_id=b)
        out.append(LevySolution(patched, levels, taus, full_paths[i],
                                coupling_max))
    return out


def weak_residual_levy(levy_solution, coeffs, semigroup, triplet, psi, t):
    """Weak residual of the patched solution against the full equation:
    jumps outside U_1 enter raw (no compensator)."""
    return weak_residual(levy_solution.patched, coeffs, semigroup,
                         levy_solution.path, psi, t,
                         compensate=triplet.ball_mask(1))
