"""Operator-valued stochastic integrals taking values in the dual space.

An operator integrand maps (time, history, noise slot) to a matrix R
sending dual vectors to dual vectors; its transpose acts on test
functions.  The strong integral is built coordinatewise from weak
integrals of the rows (pairing with the canonical basis), which is also
the compatibility statement

    I_t(R)[psi] = weak integral of (r, u) -> R(r, u)' psi;

a second, structurally independent accumulation multiplies the matrices
into the increments directly.  Both routes share the weak module's site
conventions (left-point Wiener/compensator, exact jump times).

Against the measure mu = delta_0 + nu the Hilbert-Schmidt norm of R read
into the level-p dual seminorm has the exact per-time rate

    tr(R Q R' W_p^{-1}) + sum_k c_k p'(R u_k)^2,   W_p = diag(w_j(p)),

which integrates to the second moment of p'(I_t(R)) (the strong
isometry); factorize() picks the smallest level whose integrated rate
fits a budget.
"""

import numpy as np

from . import weak_integral as wi
from .space import as_vector

try:
    from scipy.integrate import quad as _quad
except ImportError:  # pragma: no cover
    _quad = None


class OperatorError(ValueError):
    """Malformed operator integrand or level/budget violation."""


def as_matrix(x, out_dim=None, in_dim=None):
    m = np.asarray(x, dtype=float)
    if m.ndim != 2:
        raise OperatorError("operator value must be a matrix, got shape %s"
                            % (m.shape,))
    if out_dim is not None and m.shape[0] != int(out_dim):
        raise OperatorError("expected %d rows, got %d" % (out_dim, m.shape[0]))
    if in_dim is not None and m.shape[1] != int(in_dim):
        raise OperatorError("expected %d columns, got %d" % (in_dim, m.shape[1]))
    if not np.all(np.isfinite(m)):
        raise OperatorError("non-finite operator entries")
    return m


class OperatorIntegrand:
    """Predictable matrix-valued integrand (r, history, u) -> (out x in)."""

    def __init__(self, evaluator, out_dim, in_dim, moment="square",
                 time_only=False, name=None):
        if moment not in ("square", "local"):
            raise OperatorError("moment must be 'square' or 'local'")
        self.evaluator = evaluator
        self.out_dim = int(out_dim)
        self.in_dim = int(in_dim)
        self.moment = moment
        self.time_only = bool(time_only)
        self.name = name
        self._rows = None

    def step_matrix(self, r, history):
        return as_matrix(self.evaluator(r, history, None), self.out_dim, self.in_dim)

    def comp_matrix(self, r, history, u):
        return as_matrix(self.evaluator(r, history, u), self.out_dim, self.in_dim)

    def jump_matrix(self, r, history, u):
        return as_matrix(self.evaluator(r, history, u), self.out_dim, self.in_dim)

    def rows(self):
        """Weak integrands r -> row_i of R (the pairings R' e_i), cached so
        per-grid coefficient tables survive across paths."""
        if self._rows is None:
            self._rows = [_RowIntegrand(self, i) for i in range(self.out_dim)]
        return self._rows

    def compose(self, S, name=None):
        """Pushforward S . R by a fixed matrix S acting on the dual."""
        S = as_matrix(S, in_dim=self.out_dim)
        return _ComposedIntegrand(self, S, name=name)


class _RowIntegrand(wi.WeakIntegrand):
    def __init__(self, op, i):
        super().__init__(None, op.in_dim, moment=op.moment,
                         time_only=op.time_only,
                         name=None if op.name is None else "%s[%d]" % (op.name, i))
        self.op = op
        self.i = int(i)

    def step_value(self, r, history):
        return self.op.step_matrix(r, history)[self.i]

    def comp_value(self, r, history, u):
        return self.op.comp_matrix(r, history, u)[self.i]

    def jump_value(self, r, history, u):
        return self.op.jump_matrix(r, history, u)[self.i]


class _ComposedIntegrand(OperatorIntegrand):
    def __init__(self, op, S, name=None):
        super().__init__(None, S.shape[0], op.in_dim, moment=op.moment,
                         time_only=op.time_only, name=name)
        self.base = op
        self.S = S

    def step_matrix(self, r, history):
        return self.S @ self.base.step_matrix(r, history)

    def comp_matrix(self, r, history, u):
        return self.S @ self.base.comp_matrix(r, history, u)

    def jump_matrix(self, r, history, u):
        return self.S @ self.base.jump_matrix(r, history, u)


def integrate_strong(R, path, t, stop=None, window=None, compensate=None):
    """Strong integral as the vector of row-wise weak integrals."""
    return np.array([wi.integrate(row, path, t, stop=stop, window=window,
                                  compensate=compensate)
                     for row in R.rows()])


def integrate_strong_direct(R, path, t, stop=None, window=None, compensate=None):
    """Independent accumulation route: matrices applied to increments.

    Same conventions as the weak route (left-point Wiener/compensator,
    exact jump times, structural stopping/window), but accumulated as
    matrix-vector products rather than row pairings; used to cross-check
    integrate_strong.
    """
    if R.moment == "local" and stop is None:
        raise wi.IntegrandError(
            "integrand is only locally square; integrate through a stopping rule")
    spec = path.spec
    t = float(t)
    hi = t if stop is None else min(t, float(stop))
    lo = None
    if window is not None:
        s0, t0 = float(window[0]), float(window[1])
        event = window[2] if len(window) > 2 else None
        wi.grid_index(path.grid, s0, "window start")
        if event is not None:
            if not event(wi.PathHistory(path, s0, include_boundary_jumps=True)):
                return np.zeros(R.out_dim)
        lo = s0
        hi = min(hi, t0)

    rates = spec.levy.rates.copy()
    if compensate is not None:
        mask = np.asarray(compensate, dtype=bool)
        rates[~mask] = 0.0
    atoms = spec.levy.atoms
    out = np.zeros(R.out_dim)
    left = path.grid[:-1]
    dt = np.diff(path.grid)
    for i, r in enumerate(left):
        if path.grid[i + 1] > hi + 1e-12 * max(1.0, abs(hi)):
            continue
        if lo is not None and r < lo - 1e-12 * max(1.0, abs(lo)):
            continue
        hist = None if R.time_only else wi.PathHistory(path, r, True)
        if spec.has_wiener:
            out += R.step_matrix(r, hist) @ path.dW[i]
        for k, u in enumerate(atoms):
            if rates[k]:
                out -= dt[i] * rates[k] * (R.comp_matrix(r, hist, u) @ u)
    for tj, kj in zip(path.jump_times, path.jump_atoms):
        if tj > hi or (lo is not None and tj <= lo):
            continue
        hist = None if R.time_only else wi.PathHistory(path, tj, False)
        u = atoms[kj]
        out += R.jump_matrix(tj, hist, u) @ u
    return out


def hs_norm_sq_rate(R_matrix, spec, family, level):
    """Per-time Hilbert-Schmidt rate of a fixed matrix at a dual level:
    tr(R Q R' W^{-1}) + sum_k c_k p'(R u_k)^2."""
    R_matrix = as_matrix(R_matrix)
    w = family.weights(level)
    out = float(np.einsum("ij,jk,ik,i->", R_matrix, spec.Q, R_matrix, 1.0 / w))
    for k, u in enumerate(spec.levy.atoms):
        out += spec.levy.rates[k] * family.dual_seminorm(level, R_matrix @ u) ** 2
    return out


def hs_norm_sq(R, spec, family, level, T, tol=1e-12):
    """Integrated Hilbert-Schmidt norm int_0^T of the per-time rate, for a
    deterministic (time_only) integrand, by adaptive quadrature.

    This is the strong-isometry oracle: it equals E p'(I_T(R))^2.
    """
    if _quad is None:  # pragma: no cover
        raise OperatorError("scipy is required for the quadrature oracle")
    if not R.time_only:
        raise OperatorError("quadrature norm needs a time_only integrand")
    w = family.weights(level)

    def rate(r):
        out = 0.0
        if spec.has_wiener:
            m = R.step_matrix(r, None)
            out += float(np.einsum("ij,jk,ik,i->", m, spec.Q, m, 1.0 / w))
        for k, u in enumerate(spec.levy.atoms):
            out += spec.levy.rates[k] * family.dual_seminorm(
                level, R.comp_matrix(r, None, u) @ u) ** 2
        return out

    total, _ = _quad(rate, 0.0, float(T), epsabs=tol, epsrel=tol, limit=500)
    return float(total)


class HsFactorization:
    """Level certificate: the integrand read into the level-p dual norm with
    finite integrated Hilbert-Schmidt norm within the budget."""

    def __init__(self, integrand, level, norm_sq, budget=None):
        self.integrand = integrand
        self.level = int(level)
        self.norm_sq = float(norm_sq)
        self.budget = budget

    def __repr__(self):
        return "HsFactorization(level=%d, norm_sq=%g)" % (self.level, self.norm_sq)


def factorize(R, spec, family, T, budget=None, max_level=16):
    """Smallest dual level whose integrated Hilbert-Schmidt norm fits the budget.

    Dual seminorms decrease in the level, so the norm is nonincreasing;
    budget=None accepts the first finite value (level 0 in the
    truncation).  Raises OperatorError when no level up to max_level
    fits.
    """
    for level in range(int(max_level) + 1):
        nrm = hs_norm_sq(R, spec, family, level, T)
        if np.isfinite(nrm) and (budget is None or nrm <= float(budget)):
            return HsFactorization(R, level, nrm, budget)
    raise OperatorError("no dual level up to %d meets the budget %r"
                        % (max_level, budget))


def pushforward_pair(R, S, path, t):
    """(lhs, rhs) of I_t(S . R) = S I_t(R) for a fixed matrix S."""
    lhs = integrate_strong(R.compose(S), path, t)
    rhs = as_matrix(S, in_dim=R.out_dim) @ integrate_strong(R, path, t)
    return lhs, rhs


def weak_strong_pair(R, psi, path, t, stop=None):
    """(lhs, rhs) of I_t(R)[psi] = weak integral of (r, u) -> R(r, u)' psi.

    The right side goes through an independently assembled weak
    integrand (the transpose pairing), not the cached rows.
    """
    psi = as_vector(psi, R.out_dim)
    lhs = float(integrate_strong(R, path, t, stop=stop) @ psi)

    class _Paired(wi.WeakIntegrand):
        def __init__(self):
            super().__init__(None, R.in_dim, moment=R.moment,
                             time_only=R.time_only)

        def step_value(self, r, history):
            return R.step_matrix(r, history).T @ psi

        def comp_value(self, r, history, u):
            return R.comp_matrix(r, history, u).T @ psi

        def jump_value(self, r, history, u):
            return R.jump_matrix(r, history, u).T @ psi

    rhs = wi.integrate(_Paired(), path, t, stop=stop)
    return lhs, rhs


def stopped_strong_pair(R, path, sigma, t):
    """(lhs, rhs) of I_t(1_{[0, sigma]} R) = I_{t and sigma}(R)."""
    lhs = integrate_strong(R, path, t, stop=sigma)
    rhs = integrate_strong(R, path, min(float(t), float(sigma)))
    return lhs, rhs


def restricted_strong_pair(R, path, s0, t0, event, t):
    """(lhs, rhs) of the subinterval restriction for strong integrals."""
    lhs = integrate_strong(R, path, t, window=(s0, t0, event))
    ind = 1.0
    if event is not None:
        ind = float(event(wi.PathHistory(path, s0, include_boundary_jumps=True)))
    rhs = ind * (integrate_strong(R, path, min(float(t), float(t0)))
                 - integrate_strong(R, path, min(float(t), float(s0))))
    return lhs, rhs
