"""Finite weighted-sequence model of a nuclear test-function space.

Test functions and dual vectors are length-d coefficient arrays in the
canonical basis e_0..e_{d-1}.  The topology data survives the truncation
as an explicit increasing family of diagonal Hilbertian seminorms

    p_n(phi)^2   = sum_j w_j(n) phi_j^2,        w_j(n) = (1+j)^(2n),
    p_n'(f)^2    = sum_j f_j^2 / w_j(n),

with the canonical pairing f[phi] = sum_j f_j phi_j.  The inclusion of
the level-n ball into the level-(n+1) ball has the finite
Hilbert-Schmidt norm (sum_j w_j(n)/w_j(n+1))^(1/2); with the default
weights this is the truncated witness of sum_j (1+j)^(-2) < inf, which
is what the nuclearity of the full space degenerates to here.

Jump covariance seminorms q_u live in JumpSeminormFamily: the Wiener
slot (u=None) carries a fixed quadratic form Q, a jump atom u carries
phi -> |f u[phi]|.
"""

import numpy as np


class SpaceError(ValueError):
    """Structural violation: wrong shape, non-finite entries, bad weights."""


def as_vector(x, dim=None):
    """Validate and return a coefficient vector as a float array.

    Raises SpaceError unless x is one-dimensional with finite entries
    (and of length dim when dim is given).
    """
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise SpaceError("coefficient vector must be one-dimensional, got shape %s"
                         % (v.shape,))
    if dim is not None and v.shape[0] != int(dim):
        raise SpaceError("expected length %d, got %d" % (dim, v.shape[0]))
    if not np.all(np.isfinite(v)):
        raise SpaceError("non-finite coefficient entries")
    return v


def pairing(f, phi):
    """Canonical pairing f[phi] = sum_j f_j phi_j."""
    f = as_vector(f)
    phi = as_vector(phi, f.shape[0])
    return float(f @ phi)


def polynomial_weights(n, j):
    """Default weight rule w_j(n) = (1+j)^(2n)."""
    return (1.0 + j) ** (2 * n)


class SeminormFamily:
    """Increasing family of diagonal Hilbertian seminorms on R^d.

    weight_rule(n, j) must return positive weights, nondecreasing in the
    level n for every coordinate j; levels are validated lazily as they
    are first used.  The default rule is (1+j)^(2n), so level 0 is the
    Euclidean norm.
    """

    def __init__(self, dimension, weight_rule=polynomial_weights):
        self.dimension = int(dimension)
        if self.dimension < 1:
            raise SpaceError("dimension must be >= 1")
        self.weight_rule = weight_rule
        self._weights = {}

    def weights(self, n):
        n = int(n)
        if n < 0:
            raise SpaceError("seminorm level must be >= 0")
        if n not in self._weights:
            j = np.arange(self.dimension)
            w = np.asarray(self.weight_rule(n, j), dtype=float)
            if w.shape != (self.dimension,) or not np.all(w > 0) or not np.all(np.isfinite(w)):
                raise SpaceError("weight rule must give finite positive weights")
            # family must be increasing in the level, coordinatewise
            for m, wm in self._weights.items():
                if m < n and np.any(wm > w):
                    raise SpaceError("weights not nondecreasing between levels %d and %d" % (m, n))
                if m > n and np.any(w > wm):
                    raise SpaceError("weights not nondecreasing between levels %d and %d" % (n, m))
            self._weights[n] = w
        return self._weights[n]

    def seminorm(self, n, phi):
        """p_n(phi) = (sum_j w_j(n) phi_j^2)^(1/2)."""
        phi = as_vector(phi, self.dimension)
        return float(np.sqrt(np.sum(self.weights(n) * phi ** 2)))

    def dual_seminorm(self, n, f):
        """p_n'(f) = (sum_j f_j^2 / w_j(n))^(1/2), the dual-ball norm."""
        f = as_vector(f, self.dimension)
        return float(np.sqrt(np.sum(f ** 2 / self.weights(n))))

    def hs_embedding_norm(self, n):
        """Hilbert-Schmidt norm of the level-n into level-(n+1) inclusion."""
        return float(np.sqrt(np.sum(self.weights(n) / self.weights(n + 1))))

    def inclusion_norm(self, p, q):
        """Operator norm of the level-q into level-p inclusion:
        max_j sqrt(w_j(p)/w_j(q)); equals one at p == q, <= one for p <= q."""
        return float(np.sqrt(np.max(self.weights(p) / self.weights(q))))

    def orthonormal_basis(self, n):
        """Rows are the p_n-orthonormal basis e_j / sqrt(w_j(n))."""
        return np.diag(1.0 / np.sqrt(self.weights(n)))

    def gram(self, n):
        """Diagonal Gram matrix of p_n (weights on the diagonal)."""
        return np.diag(self.weights(n))


class JumpSeminormFamily:
    """Covariance seminorms q_u of a Wiener + atomic-jump noise model.

    The Wiener slot u=None carries the quadratic form Q (d x d positive
    semidefinite); a jump vector u carries phi -> |u[phi]|.  Time plays
    no role in this model so the seminorms are indexed by u alone.
    """

    def __init__(self, Q, dimension=None):
        if Q is None:
            if dimension is None:
                raise SpaceError("need Q or an explicit dimension")
            Q = np.zeros((int(dimension), int(dimension)))
        Q = np.asarray(Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise SpaceError("Q must be square, got shape %s" % (Q.shape,))
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise SpaceError("Q must be symmetric")
        eigvals = np.linalg.eigvalsh(Q)
        if eigvals.min(initial=0.0) < -1e-10 * max(1.0, abs(eigvals).max(initial=1.0)):
            raise SpaceError("Q must be positive semidefinite, min eigenvalue %g"
                             % eigvals.min())
        self.Q = Q
        self.dimension = Q.shape[0]

    def bilinear(self, phi, psi, u=None):
        """q_u(phi, psi): phi'Q psi on the Wiener slot, u[phi] u[psi] on a jump."""
        phi = as_vector(phi, self.dimension)
        psi = as_vector(psi, self.dimension)
        if u is None:
            return float(phi @ self.Q @ psi)
        u = as_vector(u, self.dimension)
        return float((u @ phi) * (u @ psi))

    def norm(self, phi, u=None):
        """q_u(phi) = sqrt(q_u(phi, phi))."""
        return float(np.sqrt(max(self.bilinear(phi, phi, u), 0.0)))
