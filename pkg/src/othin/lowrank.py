"""Low-rank-plus-isotropic Gaussian components and fast likelihood algebra.

A component's covariance is ``basis @ diag(eigs) @ basis.T + noise_var * I``
with an orthonormal p x r basis, so inverses and determinants reduce to
O(p*r) work via the Woodbury identity and the matrix determinant lemma.
Nothing in this module ever materializes a p x p matrix.
"""

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)

# Keeps diag(eigs)^-1 finite in the Woodbury inner solve.
EIG_FLOOR = 1e-12

ORTHONORMAL_TOL = 1e-8


class LowRankGaussian:
    """One mixture component: mean, orthonormal basis, eigenvalues, noise floor.

    Parameters
    ----------
    mean : array, shape (p,)
    basis : array, shape (p, r), orthonormal columns, r < p
    eigs : array, shape (r,), per-direction variances (floored at 1e-12)
    noise_var : float > 0, isotropic variance off the subspace
    """

    __slots__ = ("mean", "basis", "eigs", "noise_var")

    def __init__(self, mean, basis, eigs, noise_var):
        mean = np.asarray(mean, dtype=np.float64)
        basis = np.asarray(basis, dtype=np.float64)
        eigs = np.maximum(np.asarray(eigs, dtype=np.float64), EIG_FLOOR)
        if mean.ndim != 1 or basis.ndim != 2 or eigs.ndim != 1:
            raise ValueError("mean and eigs must be vectors, basis a matrix")
        p, r = basis.shape
        if mean.shape[0] != p or eigs.shape[0] != r:
            raise ValueError(
                f"inconsistent shapes: mean {mean.shape}, basis {basis.shape}, "
                f"eigs {eigs.shape}"
            )
        if r >= p:
            raise ValueError(f"rank r={r} must be smaller than dimension p={p}")
        if not noise_var > 0:
            raise ValueError(f"noise_var must be positive, got {noise_var}")
        gram = basis.T @ basis
        if not np.allclose(gram, np.eye(r), atol=ORTHONORMAL_TOL):
            raise ValueError("basis columns are not orthonormal")
        self.mean = mean
        self.basis = basis
        self.eigs = eigs
        self.noise_var = float(noise_var)

    @property
    def p(self):
        return self.basis.shape[0]

    @property
    def r(self):
        return self.basis.shape[1]

    def replace(self, mean=None, basis=None, eigs=None, noise_var=None):
        """Copy with selected fields replaced (re-validates)."""
        return LowRankGaussian(
            self.mean if mean is None else mean,
            self.basis if basis is None else basis,
            self.eigs if eigs is None else eigs,
            self.noise_var if noise_var is None else noise_var,
        )


class SampleMask:
    """Sorted distinct coordinate indices in [0, dim) selecting observed rows."""

    __slots__ = ("indices", "dim")

    def __init__(self, indices, dim):
        indices = np.sort(np.asarray(indices, dtype=np.intp).ravel())
        if indices.size == 0:
            raise ValueError("mask must select at least one coordinate")
        if np.any(np.diff(indices) == 0):
            raise ValueError("mask indices must be distinct")
        if indices[0] < 0 or indices[-1] >= dim:
            raise ValueError(f"mask indices must lie in [0, {dim})")
        self.indices = indices
        self.dim = int(dim)

    def __len__(self):
        return self.indices.size

    def is_full(self):
        return self.indices.size == self.dim


def quad_form(g, x):
    """(x - mean)^T Sigma^-1 (x - mean) in O(p*r) via the Woodbury identity.

    With s2 = noise_var and orthonormal basis V the inverse is
    s2^-1 I - s2^-2 V diag(1 / (1/eigs + 1/s2)) V^T.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (g.p,):
        raise ValueError(f"expected vector of length {g.p}, got shape {x.shape}")
    d = x - g.mean
    s2 = g.noise_var
    proj = g.basis.T @ d
    gain = 1.0 / (1.0 / g.eigs + 1.0 / s2)
    val = (d @ d) / s2 - (proj * proj * gain).sum() / (s2 * s2)
    return max(val, 0.0)


def log_det(g):
    """log |Sigma| in O(r) via the matrix determinant lemma."""
    s2 = g.noise_var
    return (g.p - g.r) * math.log(s2) + float(np.log(s2 + g.eigs).sum())


def log_likelihood(g, x):
    """Exact Gaussian log-density of x under the component."""
    return -0.5 * (g.p * LOG_2PI + log_det(g) + quad_form(g, x))


def log_likelihood_cols(g, X):
    """Gaussian log-density of every column of the p x n matrix X."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != g.p:
        raise ValueError(f"expected p x n matrix with p={g.p}, got shape {X.shape}")
    D = X - g.mean[:, None]
    s2 = g.noise_var
    P = g.basis.T @ D
    gain = 1.0 / (1.0 / g.eigs + 1.0 / s2)
    quad = (D * D).sum(axis=0) / s2 - (P * P * gain[:, None]).sum(axis=0) / (s2 * s2)
    np.maximum(quad, 0.0, out=quad)
    return -0.5 * (g.p * LOG_2PI + log_det(g) + quad)


def _masked_inner(g, mask):
    """Cholesky factor and log-determinant pieces of the masked covariance.

    The masked covariance is W diag(eigs) W^T + s2 I with W = basis[mask],
    whose columns are no longer orthonormal, so the r x r system
    A = diag(1/eigs) + W^T W / s2 is solved directly.
    """
    W = g.basis[mask.indices]
    s2 = g.noise_var
    A = np.diag(1.0 / g.eigs) + (W.T @ W) / s2
    L = np.linalg.cholesky(A)
    logdet_A = 2.0 * float(np.log(np.diag(L)).sum())
    logdet = len(mask) * math.log(s2) + float(np.log(g.eigs).sum()) + logdet_A
    return W, L, logdet


def _cho_solve(L, b):
    y = np.linalg.solve(L, b)
    return np.linalg.solve(L.T, y)


def masked_log_likelihood(g, x_obs, mask):
    """Log-density of the observed coordinates under the masked marginal.

    Normalization uses the number of observed coordinates, so a full mask
    reproduces log_likelihood exactly.
    """
    x_obs = np.asarray(x_obs, dtype=np.float64)
    m = len(mask)
    if x_obs.shape != (m,):
        raise ValueError(f"expected {m} observed values, got shape {x_obs.shape}")
    if mask.dim != g.p:
        raise ValueError(f"mask dimension {mask.dim} does not match p={g.p}")
    W, L, logdet = _masked_inner(g, mask)
    d = x_obs - g.mean[mask.indices]
    s2 = g.noise_var
    proj = W.T @ d
    quad = (d @ d) / s2 - (proj @ _cho_solve(L, proj)) / (s2 * s2)
    quad = max(quad, 0.0)
    return -0.5 * (m * LOG_2PI + logdet + quad)


def masked_log_likelihood_cols(g, X_obs, mask):
    """Masked log-density of every column of the |mask| x n matrix X_obs."""
    X_obs = np.asarray(X_obs, dtype=np.float64)
    m = len(mask)
    if X_obs.ndim != 2 or X_obs.shape[0] != m:
        raise ValueError(f"expected {m} x n matrix, got shape {X_obs.shape}")
    if mask.dim != g.p:
        raise ValueError(f"mask dimension {mask.dim} does not match p={g.p}")
    W, L, logdet = _masked_inner(g, mask)
    D = X_obs - g.mean[mask.indices, None]
    s2 = g.noise_var
    P = W.T @ D
    quad = (D * D).sum(axis=0) / s2 - (P * _cho_solve(L, P)).sum(axis=0) / (s2 * s2)
    np.maximum(quad, 0.0, out=quad)
    return -0.5 * (m * LOG_2PI + logdet + quad)
