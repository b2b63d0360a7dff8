"""Mini-batch recursive-least-squares subspace tracking.

The tracker refines an orthonormal basis from batches of (possibly
coordinate-subsampled) observations. Each component keeps an r x r history
matrix R accumulated with a forgetting factor; the basis step solves
against R's pseudo-inverse and is then re-orthonormalized symmetrically so
the coefficient axes keep their meaning.
"""

import numpy as np

# R starts as a tiny rank-1 matrix so the first data batch dominates.
DEFAULT_INIT_SCALE = 1e-6

# Guards the least-squares solve for subsampled bases.
MASKED_RIDGE = 1e-10


class RankDeficientError(np.linalg.LinAlgError):
    """Raised when a basis to orthonormalize has (numerically) dependent columns."""


class IllPosedMaskError(ValueError):
    """Raised when a mask observes fewer coordinates than the subspace rank."""


class TrackerState:
    """History matrix R for one component's recursive basis updates."""

    __slots__ = ("r_matrix", "init_scale")

    def __init__(self, rank, init_scale=DEFAULT_INIT_SCALE, r_matrix=None):
        if not init_scale > 0:
            raise ValueError("init_scale must be positive")
        self.init_scale = float(init_scale)
        if r_matrix is None:
            r_matrix = init_scale * np.ones((rank, rank))
        else:
            r_matrix = np.asarray(r_matrix, dtype=np.float64)
            if r_matrix.shape != (rank, rank):
                raise ValueError(f"expected {rank} x {rank} matrix")
            if not np.allclose(r_matrix, r_matrix.T, atol=1e-10):
                raise ValueError("history matrix must be symmetric")
            if np.linalg.eigvalsh(r_matrix).min() < -1e-10:
                raise ValueError("history matrix must be positive semidefinite")
        self.r_matrix = r_matrix

    @property
    def rank(self):
        return self.r_matrix.shape[0]


def compute_residual(basis, X, M):
    """Projection coefficients of the centered batch onto the basis.

    For an orthonormal basis the pseudo-inverse is the transpose, so this
    is simply basis.T @ (X - M).
    """
    basis = np.asarray(basis, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if X.shape != M.shape:
        raise ValueError(f"X {X.shape} and M {M.shape} must have equal shapes")
    if X.shape[0] != basis.shape[0]:
        raise ValueError("batch rows must match basis rows")
    return basis.T @ (X - M)


def orthonormalize(Vt):
    """Symmetric (polar) orthonormalization: Vt @ (Vt^T Vt)^(-1/2).

    Unlike a QR basis change this keeps each output column aligned with
    the corresponding input column, so per-direction eigenvalues stay
    meaningful across updates.
    """
    Vt = np.asarray(Vt, dtype=np.float64)
    gram = Vt.T @ Vt
    w, Q = np.linalg.eigh(gram)
    if w[-1] <= 0 or w[0] <= 1e-12 * w[-1]:
        raise RankDeficientError("input columns are numerically rank deficient")
    inv_sqrt = (Q * (w ** -0.5)) @ Q.T
    return Vt @ inv_sqrt


def pinv_psd(R):
    """Moore-Penrose pseudo-inverse of a symmetric PSD matrix.

    Eigenvalues below 1e-12 of the largest are treated as zero.
    """
    R = np.asarray(R, dtype=np.float64)
    if not np.allclose(R, R.T, atol=1e-8):
        raise ValueError("matrix must be symmetric")
    w, Q = np.linalg.eigh((R + R.T) / 2.0)
    cutoff = 1e-12 * max(w[-1], 0.0)
    inv_w = np.where(w > cutoff, 1.0 / np.where(w > cutoff, w, 1.0), 0.0)
    return (Q * inv_w) @ Q.T


def petrels_update(basis, state, X, M, alpha):
    """One mini-batch update of the basis and its history matrix.

    B = basis^T (X - M); R' = alpha R + B B^T; the basis step adds
    ((X - M) B^T - basis B B^T) R'^# and re-orthonormalizes.
    """
    basis = np.asarray(basis, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if not (np.isfinite(X).all() and np.isfinite(M).all()):
        raise ValueError("batch contains non-finite values")
    B = compute_residual(basis, X, M)
    BBt = B @ B.T
    R_new = alpha * state.r_matrix + BBt
    step = ((X - M) @ B.T - basis @ BBt) @ pinv_psd(R_new)
    new_basis = orthonormalize(basis + step)
    return new_basis, TrackerState(state.rank, state.init_scale, r_matrix=R_new)


def petrels_update_masked(basis, state, X_obs, M_obs, mask, alpha):
    """Mini-batch update from coordinate-subsampled observations.

    Coefficients come from a ridge-guarded least-squares fit against the
    masked basis rows; only the masked rows of the basis receive the
    additive correction before the full matrix is re-orthonormalized.
    """
    basis = np.asarray(basis, dtype=np.float64)
    r = basis.shape[1]
    if mask.is_full():
        # masked rows are the whole basis, whose pseudo-inverse is exact
        return petrels_update(basis, state, X_obs, M_obs, alpha)
    if len(mask) < r:
        raise IllPosedMaskError(
            f"mask of size {len(mask)} cannot determine rank-{r} coefficients"
        )
    X_obs = np.asarray(X_obs, dtype=np.float64)
    M_obs = np.asarray(M_obs, dtype=np.float64)
    if X_obs.shape != M_obs.shape:
        raise ValueError("X_obs and M_obs must have equal shapes")
    if X_obs.shape[0] != len(mask):
        raise ValueError("observed rows must match mask size")
    if not (np.isfinite(X_obs).all() and np.isfinite(M_obs).all()):
        raise ValueError("batch contains non-finite values")
    W = basis[mask.indices]
    Y = X_obs - M_obs
    gram = W.T @ W
    B = np.linalg.solve(gram + MASKED_RIDGE * np.eye(r), W.T @ Y)
    BBt = B @ B.T
    R_new = alpha * state.r_matrix + BBt
    V_tilde = basis.copy()
    V_tilde[mask.indices] += (Y @ B.T - W @ BBt) @ pinv_psd(R_new)
    new_basis = orthonormalize(V_tilde)
    return new_basis, TrackerState(state.rank, state.init_scale, r_matrix=R_new)


def largest_principal_angle(A, B):
    """Largest canonical angle (radians) between the spans of two bases."""
    s = np.linalg.svd(np.asarray(A).T @ np.asarray(B), compute_uv=False)
    return float(np.arccos(np.clip(s.min(), -1.0, 1.0)))
