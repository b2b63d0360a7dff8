"""Synthetic stream generator: rotating union of shifted subspaces.

Inliers draw from the first n-1 subspaces, which rotate a little at every
observation under a fixed skew-symmetric generator; anomalies draw from a
final static subspace orthogonal to the others at time zero. White
Gaussian noise is added everywhere.
"""

from dataclasses import dataclass

import numpy as np

from .tracking import orthonormalize


@dataclass
class SyntheticConfig:
    ambient_dim: int = 100
    subspace_rank: int = 10
    n_subspaces: int = 3
    inlier_fraction: float = 0.95
    noise_var: float = 0.1
    rotation_speed: float = 0.0
    total: int = 4000
    train_count: int = 1000
    seed: int = 0
    # observations drawn per time step; the subspaces rotate once per step,
    # so experiments that batch the stream set this to their batch size
    obs_per_step: int = 1
    # standard deviation of in-subspace coefficients; sets the
    # signal-to-noise ratio of the detection task
    coeff_std: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.inlier_fraction < 1.0:
            raise ValueError("inlier_fraction must lie in (0, 1)")
        if self.subspace_rank >= self.ambient_dim:
            raise ValueError("subspace_rank must be below ambient_dim")
        if self.rotation_speed < 0:
            raise ValueError("rotation_speed must be non-negative")
        if self.n_subspaces < 2:
            raise ValueError("need at least one inlier and one anomaly subspace")
        if self.total < 1:
            raise ValueError("total must be positive")
        if not 0 <= self.train_count <= self.total:
            raise ValueError("train_count must lie in [0, total]")
        if self.obs_per_step < 1:
            raise ValueError("obs_per_step must be positive")
        if not self.coeff_std > 0:
            raise ValueError("coeff_std must be positive")


def rotate_subspace(V, B, delta):
    """One rotation step: V + delta * (B / ||B||_F) V, re-orthonormalized.

    The raw update does not preserve orthonormality exactly, so the result
    is polar-normalized; delta = 0 returns V unchanged.
    """
    V = np.asarray(V, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if not np.allclose(B, -B.T, atol=1e-10):
        raise ValueError("generator must be skew-symmetric")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if delta == 0.0:
        return V
    scale = np.linalg.norm(B)
    if scale == 0.0:
        return V
    return orthonormalize(V + delta * (B @ V) / scale)


def skew_generator(rng, p):
    """Fixed random rotation generator: antisymmetrized standard normals."""
    A = rng.standard_normal((p, p))
    return (A - A.T) / 2.0


def gen_synthetic(config):
    """Labeled stream drawn from the rotating union-of-subspaces model.

    Returns (X, labels) with X of shape p x total and labels 1 for
    anomalies. Subspace shifts are random directions of norm 0.1 ("close
    to zero"); in-subspace coefficients are standard normal. The same
    seed reproduces the stream exactly.
    """
    p = config.ambient_dim
    r = config.subspace_rank
    k = config.n_subspaces
    if p < k * r:
        raise ValueError(
            f"cannot fit {k} mutually orthogonal rank-{r} subspaces in dimension {p}"
        )
    rng = np.random.default_rng(config.seed)
    joint = np.linalg.qr(rng.standard_normal((p, k * r)))[0]
    bases = [joint[:, j * r:(j + 1) * r].copy() for j in range(k)]
    shifts = []
    for _ in range(k):
        u = rng.uniform(-0.1, 0.1, size=p)
        shifts.append(0.1 * u / np.linalg.norm(u))
    generators = [skew_generator(rng, p) for _ in range(k - 1)]
    sigma = np.sqrt(config.noise_var)
    delta = config.rotation_speed

    X = np.empty((p, config.total))
    labels = np.zeros(config.total, dtype=np.int8)
    n_inlier_spaces = k - 1
    for t in range(config.total):
        is_anomaly = rng.random() >= config.inlier_fraction
        if is_anomaly:
            j = k - 1
            labels[t] = 1
        else:
            j = int(rng.integers(n_inlier_spaces))
        coeff = config.coeff_std * rng.standard_normal(r)
        noise = sigma * rng.standard_normal(p)
        X[:, t] = shifts[j] + bases[j] @ coeff + noise
        if delta > 0 and (t + 1) % config.obs_per_step == 0:
            for j in range(n_inlier_spaces):
                bases[j] = rotate_subspace(bases[j], generators[j], delta)
    return X, labels
