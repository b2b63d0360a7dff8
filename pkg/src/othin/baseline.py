"""Online diagonal-covariance Gaussian mixture comparator.

A classical full-dimension mixture with a fixed number of components,
fit by EM on the training sample and then advanced with forgetting-factor
sufficient-statistic updates. Diagonal covariances keep it well-posed in
high dimension. Scores are mixture negative log-likelihoods computed
before each update, mirroring the thinning engine's protocol.
"""

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)


class OnlineDiagonalGMM:
    def __init__(self, k, alpha, seed=0, var_floor=1e-6):
        if k < 1:
            raise ValueError("k must be at least 1")
        self.k = int(k)
        self.alpha = float(alpha)
        self.var_floor = float(var_floor)
        self.rng = np.random.default_rng(seed)
        self.weights = None
        self.means = None  # k x p
        self.vars = None  # k x p
        self._s0 = None
        self._s1 = None
        self._s2 = None

    # ------------------------------------------------------------------

    def _component_loglik(self, X):
        """k x n matrix of per-component diagonal Gaussian log densities."""
        p = X.shape[0]
        out = np.empty((self.k, X.shape[1]))
        for j in range(self.k):
            d = X - self.means[j][:, None]
            v = self.vars[j][:, None]
            out[j] = -0.5 * (p * LOG_2PI + np.log(self.vars[j]).sum() + (d * d / v).sum(axis=0))
        return out

    def log_density_cols(self, X):
        """Mixture log density of each column (frozen model, no update)."""
        L = self._component_loglik(np.asarray(X, dtype=np.float64))
        A = L + np.log(self.weights)[:, None]
        m = A.max(axis=0)
        return m + np.log(np.exp(A - m).sum(axis=0))

    def score_cols(self, X):
        return -self.log_density_cols(X)

    # ------------------------------------------------------------------

    def fit_initial(self, train, n_iter=25):
        """EM on the training sample, then seed the streaming statistics."""
        X = np.asarray(train, dtype=np.float64)
        p, n = X.shape
        picks = self.rng.choice(n, size=self.k, replace=False)
        self.means = X[:, picks].T.copy()
        global_var = X.var(axis=1) + self.var_floor
        self.vars = np.tile(global_var, (self.k, 1))
        self.weights = np.full(self.k, 1.0 / self.k)
        for _ in range(n_iter):
            resp = self._responsibilities(X)
            counts = resp.sum(axis=1) + 1e-12
            self.weights = counts / counts.sum()
            self.means = (resp @ X.T) / counts[:, None]
            sq = resp @ (X * X).T / counts[:, None]
            self.vars = np.maximum(sq - self.means**2, self.var_floor)
        self._s0 = self.weights * n
        self._s1 = self.means * self._s0[:, None]
        self._s2 = (self.vars + self.means**2) * self._s0[:, None]
        return self

    def _responsibilities(self, X):
        A = self._component_loglik(X) + np.log(self.weights)[:, None]
        A -= A.max(axis=0)
        R = np.exp(A)
        return R / R.sum(axis=0)

    def update(self, X):
        """Fold one batch into the forgetting-factor sufficient statistics."""
        X = np.asarray(X, dtype=np.float64)
        resp = self._responsibilities(X)
        a = self.alpha
        self._s0 = a * self._s0 + resp.sum(axis=1)
        self._s1 = a * self._s1 + resp @ X.T
        self._s2 = a * self._s2 + resp @ (X * X).T
        s0 = self._s0 + 1e-12
        self.weights = self._s0 / self._s0.sum()
        self.means = self._s1 / s0[:, None]
        self.vars = np.maximum(self._s2 / s0[:, None] - self.means**2, self.var_floor)

    def process(self, X):
        """Score a batch against the frozen model, then update with it."""
        scores = self.score_cols(X)
        self.update(X)
        return scores


def baseline_online_gmm(train, stream_batches, k, alpha, seed=0):
    """Scores for a stream of p x n batches under the online mixture."""
    model = OnlineDiagonalGMM(k, alpha, seed=seed).fit_initial(train)
    out = [model.process(batch) for batch in stream_batches]
    return np.concatenate(out) if out else np.empty(0)
