"""Streaming thinning engine.

Each incoming batch is scored against the frozen model, observations are
routed to their best-fitting leaf (and onward to the likelier virtual
child), cumulative errors and per-node statistics are folded in, the tree
grows or prunes where the penalized scores say so, and everything scoring
above the threshold is emitted as the thinned set.
"""

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .config import EngineConfig
from .lowrank import SampleMask, log_likelihood_cols, masked_log_likelihood_cols
from .tree import KIND_LEAF, MixtureTree, init_tree


@dataclass
class ObservationBatch:
    """One time-step's worth of observations, columns of a p x N matrix."""

    time_index: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError("batch data must be a p x N matrix")
        if self.data.shape[1] < 1:
            raise ValueError("batch must contain at least one observation")


@dataclass
class ScoredObservation:
    time_index: int
    column_index: int
    score: float
    assigned_leaf: int
    flagged: bool

    def to_json(self):
        return json.dumps(
            {
                "t": self.time_index,
                "i": self.column_index,
                "score": self.score,
                "leaf": self.assigned_leaf,
            }
        )


@dataclass
class StreamSummary:
    batches: int = 0
    observations: int = 0
    flagged: int = 0
    mean_score: float = 0.0
    final_leaf_count: int = 0
    splits: int = 0
    merges: int = 0
    wall_time_s: float = 0.0

    def to_dict(self):
        return dict(self.__dict__)


def subsample_mask(p, rate, rank, rng):
    """Fresh uniform coordinate mask for one time step.

    Size is max(rank + 1, round(rate * p)) so masked coefficient solves
    stay overdetermined; rate >= 1 returns the full index set.
    """
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    if rate >= 1.0:
        return SampleMask(np.arange(p), p)
    size = min(p, max(rank + 1, int(round(rate * p))))
    return SampleMask(rng.choice(p, size=size, replace=False), p)


def _leaf_loglik(tree, node_ids, X_eval, mask):
    rows = []
    for nid in node_ids:
        g = tree.node(nid).gaussian
        if mask is None:
            rows.append(log_likelihood_cols(g, X_eval))
        else:
            rows.append(masked_log_likelihood_cols(g, X_eval, mask))
    return np.vstack(rows) if rows else np.empty((0, X_eval.shape[1]))


def mixture_score_cols(tree, X_eval, mask=None):
    """Anomalousness score -log sum_j q_j p_j(x) for each column.

    Computed with a log-sum-exp reduction over per-leaf log-likelihoods;
    zero-weight leaves are skipped. Raises if every leaf weight is zero.
    """
    leaf_ids = tree.leaf_ids()
    weights = np.array([tree.node(nid).weight for nid in leaf_ids])
    active = weights > 0
    if not active.any():
        raise ValueError("invalid model: all leaf weights are zero")
    L = _leaf_loglik(tree, [nid for nid, a in zip(leaf_ids, active) if a], X_eval, mask)
    A = L + np.log(weights[active])[:, None]
    m = A.max(axis=0)
    return -(m + np.log(np.exp(A - m).sum(axis=0)))


def mixture_score(tree, x, mask=None):
    """Score a single observation (observed rows only when masked)."""
    return float(mixture_score_cols(tree, np.asarray(x, dtype=np.float64)[:, None], mask)[0])


class OnlineThinner:
    """One engine instance per stream; batches are processed sequentially."""

    def __init__(self, config):
        self.config = config
        self.tree = None
        self.rng = np.random.default_rng(config.seed)
        self.splits = 0
        self.merges = 0

    @property
    def p(self):
        if self.tree is None:
            raise RuntimeError("engine is not fitted")
        return self.tree.p

    # ------------------------------------------------------------------
    # initialization

    def fit_initial(self, training):
        """Fit the starting tree and resolve unset thresholds from training.

        tau defaults to the 95th percentile of training scores. tol, the
        cumulative-error gate, defaults to the steady-state cumulative
        score of the coarsest single-component description of the
        training data (the root fit): operating better than that keeps
        growing allowed, degrading past it opens pruning, and a pruned-to-
        the-root tree sits at the gate rather than beyond it, so it can
        recover. gamma defaults to 0.3 * tol. Returns the training scores
        under the fitted (frozen) model.
        """
        training = np.asarray(training, dtype=np.float64)
        tree = init_tree(training, self.config)
        scores = mixture_score_cols(tree, training)
        alpha = self.config.alpha
        tol = self.config.tol
        if tol is None:
            root_nll = -log_likelihood_cols(
                tree.node(tree.root_id).gaussian, training
            )
            # 10% floor over the fitted model's own steady state keeps a
            # margin even when the tree is a single leaf
            tol = max(
                float(root_nll.mean()), 1.1 * float(scores.mean()), 1e-12
            ) / (1.0 - alpha)
        # 0.3 * tol sits above the cumulative-score noise of small
        # mini-batches (virtual children overfit tiny pools and fake an
        # advantage) while staying far below the gap a genuine cluster
        # refinement produces
        gamma = self.config.gamma if self.config.gamma is not None else 0.3 * tol
        tau = self.config.tau if self.config.tau is not None else float(np.quantile(scores, 0.95))
        self.config = replace(
            self.config, tol=tol, gamma=gamma, tau=tau, noise_var=tree.noise_var
        )
        tree.config = self.config
        self.tree = tree
        return scores

    # ------------------------------------------------------------------
    # one time step

    def score(self, x, mask=None):
        """Frozen-model score of one full observation (no update)."""
        x = np.asarray(x, dtype=np.float64)
        x_eval = x if mask is None else x[mask.indices]
        return mixture_score(self.tree, x_eval, mask)

    def process_batch(self, batch):
        """Run one full step: score, assign, update, adapt, threshold.

        Scores are computed against the pre-update model. Non-finite
        columns are flagged with score +inf and excluded from every
        update. Returns the per-observation records and the thinned
        (flagged) columns.
        """
        if self.tree is None:
            raise RuntimeError("engine is not fitted; call fit_initial first")
        if not isinstance(batch, ObservationBatch):
            batch = ObservationBatch(0, batch)
        X = batch.data
        p = self.tree.p
        if X.shape[0] != p:
            raise ValueError(f"batch dimension {X.shape[0]} does not match model {p}")
        N = X.shape[1]
        alpha = self.config.alpha
        tau = self.config.tau

        finite = np.isfinite(X).all(axis=0)
        valid_cols = np.flatnonzero(finite)
        rate = self.config.subsample_rate
        mask = None
        if rate < 1.0:
            mask = subsample_mask(p, rate, self.tree.rank, self.rng)
        X_eval = X if mask is None else X[mask.indices]

        scores = np.full(N, np.inf)
        assigned = np.full(N, -1, dtype=np.int64)
        if valid_cols.size:
            Xv = X_eval[:, valid_cols]
            leaf_ids = self.tree.leaf_ids()
            L = _leaf_loglik(self.tree, leaf_ids, Xv, mask)
            weights = np.array([self.tree.node(nid).weight for nid in leaf_ids])
            active = weights > 0
            if not active.any():
                raise ValueError("invalid model: all leaf weights are zero")
            A = L[active] + np.log(weights[active])[:, None]
            m = A.max(axis=0)
            scores[valid_cols] = -(m + np.log(np.exp(A - m).sum(axis=0)))
            # argmax of raw likelihood, weights ignored; first max wins the
            # tie and rows are in ascending id order
            best = np.argmax(L, axis=0)
            assigned[valid_cols] = np.asarray(leaf_ids)[best]

            node_cols, node_nll = self._route(leaf_ids, L, best, valid_cols, X_eval, mask)
            self.tree.apply_cumulative(alpha, float(scores[valid_cols].mean()), node_nll)
            n_valid = int(valid_cols.size)
            for nid in sorted(self.tree.nodes):
                cols = node_cols.get(nid)
                if cols is None:
                    self.tree.decay_idle(nid, alpha)
                else:
                    self.tree.update_node_statistics(
                        nid, X_eval[:, cols], n_valid, alpha, mask=mask
                    )
            self._structure_pass(
                [nid for nid in sorted(node_cols) if self.tree.nodes.get(nid) is not None
                 and self.tree.node(nid).kind == KIND_LEAF]
            )

        flagged = scores > tau
        records = [
            ScoredObservation(
                batch.time_index, int(i), float(scores[i]), int(assigned[i]), bool(flagged[i])
            )
            for i in range(N)
        ]
        return records, X[:, flagged]

    def _route(self, leaf_ids, L, best, valid_cols, X_eval, mask):
        """Column sets and mean negative log-likelihoods per updated node.

        Leaves take their assigned columns, virtual children the split of
        the leaf's columns by own likelihood, ancestors the union of their
        descendants'. All likelihoods are frozen pre-update values.
        """
        tree = self.tree
        node_cols = {}
        node_nll = {}
        ancestor_cols = {}
        for k, lid in enumerate(leaf_ids):
            sel = best == k
            if not sel.any():
                continue
            cols = valid_cols[sel]
            node_cols[lid] = cols
            node_nll[lid] = float(-L[k, sel].mean())
            v1, v2 = tree.node(lid).children
            Xsub = X_eval[:, cols]
            ll = _leaf_loglik(tree, [v1, v2], Xsub, mask)
            to_first = ll[0] >= ll[1]
            for vid, keep in ((v1, to_first), (v2, ~to_first)):
                if keep.any():
                    node_cols[vid] = cols[keep]
                    node_nll[vid] = float(-ll[0 if vid == v1 else 1, keep].mean())
            for aid in tree.ancestors(lid):
                ancestor_cols.setdefault(aid, []).append(cols)
        for aid, col_sets in ancestor_cols.items():
            cols = np.sort(np.concatenate(col_sets))
            node_cols[aid] = cols
            g = tree.node(aid).gaussian
            Xsub = X_eval[:, cols]
            if mask is None:
                ll = log_likelihood_cols(g, Xsub)
            else:
                ll = masked_log_likelihood_cols(g, Xsub, mask)
            node_nll[aid] = float(-ll.mean())
        return node_cols, node_nll

    def _structure_pass(self, candidate_leaves):
        """Growing/pruning checks in ascending id order, one change per node."""
        changed = set()
        for lid in candidate_leaves:
            if lid in changed or lid not in self.tree.nodes:
                continue
            node = self.tree.node(lid)
            if node.kind != KIND_LEAF:
                continue
            if self.tree.maybe_split(lid):
                self.splits += 1
                changed.add(lid)
                continue
            parent_id = node.parent
            if self.tree.maybe_merge(lid):
                self.merges += 1
                parent = self.tree.node(parent_id)
                changed.update({lid, parent_id, *parent.children})

    # ------------------------------------------------------------------
    # stream driver

    def run_stream(self, source, sink=None):
        """Pipe batches through process_batch, writing flagged records.

        sink is any object with a write method; flagged observations are
        written as JSON lines. Errors are re-raised with the batch index.
        """
        summary = StreamSummary()
        score_total = 0.0
        start = time.perf_counter()
        for index, batch in enumerate(source):
            try:
                records, _ = self.process_batch(batch)
            except Exception as exc:
                raise RuntimeError(f"stream failed at batch {index}: {exc}") from exc
            summary.batches += 1
            summary.observations += len(records)
            for rec in records:
                if rec.flagged:
                    summary.flagged += 1
                    if sink is not None:
                        sink.write(rec.to_json() + "\n")
                if math.isfinite(rec.score):
                    score_total += rec.score
        summary.mean_score = score_total / summary.observations if summary.observations else 0.0
        summary.final_leaf_count = self.tree.leaf_count() if self.tree else 0
        summary.splits = self.splits
        summary.merges = self.merges
        summary.wall_time_s = time.perf_counter() - start
        return summary

    # ------------------------------------------------------------------
    # checkpointing

    def to_checkpoint(self):
        """Versioned JSON document capturing model, config and RNG state."""
        if self.tree is None:
            raise RuntimeError("engine is not fitted")
        return {
            "format_version": 1,
            "tree": self.tree.to_json_dict(),
            "splits": self.splits,
            "merges": self.merges,
            "rng_state": _encode_rng_state(self.rng.bit_generator.state),
        }

    @classmethod
    def from_checkpoint(cls, doc):
        if doc.get("format_version") != 1:
            raise ValueError(f"unsupported checkpoint version {doc.get('format_version')}")
        tree = MixtureTree.from_json_dict(doc["tree"])
        engine = cls(tree.config)
        engine.tree = tree
        engine.splits = doc.get("splits", 0)
        engine.merges = doc.get("merges", 0)
        engine.rng.bit_generator.state = _decode_rng_state(doc["rng_state"])
        return engine


def _encode_rng_state(state):
    def enc(v):
        if isinstance(v, dict):
            return {k: enc(x) for k, x in v.items()}
        if isinstance(v, np.ndarray):
            return {"__ndarray__": v.tolist(), "dtype": str(v.dtype)}
        if isinstance(v, (np.integer,)):
            return int(v)
        return v

    return enc(state)


def _decode_rng_state(state):
    def dec(v):
        if isinstance(v, dict):
            if "__ndarray__" in v:
                return np.asarray(v["__ndarray__"], dtype=v["dtype"])
            return {k: dec(x) for k, x in v.items()}
        return v

    return dec(state)
