"""Multiscale binary tree of low-rank Gaussian mixture components.

Leaves are the live mixture components. Every leaf keeps two *virtual*
children: candidate refinements that receive their share of the leaf's
data and compete with it on cumulative score. Growing promotes a leaf's
virtual children to real leaves; pruning demotes a sibling leaf pair back
to virtual children of their parent. Internal nodes keep coarse-scale
parameters updated from their descendants' combined batches so pruning
can fall back to them.
"""

import warnings

import numpy as np

from .config import EngineConfig
from .lowrank import (
    EIG_FLOOR,
    LowRankGaussian,
    log_likelihood,
    log_likelihood_cols,
    masked_log_likelihood,
)
from .tracking import (
    MASKED_RIDGE,
    TrackerState,
    petrels_update,
    petrels_update_masked,
)

TREE_FORMAT_VERSION = 1

KIND_INTERNAL = "internal"
KIND_LEAF = "leaf"
KIND_VIRTUAL = "virtual"


class TreeNode:
    __slots__ = ("id", "gaussian", "weight", "cum_score", "tracker", "kind", "parent", "children")

    def __init__(self, node_id, gaussian, weight, tracker, kind, parent=None, children=(), cum_score=0.0):
        self.id = node_id
        self.gaussian = gaussian
        self.weight = float(weight)
        self.cum_score = float(cum_score)
        self.tracker = tracker
        self.kind = kind
        self.parent = parent
        self.children = tuple(children)


class MixtureTree:
    """Id-addressed node store plus the cumulative model error."""

    def __init__(self, config, noise_var, rank):
        self.config = config
        self.noise_var = float(noise_var)
        self.rank = int(rank)
        self.nodes = {}
        self.cum_error = 0.0
        self.rank_reduced = False
        self.root_id = None
        self._next_id = 0

    # ------------------------------------------------------------------
    # structure accessors

    def _new_id(self):
        nid = self._next_id
        self._next_id += 1
        return nid

    def node(self, nid):
        return self.nodes[nid]

    def leaf_ids(self):
        return sorted(nid for nid, n in self.nodes.items() if n.kind == KIND_LEAF)

    def leaf_count(self):
        return sum(1 for n in self.nodes.values() if n.kind == KIND_LEAF)

    def virtual_children(self, leaf_id):
        leaf = self.nodes[leaf_id]
        if leaf.kind != KIND_LEAF:
            raise ValueError(f"node {leaf_id} is not a leaf")
        return tuple(self.nodes[c] for c in leaf.children)

    def ancestors(self, nid):
        out = []
        cur = self.nodes[nid].parent
        while cur is not None:
            out.append(cur)
            cur = self.nodes[cur].parent
        return out

    @property
    def p(self):
        return self.nodes[self.root_id].gaussian.p

    # ------------------------------------------------------------------
    # assignment

    def assign(self, x, mask=None):
        """Leaf with the highest (masked) log-likelihood; ties -> smallest id."""
        best_id, best_ll = None, -np.inf
        for nid in self.leaf_ids():
            g = self.nodes[nid].gaussian
            ll = log_likelihood(g, x) if mask is None else masked_log_likelihood(g, x, mask)
            if ll > best_ll:
                best_id, best_ll = nid, ll
        if best_id is None:
            raise ValueError("tree has no leaves")
        return best_id

    # ------------------------------------------------------------------
    # parameter updates

    def update_node_statistics(self, nid, X, n_total, alpha, mask=None):
        """Apply one mini-batch of assigned observations to a node.

        X holds the assigned columns: p x n when mask is None, otherwise
        the observed rows only (len(mask) x n). Weight and mean follow the
        forgetting-factor moment updates; eigenvalues track the per-row
        mean squared projection coefficients; the basis and its history
        matrix advance through the subspace tracker. The residual is taken
        against the pre-update mean. Masks smaller than the rank update
        weight and mean only.
        """
        node = self.nodes[nid]
        g = node.gaussian
        n = X.shape[1]
        if n < 1:
            raise ValueError("empty mini-batch")
        node.weight = alpha * node.weight + (1.0 - alpha) * (n / n_total)
        if mask is None:
            mean_pre = g.mean
            M = np.broadcast_to(mean_pre[:, None], X.shape)
            B = g.basis.T @ (X - M)
            new_mean = alpha * g.mean + (1.0 - alpha) * X.mean(axis=1)
            new_eigs = alpha * g.eigs + (1.0 - alpha) * (B * B).mean(axis=1)
            new_basis, new_tracker = petrels_update(g.basis, node.tracker, X, M, alpha)
        else:
            idx = mask.indices
            mean_obs_pre = g.mean[idx]
            new_mean = g.mean.copy()
            new_mean[idx] = alpha * mean_obs_pre + (1.0 - alpha) * X.mean(axis=1)
            if len(mask) < self.rank:
                # projection underdetermined: leave basis and eigenvalues be
                node.gaussian = g.replace(mean=new_mean)
                return node
            M = np.broadcast_to(mean_obs_pre[:, None], X.shape)
            W = g.basis[idx]
            B = np.linalg.solve(
                W.T @ W + MASKED_RIDGE * np.eye(self.rank), W.T @ (X - M)
            )
            new_eigs = alpha * g.eigs + (1.0 - alpha) * (B * B).mean(axis=1)
            new_basis, new_tracker = petrels_update_masked(
                g.basis, node.tracker, X, M, mask, alpha
            )
        node.gaussian = LowRankGaussian(new_mean, new_basis, new_eigs, g.noise_var)
        node.tracker = new_tracker
        return node

    def decay_idle(self, nid, alpha):
        """A node with no assignments this step only loses weight."""
        node = self.nodes[nid]
        node.weight = alpha * node.weight
        return node

    def apply_cumulative(self, alpha, mean_score, node_nll):
        """Fold this step's scores into the cumulative error and node scores.

        node_nll maps node id -> mean negative log-likelihood of the node's
        assigned observations under the node's own (pre-update) component.
        Nodes without assignments keep their cumulative score unchanged.
        """
        self.cum_error = alpha * self.cum_error + mean_score
        for nid, nll in node_nll.items():
            node = self.nodes[nid]
            node.cum_score = alpha * node.cum_score + nll

    # ------------------------------------------------------------------
    # structure updates

    def _spawn_virtual_children(self, leaf, seed_score):
        """Create the two candidate refinements kept under a leaf.

        Children sit at the mean +/- half a standard deviation along the
        leading basis direction, copy the basis, halve the leading
        eigenvalue, copy the rest, and split the leaf's weight evenly.
        They inherit the leaf's tracker history.
        """
        g = leaf.gaussian
        offset = 0.5 * np.sqrt(g.eigs[0]) * g.basis[:, 0]
        child_eigs = g.eigs.copy()
        child_eigs[0] = g.eigs[0] / 2.0
        child_ids = []
        for sign in (1.0, -1.0):
            cid = self._new_id()
            gaussian = LowRankGaussian(
                g.mean + sign * offset, g.basis.copy(), child_eigs.copy(), g.noise_var
            )
            tracker = TrackerState(
                self.rank, leaf.tracker.init_scale, r_matrix=leaf.tracker.r_matrix.copy()
            )
            self.nodes[cid] = TreeNode(
                cid, gaussian, leaf.weight / 2.0, tracker, KIND_VIRTUAL,
                parent=leaf.id, cum_score=seed_score,
            )
            child_ids.append(cid)
        leaf.children = tuple(child_ids)

    def _require_resolved(self):
        if self.config.tol is None or self.config.gamma is None:
            raise RuntimeError("tol and gamma must be resolved before structure updates")

    def _weighted_child_score(self, a, b):
        qsum = a.weight + b.weight
        if qsum > 0:
            return (a.weight * a.cum_score + b.weight * b.cum_score) / qsum
        return 0.5 * (a.cum_score + b.cum_score)

    def maybe_split(self, leaf_id):
        """Promote the leaf's virtual children if refinement earns its keep.

        Requires the cumulative error strictly below tol (at exact equality
        neither growing nor pruning fires), headroom under k_max, and the
        leaf's penalized cumulative score to exceed the weighted average of
        its virtual children's by more than one unit of the complexity
        penalty.
        """
        self._require_resolved()
        leaf = self.nodes[leaf_id]
        if leaf.kind != KIND_LEAF:
            return False
        if not self.cum_error < self.config.tol:
            return False
        k = self.leaf_count()
        if k >= self.config.k_max:
            return False
        c1, c2 = (self.nodes[c] for c in leaf.children)
        virtual_score = self._weighted_child_score(c1, c2)
        gamma = self.config.gamma
        if not leaf.cum_score + gamma * k > virtual_score + gamma * (k + 1):
            return False
        leaf.kind = KIND_INTERNAL
        for child in (c1, c2):
            child.kind = KIND_LEAF
            self._spawn_virtual_children(child, seed_score=child.cum_score)
        return True

    def maybe_merge(self, leaf_id):
        """Demote the leaf and its sibling if their parent does no worse.

        Requires the cumulative error strictly above tol, a sibling that is
        itself a leaf, and the parent's penalized cumulative score to beat
        the weighted average of the pair's. The pair becomes the parent's
        virtual children; their own virtual children are deleted.
        """
        self._require_resolved()
        leaf = self.nodes[leaf_id]
        if leaf.kind != KIND_LEAF or leaf.parent is None:
            return False
        if not self.cum_error > self.config.tol:
            return False
        if self.leaf_count() <= 1:
            return False
        parent = self.nodes[leaf.parent]
        sibling_id = next(c for c in parent.children if c != leaf_id)
        sibling = self.nodes[sibling_id]
        if sibling.kind != KIND_LEAF:
            return False
        k = self.leaf_count()
        pair_score = self._weighted_child_score(leaf, sibling)
        gamma = self.config.gamma
        if not parent.cum_score + gamma * (k - 1) < pair_score + gamma * k:
            return False
        for child in (leaf, sibling):
            for vid in child.children:
                del self.nodes[vid]
            child.children = ()
            child.kind = KIND_VIRTUAL
        parent.kind = KIND_LEAF
        return True

    # ------------------------------------------------------------------
    # invariants

    def check_invariants(self):
        """Raise ValueError on any structural or numeric violation."""
        problems = []
        leaf_weight = 0.0
        for nid, node in self.nodes.items():
            if node.kind == KIND_LEAF:
                leaf_weight += node.weight
                kinds = [self.nodes[c].kind for c in node.children]
                if len(node.children) != 2 or kinds != [KIND_VIRTUAL, KIND_VIRTUAL]:
                    problems.append(f"leaf {nid} lacks two virtual children")
            elif node.kind == KIND_INTERNAL:
                kinds = [self.nodes[c].kind for c in node.children]
                if len(node.children) != 2 or KIND_VIRTUAL in kinds:
                    problems.append(f"internal {nid} lacks two non-virtual children")
                child_weight = sum(self.nodes[c].weight for c in node.children)
                if abs(node.weight - child_weight) > 1e-9:
                    problems.append(
                        f"internal {nid} weight {node.weight} != children sum {child_weight}"
                    )
            elif node.kind == KIND_VIRTUAL:
                if node.children:
                    problems.append(f"virtual {nid} has children")
            else:
                problems.append(f"node {nid} has unknown kind {node.kind}")
            for c in node.children:
                if self.nodes[c].parent != nid:
                    problems.append(f"child {c} does not point back to {nid}")
            g = node.gaussian
            gram = g.basis.T @ g.basis
            if not np.allclose(gram, np.eye(g.r), atol=1e-8):
                problems.append(f"node {nid} basis not orthonormal")
        if abs(leaf_weight - 1.0) > 1e-9:
            problems.append(f"leaf weights sum to {leaf_weight}, not 1")
        if problems:
            raise ValueError("; ".join(problems))

    # ------------------------------------------------------------------
    # serialization

    def to_json_dict(self):
        nodes = []
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            g = n.gaussian
            nodes.append(
                {
                    "id": n.id,
                    "kind": n.kind,
                    "parent": n.parent,
                    "children": list(n.children),
                    "weight": n.weight,
                    "cum_score": n.cum_score,
                    "mean": g.mean.tolist(),
                    "basis": g.basis.ravel(order="C").tolist(),
                    "eigs": g.eigs.tolist(),
                    "r_matrix": n.tracker.r_matrix.ravel(order="C").tolist(),
                    "init_scale": n.tracker.init_scale,
                }
            )
        return {
            "format_version": TREE_FORMAT_VERSION,
            "rank": self.rank,
            "noise_var": self.noise_var,
            "cum_error": self.cum_error,
            "rank_reduced": self.rank_reduced,
            "next_id": self._next_id,
            "root_id": self.root_id,
            "config": self.config.to_dict(),
            "nodes": nodes,
        }

    @classmethod
    def from_json_dict(cls, d):
        if d.get("format_version") != TREE_FORMAT_VERSION:
            raise ValueError(f"unsupported tree format version {d.get('format_version')}")
        config = EngineConfig.from_dict(d["config"])
        tree = cls(config, d["noise_var"], d["rank"])
        tree.cum_error = d["cum_error"]
        tree.rank_reduced = d["rank_reduced"]
        tree.root_id = d["root_id"]
        tree._next_id = d["next_id"]
        r = tree.rank
        for nd in d["nodes"]:
            mean = np.asarray(nd["mean"], dtype=np.float64)
            p = mean.shape[0]
            basis = np.asarray(nd["basis"], dtype=np.float64).reshape(p, r)
            gaussian = LowRankGaussian(mean, basis, nd["eigs"], tree.noise_var)
            tracker = TrackerState(
                r,
                nd["init_scale"],
                r_matrix=np.asarray(nd["r_matrix"], dtype=np.float64).reshape(r, r),
            )
            tree.nodes[nd["id"]] = TreeNode(
                nd["id"], gaussian, nd["weight"], tracker, nd["kind"],
                parent=nd["parent"], children=nd["children"], cum_score=nd["cum_score"],
            )
        return tree


# ----------------------------------------------------------------------
# initial model fitting


def _principal_fit(X, rank):
    """Mean, top-`rank` directions/eigenvalues and residual variance of X.

    Works on the economy SVD of the centered sample so no p x p matrix is
    formed. Returns fewer than `rank` directions when the sample is rank
    deficient.
    """
    p, n = X.shape
    mean = X.mean(axis=1)
    centered = X - mean[:, None]
    U, s, _ = np.linalg.svd(centered, full_matrices=False)
    cov_eigs = (s * s) / n
    cutoff = cov_eigs[0] * 1e-10 if cov_eigs.size and cov_eigs[0] > 0 else 0.0
    effective = int((cov_eigs > cutoff).sum())
    r_eff = min(rank, effective)
    basis = U[:, :r_eff]
    eigs = cov_eigs[:r_eff]
    total_var = float((centered * centered).sum()) / n
    residual = (total_var - float(eigs.sum())) / max(p - r_eff, 1)
    return mean, basis, eigs, max(residual, EIG_FLOOR)


INIT_REFINE_ROUNDS = 10
INIT_RANDOM_RESTARTS = 3


def init_tree(training, config):
    """Fit the initial tree from a p x N training matrix.

    The root takes the sample mean and the top-r principal directions;
    the tree is then bisected `config.init_depth` times: each leaf seeds
    two candidate children, training points are routed to the likelier
    child and the children refit on their pools, with the assign/refit
    pass repeated until the partition stabilizes. The mean-offset seeding
    has a stable non-separating fixed point for concentric clusters, so
    a few random-partition restarts are also refined and the best
    partition by data log-likelihood wins. Leaf weights are the
    empirical fractions of training points, so they sum to one.
    """
    X = np.asarray(training, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("training data must be a p x N matrix")
    p, n0 = X.shape
    min_count = max(2 * config.rank, 20)
    if n0 < min_count:
        raise ValueError(f"need at least {min_count} training points, got {n0}")
    if not np.isfinite(X).all():
        raise ValueError("training data contains non-finite values")
    if config.rank >= p:
        raise ValueError(f"rank {config.rank} must be below the dimension {p}")

    mean, basis, eigs, residual = _principal_fit(X, config.rank)
    r_eff = basis.shape[1]
    noise_var = config.noise_var if config.noise_var is not None else residual
    tree = MixtureTree(config, noise_var=noise_var, rank=r_eff)
    if r_eff < config.rank:
        tree.rank_reduced = True
        warnings.warn(
            f"training sample supports rank {r_eff} < requested {config.rank}",
            RuntimeWarning,
        )

    root_id = tree._new_id()
    root = TreeNode(
        root_id,
        LowRankGaussian(mean, basis, eigs, noise_var),
        1.0,
        TrackerState(r_eff),
        KIND_LEAF,
    )
    tree.nodes[root_id] = root
    tree.root_id = root_id

    rng = np.random.default_rng(config.seed)
    assigned = {root_id: np.arange(n0)}
    for _ in range(config.init_depth):
        for leaf_id in tree.leaf_ids():
            cols = assigned[leaf_id]
            if cols.size < 2:
                continue
            leaf = tree.nodes[leaf_id]
            tree._spawn_virtual_children(leaf, seed_score=0.0)
            c1, c2 = (tree.nodes[c] for c in leaf.children)
            data = X[:, cols]
            g1, g2, to_first = _bisect_pool(
                c1.gaussian, c2.gaussian, data, min_count, r_eff, noise_var, rng
            )
            c1.gaussian, c2.gaussian = g1, g2
            leaf.kind = KIND_INTERNAL
            for child, keep in ((c1, to_first), (c2, ~to_first)):
                child.kind = KIND_LEAF
                child_cols = cols[keep]
                assigned[child.id] = child_cols
                child.weight = child_cols.size / n0
            del assigned[leaf_id]

    for leaf_id in tree.leaf_ids():
        tree._spawn_virtual_children(tree.nodes[leaf_id], seed_score=0.0)
    return tree


def _refit_on(pool, fallback, min_count, rank, noise_var):
    if pool.shape[1] >= min_count:
        mean, basis, eigs, _ = _principal_fit(pool, rank)
        if basis.shape[1] == rank:
            return LowRankGaussian(mean, basis, eigs, noise_var)
    return fallback


def _refine_pair(g1, g2, data, min_count, rank, noise_var, start=None):
    """Alternate likelihood assignment and refitting of a component pair.

    Runs from the given components (or an explicit starting partition)
    until the partition stops moving; pools too small to refit keep the
    previous parameters. Returns the refined pair, the selector of
    columns routed to the first component, and the achieved total
    assigned log-likelihood.
    """
    to_first = None
    if start is not None:
        to_first = start
        g1 = _refit_on(data[:, to_first], g1, min_count, rank, noise_var)
        g2 = _refit_on(data[:, ~to_first], g2, min_count, rank, noise_var)
    for _ in range(INIT_REFINE_ROUNDS):
        ll1 = log_likelihood_cols(g1, data)
        ll2 = log_likelihood_cols(g2, data)
        new_to_first = ll1 >= ll2
        if to_first is not None and np.array_equal(new_to_first, to_first):
            break
        to_first = new_to_first
        g1 = _refit_on(data[:, to_first], g1, min_count, rank, noise_var)
        g2 = _refit_on(data[:, ~to_first], g2, min_count, rank, noise_var)
    objective = float(np.maximum(ll1, ll2).sum())
    return g1, g2, to_first, objective


def _bisect_pool(seed1, seed2, data, min_count, rank, noise_var, rng):
    """Best bisection of a training pool over several refined starts."""
    best = _refine_pair(seed1, seed2, data, min_count, rank, noise_var)
    for _ in range(INIT_RANDOM_RESTARTS):
        start = rng.random(data.shape[1]) < 0.5
        if not start.any() or start.all():
            continue
        cand = _refine_pair(seed1, seed2, data, min_count, rank, noise_var, start=start)
        if cand[3] > best[3]:
            best = cand
    g1, g2, to_first, _ = best
    return g1, g2, to_first
