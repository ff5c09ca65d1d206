"""Unsupervised grouping of summary rows.

Flat clustering is a Gaussian mixture fitted by EM (diagonal covariances by
default, full behind config, eigenvalue-floored); the cluster count can be
fixed or chosen by BIC. Hierarchies come in a divisive flavour (recursive
2-means) and an agglomerative flavour (single/complete/average linkage), both
producing the same binary-tree taxonomy type, which can be cut into ordered
classes for the ontology export.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, MissingInputError, NumericalError
from .features import CATEGORICAL_COLUMNS, FactorSummary, NUMERIC_COLUMNS

_LOG_2PI = float(np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# observation encoding
# ---------------------------------------------------------------------------

@dataclass
class EncodingConfig:
    numeric: tuple[str, ...] = NUMERIC_COLUMNS
    categorical: tuple[str, ...] = CATEGORICAL_COLUMNS
    scale: bool = True
    categorical_weight: float = 1.0
    pca_components: int | None = None


@dataclass
class ObservationMatrix:
    """Numeric matrix over encoded summary attributes, with the scaling
    (and optional PCA projection) recorded so the encoding is auditable."""

    X: np.ndarray
    columns: tuple[str, ...]
    scale_mean: np.ndarray
    scale_std: np.ndarray        # 1.0 recorded for columns left unscaled
    scaled_columns: tuple[str, ...]
    pca_loadings: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_cols(self) -> int:
        return self.X.shape[1]


def encode_observations(
    rows: list[FactorSummary], config: EncodingConfig | None = None
) -> ObservationMatrix:
    """Numeric columns z-scored (std > 0 only), categoricals one-hot."""
    config = config or EncodingConfig()
    if not rows:
        raise ConfigError("cannot encode an empty summary table")
    dicts = [r.as_row() for r in rows]
    cols: list[np.ndarray] = []
    names: list[str] = []
    for c in config.numeric:
        cols.append(np.array([float(d[c]) for d in dicts]))
        names.append(c)
    for c in config.categorical:
        values = sorted({str(d[c]) for d in dicts})
        for v in values:
            cols.append(
                config.categorical_weight
                * np.array([1.0 if str(d[c]) == v else 0.0 for d in dicts])
            )
            names.append(f"{c}={v}")
    X = np.column_stack(cols) if cols else np.zeros((len(rows), 0))
    n_num = len(config.numeric)
    mean = np.zeros(X.shape[1])
    std = np.ones(X.shape[1])
    scaled: list[str] = []
    if config.scale and n_num:
        mu = X[:, :n_num].mean(axis=0)
        sd = X[:, :n_num].std(axis=0)
        for i in range(n_num):
            mean[i] = mu[i]
            if sd[i] > 0:
                std[i] = sd[i]
                scaled.append(names[i])
        X = X.copy()
        X[:, :n_num] = (X[:, :n_num] - mean[:n_num]) / std[:n_num]
    om = ObservationMatrix(
        X=X,
        columns=tuple(names),
        scale_mean=mean,
        scale_std=std,
        scaled_columns=tuple(scaled),
    )
    if config.pca_components is not None:
        om = project_pca(om, config.pca_components)
    return om


def project_pca(om: ObservationMatrix, n_components: int) -> ObservationMatrix:
    """Project the encoded matrix onto its top principal components."""
    if n_components < 1 or n_components > om.n_cols:
        raise ConfigError(f"pca_components must lie in [1, {om.n_cols}]")
    Xc = om.X - om.X.mean(axis=0)
    cov = (Xc.T @ Xc) / max(om.n_rows - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:n_components]
    loadings = eigvecs[:, order]
    return ObservationMatrix(
        X=Xc @ loadings,
        columns=tuple(f"PC{i + 1}" for i in range(n_components)),
        scale_mean=om.scale_mean,
        scale_std=om.scale_std,
        scaled_columns=om.scaled_columns,
        pca_loadings=loadings,
    )


# ---------------------------------------------------------------------------
# EM Gaussian mixture
# ---------------------------------------------------------------------------

@dataclass
class EMConfig:
    seed: int = 0
    tol: float = 1e-8
    max_iter: int = 300
    n_restarts: int = 4
    cov_floor: float = 1e-6      # scaled by mean total variance of the data
    covariance: str = "diag"     # "diag" or "full"


@dataclass
class ClusterModel:
    k: int
    weights: np.ndarray              # simplex vector, length k
    means: np.ndarray                # k x d
    covariances: np.ndarray          # k x d x d, positive definite
    assignments: np.ndarray          # argmax responsibility per row
    log_likelihood: float
    n_iter: int
    loglik_history: list[float] = field(default_factory=list)
    converged: bool = True
    covariance_type: str = "diag"

    def labels(self) -> list[str]:
        return [f"C{a + 1}" for a in self.assignments]

    def to_json(self, path: str | Path) -> None:
        doc = {
            "k": self.k,
            "weights": [float(v) for v in self.weights],
            "means": [[float(v) for v in row] for row in self.means],
            "covariances": [
                [[float(v) for v in row] for row in cov] for cov in self.covariances
            ],
            "assignments": [int(a) for a in self.assignments],
            "log_likelihood": self.log_likelihood,
            "n_iter": self.n_iter,
            "loglik_history": [float(v) for v in self.loglik_history],
            "converged": self.converged,
            "covariance_type": self.covariance_type,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True)

    @classmethod
    def from_json(cls, path: str | Path) -> "ClusterModel":
        path = Path(path)
        if not path.exists():
            raise MissingInputError(f"cluster model not found: {path}")
        with open(path) as fh:
            doc = json.load(fh)
        return cls(
            k=int(doc["k"]),
            weights=np.asarray(doc["weights"], dtype=float),
            means=np.asarray(doc["means"], dtype=float),
            covariances=np.asarray(doc["covariances"], dtype=float),
            assignments=np.asarray(doc["assignments"], dtype=int),
            log_likelihood=float(doc["log_likelihood"]),
            n_iter=int(doc["n_iter"]),
            loglik_history=[float(v) for v in doc["loglik_history"]],
            converged=bool(doc["converged"]),
            covariance_type=str(doc["covariance_type"]),
        )


def _log_gaussians(X: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """n x k matrix of log N(x | mu_j, Sigma_j)."""
    n, d = X.shape
    k = means.shape[0]
    out = np.empty((n, k))
    for j in range(k):
        try:
            chol = np.linalg.cholesky(covs[j])
        except np.linalg.LinAlgError:
            raise NumericalError(f"cluster {j} covariance is singular despite the floor")
        diff = X - means[j]
        sol = np.linalg.solve(chol, diff.T)
        maha = np.sum(sol**2, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, j] = -0.5 * (d * _LOG_2PI + logdet + maha)
    return out


def _floor_value(X: np.ndarray, config: EMConfig) -> float:
    total_var = float(np.sum(X.var(axis=0)))
    d = X.shape[1]
    base = total_var / d if total_var > 0 else 1.0
    return config.cov_floor * base


def _m_step(
    X: np.ndarray, resp: np.ndarray, floor: float, covariance: str
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, d = X.shape
    nk = resp.sum(axis=0)
    weights = nk / n
    means = (resp.T @ X) / nk[:, None]
    k = resp.shape[1]
    covs = np.empty((k, d, d))
    for j in range(k):
        diff = X - means[j]
        if covariance == "diag":
            var = (resp[:, j] @ (diff**2)) / nk[j]
            covs[j] = np.diag(np.maximum(var, floor))
        else:
            S = (diff * resp[:, j][:, None]).T @ diff / nk[j]
            S = (S + S.T) / 2.0
            eigvals, eigvecs = np.linalg.eigh(S)
            covs[j] = (eigvecs * np.maximum(eigvals, floor)) @ eigvecs.T
    return weights, means, covs


def _em_single(
    X: np.ndarray, k: int, config: EMConfig, rng: np.random.Generator
) -> ClusterModel:
    n, d = X.shape
    floor = _floor_value(X, config)
    idx = rng.choice(n, size=k, replace=False)
    means = X[idx].copy()
    base_var = np.maximum(X.var(axis=0), floor)
    covs = np.stack([np.diag(base_var)] * k)
    weights = np.full(k, 1.0 / k)

    history: list[float] = []
    converged = False
    resp = None
    for _ in range(config.max_iter):
        log_joint = np.log(weights)[None, :] + _log_gaussians(X, means, covs)
        log_norm = logsumexp(log_joint, axis=1)
        ll = float(log_norm.sum())
        if history and ll < history[-1] - 1e-9:
            raise NumericalError(
                f"EM log-likelihood decreased ({history[-1]} -> {ll})"
            )
        if history and ll - history[-1] < config.tol:
            history.append(ll)
            converged = True
            break
        history.append(ll)
        resp = np.exp(log_joint - log_norm[:, None])
        weights, means, covs = _m_step(X, resp, floor, config.covariance)
    if resp is None or not converged:
        # make assignments consistent with the final parameters
        log_joint = np.log(weights)[None, :] + _log_gaussians(X, means, covs)
        log_norm = logsumexp(log_joint, axis=1)
        if not converged:
            history.append(float(log_norm.sum()))
        resp = np.exp(log_joint - log_norm[:, None])
    return ClusterModel(
        k=k,
        weights=weights,
        means=means,
        covariances=covs,
        assignments=np.argmax(resp, axis=1),
        log_likelihood=history[-1],
        n_iter=len(history),
        loglik_history=history,
        converged=converged,
        covariance_type=config.covariance,
    )


def em_fit(X: ObservationMatrix | np.ndarray, k: int, config: EMConfig | None = None) -> ClusterModel:
    """Best-of-restarts EM fit; restarts are independently seeded and ties
    resolve to the lowest restart index."""
    config = config or EMConfig()
    data = X.X if isinstance(X, ObservationMatrix) else np.asarray(X, dtype=float)
    if data.ndim != 2:
        raise ConfigError("observations must form a 2-D matrix")
    n = data.shape[0]
    if k < 1:
        raise ConfigError("k must be >= 1")
    if k > n:
        raise ConfigError(f"k={k} exceeds the number of observations ({n})")
    if config.covariance not in ("diag", "full"):
        raise ConfigError(f"unknown covariance type {config.covariance!r}")
    best: ClusterModel | None = None
    for r in range(max(config.n_restarts, 1)):
        rng = np.random.default_rng([config.seed, r])
        model = _em_single(data, k, config, rng)
        if best is None or model.log_likelihood > best.log_likelihood:
            best = model
    return best


def em_predict(
    model: ClusterModel, X: ObservationMatrix | np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Assignments and responsibilities for new rows under a fitted model."""
    data = X.X if isinstance(X, ObservationMatrix) else np.asarray(X, dtype=float)
    if data.ndim != 2 or data.shape[1] != model.means.shape[1]:
        raise ConfigError(
            f"dimension mismatch: model expects {model.means.shape[1]} columns"
        )
    log_joint = np.log(model.weights)[None, :] + _log_gaussians(
        data, model.means, model.covariances
    )
    resp = np.exp(log_joint - logsumexp(log_joint, axis=1)[:, None])
    return np.argmax(resp, axis=1), resp


def _n_params(k: int, d: int, covariance: str) -> int:
    cov_params = k * d if covariance == "diag" else k * d * (d + 1) // 2
    return (k - 1) + k * d + cov_params


def bic(model: ClusterModel, n: int) -> float:
    d = model.means.shape[1]
    p = _n_params(model.k, d, model.covariance_type)
    return -2.0 * model.log_likelihood + p * float(np.log(n))


def select_k(
    X: ObservationMatrix | np.ndarray, k_max: int, config: EMConfig | None = None
) -> ClusterModel:
    """Fit k = 1..k_max and keep the lowest-BIC model (ties to smaller k)."""
    data = X.X if isinstance(X, ObservationMatrix) else np.asarray(X, dtype=float)
    n = data.shape[0]
    if k_max < 1:
        raise ConfigError("k_max must be >= 1")
    best: tuple[float, ClusterModel] | None = None
    for k in range(1, min(k_max, n) + 1):
        model = em_fit(data, k, config)
        score = bic(model, n)
        if best is None or score < best[0]:
            best = (score, model)
    return best[1]


# ---------------------------------------------------------------------------
# hierarchies
# ---------------------------------------------------------------------------

@dataclass
class TaxNode:
    indices: tuple[int, ...]
    height: float
    left: "TaxNode | None" = None
    right: "TaxNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None and self.right is None


@dataclass
class Taxonomy:
    root: TaxNode
    n: int
    method: str
    merges: list[tuple[tuple[int, ...], tuple[int, ...], float]] = field(
        default_factory=list
    )

    def leaves(self) -> list[TaxNode]:
        out: list[TaxNode] = []

        def walk(node: TaxNode) -> None:
            if node.is_leaf:
                out.append(node)
            else:
                walk(node.left)
                walk(node.right)

        walk(self.root)
        return out

    def to_json(self, path: str | Path) -> None:
        def doc(node: TaxNode) -> dict:
            d = {"indices": list(node.indices), "height": node.height}
            if not node.is_leaf:
                d["children"] = [doc(node.left), doc(node.right)]
            return d

        with open(path, "w") as fh:
            json.dump(
                {"method": self.method, "n": self.n, "root": doc(self.root)},
                fh,
                sort_keys=True,
            )


def _sse(X: np.ndarray) -> float:
    if X.shape[0] == 0:
        return 0.0
    return float(np.sum((X - X.mean(axis=0)) ** 2))


@dataclass
class DivisiveConfig:
    max_depth: int | None = None
    min_leaf: int = 1
    seed: int = 0
    min_improvement: float = 1e-3   # required fractional SSE reduction
    n_restarts: int = 4


def _two_means(
    X: np.ndarray, rng: np.random.Generator, min_leaf: int, n_restarts: int
) -> np.ndarray | None:
    """Best 2-means labeling by total SSE, or None if no admissible split."""
    n = X.shape[0]
    best_labels = None
    best_sse = np.inf
    for _ in range(max(n_restarts, 1)):
        centers = X[rng.choice(n, size=2, replace=False)].copy()
        labels = np.zeros(n, dtype=int)
        for _ in range(100):
            dist = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = np.argmin(dist, axis=1)
            for side in (0, 1):
                if not np.any(new_labels == side):
                    far = int(np.argmax(dist[:, 1 - side]))
                    new_labels[far] = side
            changed = not np.array_equal(new_labels, labels)
            labels = new_labels
            for side in (0, 1):
                centers[side] = X[labels == side].mean(axis=0)
            if not changed:
                break
        if min(np.sum(labels == 0), np.sum(labels == 1)) < min_leaf:
            continue
        sse = _sse(X[labels == 0]) + _sse(X[labels == 1])
        if sse < best_sse:
            best_sse = sse
            best_labels = labels
    return best_labels


def divisive_hierarchy(
    X: ObservationMatrix | np.ndarray, config: DivisiveConfig | None = None
) -> Taxonomy:
    """Top-down taxonomy: recursively split by 2-means until the split stops
    paying for itself (fractional SSE reduction below min_improvement), the
    depth or leaf-size limits bite, or a node has no scatter left. Node
    heights are the node SSEs, monotone from root to leaves."""
    config = config or DivisiveConfig()
    data = X.X if isinstance(X, ObservationMatrix) else np.asarray(X, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    n = data.shape[0]
    if n < 1:
        raise ConfigError("need at least one observation")
    counter = [0]

    def build(indices: tuple[int, ...], depth: int) -> TaxNode:
        sub = data[list(indices)]
        height = _sse(sub)
        node = TaxNode(indices=indices, height=height)
        if (
            len(indices) < 2 * config.min_leaf
            or len(indices) < 2
            or height == 0.0
            or (config.max_depth is not None and depth >= config.max_depth)
        ):
            return node
        rng = np.random.default_rng([config.seed, counter[0]])
        counter[0] += 1
        labels = _two_means(sub, rng, config.min_leaf, config.n_restarts)
        if labels is None:
            return node
        child_sse = _sse(sub[labels == 0]) + _sse(sub[labels == 1])
        if (height - child_sse) < config.min_improvement * height:
            return node
        left_idx = tuple(indices[i] for i in range(len(indices)) if labels[i] == 0)
        right_idx = tuple(indices[i] for i in range(len(indices)) if labels[i] == 1)
        if min(left_idx) > min(right_idx):
            left_idx, right_idx = right_idx, left_idx
        node.left = build(left_idx, depth + 1)
        node.right = build(right_idx, depth + 1)
        return node

    root = build(tuple(range(n)), 0)
    return Taxonomy(root=root, n=n, method="divisive")


_LINKAGES = ("single", "complete", "average")


def agglomerative_hierarchy(
    X: ObservationMatrix | np.ndarray, linkage: str = "single"
) -> Taxonomy:
    """Bottom-up taxonomy under single/complete/average linkage on Euclidean
    distances. Ties pick the pair with the lowest (then second-lowest) member
    index; n-1 merges, heights non-decreasing."""
    if linkage not in _LINKAGES:
        raise ConfigError(f"unknown linkage {linkage!r}; pick one of {_LINKAGES}")
    data = X.X if isinstance(X, ObservationMatrix) else np.asarray(X, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    n = data.shape[0]
    if n < 1:
        raise ConfigError("need at least one observation")
    pdist = np.sqrt(((data[:, None, :] - data[None, :, :]) ** 2).sum(axis=2))
    clusters: list[TaxNode] = [TaxNode(indices=(i,), height=0.0) for i in range(n)]
    merges: list[tuple[tuple[int, ...], tuple[int, ...], float]] = []

    def cluster_dist(a: TaxNode, b: TaxNode) -> float:
        block = pdist[np.ix_(a.indices, b.indices)]
        if linkage == "single":
            return float(block.min())
        if linkage == "complete":
            return float(block.max())
        return float(block.mean())

    while len(clusters) > 1:
        best = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                d = cluster_dist(clusters[i], clusters[j])
                key = (d, min(clusters[i].indices), min(clusters[j].indices))
                if best is None or key < best[0]:
                    best = (key, i, j)
        key, i, j = best
        d = key[0]
        a, b = clusters[i], clusters[j]
        if min(a.indices) > min(b.indices):
            a, b = b, a
        merged = TaxNode(
            indices=tuple(sorted(a.indices + b.indices)), height=d, left=a, right=b
        )
        merges.append((a.indices, b.indices, d))
        clusters = [c for idx, c in enumerate(clusters) if idx not in (i, j)]
        clusters.append(merged)
    return Taxonomy(root=clusters[0], n=n, method=f"agglomerative:{linkage}", merges=merges)


# ---------------------------------------------------------------------------
# taxonomy -> ontology classes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaxonomyClass:
    name: str
    parent: str | None
    members: tuple[int, ...]


def _cut_by_height(node: TaxNode, height: float) -> list[TaxNode]:
    if node.is_leaf or node.height <= height:
        return [node]
    return _cut_by_height(node.left, height) + _cut_by_height(node.right, height)


def _cut_by_count(root: TaxNode, m: int) -> list[TaxNode]:
    frontier = [root]
    while len(frontier) < m:
        expandable = [nd for nd in frontier if not nd.is_leaf]
        if not expandable:
            raise ConfigError(
                f"cannot cut into {m} classes: only {len(frontier)} leaves available"
            )
        node = max(expandable, key=lambda nd: (nd.height, -min(nd.indices)))
        frontier.remove(node)
        frontier.extend([node.left, node.right])
    return frontier


def taxonomy_to_classes(
    taxonomy: Taxonomy,
    height: float | None = None,
    leaf_count: int | None = None,
    root_name: str = "ROOT",
) -> list[TaxonomyClass]:
    """Cut the taxonomy and emit ordered class declarations.

    Exactly one of height / leaf_count selects the cut. The returned list
    starts with the root class (all observations) followed by C1..Cm, ordered
    by smallest member index; classes partition the observations.
    """
    if (height is None) == (leaf_count is None):
        raise ConfigError("specify exactly one of height or leaf_count")
    if height is not None:
        if height < 0:
            raise ConfigError("cut height must be >= 0")
        nodes = _cut_by_height(taxonomy.root, height)
    else:
        n_leaves = len(taxonomy.leaves())
        if not 1 <= leaf_count <= n_leaves:
            raise ConfigError(
                f"leaf_count must lie in [1, {n_leaves}], got {leaf_count}"
            )
        nodes = _cut_by_count(taxonomy.root, leaf_count)
    nodes.sort(key=lambda nd: min(nd.indices))
    classes = [
        TaxonomyClass(name=root_name, parent=None, members=tuple(range(taxonomy.n)))
    ]
    for i, nd in enumerate(nodes):
        classes.append(
            TaxonomyClass(name=f"C{i + 1}", parent=root_name, members=tuple(sorted(nd.indices)))
        )
    return classes


def classes_to_json(classes: list[TaxonomyClass], path: str | Path) -> None:
    doc = [
        {"name": c.name, "parent": c.parent, "members": list(c.members)}
        for c in classes
    ]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
