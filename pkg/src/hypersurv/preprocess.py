"""Standardisation, Spearman feature clustering and bootstrap feature ranking."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import digamma
from scipy.stats import rankdata

from .cohort import BinaryOutcome, Cohort, DataError, SurvivalOutcome
from .linmod import ElasticNetConfig, fit_cox_elasticnet
from .resample import bootstrap_indices

logger = logging.getLogger(__name__)

BOOTSTRAP_COX_CONFIG = ElasticNetConfig(alpha=0.1, l1_ratio=0.5)


# --------------------------------------------------------------------------
# Standardisation
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StandardizationParams:
    feature_names: tuple[str, ...]
    mean: np.ndarray
    scale: np.ndarray
    constant: np.ndarray  # bool flag per feature

    def to_dict(self) -> dict:
        return {
            name: {"mean": float(m), "scale": float(s), "constant": bool(c)}
            for name, m, s, c in zip(self.feature_names, self.mean, self.scale, self.constant)
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StandardizationParams":
        names = tuple(data)
        return cls(
            names,
            np.array([data[n]["mean"] for n in names], dtype=np.float64),
            np.array([data[n]["scale"] for n in names], dtype=np.float64),
            np.array([data[n].get("constant", False) for n in names], dtype=bool),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "StandardizationParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_standardizer(cohort: Cohort) -> StandardizationParams:
    """Column means and population standard deviations; constant columns get scale 1."""
    if len(cohort) < 2:
        raise DataError("standardisation needs at least 2 patients")
    X = cohort.X
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    constant = ~(scale > 0)
    if constant.any():
        flagged = [n for n, c in zip(cohort.feature_names, constant) if c]
        logger.warning("constant features get unit scale: %s", ", ".join(flagged))
    scale = np.where(constant, 1.0, scale)
    return StandardizationParams(cohort.feature_names, mean, scale, constant)


def apply_standardizer(params: StandardizationParams, cohort: Cohort) -> Cohort:
    if tuple(cohort.feature_names) != params.feature_names:
        raise DataError(
            f"cohort features ({len(cohort.feature_names)}) do not match standardiser "
            f"({len(params.feature_names)}) in name and order"
        )
    return cohort.with_features((cohort.X - params.mean) / params.scale, cohort.feature_names)


# --------------------------------------------------------------------------
# Correlation clustering
# --------------------------------------------------------------------------


def spearman_matrix(data) -> np.ndarray:
    """Pairwise Spearman correlation of columns, average ranks for ties.

    Accepts a Cohort or an n x p array. Constant columns correlate 0 with everything else.
    """
    X = data.X if isinstance(data, Cohort) else np.asarray(data, dtype=np.float64)
    n, p = X.shape
    if n < 3:
        raise DataError("Spearman correlation needs at least 3 patients")
    R = np.column_stack([rankdata(X[:, j]) for j in range(p)]) if p else np.zeros((n, 0))
    R = R - R.mean(axis=0)
    ss = np.sum(R * R, axis=0)
    constant = ss == 0
    if constant.any():
        logger.warning("constant columns in Spearman matrix: %s", np.flatnonzero(constant).tolist())
    safe = np.where(constant, 1.0, ss)
    # one square root of the product keeps small hand examples exact
    rho = np.clip((R.T @ R) / np.sqrt(np.outer(safe, safe)), -1.0, 1.0)
    rho[constant, :] = 0.0
    rho[:, constant] = 0.0
    np.fill_diagonal(rho, 1.0)
    return rho


@dataclass(frozen=True)
class ClusterAssignment:
    clusters: tuple[tuple[str, ...], ...]
    representatives: tuple[str, ...]

    def to_dict(self) -> dict:
        return {rep: list(members) for rep, members in zip(self.representatives, self.clusters)}

    @classmethod
    def from_dict(cls, data: dict) -> "ClusterAssignment":
        return cls(tuple(tuple(v) for v in data.values()), tuple(data))


def cluster_features(
    corr, feature_names: Sequence[str] | None = None, threshold: float = 0.9
) -> ClusterAssignment:
    """Complete-linkage agglomeration on |rho|: two clusters merge only while every
    cross pair exceeds the threshold, so each emitted cluster satisfies |rho| > threshold
    for all member pairs. The representative maximises summed |rho| to its cluster mates.
    """
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    A = np.abs(np.asarray(corr, dtype=np.float64))
    p = A.shape[0]
    if A.shape != (p, p) or not np.allclose(A, A.T):
        raise ValueError("correlation matrix must be square and symmetric")
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(p)]
    if len(names) != p:
        raise ValueError("feature_names length does not match the matrix")

    # link[i, j]: min |rho| between members of cluster i and cluster j
    link = A.copy()
    np.fill_diagonal(link, -np.inf)
    alive = np.ones(p, dtype=bool)
    members = [[j] for j in range(p)]
    while True:
        masked = np.where(alive[:, None] & alive[None, :], link, -np.inf)
        flat = int(np.argmax(masked))  # first maximum in row-major order: lowest index pair
        i, j = divmod(flat, p)
        if not masked[i, j] > threshold:
            break
        i, j = min(i, j), max(i, j)
        members[i].extend(members[j])
        members[j] = []
        alive[j] = False
        merged = np.minimum(link[i], link[j])
        link[i, :] = merged
        link[:, i] = merged
        link[i, i] = -np.inf

    clusters, reps = [], []
    for idx in (m for m in members if m):
        group = sorted(idx, key=lambda k: names[k])
        sub = A[np.ix_(group, group)]
        totals = sub.sum(axis=1) - np.diag(sub)
        best = max(totals)
        rep = min(names[k] for k, t in zip(group, totals) if t == best)
        clusters.append(tuple(names[k] for k in group))
        reps.append(rep)
    order = sorted(range(len(reps)), key=lambda c: names.index(reps[c]))
    return ClusterAssignment(tuple(clusters[c] for c in order), tuple(reps[c] for c in order))


def reduce_to_representatives(cohort: Cohort, assignment: ClusterAssignment) -> Cohort:
    keep = set(assignment.representatives)
    return cohort.select_features([n for n in cohort.feature_names if n in keep])


# --------------------------------------------------------------------------
# Mutual information
# --------------------------------------------------------------------------


def mutual_information_score(feature, labels, k_neighbors: int = 3) -> float:
    """Nearest-neighbour estimate (in nats) of I(feature; label) for a continuous feature
    and a discrete label, following the Kraskov-style construction of Ross (2014).
    """
    x = np.asarray(feature, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if x.shape != y.shape:
        raise ValueError("feature and labels lengths differ")
    classes, counts = np.unique(y, return_counts=True)
    if classes.size < 2:
        logger.warning("mutual information with a single-class label is 0")
        return 0.0
    if np.ptp(x) == 0:
        return 0.0
    usable = np.isin(y, classes[counts > 1])
    x, y = x[usable], y[usable]
    n = x.size
    radius = np.empty(n)
    k_all = np.empty(n)
    label_count = np.empty(n)
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        k = min(k_neighbors, idx.size - 1)
        xc = x[idx]
        d = np.abs(xc[:, None] - xc[None, :])
        np.fill_diagonal(d, np.inf)
        radius[idx] = np.partition(d, k - 1, axis=1)[:, k - 1]
        k_all[idx] = k
        label_count[idx] = idx.size
    # points strictly closer than the k-th same-class neighbour, the point itself included
    # compare distances, not shifted coordinates: x +/- r can round onto the k-th neighbour
    m_all = np.empty(n)
    for start in range(0, n, 512):
        sl = slice(start, start + 512)
        d = np.abs(x[sl, None] - x[None, :])
        r = radius[sl, None]
        # a zero radius (tied values) counts the exact duplicates, the point itself included
        m_all[sl] = ((d < r) | ((r == 0) & (d == 0))).sum(axis=1)
    mi = digamma(n) + np.mean(digamma(k_all)) - np.mean(digamma(label_count)) - np.mean(digamma(m_all))
    return float(max(mi, 0.0))


# --------------------------------------------------------------------------
# Bootstrap ranking
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FeatureRanking:
    feature_names: tuple[str, ...]
    cumulative_scores: np.ndarray

    def top(self, n: int) -> list[str]:
        return list(self.feature_names[:n])

    def to_dict(self) -> dict:
        return {n: float(s) for n, s in zip(self.feature_names, self.cumulative_scores)}

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureRanking":
        return cls(tuple(data), np.array(list(data.values()), dtype=np.float64))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "FeatureRanking":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _endpoint_kind(cohort: Cohort, endpoint: str) -> str:
    kinds = set()
    for rec in cohort.patients:
        o = rec.outcomes.get(endpoint)
        if o is None:
            raise DataError(f"patient {rec.id} lacks endpoint {endpoint!r}")
        kinds.add("classification" if isinstance(o, BinaryOutcome) else "survival")
    if len(kinds) != 1:
        raise DataError(f"endpoint {endpoint!r} mixes outcome types")
    return kinds.pop()


def _bootstrap_scores(X, target, task, rng, cox_cfg, k_neighbors, informative) -> np.ndarray:
    idx = bootstrap_indices(X.shape[0], rng)
    Xb = X[idx]
    p = X.shape[1]
    if task == "classification":
        yb = target[idx]
        scores = np.array([mutual_information_score(Xb[:, j], yb, k_neighbors) for j in range(p)])
    else:
        times, events = target
        if not events[idx].any():
            return np.zeros(p)
        fit = fit_cox_elasticnet(Xb, times[idx], events[idx], cox_cfg)
        scores = np.abs(fit.coefficients)
    scores = np.where(informative, scores, 0.0)
    total = scores.sum()
    if total > 0:
        return scores / total
    return informative / max(informative.sum(), 1)


def bootstrap_rank_features(
    cohort: Cohort,
    endpoint: str,
    task: str,
    n_bootstrap: int = 100,
    seed: int = 0,
    cox_config: ElasticNetConfig = BOOTSTRAP_COX_CONFIG,
    k_neighbors: int = 3,
) -> FeatureRanking:
    """Rank features by their summed per-bootstrap normalised scores and drop zero scorers.

    Bootstrap b draws from its own generator seeded by (seed, b), so any execution order of
    the iterations gives the same ranking.
    """
    kind = _endpoint_kind(cohort, endpoint)
    if kind != task:
        raise DataError(f"endpoint {endpoint!r} is a {kind} endpoint, not {task}")
    X = cohort.X
    if task == "classification":
        target = cohort.labels(endpoint)
    else:
        target = cohort.survival(endpoint)
    # constant columns carry no information and never score
    informative = (X.std(axis=0) > 0).astype(np.float64)
    cumulative = np.zeros(X.shape[1])
    for b in range(n_bootstrap):
        rng = np.random.default_rng([seed, b])
        cumulative += _bootstrap_scores(X, target, task, rng, cox_config, k_neighbors, informative)
    names = cohort.feature_names
    order = sorted(range(len(names)), key=lambda j: (-cumulative[j], names[j]))
    kept = [j for j in order if cumulative[j] > 0]
    return FeatureRanking(tuple(names[j] for j in kept), cumulative[kept])
