"""Stratified k-fold splits, bootstrap resampling and ADASYN oversampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cohort import BinaryOutcome, Cohort, DataError, PatientRecord, SurvivalOutcome


@dataclass(frozen=True, eq=False)
class FoldSplit:
    assignments: np.ndarray  # fold index per patient
    k: int

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def validation_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def folds(self):
        for f in range(self.k):
            yield f, self.train_indices(f), self.validation_indices(f)


def strata_for(cohort: Cohort, endpoint: str) -> np.ndarray:
    """Class label for binary endpoints, event flag for survival endpoints."""
    if not cohort.patients:
        raise DataError("empty cohort")
    first = cohort.patients[0].outcomes.get(endpoint)
    if isinstance(first, BinaryOutcome):
        return cohort.labels(endpoint)
    if isinstance(first, SurvivalOutcome):
        return cohort.survival(endpoint)[1].astype(np.int64)
    raise DataError(f"patient {cohort.patients[0].id} has no outcome {endpoint!r}")


def stratified_kfold(cohort: Cohort, endpoint: str, k: int = 5, seed: int = 0) -> FoldSplit:
    """Shuffle each stratum, then deal all strata in sequence round-robin into k folds.

    Dealing continues across strata, so fold sizes differ by at most one and each fold's
    stratum count is the floor or ceiling of its proportional share.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    strata = strata_for(cohort, endpoint)
    rng = np.random.default_rng(seed)
    assignments = np.empty(len(cohort), dtype=np.int64)
    position = 0
    for value in np.unique(strata):
        members = np.flatnonzero(strata == value)
        if members.size < k:
            raise DataError(f"stratum {endpoint}={value} has {members.size} patients, fewer than k={k}")
        members = rng.permutation(members)
        assignments[members] = (position + np.arange(members.size)) % k
        position += members.size
    return FoldSplit(assignments, k)


def bootstrap_indices(n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("cannot bootstrap an empty sample")
    return rng.integers(0, n, size=n)


def bootstrap_sample(cohort: Cohort, seed) -> Cohort:
    """n draws with replacement; repeated patients get `#<copy>` id suffixes."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = bootstrap_indices(len(cohort), rng)
    counts: dict[int, int] = {}
    patients = []
    for i in idx:
        rec = cohort.patients[i]
        c = counts.get(i, 0)
        counts[i] = c + 1
        pid = rec.id if c == 0 else f"{rec.id}#{c}"
        patients.append(PatientRecord(pid, rec.features, rec.outcomes))
    return Cohort(tuple(patients), cohort.feature_names)


# --------------------------------------------------------------------------
# ADASYN
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SyntheticProvenance:
    """Per synthetic row: the minority seed row, the minority neighbour, and the mixing weight."""

    seed_index: np.ndarray
    neighbor_index: np.ndarray
    lam: np.ndarray

    def to_dict(self) -> dict:
        return {
            "seed_index": self.seed_index.tolist(),
            "neighbor_index": self.neighbor_index.tolist(),
            "lambda": self.lam.tolist(),
        }


def _sq_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def _nearest(dist: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest entries per row, ties to the lower index."""
    order = np.argsort(dist, axis=1, kind="stable")
    return order[:, :k]


def adasyn_oversample(
    X,
    y,
    k_neighbors: int = 5,
    beta: float = 1.0,
    seed=0,
    return_provenance: bool = False,
):
    """Adaptive synthetic oversampling of the minority class.

    Synthetic rows are appended after the originals. With `return_provenance` the result is
    `(X_res, y_res, provenance)` where provenance indexes into the input rows.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be n x p with one label per row")
    classes, counts = np.unique(y, return_counts=True)
    if classes.size != 2:
        raise ValueError("ADASYN needs exactly two classes")
    minority = classes[np.argmin(counts)] if counts[0] != counts[1] else classes[1]
    min_idx = np.flatnonzero(y == minority)
    n_min = min_idx.size
    n_maj = y.size - n_min
    empty = SyntheticProvenance(np.zeros(0, int), np.zeros(0, int), np.zeros(0))
    G = int(round((n_maj - n_min) * beta))
    if G <= 0:
        out = (X.copy(), y.copy())
        return (*out, empty) if return_provenance else out
    if n_min <= k_neighbors:
        raise ValueError(f"minority class has {n_min} rows, needs more than k_neighbors={k_neighbors}")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    Xm = X[min_idx]

    # difficulty ratio: share of majority rows among each minority row's k neighbours
    d_all = _sq_distances(Xm, X)
    d_all[np.arange(n_min), min_idx] = np.inf
    nn_all = _nearest(d_all, k_neighbors)
    r = (y[nn_all] != minority).sum(axis=1) / k_neighbors
    total = r.sum()
    r_hat = r / total if total > 0 else np.full(n_min, 1.0 / n_min)
    g = np.rint(r_hat * G).astype(np.int64)

    d_min = _sq_distances(Xm, Xm)
    np.fill_diagonal(d_min, np.inf)
    nn_min = _nearest(d_min, k_neighbors)

    seeds, neighbors, lams = [], [], []
    for i in np.flatnonzero(g > 0):
        choice = nn_min[i, rng.integers(0, k_neighbors, size=g[i])]
        lam = rng.uniform(0.0, 1.0, size=g[i])
        while np.any(lam == 0.0):
            lam[lam == 0.0] = rng.uniform(0.0, 1.0, size=int(np.sum(lam == 0.0)))
        seeds.append(np.full(g[i], i))
        neighbors.append(choice)
        lams.append(lam)
    if not seeds:
        out = (X.copy(), y.copy())
        return (*out, empty) if return_provenance else out
    s = np.concatenate(seeds)
    nb = np.concatenate(neighbors)
    lam = np.concatenate(lams)
    synth = Xm[s] + lam[:, None] * (Xm[nb] - Xm[s])
    X_res = np.vstack([X, synth])
    y_res = np.concatenate([y, np.full(s.size, minority)])
    if return_provenance:
        return X_res, y_res, SyntheticProvenance(min_idx[s], min_idx[nb], lam)
    return X_res, y_res
