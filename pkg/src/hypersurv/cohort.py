"""Patient data model, CSV ingestion, endpoint binarization and synthetic cohorts."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_BINARIZATION_DAYS = 730.0


class DataError(ValueError):
    """Raised for malformed or inconsistent cohort data."""


@dataclass(frozen=True)
class SurvivalOutcome:
    time_days: float
    event: bool

    def __post_init__(self):
        t = float(self.time_days)
        if not math.isfinite(t) or t < 0:
            raise DataError(f"survival time must be finite and non-negative, got {self.time_days!r}")
        object.__setattr__(self, "time_days", t)
        object.__setattr__(self, "event", bool(self.event))


@dataclass(frozen=True)
class BinaryOutcome:
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"binary label must be 0 or 1, got {self.label!r}")
        object.__setattr__(self, "label", int(self.label))


Outcome = Union[SurvivalOutcome, BinaryOutcome]


@dataclass(frozen=True)
class PatientRecord:
    id: str
    features: np.ndarray
    outcomes: Mapping[str, Outcome] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise DataError("patient id must be non-empty")
        x = np.array(self.features, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise DataError(f"patient {self.id}: features contain NaN/Inf")
        x.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "outcomes", MappingProxyType(dict(self.outcomes)))

    def __reduce__(self):
        return (PatientRecord, (self.id, np.array(self.features), dict(self.outcomes)))


@dataclass(frozen=True)
class Cohort:
    """Ordered patients; the position of a patient is its node index in any graph."""

    patients: tuple[PatientRecord, ...]
    feature_names: tuple[str, ...]

    def __post_init__(self):
        patients = tuple(self.patients)
        names = tuple(self.feature_names)
        object.__setattr__(self, "patients", patients)
        object.__setattr__(self, "feature_names", names)
        seen = set()
        for rec in patients:
            if rec.id in seen:
                raise DataError(f"duplicate id {rec.id}")
            seen.add(rec.id)
            if rec.features.shape[0] != len(names):
                raise DataError(
                    f"patient {rec.id}: {rec.features.shape[0]} features, expected {len(names)}"
                )
        if patients:
            X = np.vstack([rec.features for rec in patients])
        else:
            X = np.zeros((0, len(names)))
        X.setflags(write=False)
        object.__setattr__(self, "_X", X)

    def __len__(self) -> int:
        return len(self.patients)

    @property
    def X(self) -> np.ndarray:
        """Read-only n x p feature matrix."""
        return self._X

    @property
    def ids(self) -> list[str]:
        return [rec.id for rec in self.patients]

    def has_endpoint(self, endpoint: str) -> bool:
        return all(endpoint in rec.outcomes for rec in self.patients)

    def labels(self, endpoint: str) -> np.ndarray:
        out = np.empty(len(self), dtype=np.int64)
        for i, rec in enumerate(self.patients):
            o = rec.outcomes.get(endpoint)
            if not isinstance(o, BinaryOutcome):
                raise DataError(f"patient {rec.id} has no binary outcome {endpoint!r}")
            out[i] = o.label
        return out

    def survival(self, endpoint: str) -> tuple[np.ndarray, np.ndarray]:
        times = np.empty(len(self))
        events = np.empty(len(self), dtype=bool)
        for i, rec in enumerate(self.patients):
            o = rec.outcomes.get(endpoint)
            if not isinstance(o, SurvivalOutcome):
                raise DataError(f"patient {rec.id} has no survival outcome {endpoint!r}")
            times[i] = o.time_days
            events[i] = o.event
        return times, events

    def subset(self, indices: Sequence[int]) -> "Cohort":
        return Cohort(tuple(self.patients[i] for i in indices), self.feature_names)

    def with_features(self, X: np.ndarray, feature_names: Sequence[str]) -> "Cohort":
        """Same patients and outcomes, new feature matrix."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape != (len(self), len(feature_names)):
            raise DataError(f"feature matrix shape {X.shape} does not match cohort")
        patients = tuple(
            PatientRecord(rec.id, X[i], rec.outcomes) for i, rec in enumerate(self.patients)
        )
        return Cohort(patients, tuple(feature_names))

    def select_features(self, names: Sequence[str]) -> "Cohort":
        index = {name: j for j, name in enumerate(self.feature_names)}
        missing = [n for n in names if n not in index]
        if missing:
            raise DataError(f"cohort lacks features: {', '.join(missing)}")
        cols = [index[n] for n in names]
        return self.with_features(self.X[:, cols], names)


# --------------------------------------------------------------------------
# CSV ingestion
# --------------------------------------------------------------------------


def _parse_endpoint_columns(header: Sequence[str]) -> tuple[dict[str, str], dict[str, tuple[str, str]]]:
    """Map `<name>_label` columns to binary endpoints, `<name>_time`/`<name>_event` pairs to survival."""
    binary = {}
    survival = {}
    cols = set(header)
    for col in header[1:]:
        if col.endswith("_label"):
            binary[col[: -len("_label")]] = col
        elif col.endswith("_time"):
            name = col[: -len("_time")]
            if f"{name}_event" not in cols:
                raise DataError(f"endpoint column {col} has no matching {name}_event column")
            survival[name] = (col, f"{name}_event")
        elif col.endswith("_event"):
            if f"{col[: -len('_event')]}_time" not in cols:
                raise DataError(f"endpoint column {col} has no matching time column")
        else:
            raise DataError(f"unrecognised endpoint column {col!r}")
    return binary, survival


def _parse_flag(value: str, where: str) -> int:
    try:
        f = float(value)
    except ValueError:
        raise DataError(f"{where}: expected 0 or 1, got {value!r}") from None
    if f not in (0.0, 1.0):
        raise DataError(f"{where}: expected 0 or 1, got {value!r}")
    return int(f)


def load_cohort(features_path: str | Path, endpoints_path: str | Path) -> Cohort:
    features_path = Path(features_path)
    endpoints_path = Path(endpoints_path)
    for p in (features_path, endpoints_path):
        if not p.exists():
            raise DataError(f"file not found: {p}")

    with features_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{features_path}: empty file") from None
        if not header or header[0] != "patient_id":
            raise DataError(f"{features_path}: first column must be patient_id")
        feature_names = tuple(header[1:])
        rows = []
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{features_path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            pid = row[0].strip()
            if pid in seen:
                raise DataError(f"duplicate id {pid}")
            seen.add(pid)
            values = []
            for name, cell in zip(feature_names, row[1:]):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{features_path}:{lineno}: non-numeric value {cell!r} in column {name}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(f"{features_path}:{lineno}: non-finite value in column {name}")
                values.append(v)
            rows.append((pid, values))

    outcomes: dict[str, dict[str, Outcome]] = {}
    with endpoints_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if not header or header[0] != "patient_id":
            raise DataError(f"{endpoints_path}: first column must be patient_id")
        binary_cols, survival_cols = _parse_endpoint_columns(header)
        for lineno, row in enumerate(reader, start=2):
            pid = row["patient_id"].strip()
            if pid not in seen:
                raise DataError(f"{endpoints_path}:{lineno}: endpoint id {pid} has no feature row")
            if pid in outcomes:
                raise DataError(f"duplicate id {pid} in {endpoints_path}")
            rec: dict[str, Outcome] = {}
            for name, col in binary_cols.items():
                cell = (row[col] or "").strip()
                if cell:
                    rec[name] = BinaryOutcome(_parse_flag(cell, f"{endpoints_path}:{lineno}:{col}"))
            for name, (tcol, ecol) in survival_cols.items():
                tcell = (row[tcol] or "").strip()
                ecell = (row[ecol] or "").strip()
                if not tcell and not ecell:
                    continue
                if not tcell or not ecell:
                    raise DataError(f"{endpoints_path}:{lineno}: {name} needs both time and event")
                try:
                    t = float(tcell)
                except ValueError:
                    raise DataError(f"{endpoints_path}:{lineno}: non-numeric {tcol} {tcell!r}") from None
                ev = _parse_flag(ecell, f"{endpoints_path}:{lineno}:{ecol}")
                rec[name] = SurvivalOutcome(t, bool(ev))
            outcomes[pid] = rec

    patients = tuple(PatientRecord(pid, values, outcomes.get(pid, {})) for pid, values in rows)
    return Cohort(patients, feature_names)


def save_cohort(cohort: Cohort, features_path: str | Path, endpoints_path: str | Path) -> None:
    """Write the two CSV files read by `load_cohort`. Floats use repr so a reload is exact."""
    binary = sorted({k for r in cohort.patients for k, o in r.outcomes.items() if isinstance(o, BinaryOutcome)})
    survival = sorted({k for r in cohort.patients for k, o in r.outcomes.items() if isinstance(o, SurvivalOutcome)})
    with Path(features_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", *cohort.feature_names])
        for rec in cohort.patients:
            w.writerow([rec.id, *(repr(float(v)) for v in rec.features)])
    header = ["patient_id"] + [f"{b}_label" for b in binary]
    for s in survival:
        header += [f"{s}_time", f"{s}_event"]
    with Path(endpoints_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for rec in cohort.patients:
            row = [rec.id]
            for b in binary:
                o = rec.outcomes.get(b)
                row.append(str(o.label) if o is not None else "")
            for s in survival:
                o = rec.outcomes.get(s)
                row += [repr(o.time_days), str(int(o.event))] if o is not None else ["", ""]
            w.writerow(row)


# --------------------------------------------------------------------------
# Endpoint binarization
# --------------------------------------------------------------------------


def binarized_name(endpoint: str) -> str:
    return f"bin_{endpoint}"


def binarization_exclusions(cohort: Cohort, endpoint: str, threshold_days: float) -> list[str]:
    """Ids of patients censored on or before the threshold (unknown status at threshold)."""
    times, events = cohort.survival(endpoint)
    return [pid for pid, t, e in zip(cohort.ids, times, events) if not e and t <= threshold_days]


def binarize_survival(
    cohort: Cohort, endpoint: str = "os", threshold_days: float = DEFAULT_BINARIZATION_DAYS
) -> Cohort:
    """Add a `bin_<endpoint>` label: 1 if the event happened by the threshold, 0 if the
    patient was followed beyond it. Patients censored at or before the threshold are dropped.
    """
    if not threshold_days > 0:
        raise DataError(f"threshold_days must be positive, got {threshold_days}")
    times, events = cohort.survival(endpoint)
    excluded = set(binarization_exclusions(cohort, endpoint, threshold_days))
    if excluded:
        logger.info(
            "binarize %s at %g days: excluded %d patients: %s",
            endpoint, threshold_days, len(excluded), ", ".join(sorted(excluded)),
        )
    name = binarized_name(endpoint)
    kept = []
    for rec, t, e in zip(cohort.patients, times, events):
        if rec.id in excluded:
            continue
        label = 1 if (e and t <= threshold_days) else 0
        kept.append(PatientRecord(rec.id, rec.features, {**rec.outcomes, name: BinaryOutcome(label)}))
    return Cohort(tuple(kept), cohort.feature_names)


# --------------------------------------------------------------------------
# Synthetic cohorts
# --------------------------------------------------------------------------


def _censoring_rate(hazards: np.ndarray, target: float) -> float:
    """Rate of exponential censoring such that the mean P(C < T) over the sample equals target."""
    def frac(rate):
        return float(np.mean(rate / (rate + hazards)))

    lo, hi = 0.0, 1.0
    while frac(hi) < target:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if frac(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def generate_synthetic_cohort(
    n: int,
    p: int,
    task: str,
    signal: Sequence[float],
    censor_rate: float = 0.0,
    seed: int = 0,
    endpoint: str | None = None,
    id_prefix: str = "P",
    baseline_hazard: float = 1.0 / 1000.0,
) -> Cohort:
    """Draw a cohort with standard-normal features and outcomes driven by `signal @ x`.

    Classification labels are Bernoulli(sigmoid(signal @ x)); survival times are exponential
    with hazard `baseline_hazard * exp(signal @ x)` (in days), censored by an independent
    exponential whose rate is tuned so that the expected censored fraction is `censor_rate`.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if n < 2 or p < 1:
        raise DataError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
    if signal.shape != (p,):
        raise DataError(f"signal must have length {p}, got {signal.shape}")
    if not 0 <= censor_rate < 1:
        raise DataError(f"censor_rate must lie in [0, 1), got {censor_rate}")
    if task not in ("classification", "survival"):
        raise DataError(f"unknown task {task!r}")

    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    lp = X @ signal
    ids = [f"{id_prefix}{i:04d}" for i in range(n)]
    if task == "classification":
        endpoint = endpoint or "hpv"
        prob = 0.5 * (1.0 + np.tanh(0.5 * lp))
        labels = (rng.uniform(size=n) < prob).astype(int)
        outcomes = [{endpoint: BinaryOutcome(int(v))} for v in labels]
    else:
        endpoint = endpoint or "os"
        hazards = baseline_hazard * np.exp(lp)
        t_event = rng.exponential(1.0 / hazards)
        if censor_rate > 0:
            rate = _censoring_rate(hazards, censor_rate)
            t_cens = rng.exponential(1.0 / rate, size=n)
        else:
            t_cens = np.full(n, np.inf)
        times = np.minimum(t_event, t_cens)
        events = t_event <= t_cens
        outcomes = [{endpoint: SurvivalOutcome(float(t), bool(e))} for t, e in zip(times, events)]
    names = tuple(f"f{j:02d}" for j in range(p))
    return Cohort(
        tuple(PatientRecord(pid, X[i], outcomes[i]) for i, pid in enumerate(ids)), names
    )
