"""Classification metrics, Harrell's c-index, Kaplan-Meier, log-rank and risk stratification."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricsReport:
    auc: float | None = None
    sensitivity: float | None = None
    specificity: float | None = None
    f1: float | None = None
    accuracy: float | None = None
    c_index: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass(frozen=True, eq=False)
class KMCurve:
    """Product-limit estimate. `survival_prob[i]` holds just after `event_times[i]`."""

    event_times: np.ndarray
    survival_prob: np.ndarray
    at_risk: np.ndarray
    n_events: np.ndarray
    censor_times: np.ndarray

    def survival_at(self, t: float) -> float:
        idx = np.searchsorted(self.event_times, t, side="right")
        return 1.0 if idx == 0 else float(self.survival_prob[idx - 1])

    def to_rows(self) -> list[tuple[float, float, int, int]]:
        """(time, survival, at_risk, censored) at every distinct observed time."""
        cens_t, cens_n = np.unique(self.censor_times, return_counts=True)
        cens = dict(zip(cens_t.tolist(), cens_n.tolist()))
        all_t = np.union1d(self.event_times, cens_t)
        rows = []
        for t in all_t.tolist():
            rows.append((t, self.survival_at(t), self._at_risk_at(t), int(cens.get(t, 0))))
        return rows

    def _at_risk_at(self, t: float) -> int:
        return int(self._n_total - np.searchsorted(self._sorted_times, t, side="left"))

    def __post_init__(self):
        # full observation times are recoverable from the event and censoring records
        events = np.repeat(self.event_times, self.n_events)
        obs = np.sort(np.concatenate([events, self.censor_times]))
        object.__setattr__(self, "_sorted_times", obs)
        object.__setattr__(self, "_n_total", obs.size)

    def to_dict(self) -> dict:
        return {
            "event_times": self.event_times.tolist(),
            "survival_prob": self.survival_prob.tolist(),
            "at_risk": self.at_risk.tolist(),
            "n_events": self.n_events.tolist(),
            "censor_times": self.censor_times.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KMCurve":
        return cls(
            np.asarray(d["event_times"], dtype=float),
            np.asarray(d["survival_prob"], dtype=float),
            np.asarray(d["at_risk"], dtype=int),
            np.asarray(d["n_events"], dtype=int),
            np.asarray(d["censor_times"], dtype=float),
        )

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "survival", "at_risk", "censored"])
            for t, s, r, c in self.to_rows():
                w.writerow([repr(t), repr(s), r, c])


@dataclass(frozen=True)
class LogRankResult:
    chi_square: float
    p_value: float

    def to_dict(self) -> dict:
        return {"chi_square": self.chi_square, "p_value": self.p_value}


def _as_vector(x, dtype=np.float64) -> np.ndarray:
    return np.asarray(x, dtype=dtype).reshape(-1)


# --------------------------------------------------------------------------
# Classification
# --------------------------------------------------------------------------


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores earn half credit."""
    scores = _as_vector(scores)
    labels = _as_vector(labels, np.int64)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: labels contain a single class")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def classification_metrics(scores, labels, threshold: float = 0.5) -> MetricsReport:
    scores = _as_vector(scores)
    labels = _as_vector(labels, np.int64)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels lengths differ")
    try:
        auc = roc_auc(scores, labels)
    except ValueError as exc:
        logger.warning("%s", exc)
        auc = None
    pred = scores >= threshold
    truth = labels == 1
    tp = int(np.sum(pred & truth))
    tn = int(np.sum(~pred & ~truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    return MetricsReport(
        auc=auc,
        sensitivity=_ratio(tp, tp + fn),
        specificity=_ratio(tn, tn + fp),
        f1=_ratio(2 * tp, 2 * tp + fp + fn),
        accuracy=_ratio(tp + tn, labels.size),
    )


# --------------------------------------------------------------------------
# Concordance
# --------------------------------------------------------------------------


def concordance_counts(risks, times, events) -> tuple[int, int]:
    """(2 x concordant weight, comparable pairs) as exact integers.

    A pair (i, j) is comparable when i had the event and T_i < T_j; it is concordant when
    risk_i > risk_j and counts one half when the risks tie.
    """
    risks = _as_vector(risks)
    times = _as_vector(times)
    events = _as_vector(events, bool)
    if not (risks.shape == times.shape == events.shape):
        raise ValueError("risks, times and events lengths differ")
    num = 0
    den = 0
    # chunk rows to bound memory at O(chunk * n)
    for start in range(0, risks.size, 512):
        sl = slice(start, start + 512)
        ev = events[sl]
        comparable = ev[:, None] & (times[sl, None] < times[None, :])
        higher = risks[sl, None] > risks[None, :]
        tied = risks[sl, None] == risks[None, :]
        den += int(comparable.sum())
        num += 2 * int((comparable & higher).sum()) + int((comparable & tied).sum())
    return num, den


def concordance_index(risks, times, events) -> float:
    num, den = concordance_counts(risks, times, events)
    if den == 0:
        raise ValueError("no comparable pairs")
    return num / (2 * den)


# --------------------------------------------------------------------------
# Kaplan-Meier and log-rank
# --------------------------------------------------------------------------


def km_estimate(times, events) -> KMCurve:
    times = _as_vector(times)
    events = _as_vector(events, bool)
    if times.size == 0:
        raise ValueError("km_estimate needs at least one observation")
    sorted_t = np.sort(times)
    ev_t, d = np.unique(times[events], return_counts=True)
    # censored patients at an event time are still at risk there
    n_at = times.size - np.searchsorted(sorted_t, ev_t, side="left")
    surv = np.cumprod((n_at - d) / n_at)
    return KMCurve(ev_t, surv, n_at.astype(int), d.astype(int), np.sort(times[~events]))


def chi2_sf_df1(chi_square: float) -> float:
    """Upper tail of the chi-square distribution with one degree of freedom."""
    return math.erfc(math.sqrt(max(chi_square, 0.0) / 2.0))


def logrank_test(times_a, events_a, times_b, events_b) -> LogRankResult:
    ta, ea = _as_vector(times_a), _as_vector(events_a, bool)
    tb, eb = _as_vector(times_b), _as_vector(events_b, bool)
    if ta.size == 0 or tb.size == 0:
        raise ValueError("log-rank needs two non-empty groups")
    all_events = np.concatenate([ta[ea], tb[eb]])
    if all_events.size == 0:
        raise ValueError("log-rank needs at least one event")
    event_times = np.unique(all_events)
    sa, sb = np.sort(ta), np.sort(tb)
    n_a = ta.size - np.searchsorted(sa, event_times, side="left")
    n_b = tb.size - np.searchsorted(sb, event_times, side="left")
    ua, ca = np.unique(ta[ea], return_counts=True)
    ub, cb = np.unique(tb[eb], return_counts=True)
    d_a = np.zeros(event_times.size)
    d_b = np.zeros(event_times.size)
    d_a[np.searchsorted(event_times, ua)] = ca
    d_b[np.searchsorted(event_times, ub)] = cb
    n = n_a + n_b
    d = d_a + d_b
    expected = d * n_a / n
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(n > 1, d * (n_a / n) * (n_b / n) * (n - d) / (n - 1), 0.0)
    total_var = float(var.sum())
    diff = float(d_a.sum() - expected.sum())
    chi = diff * diff / total_var if total_var > 0 else 0.0
    return LogRankResult(chi, chi2_sf_df1(chi))


# --------------------------------------------------------------------------
# Risk groups
# --------------------------------------------------------------------------


def stratify_by_risk(risks, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """(low, high) index arrays; high means risk >= threshold."""
    risks = _as_vector(risks)
    high = np.flatnonzero(risks >= threshold)
    low = np.flatnonzero(risks < threshold)
    if high.size == 0 or low.size == 0:
        logger.warning("risk stratification at %g produced an empty group", threshold)
    return low, high


def validation_risk_threshold(validation_risks_per_fold: Sequence) -> float:
    """Mean over folds of the median validation risk."""
    if len(validation_risks_per_fold) == 0:
        raise ValueError("no validation risks given")
    medians = []
    for r in validation_risks_per_fold:
        r = _as_vector(r)
        if r.size == 0:
            raise ValueError("empty validation fold")
        medians.append(float(np.median(r)))
    return float(np.mean(medians))
