"""Cross-validated hyperparameter search, model selection, test inference and reporting."""

from __future__ import annotations

import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .cohort import Cohort, DataError, binarize_survival, binarized_name
from .graphnets import NetworkConfig, Targets, predict_scores, train_network
from .linmod import (
    ElasticNetConfig,
    LinearModelFit,
    fit_cox_elasticnet,
    fit_logistic_elasticnet,
    predict_cox_risk,
    predict_logistic,
)
from .preprocess import (
    ClusterAssignment,
    FeatureRanking,
    StandardizationParams,
    apply_standardizer,
    bootstrap_rank_features,
    cluster_features,
    fit_standardizer,
    reduce_to_representatives,
    spearman_matrix,
)
from .resample import SyntheticProvenance, adasyn_oversample, stratified_kfold
from .survstats import (
    KMCurve,
    LogRankResult,
    MetricsReport,
    classification_metrics,
    concordance_index,
    km_estimate,
    logrank_test,
    roc_auc,
    stratify_by_risk,
    validation_risk_threshold,
)

logger = logging.getLogger(__name__)

# task -> (source endpoint, kind)
TASKS = {
    "hpv": ("hpv", "classification"),
    "bin_os": ("os", "classification"),
    "os": ("os", "survival"),
    "dm": ("dm", "survival"),
}
MODELS = ("linear", "lpnl", "phgn")
SIGNIFICANCE = 0.05
CLASSIFICATION_THRESHOLD = 0.5

DEFAULT_HPARAMS: dict[str, Any] = {
    "n_features": None,  # all ranked features
    "alpha": 0.1,
    "l1_ratio": 0.5,
    "learning_rate": 1e-3,
    "weight_decay": 0.0,
    "epochs": 300,
    "k_neighbors": 5,
    "latent_dim": 32,
    "hidden_dim": 32,
    "head_dim": 32,
    "dropout": 0.1,
    "temperature": 1.0,
    "soft_threshold_init": 1.0,
    "l2_lambda": 1e-4,
}

DEFAULT_GRIDS: dict[str, dict[str, list]] = {
    "linear": {"alpha": [0.01, 0.1, 0.5, 1.0], "l1_ratio": [0.1, 0.5, 0.9]},
    "phgn": {"learning_rate": [1e-3, 1e-2], "weight_decay": [0.0, 1e-3], "k_neighbors": [5, 10]},
    "lpnl": {"learning_rate": [1e-3, 1e-2], "weight_decay": [0.0, 1e-3], "hidden_dim": [16, 32]},
}


class TrainingError(RuntimeError):
    """No configuration could be trained."""


@dataclass
class RunConfig:
    task: str
    model: str
    grid: dict[str, list] = field(default_factory=dict)
    seed: int = 0
    n_folds: int = 5
    n_bootstrap: int = 100
    selection_mode: str = "best_config"  # or "top_configs"
    n_selected: int = 5
    cluster_threshold: float = 0.9
    binarize_days: float = 730.0
    adasyn_k: int = 5
    adasyn_beta: float = 1.0
    patience: int = 30
    lpnl_batch_size: int = 128
    n_jobs: int = 1
    paths: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {sorted(TASKS)}")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose from {list(MODELS)}")
        if not self.grid:
            self.grid = dict(DEFAULT_GRIDS[self.model])
        unknown = set(self.grid) - set(DEFAULT_HPARAMS)
        if unknown:
            raise ValueError(f"unknown hyperparameters in grid: {sorted(unknown)}")
        if any(len(v) == 0 for v in self.grid.values()):
            raise ValueError("grid value lists must be non-empty")
        if self.selection_mode not in ("best_config", "top_configs"):
            raise ValueError(f"unknown selection_mode {self.selection_mode!r}")

    @property
    def endpoint(self) -> str:
        source, kind = TASKS[self.task]
        return binarized_name(source) if self.task == "bin_os" else source

    @property
    def kind(self) -> str:
        return TASKS[self.task][1]

    def configurations(self) -> list[dict[str, Any]]:
        keys = sorted(self.grid)
        combos = itertools.product(*(self.grid[k] for k in keys))
        return [{**DEFAULT_HPARAMS, **dict(zip(keys, values))} for values in combos]

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        """Build from the JSON config layout (sections data, task, model, grid, selection, output)."""
        task = data.get("task")
        model = data.get("model")
        if isinstance(task, Mapping):
            task = task.get("name")
        if isinstance(model, Mapping):
            model = model.get("name")
        selection = data.get("selection", {})
        options = dict(data.get("options", {}))
        paths = dict(data.get("data", {}))
        if "output" in data:
            paths["output"] = data["output"].get("dir", paths.get("output"))
        return cls(
            task=task,
            model=model,
            grid=dict(data.get("grid", {})),
            selection_mode=selection.get("mode", "best_config"),
            n_selected=selection.get("n_models", 5),
            paths={k: v for k, v in paths.items() if v is not None},
            **options,
        )


# --------------------------------------------------------------------------
# Fold preprocessing
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldPreprocessing:
    standardizer: StandardizationParams
    clusters: ClusterAssignment
    ranking: FeatureRanking

    def selected(self, n_features: int | None) -> list[str]:
        names = list(self.ranking.feature_names)
        if n_features is None:
            return names
        if n_features > len(names):
            logger.warning("n_features=%d exceeds %d ranked features; using all", n_features, len(names))
        return names[:n_features]

    def transform(self, cohort: Cohort, features: Sequence[str]) -> np.ndarray:
        raw = cohort.select_features(self.standardizer.feature_names)
        return apply_standardizer(self.standardizer, raw).select_features(features).X

    def to_dict(self) -> dict:
        return {
            "standardizer": self.standardizer.to_dict(),
            "clusters": self.clusters.to_dict(),
            "ranking": self.ranking.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FoldPreprocessing":
        return cls(
            StandardizationParams.from_dict(d["standardizer"]),
            ClusterAssignment.from_dict(d["clusters"]),
            FeatureRanking.from_dict(d["ranking"]),
        )


def fit_preprocessing(
    train: Cohort, endpoint: str, kind: str, *, n_bootstrap: int, seed: int, cluster_threshold: float = 0.9
) -> FoldPreprocessing:
    """Standardise, cluster and rank using the given (training) patients only."""
    std = fit_standardizer(train)
    z = apply_standardizer(std, train)
    clusters = cluster_features(spearman_matrix(z), z.feature_names, cluster_threshold)
    reduced = reduce_to_representatives(z, clusters)
    ranking = bootstrap_rank_features(reduced, endpoint, kind, n_bootstrap=n_bootstrap, seed=seed)
    if not ranking.feature_names:
        raise DataError("feature ranking retained no features")
    return FoldPreprocessing(std, clusters, ranking)


# --------------------------------------------------------------------------
# Fold models
# --------------------------------------------------------------------------


def targets_for(cohort: Cohort, endpoint: str, kind: str) -> Targets:
    if kind == "classification":
        return Targets(labels=cohort.labels(endpoint))
    times, events = cohort.survival(endpoint)
    return Targets(times=times, events=events)


def score_predictions(pred: np.ndarray, targets: Targets, kind: str) -> float:
    if kind == "classification":
        return roc_auc(pred, targets.labels)
    return concordance_index(pred, targets.times, targets.events)


def network_config(hp: Mapping[str, Any], kind: str) -> NetworkConfig:
    return NetworkConfig(
        latent_dim=int(hp["latent_dim"]),
        hidden_dims=(int(hp["hidden_dim"]), int(hp["hidden_dim"])),
        head_dim=int(hp["head_dim"]),
        mlp_dim=int(hp["hidden_dim"]),
        k_neighbors=int(hp["k_neighbors"]),
        soft_threshold_init=float(hp["soft_threshold_init"]),
        temperature=float(hp["temperature"]),
        head=kind,
        dropout_rate=float(hp["dropout"]),
    )


@dataclass
class FoldModel:
    model: str
    kind: str
    fold: int
    config_index: int
    hparams: dict[str, Any]
    preprocessing: FoldPreprocessing
    features: list[str]
    linear: LinearModelFit | None = None
    network_cfg: NetworkConfig | None = None
    params: dict[str, ad.Tensor] | None = None
    train_score: float = math.nan
    val_score: float = math.nan
    val_predictions: np.ndarray | None = None
    n_synthetic: int = 0
    provenance: SyntheticProvenance | None = None

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        """Probabilities (classification) or log-risks (survival) for standardised, selected features."""
        if self.model == "linear":
            if self.kind == "classification":
                return predict_logistic(self.linear, X)
            return predict_cox_risk(self.linear, X)
        scores = predict_scores(self.model, X, self.network_cfg, self.params)
        if self.kind == "classification":
            return 1.0 / (1.0 + np.exp(-np.clip(scores, -700, 700)))
        return scores

    def predict(self, cohort: Cohort) -> np.ndarray:
        return self.predict_matrix(self.preprocessing.transform(cohort, self.features))

    def metadata(self) -> dict:
        return {
            "model": self.model,
            "kind": self.kind,
            "fold": self.fold,
            "config_index": self.config_index,
            "hparams": self.hparams,
            "features": self.features,
            "train_score": self.train_score,
            "val_score": self.val_score,
            "val_predictions": None if self.val_predictions is None else self.val_predictions.tolist(),
            "n_synthetic": self.n_synthetic,
            "network_cfg": None if self.network_cfg is None else self.network_cfg.to_dict(),
            "preprocessing": self.preprocessing.to_dict(),
        }

    def params_dict(self) -> dict:
        if self.model == "linear":
            return {"linear": self.linear.to_dict(self.features)}
        return {"network": ad.params_to_dict(self.params)}

    @classmethod
    def restore(cls, meta: dict, params: dict) -> "FoldModel":
        fm = cls(
            model=meta["model"],
            kind=meta["kind"],
            fold=meta["fold"],
            config_index=meta["config_index"],
            hparams=meta["hparams"],
            preprocessing=FoldPreprocessing.from_dict(meta["preprocessing"]),
            features=list(meta["features"]),
            train_score=meta["train_score"],
            val_score=meta["val_score"],
            val_predictions=None if meta["val_predictions"] is None else np.asarray(meta["val_predictions"]),
            n_synthetic=meta.get("n_synthetic", 0),
        )
        if fm.model == "linear":
            fm.linear = LinearModelFit.from_dict(params["linear"])
        else:
            fm.network_cfg = NetworkConfig.from_dict(meta["network_cfg"])
            fm.params = ad.params_from_dict(params["network"])
        return fm


def fit_fold(
    model: str,
    kind: str,
    X_train: np.ndarray,
    y_train: Targets,
    X_val: np.ndarray,
    y_val: Targets,
    hp: Mapping[str, Any],
    *,
    seed: int,
    adasyn_k: int = 5,
    adasyn_beta: float = 1.0,
    patience: int = 30,
    lpnl_batch_size: int = 128,
) -> dict[str, Any]:
    """Train one model on one fold's already-transformed matrices.

    Oversampling touches only the training rows; scores are computed on original rows.
    """
    X_fit, y_fit = X_train, y_train
    provenance = None
    if kind == "classification":
        X_fit, labels, provenance = adasyn_oversample(
            X_train, y_train.labels, k_neighbors=adasyn_k, beta=adasyn_beta,
            seed=np.random.default_rng([seed, 1]), return_provenance=True,
        )
        y_fit = Targets(labels=labels)

    out: dict[str, Any] = {"provenance": provenance, "n_synthetic": X_fit.shape[0] - X_train.shape[0]}
    if model == "linear":
        cfg = ElasticNetConfig(alpha=float(hp["alpha"]), l1_ratio=float(hp["l1_ratio"]))
        if kind == "classification":
            fit = fit_logistic_elasticnet(X_fit, y_fit.labels, cfg)
            predict = lambda X: predict_logistic(fit, X)
        else:
            fit = fit_cox_elasticnet(X_fit, y_fit.times, y_fit.events, cfg)
            predict = lambda X: predict_cox_risk(fit, X)
        out["linear"] = fit
    else:
        net_cfg = network_config(hp, kind)
        batch = lpnl_batch_size if (model == "lpnl" and kind == "classification") else None
        res = train_network(
            model, X_fit, y_fit, net_cfg,
            learning_rate=float(hp["learning_rate"]),
            weight_decay=float(hp["weight_decay"]),
            epochs=int(hp["epochs"]),
            l2_lambda=float(hp["l2_lambda"]) if kind == "survival" else 0.0,
            batch_size=batch,
            X_val=X_val, y_val=y_val, patience=patience, seed=seed,
        )
        out["network_cfg"] = net_cfg
        out["params"] = res.params
        out["history"] = res.history

        def predict(X):
            s = predict_scores(model, X, net_cfg, res.params)
            return 1.0 / (1.0 + np.exp(-np.clip(s, -700, 700))) if kind == "classification" else s

    train_pred = predict(X_train)
    val_pred = predict(X_val)
    if not (np.all(np.isfinite(train_pred)) and np.all(np.isfinite(val_pred))):
        raise FloatingPointError("non-finite predictions")
    out["train_score"] = score_predictions(train_pred, y_train, kind)
    out["val_score"] = score_predictions(val_pred, y_val, kind)
    out["val_predictions"] = val_pred
    return out


# --------------------------------------------------------------------------
# Cross-validated search
# --------------------------------------------------------------------------


@dataclass
class ConfigResult:
    index: int
    hparams: dict[str, Any]
    train_scores: list[float] = field(default_factory=list)
    val_scores: list[float] = field(default_factory=list)
    score: float = -math.inf
    status: str = "ok"
    reason: str = ""
    fold_models: list[FoldModel] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "hparams": self.hparams,
            "train_scores": self.train_scores,
            "val_scores": self.val_scores,
            "score": self.score if self.status == "ok" else None,
            "status": self.status,
            "reason": self.reason,
        }


@dataclass
class SelectionResult:
    task: str
    model: str
    endpoint: str
    kind: str
    selection_mode: str
    configs: list[ConfigResult]
    chosen: list[FoldModel]

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        summary = {
            "task": self.task,
            "model": self.model,
            "endpoint": self.endpoint,
            "kind": self.kind,
            "selection_mode": self.selection_mode,
            "configs": [c.to_dict() for c in self.configs],
            "chosen": [m.metadata() for m in self.chosen],
        }
        (out / "selection.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
        for i, m in enumerate(self.chosen):
            (out / f"params_fold{i}.json").write_text(json.dumps(m.params_dict(), sort_keys=True))
            if m.provenance is not None and m.n_synthetic:
                (out / f"adasyn_fold{i}.json").write_text(json.dumps(m.provenance.to_dict()))

    @classmethod
    def load(cls, out_dir: str | Path) -> "SelectionResult":
        out = Path(out_dir)
        path = out / "selection.json"
        if not path.exists():
            raise DataError(f"missing checkpoint {path}")
        summary = json.loads(path.read_text())
        chosen = []
        for i, meta in enumerate(summary["chosen"]):
            ppath = out / f"params_fold{i}.json"
            if not ppath.exists():
                raise DataError(f"missing checkpoint {ppath}")
            chosen.append(FoldModel.restore(meta, json.loads(ppath.read_text())))
        configs = [
            ConfigResult(
                c["index"], c["hparams"], c["train_scores"], c["val_scores"],
                c["score"] if c["score"] is not None else -math.inf, c["status"], c["reason"],
            )
            for c in summary["configs"]
        ]
        return cls(summary["task"], summary["model"], summary["endpoint"], summary["kind"],
                   summary["selection_mode"], configs, chosen)


def prepare_cohort(cohort: Cohort, cfg: RunConfig) -> Cohort:
    """Restrict to patients carrying the task's endpoint; binarise OS for `bin_os`."""
    source, _ = TASKS[cfg.task]
    keep = [i for i, rec in enumerate(cohort.patients) if source in rec.outcomes]
    if not keep:
        raise DataError(f"no patient has endpoint {source!r}")
    if len(keep) < len(cohort):
        logger.info("%d patients lack endpoint %s and are left out", len(cohort) - len(keep), source)
    sub = cohort.subset(keep)
    if cfg.task == "bin_os":
        sub = binarize_survival(sub, source, cfg.binarize_days)
    return sub


def _fold_seed(seed: int, *parts: int) -> int:
    return int(np.random.SeedSequence([seed, *parts]).generate_state(1)[0])


def train_fold_model(
    train: Cohort,
    val: Cohort,
    cfg: RunConfig,
    hp: Mapping[str, Any],
    *,
    fold: int = 0,
    config_index: int = 0,
    prep: FoldPreprocessing | None = None,
) -> FoldModel:
    """Preprocess on `train` only, transform both portions, then train and score one model."""
    if prep is None:
        prep = fit_preprocessing(
            train, cfg.endpoint, cfg.kind, n_bootstrap=cfg.n_bootstrap,
            seed=_fold_seed(cfg.seed, fold), cluster_threshold=cfg.cluster_threshold,
        )
    features = prep.selected(hp["n_features"])
    out = fit_fold(
        cfg.model, cfg.kind,
        prep.transform(train, features), targets_for(train, cfg.endpoint, cfg.kind),
        prep.transform(val, features), targets_for(val, cfg.endpoint, cfg.kind),
        hp,
        seed=_fold_seed(cfg.seed, fold, config_index),
        adasyn_k=cfg.adasyn_k, adasyn_beta=cfg.adasyn_beta,
        patience=cfg.patience, lpnl_batch_size=cfg.lpnl_batch_size,
    )
    return FoldModel(
        model=cfg.model, kind=cfg.kind, fold=fold, config_index=config_index, hparams=dict(hp),
        preprocessing=prep, features=features, linear=out.get("linear"),
        network_cfg=out.get("network_cfg"), params=out.get("params"),
        train_score=out["train_score"], val_score=out["val_score"],
        val_predictions=out["val_predictions"], n_synthetic=out["n_synthetic"],
        provenance=out["provenance"],
    )


def _evaluate_config(args) -> ConfigResult:
    cfg, index, hp, fold_data = args
    result = ConfigResult(index, hp)
    for fold, (prep, train, val) in enumerate(fold_data):
        try:
            model = train_fold_model(train, val, cfg, hp, fold=fold, config_index=index, prep=prep)
        except (FloatingPointError, ValueError) as exc:
            result.status = "disqualified"
            result.reason = f"fold {fold}: {exc}"
            logger.warning("config %d disqualified: %s", index, result.reason)
            result.fold_models = []
            return result
        result.train_scores.append(model.train_score)
        result.val_scores.append(model.val_score)
        result.fold_models.append(model)
    result.score = float(np.mean([(t + v) / 2.0 for t, v in zip(result.train_scores, result.val_scores)]))
    logger.info("config %d %s: score %.4f", index, _short(hp, cfg.grid), result.score)
    return result


def _short(hp: Mapping, grid: Mapping) -> str:
    return ", ".join(f"{k}={hp[k]}" for k in sorted(grid))


def run_cv_search(cohort: Cohort, cfg: RunConfig) -> SelectionResult:
    data = prepare_cohort(cohort, cfg)
    split = stratified_kfold(data, cfg.endpoint, cfg.n_folds, cfg.seed)
    fold_data = []
    for fold, tr_idx, va_idx in split.folds():
        train, val = data.subset(tr_idx), data.subset(va_idx)
        prep = fit_preprocessing(
            train, cfg.endpoint, cfg.kind, n_bootstrap=cfg.n_bootstrap,
            seed=_fold_seed(cfg.seed, fold), cluster_threshold=cfg.cluster_threshold,
        )
        logger.info("fold %d: %d train, %d validation, %d ranked features",
                    fold, len(train), len(val), len(prep.ranking.feature_names))
        fold_data.append((prep, train, val))

    configs = cfg.configurations()
    jobs = [(cfg, i, hp, fold_data) for i, hp in enumerate(configs)]
    if cfg.n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_jobs) as pool:
            results = list(pool.map(_evaluate_config, jobs))
    else:
        results = [_evaluate_config(job) for job in jobs]

    ok = [r for r in results if r.status == "ok"]
    if not ok:
        raise TrainingError("every configuration was disqualified: " + "; ".join(r.reason for r in results))
    ranked = sorted(ok, key=lambda r: (-r.score, r.index))
    if cfg.selection_mode == "best_config":
        chosen = list(ranked[0].fold_models)
    else:
        if len(ranked) < cfg.n_selected:
            raise TrainingError(f"top_configs needs {cfg.n_selected} valid configurations, got {len(ranked)}")
        chosen = [
            max(r.fold_models, key=lambda m: (m.val_score, -m.fold)) for r in ranked[: cfg.n_selected]
        ]
    return SelectionResult(cfg.task, cfg.model, cfg.endpoint, cfg.kind, cfg.selection_mode, results, chosen)


# --------------------------------------------------------------------------
# Test-time inference
# --------------------------------------------------------------------------


@dataclass
class TestReport:
    task: str
    model: str
    ids: list[str]
    predictions: np.ndarray
    metrics: MetricsReport
    threshold: float | None = None
    km: dict[str, KMCurve] = field(default_factory=dict)
    logrank: LogRankResult | None = None
    significant: bool | None = None
    flags: list[str] = field(default_factory=list)
    combo: dict[str, Any] | None = None

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "model": self.model,
            "ids": self.ids,
            "predictions": self.predictions.tolist(),
            "metrics": self.metrics.to_dict(),
            "threshold": self.threshold,
            "km": {g: c.to_dict() for g, c in self.km.items()},
            "logrank": None if self.logrank is None else self.logrank.to_dict(),
            "significant": self.significant,
            "flags": self.flags,
            "combo": self.combo,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))


def combo_ensemble(predictions: Sequence[Sequence[float]]) -> np.ndarray:
    """Elementwise mean of several models' prediction vectors."""
    if len(predictions) == 0:
        raise ValueError("no predictions to combine")
    arrays = [np.asarray(p, dtype=np.float64).reshape(-1) for p in predictions]
    if len({a.size for a in arrays}) != 1:
        raise ValueError("prediction vectors differ in length")
    return np.mean(np.vstack(arrays), axis=0)


def _stratify_report(report: TestReport, risks, times, events, threshold: float) -> None:
    report.threshold = float(threshold)
    low, high = stratify_by_risk(risks, threshold)
    if low.size == 0 or high.size == 0:
        report.flags.append(f"empty risk group at threshold {threshold:.6g}; KM and log-rank skipped")
        return
    report.km = {"low": km_estimate(times[low], events[low]), "high": km_estimate(times[high], events[high])}
    if not (events[low].any() or events[high].any()):
        report.flags.append("no events in test cohort; log-rank skipped")
        return
    report.logrank = logrank_test(times[low], events[low], times[high], events[high])
    report.significant = bool(report.logrank.p_value < SIGNIFICANCE)


def predict_test(selection: SelectionResult, test: Cohort, binarize_days: float = 730.0) -> TestReport:
    cfg_stub = RunConfig(task=selection.task, model=selection.model, binarize_days=binarize_days)
    data = prepare_cohort(test, cfg_stub)
    per_model = [m.predict(data) for m in selection.chosen]
    pred = combo_ensemble(per_model)
    ids = data.ids
    if selection.kind == "classification":
        labels = data.labels(selection.endpoint)
        report = TestReport(selection.task, selection.model, ids, pred, classification_metrics(pred, labels))
        source = TASKS[selection.task][0]
        if source != selection.endpoint or data.has_endpoint("os"):
            survival_endpoint = source if selection.task == "bin_os" else "os"
            if data.has_endpoint(survival_endpoint):
                times, events = data.survival(survival_endpoint)
                _stratify_report(report, pred, times, events, CLASSIFICATION_THRESHOLD)
        if report.threshold is None:
            report.flags.append("no survival endpoint for KM stratification")
    else:
        times, events = data.survival(selection.endpoint)
        metrics = MetricsReport(c_index=concordance_index(pred, times, events))
        report = TestReport(selection.task, selection.model, ids, pred, metrics)
        threshold = validation_risk_threshold([m.val_predictions for m in selection.chosen])
        _stratify_report(report, pred, times, events, threshold)
    return report


def combo_report(reports: Sequence[TestReport], test: Cohort, task: str, binarize_days: float = 730.0) -> dict:
    """Metrics of the averaged classification predictions of several models."""
    if TASKS[task][1] != "classification":
        raise ValueError("Combo ensembling applies to classification tasks")
    ids = reports[0].ids
    if any(r.ids != ids for r in reports):
        raise ValueError("reports cover different patients")
    data = prepare_cohort(test, RunConfig(task=task, model="linear", binarize_days=binarize_days))
    endpoint = binarized_name("os") if task == "bin_os" else TASKS[task][0]
    pred = combo_ensemble([r.predictions for r in reports])
    metrics = classification_metrics(pred, data.labels(endpoint))
    return {"models": [r.model for r in reports], "predictions": pred.tolist(), "metrics": metrics.to_dict()}
