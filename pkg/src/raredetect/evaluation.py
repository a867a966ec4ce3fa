"""ROC/AUC and the grouped cross-validation / cross-testing protocols."""

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .dataset import TEST, VALID
from .density import fit_condition_models
from .pca import fit_pca, project
from .predictor import Predictor, predict_batch
from .tsne import TsneConfig, fit_tsne


@dataclass(frozen=True)
class RocResult:
    condition: str
    auc: float
    points: tuple
    positives: int
    negatives: int
    reason: str = ""

    @property
    def defined(self):
        return not self.reason

    def write_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["fpr", "tpr", "threshold"])
            for fpr, tpr, thr in self.points:
                writer.writerow([repr(fpr), repr(tpr), repr(thr)])

    def to_dict(self):
        d = {"condition": self.condition, "positives": self.positives, "negatives": self.negatives}
        if self.defined:
            d["auc"] = self.auc
        else:
            d["auc"] = None
            d["reason"] = self.reason
        return d


def roc_auc(scores, labels, condition=""):
    """ROC curve and AUC for one condition.

    The AUC is the Mann-Whitney statistic: the fraction of (positive,
    negative) pairs ranked correctly, ties counting one half. The curve
    sweeps thresholds in decreasing order with tied scores grouped, so its
    trapezoidal area equals the AUC. Single-class input gives an undefined
    result with ``reason`` set.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        reason = "no positive samples" if n_pos == 0 else "no negative samples"
        return RocResult(condition, math.nan, (), n_pos, n_neg, reason)

    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    auc = float(u / (n_pos * n_neg))

    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    l_sorted = labels[order]
    last = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), len(s_sorted) - 1]
    tps = np.cumsum(l_sorted)[last]
    fps = (last + 1) - tps
    points = [(0.0, 0.0, math.inf)]
    points += [(float(f / n_neg), float(t / n_pos), float(s_sorted[i])) for f, t, i in zip(fps, tps, last)]
    return RocResult(condition, auc, tuple(points), n_pos, n_neg)


def trapezoid_area(points):
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


@dataclass(frozen=True)
class ModelConfig:
    """Parameters of one learning run (PCA -> embedding -> densities -> K-NN).

    ``n_pca=None`` skips PCA: the embedding and the neighbor search then
    work in the input feature space.
    """

    n_pca: int = 50
    n_dims: int = 2
    perplexity: float = 30.0
    k: int = 3
    tsne_variant: str = "student_t"
    tsne_iterations: int = 1000
    tsne_learning_rate: float = None
    normalized_density: bool = True
    M: int = 0
    seed: int = 0
    threads: int = 1

    def digest_dict(self):
        d = dict(self.__dict__)
        d.pop("threads")
        return d

    def digest(self):
        text = json.dumps(self.digest_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def tsne_config(self, seed):
        return TsneConfig(
            perplexity=self.perplexity,
            output_dim=self.n_dims,
            iterations=self.tsne_iterations,
            learning_rate=self.tsne_learning_rate,
            kernel_variant=self.tsne_variant,
            seed=seed,
        )


@dataclass
class FitResult:
    """Everything produced by one learning run on a reference set."""

    predictor: Predictor
    embedding: object
    models: list
    reference: object
    pca_warnings: tuple = ()


def fit_reference(features, labels, sample_ids, condition_names, config, seed=None):
    """Run the learning pipeline on a reference set and assemble a :class:`Predictor`."""
    features = np.asarray(features, dtype=np.float64)
    seed = config.seed if seed is None else seed
    if config.n_pca is None:
        pca, pi = None, features
    else:
        pca = fit_pca(features, config.n_pca)
        pi = project(pca, features)
    embedding = fit_tsne(pi, config.tsne_config(seed), sample_ids=sample_ids)
    models, reference = fit_condition_models(
        embedding, labels, condition_names, M=config.M, normalized=config.normalized_density
    )
    predictor = Predictor(
        pca=pca,
        reference_pi=pi,
        reference_q=reference.q,
        k=min(config.k, len(pi)),
        condition_names=reference.condition_names,
        reference_ids=tuple(sample_ids),
        metadata={"seed": seed, "config_digest": config.digest()},
    )
    return FitResult(predictor, embedding, models, reference, pca.warnings if pca is not None else ())


@dataclass(frozen=True)
class EvaluationReport:
    mode: str
    rocs: tuple
    average_auc: float
    average_auc_rare: float
    M: int
    fold_reference_sizes: tuple
    fold_prediction_sizes: tuple
    config_digest: str
    notes: tuple = ()
    predictions: dict = field(default_factory=dict, repr=False, compare=False)

    def to_dict(self):
        return {
            "mode": self.mode,
            "M": self.M,
            "average_auc": _none_if_nan(self.average_auc),
            "average_auc_rare": _none_if_nan(self.average_auc_rare),
            "conditions": [r.to_dict() for r in self.rocs],
            "fold_reference_sizes": list(self.fold_reference_sizes),
            "fold_prediction_sizes": list(self.fold_prediction_sizes),
            "config_digest": self.config_digest,
            "notes": list(self.notes),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def digest(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def roc(self, name):
        for r in self.rocs:
            if r.condition == name:
                return r
        raise KeyError(name)

    def write(self, directory):
        """Write ``report.json`` and one ``roc_<condition>.csv`` per defined ROC."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = [directory / "report.json"]
        written[0].write_text(self.to_json(), encoding="utf-8")
        for r in self.rocs:
            if r.defined:
                path = directory / f"roc_{_safe_name(r.condition)}.csv"
                r.write_csv(path)
                written.append(path)
        return written


def _none_if_nan(x):
    return None if x is None or math.isnan(x) else x


def _safe_name(name):
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def _mean_auc(rocs):
    vals = [r.auc for r in rocs if r.defined]
    return float(np.mean(vals)) if vals else math.nan


def _run_folds(dataset, reference_base, predict_rows, folds, config, mode):
    """Shared driver: for each fold, fit on base + other folds, predict the fold."""
    ids = dataset.sample_ids
    fold_of = folds.assignment
    row_of = {s: i for i, s in enumerate(ids)}
    predict_rows = list(predict_rows)
    missing = [s for s in predict_rows if s not in fold_of]
    if missing:
        raise ValueError(f"{len(missing)} evaluated samples have no fold (e.g. {missing[:3]})")

    def one_fold(f):
        held = [s for s in predict_rows if fold_of[s] == f]
        if not held:
            return f, None
        held_set = set(held)
        ref = [s for s in reference_base] + [s for s in predict_rows if s not in held_set]
        ref_rows = np.array([row_of[s] for s in ref])
        held_rows = np.array([row_of[s] for s in held])
        held_patients = {dataset.records[i].patient_id for i in held_rows}
        ref_patients = {dataset.records[i].patient_id for i in ref_rows}
        leaked = held_patients & ref_patients
        if leaked:
            raise ValueError(f"fold {f}: patients in both reference and predicted sets: {sorted(leaked)[:5]}")
        fit = fit_reference(
            dataset.features[ref_rows],
            dataset.labels[ref_rows],
            ref,
            dataset.condition_names,
            config,
            seed=config.seed + f,
        )
        scores = predict_batch(fit.predictor, dataset.features[held_rows])
        return f, (held, ref, fit.predictor.condition_names, scores, fit.reference.omitted)

    fold_ids = range(folds.n_folds)
    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(one_fold, fold_ids))
    else:
        results = [one_fold(f) for f in fold_ids]

    names = dataset.condition_names
    pooled = {name: ([], [], []) for name in names}
    ref_sizes, pred_sizes, notes = [], [], []
    for f, res in results:
        if res is None:
            ref_sizes.append(0)
            pred_sizes.append(0)
            notes.append(f"fold {f}: no samples to predict")
            continue
        held, ref, fitted, scores, omitted = res
        ref_sizes.append(len(ref))
        pred_sizes.append(len(held))
        # a condition without positives (or negatives) in this fold's reference
        # has no model; the fold is left out of that condition's pooled ROC
        for name, why in omitted:
            notes.append(f"fold {f}: condition {name} skipped ({why})")
        held_rows = [row_of[s] for s in held]
        for j, name in enumerate(fitted):
            n = names.index(name)
            sids, sc, lab = pooled[name]
            sids.extend(held)
            sc.extend(scores[:, j].tolist())
            lab.extend(dataset.labels[held_rows, n].tolist())

    rocs = []
    for name in names:
        sids, sc, lab = pooled[name]
        if not sc:
            rocs.append(RocResult(name, math.nan, (), 0, 0, "condition skipped in every fold"))
            continue
        rocs.append(roc_auc(sc, lab, condition=name))
    rare = [r for r, name in zip(rocs, names) if names.index(name) >= config.M]
    return EvaluationReport(
        mode=mode,
        rocs=tuple(rocs),
        average_auc=_mean_auc(rocs),
        average_auc_rare=_mean_auc(rare),
        M=config.M,
        fold_reference_sizes=tuple(ref_sizes),
        fold_prediction_sizes=tuple(pred_sizes),
        config_digest=config.digest(),
        notes=tuple(notes),
        predictions={name: (tuple(v[0]), np.array(v[1]), np.array(v[2])) for name, v in pooled.items()},
    )


def cross_validate(dataset, splits, folds, config):
    """Score each fold of the validation subset with models built on the other folds."""
    valid = splits.members(VALID)
    return _run_folds(dataset, [], valid, folds, config, "cv")


def cross_test(dataset, splits, folds, config):
    """Score each fold of the test subset with models built on validation + other test folds."""
    valid = splits.members(VALID)
    test = splits.members(TEST)
    return _run_folds(dataset, valid, test, folds, config, "test")


SWEEP_PARAMS = {"pprime": "n_pca", "psecond": "n_dims", "perplexity": "perplexity", "k": "k"}


def parameter_sweep(dataset, splits, folds, grid, config=None, mode="cv"):
    """Average AUC for each setting in ``grid``, other parameters held at ``config``.

    ``grid`` maps a parameter name (``pprime``, ``psecond``, ``perplexity``,
    ``k``, or the config field name) to the values to try. A ``pprime`` of
    ``None`` or ``inf`` disables PCA. Returns a list of row dicts with keys
    ``param, value, avg_auc, avg_auc_rare``.
    """
    config = config or ModelConfig()
    run = cross_validate if mode == "cv" else cross_test
    rows = []
    cache = {}
    for param, values in grid.items():
        field_name = SWEEP_PARAMS.get(param, param)
        if field_name not in ModelConfig.__dataclass_fields__:
            raise ValueError(f"unknown sweep parameter {param!r}")
        for value in values:
            if field_name == "n_pca" and (value is None or value == math.inf):
                value = None
            setting = replace(config, **{field_name: value})
            key = setting.digest()
            if key not in cache:
                cache[key] = run(dataset, splits, folds, setting)
            report = cache[key]
            rows.append(
                {
                    "param": param,
                    "value": "inf" if value is None else value,
                    "avg_auc": report.average_auc,
                    "avg_auc_rare": report.average_auc_rare,
                }
            )
    return rows


def write_sweep_csv(path, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["param", "value", "avg_auc", "avg_auc_rare"])
        for r in rows:
            writer.writerow([r["param"], r["value"], repr(r["avg_auc"]), repr(r["avg_auc_rare"])])
