"""End-to-end orchestration: split, learn, evaluate, and write a run directory."""

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .dataset import (
    TEST,
    VALID,
    FoldAssignment,
    assign_folds,
    assign_splits,
    build_balanced_subset,
    load_dataset,
    write_assignment_csv,
)
from .density import fit_condition_models
from .evaluation import ModelConfig, cross_test, cross_validate
from .pca import fit_pca, project
from .predictor import Predictor
from .tsne import fit_tsne

log = logging.getLogger("raredetect")

# stable process exit codes, one per stage
EXIT_CODES = {
    "config": 1,
    "dataset": 2,
    "split": 3,
    "pca": 4,
    "tsne": 5,
    "density": 6,
    "predictor": 7,
    "evaluate": 8,
    "output": 9,
}


class PipelineError(RuntimeError):
    def __init__(self, stage, message):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage
        self.exit_code = EXIT_CODES[stage]


@dataclass(frozen=True)
class PipelineConfig:
    features: str = ""
    labels: str = ""
    out: str = "run"
    M: int = 0
    cap: int = 1500
    normals: int = 5000
    n_folds: int = 10
    mode: str = "test"
    n_pca: int = 50
    n_dims: int = 2
    perplexity: float = 30.0
    k: int = 3
    tsne_variant: str = "student_t"
    tsne_iterations: int = 1000
    tsne_learning_rate: float = None
    normalized_density: bool = True
    seed: int = 0
    threads: int = 1

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self):
        return asdict(self)

    def model_config(self):
        return ModelConfig(
            n_pca=self.n_pca,
            n_dims=self.n_dims,
            perplexity=self.perplexity,
            k=self.k,
            tsne_variant=self.tsne_variant,
            tsne_iterations=self.tsne_iterations,
            tsne_learning_rate=self.tsne_learning_rate,
            normalized_density=self.normalized_density,
            M=self.M,
            seed=self.seed,
            threads=self.threads,
        )

    def validate(self):
        if self.mode not in ("cv", "test"):
            raise ValueError("mode must be 'cv' or 'test'")
        if self.M < 0 or self.k < 1 or self.n_dims < 1 or self.n_folds < 2:
            raise ValueError("M >= 0, k >= 1, n_dims >= 1 and n_folds >= 2 are required")
        if self.n_pca is not None and self.n_pca < 1:
            raise ValueError("n_pca must be >= 1 (or null to skip PCA)")


class JsonLineFormatter(logging.Formatter):
    """One JSON object per record: message fields plus ``level`` and ``ts``."""

    def format(self, record):
        payload = {"ts": round(record.created, 3), "level": record.levelname}
        if isinstance(record.msg, dict):
            payload.update(record.msg)
        else:
            payload["message"] = record.getMessage()
        return json.dumps(payload, sort_keys=True, default=str)


def configure_logging(level=logging.INFO, stream=None):
    handler = logging.StreamHandler(stream)
    handler.setFormatter(JsonLineFormatter())
    log.handlers[:] = [handler]
    log.setLevel(level)
    log.propagate = False


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_matrix_csv(path, ids, matrix, prefix, columns=None):
    matrix = np.asarray(matrix)
    columns = columns or [f"{prefix}{j}" for j in range(matrix.shape[1])]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", *columns])
        for sid, row in zip(ids, matrix):
            writer.writerow([sid, *(repr(float(v)) for v in row)])


def read_matrix_csv(path):
    """Read ``sample_id,<cols>`` numeric CSVs; returns ``(ids, columns, matrix)``."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        ids, rows = [], []
        for row in reader:
            if row:
                ids.append(row[0])
                rows.append([float(v) for v in row[1:]])
    return ids, header[1:], np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)


def _write_scores(path, report, dataset):
    names = dataset.condition_names
    table = {}
    for j, name in enumerate(names):
        sids, scores, _ = report.predictions.get(name, ((), (), ()))
        for sid, s in zip(sids, scores):
            table.setdefault(sid, [""] * len(names))[j] = repr(float(s))
    order = [s for s in dataset.sample_ids if s in table]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", *names])
        for sid in order:
            writer.writerow([sid, *table[sid]])


class _Run:
    """Tracks stage timing and written artifacts for one pipeline run."""

    def __init__(self, out):
        self.out = Path(out)
        self.artifacts = []
        self.t0 = time.perf_counter()

    def path(self, name):
        p = self.out / name
        self.artifacts.append(p)
        return p

    def stage(self, name, fn, **counts):
        start = time.perf_counter()
        try:
            result = fn()
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(name, f"{type(exc).__name__}: {exc}") from exc
        log.info({"event": "stage", "stage": name, "elapsed": round(time.perf_counter() - start, 3), **counts})
        return result

    def mark_partial(self):
        for p in self.artifacts:
            if p.exists():
                p.rename(p.with_name(p.name + ".partial"))


def protocol_folds(splits, dataset, n_folds, seed):
    """Independent patient-grouped folds over the validation and test subsets."""
    patient = dict(zip(dataset.sample_ids, dataset.patient_ids))
    assignment = {}
    for k, split in enumerate((VALID, TEST)):
        ids = splits.members(split)
        if not ids:
            continue
        folds = assign_folds(ids, [patient[s] for s in ids], n_folds, seed + k)
        assignment.update(folds.assignment)
    ordered = {s: assignment[s] for s in dataset.sample_ids if s in assignment}
    return FoldAssignment(assignment=ordered, n_folds=n_folds)


def run_pipeline(config):
    """Run split -> pca -> tsne -> density -> predictor -> evaluate and write artifacts.

    The deployable predictor is learned on the validation and test subsets
    together; the report comes from the grouped cross-validation
    (``mode="cv"``) or cross-testing (``mode="test"``) protocol.

    Returns
    -------
    report : EvaluationReport
    predictor : Predictor
    manifest : dict

    Raises
    ------
    PipelineError
        Carrying the failed stage and its exit code. Files written before
        the failure are renamed with a ``.partial`` suffix.
    """
    run = _Run(config.out)
    try:
        try:
            config.validate()
            run.out.mkdir(parents=True, exist_ok=True)
        except Exception as exc:
            raise PipelineError("config", str(exc)) from exc
        result = _execute(config, run)
    except PipelineError as err:
        log.error({"event": "failed", "stage": err.stage, "error": str(err)})
        run.mark_partial()
        raise
    return result


def _execute(config, run):
    dataset = run.stage("dataset", lambda: load_dataset(config.features, config.labels))
    log.info({"event": "dataset", "samples": len(dataset), "conditions": dataset.n_conditions})
    if config.M > dataset.n_conditions:
        raise PipelineError("config", f"M={config.M} exceeds the {dataset.n_conditions} conditions")

    def split():
        balanced = build_balanced_subset(dataset, config.M, config.cap, config.normals, config.seed)
        splits = assign_splits(dataset, balanced, config.seed)
        folds = protocol_folds(splits, dataset, config.n_folds, config.seed)
        write_assignment_csv(run.path("split.csv"), splits.assignment, "assignment")
        write_assignment_csv(run.path("folds.csv"), folds.assignment, "fold")
        return balanced, splits, folds

    balanced, splits, folds = run.stage("split", split)
    log.info({"event": "split", "balanced": len(balanced), **splits.counts()})

    model_config = config.model_config()
    ref_ids = splits.members(VALID) + splits.members(TEST)
    rows = dataset.index_of(ref_ids)
    features = dataset.features[rows]

    def pca_stage():
        if config.n_pca is None:
            return None, features
        pca = fit_pca(features, config.n_pca)
        pca.save(run.path("pca.json"))
        pi = project(pca, features)
        write_matrix_csv(run.path("pi.csv"), ref_ids, pi, "p")
        return pca, pi

    pca, pi = run.stage("pca", pca_stage)

    def tsne_stage():
        emb = fit_tsne(pi, model_config.tsne_config(config.seed), sample_ids=ref_ids)
        write_matrix_csv(run.path("embedding.csv"), ref_ids, emb.tau, "t")
        run.path("embedding.json").write_text(emb.sidecar_json(), encoding="utf-8")
        return emb

    embedding = run.stage("tsne", tsne_stage, samples=len(ref_ids))

    def density_stage():
        models, reference = fit_condition_models(
            embedding, dataset.labels[rows], dataset.condition_names, M=config.M,
            normalized=config.normalized_density,
        )
        payload = {"models": [m.to_dict() for m in models], "omitted": [list(o) for o in reference.omitted]}
        run.path("models.json").write_text(json.dumps(payload), encoding="utf-8")
        reference.write_csv(run.path("reference_q.csv"))
        return models, reference

    models, reference = run.stage("density", density_stage)

    def predictor_stage():
        predictor = Predictor(
            pca=pca,
            reference_pi=pi,
            reference_q=reference.q,
            k=min(config.k, len(pi)),
            condition_names=reference.condition_names,
            reference_ids=ref_ids,
            metadata={"seed": config.seed, "config_digest": model_config.digest()},
        )
        predictor.save(run.path("predictor.json"))
        return predictor

    predictor = run.stage("predictor", predictor_stage)

    def evaluate_stage():
        protocol = cross_test if config.mode == "test" else cross_validate
        report = protocol(dataset, splits, folds, model_config)
        report_paths = report.write(run.out)
        run.artifacts.extend(report_paths)
        _write_scores(run.path("scores.csv"), report, dataset)
        return report

    report = run.stage("evaluate", evaluate_stage)

    def output_stage():
        manifest = {
            "config": config.to_dict(),
            "model_config_digest": model_config.digest(),
            "report_digest": report.digest(),
            "average_auc": None if math.isnan(report.average_auc) else report.average_auc,
            "average_auc_rare": None if math.isnan(report.average_auc_rare) else report.average_auc_rare,
            "artifacts": {p.name: _sha256(p) for p in run.artifacts},
        }
        path = run.out / "manifest.json"
        path.write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
        run.artifacts.append(path)
        return manifest

    manifest = run.stage("output", output_stage)
    log.info({"event": "done", "elapsed": round(time.perf_counter() - run.t0, 3)})
    return report, predictor, manifest
