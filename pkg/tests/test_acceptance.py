"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are
repeated in the terminal summary.
"""

import itertools
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from raredetect.cli import main
from raredetect.dataset import (
    TEST,
    VALID,
    Dataset,
    assign_splits,
    build_balanced_subset,
)
from raredetect.density import density_at, log_density, scott_bandwidth
from raredetect.evaluation import ModelConfig, cross_validate, parameter_sweep, roc_auc
from raredetect.pca import fit_pca, project
from raredetect.pipeline import PipelineConfig, protocol_folds, run_pipeline
from raredetect.predictor import Predictor, UnstableNeighborsError, predict, prediction_gradient
from raredetect.preprocess import preprocess_fundus, resize_bilinear, rgb_to_ycrcb, ycrcb_to_rgb
from raredetect.synth import SynthSpec, generate
from raredetect.tsne import TsneConfig, conditional_matrix, fit_tsne, tsne_cost, tsne_gradient

from conftest import ACCEPTANCE_LINES, dataset_from_synth, write_csvs


@contextmanager
def criterion(number, title, budget=None):
    """Time the block, record one PASS/FAIL line, and enforce the runtime budget."""
    notes = []
    start = time.perf_counter()
    try:
        yield notes
        elapsed = time.perf_counter() - start
        if budget is not None:
            assert elapsed < budget, f"took {elapsed:.1f}s, budget {budget}s"
    except BaseException as exc:
        line = f"FAIL criterion {number}: {title} ({exc})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        raise
    extra = f"; {'; '.join(notes)}" if notes else ""
    line = f"PASS criterion {number}: {title} [{elapsed:.2f}s{extra}]"
    ACCEPTANCE_LINES.append(line)
    print(line)


def _pairs_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def _fd_rel_error(f, grad, x, eps):
    fd = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        fd[idx] = (f(xp) - f(xm)) / (2 * eps)
    return np.linalg.norm(grad - fd) / np.linalg.norm(fd)


def test_criterion_01_auc_oracle():
    with criterion(1, "roc_auc equals the all-pairs Mann-Whitney oracle on 200 tied instances", budget=5):
        r = np.random.default_rng(101)
        mismatches = 0
        for _ in range(200):
            n = int(r.integers(2, 51))
            scores = r.integers(0, 8, size=n) / 7.0  # coarse grid, many ties
            labels = r.integers(0, 2, size=n)
            labels[0], labels[-1] = 0, 1
            if roc_auc(scores, labels).auc != _pairs_auc(scores, labels):
                mismatches += 1
        assert mismatches == 0, f"{mismatches} mismatches"


def test_criterion_02_gradients():
    with criterion(2, "analytic gradients match central finite differences (rel < 1e-4)", budget=30) as notes:
        worst = {}
        for variant in ("student_t", "paper_sne"):
            errs = []
            for seed in range(3):
                r = np.random.default_rng(seed)
                P = conditional_matrix(r.normal(size=(12, 6)), 4.0)
                tau = r.normal(size=(12, 2))
                g = tsne_gradient(P, tau, variant)
                errs.append(_fd_rel_error(lambda t: tsne_cost(P, t, variant), g, tau, 1e-5))
            worst[variant] = max(errs)

        r = np.random.default_rng(7)
        X = r.normal(size=(60, 10))
        pca = fit_pca(X, 4)
        pred = Predictor(pca, project(pca, X), r.uniform(size=(60, 3)), k=3)
        errs = []
        while len(errs) < 5:
            gamma = r.normal(size=10)
            try:
                g = prediction_gradient(pred, gamma, 1)
            except UnstableNeighborsError:
                continue
            errs.append(_fd_rel_error(lambda x: predict(pred, x)[1], g, gamma, 1e-6))
        worst["prediction"] = max(errs)
        notes.append(", ".join(f"{k} max rel {v:.1e}" for k, v in worst.items()))
        assert all(v < 1e-4 for v in worst.values()), worst


def test_criterion_03_perplexity_calibration():
    with criterion(3, "20 sets of 100 points in 50-D calibrate to perplexity 30 within 1e-4", budget=30) as notes:
        worst = 0.0
        for seed in range(20):
            r = np.random.default_rng(1000 + seed)
            pi = r.normal(size=(100, 50)) * r.uniform(0.5, 2.0, size=50)
            P = conditional_matrix(pi, 30.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                ent = -np.nansum(np.where(P > 0, P * np.log(P), 0.0), axis=1)
            worst = max(worst, float(np.max(np.abs(np.exp(ent) - 30.0) / 30.0)))
        notes.append(f"max rel error {worst:.1e}")
        assert worst <= 1e-4


def test_criterion_04_kde():
    with criterion(4, "Parzen density oracle, unit integral and Scott bandwidths", budget=10) as notes:
        r = np.random.default_rng(4)
        worst = 0.0
        for _ in range(20):
            pts = r.normal(size=(5, 2))
            tau = r.normal(size=2)
            h = float(r.uniform(0.2, 2.0))
            direct = 0.0
            for p in pts:
                sq = ((tau[0] - p[0]) / h) ** 2 + ((tau[1] - p[1]) / h) ** 2
                direct += (2 * math.pi) ** -0.5 * math.exp(-sq / 2)
            worst = max(worst, abs(density_at(pts, h, tau) - direct / 5))
        assert worst <= 1e-12, worst

        pts = r.normal(size=(25, 2)) * [2.0, 0.7]
        h = scott_bandwidth(25, 2)
        step = h / 10
        lo, hi = pts.min(axis=0) - 6 * h, pts.max(axis=0) + 6 * h
        grid = np.stack(
            np.meshgrid(np.arange(lo[0], hi[0], step), np.arange(lo[1], hi[1], step), indexing="ij"), axis=-1
        ).reshape(-1, 2)
        integral = float(np.exp(log_density(pts, h, grid)).sum() * step * step)
        assert abs(integral - 1) < 1e-2, integral

        assert scott_bandwidth(64, 2) == 0.5
        assert scott_bandwidth(1, 5) == 1.0
        assert abs(scott_bandwidth(100, 2) - 0.46415888336127789) < 1e-15
        notes.append(f"oracle max diff {worst:.1e}, integral {integral:.5f}")


# -- desk-scale pipeline fixture shared by criteria 5 to 7 ---------------------


@pytest.fixture(scope="module")
def fewshot():
    spec = SynthSpec(P=50, n_frequent=5, n_rare=3, frequent_samples=200, rare_samples=10, separation=8.0, seed=0)
    data = generate(spec)
    dataset = dataset_from_synth(data)
    balanced = build_balanced_subset(dataset, 5, seed=0)
    splits = assign_splits(dataset, balanced, seed=0)
    folds = protocol_folds(splits, dataset, 10, seed=0)
    return data, dataset, splits, folds


@pytest.fixture(scope="module")
def fewshot_run(fewshot, tmp_path_factory):
    """Full pipeline with default parameters on the few-shot fixture."""
    data = fewshot[0]
    root = tmp_path_factory.mktemp("fewshot")
    f, l = write_csvs(root, data)
    config = PipelineConfig(features=str(f), labels=str(l), out=str(root / "run"), M=5)
    start = time.perf_counter()
    report, _, manifest = run_pipeline(config)
    return report, time.perf_counter() - start, root


def test_criterion_05_end_to_end_rare_auc(fewshot_run):
    report, elapsed, _ = fewshot_run
    with criterion(5, "default pipeline with 10-fold cross-testing gives pooled AUC >= 0.95 for every rare condition") as notes:
        rare = [r for r in report.rocs if r.condition.startswith("rare_")]
        assert len(rare) == 3
        notes.append(", ".join(f"{r.condition} {r.auc:.4f}" for r in rare) + f", total {elapsed:.1f}s")
        assert all(r.defined and r.auc >= 0.95 for r in rare)
        assert elapsed < 180, f"took {elapsed:.1f}s"


def test_criterion_06_sweep(fewshot):
    _, dataset, splits, folds = fewshot
    with criterion(6, "sweep over K and embedding dimension; K = 3 within 0.05 of best", budget=600) as notes:
        rows = parameter_sweep(dataset, splits, folds, {"k": [1, 3, 9, 27], "psecond": [2, 3]}, ModelConfig(M=5))
        assert [(r["param"], r["value"]) for r in rows] == [
            ("k", 1), ("k", 3), ("k", 9), ("k", 27), ("psecond", 2), ("psecond", 3)
        ]
        assert all(r["avg_auc"] is not None and not math.isnan(r["avg_auc"]) for r in rows)
        best = max(r["avg_auc"] for r in rows)
        k3 = rows[1]["avg_auc"]
        notes.append(", ".join(f"{r['param']}={r['value']}: {r['avg_auc']:.4f}" for r in rows))
        assert best - k3 <= 0.05


def test_criterion_07_protocol_invariants(fewshot, fewshot_run):
    _, dataset, splits, folds = fewshot
    with criterion(7, "no patient leakage, each sample scored once, byte-identical reruns") as notes:
        patient = dict(zip(dataset.sample_ids, dataset.patient_ids))
        for mode, members in (("cv", splits.members(VALID)), ("test", splits.members(TEST))):
            # leakage: folds never split a patient, and within one iteration the
            # reference (base + other folds) never shares a patient with the held-out fold
            fold_of = folds.assignment
            base = set(splits.members(VALID)) if mode == "test" else set()
            for f in range(folds.n_folds):
                held = {s for s in members if fold_of[s] == f}
                ref = base | {s for s in members if fold_of[s] != f}
                assert not {patient[s] for s in held} & {patient[s] for s in ref}
        report, _, root = fewshot_run
        assert report.mode == "test"
        cv = cross_validate(dataset, splits, folds, ModelConfig(M=5, tsne_iterations=400))
        skipped_total = 0
        for rep, members in ((report, splits.members(TEST)), (cv, splits.members(VALID))):
            assert sum(rep.fold_prediction_sizes) == len(members)
            for name, (ids, _, _) in rep.predictions.items():
                # scored at most once, and only missing where the fold was skipped for this condition
                assert len(ids) == len(set(ids)), name
                skipped = {int(n.split()[1].rstrip(":")) for n in rep.notes if f"condition {name} skipped" in n}
                expected = [s for s in members if folds.assignment[s] not in skipped]
                assert sorted(ids) == sorted(expected), name
                skipped_total += len(skipped)

        # rerun the same defaults through the command line
        code = main(["run", "--features", str(root / "features.csv"), "--labels", str(root / "labels.csv"),
                     "--m", "5", "--out", str(root / "rerun")])
        assert code == 0
        for name in ("report.json", "predictor.json", "scores.csv"):
            assert (root / "run" / name).read_bytes() == (root / "rerun" / name).read_bytes(), name
        notes.append(
            f"{len(splits.members(TEST))} test and {len(splits.members(VALID))} validation samples, "
            f"{skipped_total} fold/condition pairs skipped for lack of reference positives"
        )


def test_criterion_08_balanced_caps():
    with criterion(8, "balanced subset caps a 2000-positive condition at 1500 and skips rare positives") as notes:
        n = 2600
        labels = np.zeros((n, 3), dtype=np.int8)
        labels[:2000, 0] = 1
        labels[2000:2300, 1] = 1
        labels[1990:2010, 2] = 1  # rare, overlapping both frequent conditions
        labels[2500:2520, 2] = 1
        ids = [f"s{i}" for i in range(n)]
        d = Dataset.from_arrays(ids, [f"p{i // 2}" for i in range(n)], np.zeros((n, 2)), labels, ["a", "b", "r"])
        chosen = build_balanced_subset(d, 2, per_condition_cap=1500, normal_count=5000, seed=0)
        rows = d.index_of(sorted(chosen))
        sel = d.labels[rows]
        assert int(sel[:, 0].sum()) == 1500
        assert not sel[:, 2].any()
        notes.append(f"selected {int(sel[:, 0].sum())} / {int(sel[:, 1].sum())} positives, {len(chosen)} total")


def _three_clusters():
    r = np.random.default_rng(9)
    centers = np.linalg.qr(r.normal(size=(50, 3)))[0].T * 10.0
    X = np.vstack([c + r.normal(size=(60, 50)) for c in centers])
    return X, np.repeat(np.arange(3), 60)


def test_criterion_09_tsne_clusters():
    with criterion(9, "3-cluster 50-D fixture keeps >= 95% same-cluster 10-NN majority", budget=120) as notes:
        X, y = _three_clusters()
        scores = {}
        for variant in ("student_t", "paper_sne"):
            tau = fit_tsne(X, TsneConfig(kernel_variant=variant, seed=0)).tau
            d = ((tau[:, None] - tau[None]) ** 2).sum(-1)
            np.fill_diagonal(d, np.inf)
            nn = np.argsort(d, axis=1)[:, :10]
            majority = np.array([np.bincount(y[row], minlength=3).argmax() for row in nn])
            scores[variant] = float(np.mean(majority == y))
        notes.append(", ".join(f"{k} {v:.3f}" for k, v in scores.items()))
        assert all(v >= 0.95 for v in scores.values()), scores


def test_criterion_10_preprocessing():
    with criterion(10, "299x299 output, uniform input gives Y = 128, chroma passthrough within 1 level"):
        r = np.random.default_rng(10)
        for h, w in ((240, 320), (31, 77), (500, 400)):
            img = r.integers(0, 256, size=(h, w, 3)).astype(np.uint8)
            assert preprocess_fundus(img).shape == (299, 299, 3)
        for level in (40, 128, 200):
            out = preprocess_fundus(np.full((90, 130, 3), level, dtype=np.uint8))
            assert np.all(np.rint(rgb_to_ycrcb(out)[..., 0]) == 128)
        yy, xx = np.mgrid[:180, :180]
        ycc = np.stack([np.full((180, 180), 110.0), 96 + 0.35 * xx, 150 - 0.3 * yy], axis=-1)
        img = np.clip(np.rint(ycrcb_to_rgb(ycc)), 0, 255).astype(np.uint8)
        before = np.rint(rgb_to_ycrcb(np.clip(np.rint(resize_bilinear(img, 299)), 0, 255)))
        after = rgb_to_ycrcb(preprocess_fundus(img))
        assert np.max(np.abs(after[..., 1:] - before[..., 1:])) <= 1.0
