"""Command-line entry point (``raredetect <subcommand>``)."""

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataset as ds
from .density import fit_condition_models
from .evaluation import ModelConfig, cross_test, cross_validate, parameter_sweep, write_sweep_csv
from .pca import PcaModel, fit_pca, project
from .pipeline import (
    PipelineConfig,
    PipelineError,
    protocol_folds,
    configure_logging,
    read_matrix_csv,
    run_pipeline,
    write_matrix_csv,
)
from .predictor import Predictor, predict_batch, prediction_gradient
from .preprocess import preprocess_directory
from .synth import SynthSpec, generate
from .tsne import VARIANTS, TsneConfig, fit_tsne

log = logging.getLogger("raredetect")


@contextmanager
def stage(name):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, f"{type(exc).__name__}: {exc}") from exc


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model_args(p):
    p.add_argument("--m", type=int, default=0, help="number of frequent conditions")
    p.add_argument("--pprime", default="50", help="PCA dimension, or 'inf' to skip PCA")
    p.add_argument("--psecond", type=int, default=2, help="embedding dimension")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--variant", choices=VARIANTS, default="student_t")
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--paper-kernel", action="store_true", help="unnormalized density kernel")


def _pprime(text):
    return None if str(text).lower() in ("inf", "none") else int(text)


def _model_config(args):
    return ModelConfig(
        n_pca=_pprime(args.pprime),
        n_dims=args.psecond,
        perplexity=args.perplexity,
        k=args.k,
        tsne_variant=args.variant,
        tsne_iterations=args.iters,
        normalized_density=not args.paper_kernel,
        M=args.m,
        seed=args.seed,
        threads=args.threads,
    )


def _load_splits_and_folds(args, dataset):
    with stage("split"):
        if args.splits:
            splits = ds.read_split_csv(args.splits, args.seed)
        else:
            balanced = ds.build_balanced_subset(dataset, args.m, args.cap, args.normals, args.seed)
            splits = ds.assign_splits(dataset, balanced, args.seed)
        folds = ds.read_fold_csv(args.folds) if args.folds else protocol_folds(splits, dataset, args.n_folds, args.seed)
    return splits, folds


def cmd_split(args):
    with stage("dataset"):
        dataset = ds.load_dataset(args.features, args.labels)
    with stage("split"):
        balanced = ds.build_balanced_subset(dataset, args.m, args.cap, args.normals, args.seed)
        splits = ds.assign_splits(dataset, balanced, args.seed)
        folds = protocol_folds(splits, dataset, args.n_folds, args.seed)
    with stage("output"):
        out = _out_dir(args)
        ds.write_assignment_csv(out / "split.csv", splits.assignment, "assignment")
        ds.write_assignment_csv(out / "folds.csv", folds.assignment, "fold")
    log.info({"event": "split", "balanced": len(balanced), **splits.counts()})


def cmd_preprocess(args):
    with stage("output"):
        written = preprocess_directory(args.input, args.out, args.roi_threshold, args.sigma)
    log.info({"event": "preprocess", "images": len(written)})


def cmd_synth(args):
    with stage("config"):
        spec = SynthSpec.from_json(Path(args.spec).read_text(encoding="utf-8")) if args.spec else SynthSpec()
    with stage("output"):
        generate(spec).write(_out_dir(args))


def cmd_pca(args):
    with stage("dataset"):
        ids, _, features = ds.read_features_csv(args.features)
    with stage("pca"):
        model = fit_pca(features, args.dims)
        pi = project(model, features)
    with stage("output"):
        out = _out_dir(args)
        model.save(out / "pca.json")
        write_matrix_csv(out / "pi.csv", ids, pi, "p")
    for note in model.warnings:
        log.warning({"event": "pca", "warning": note})


def cmd_tsne(args):
    with stage("dataset"):
        ids, _, pi = read_matrix_csv(args.input)
    with stage("tsne"):
        config = TsneConfig(
            perplexity=args.perplexity,
            output_dim=args.dims,
            iterations=args.iters,
            learning_rate=args.learning_rate,
            kernel_variant=args.variant,
            seed=args.seed,
        )
        emb = fit_tsne(pi, config, sample_ids=ids)
    with stage("output"):
        out = _out_dir(args)
        write_matrix_csv(out / "embedding.csv", ids, emb.tau, "t")
        (out / "embedding.json").write_text(emb.sidecar_json(), encoding="utf-8")
    log.info({"event": "tsne", "initial_cost": emb.initial_cost, "final_cost": emb.final_cost})


def cmd_fit_density(args):
    with stage("dataset"):
        ids, _, tau = read_matrix_csv(args.embedding)
        l_ids, names, labels = ds.read_labels_csv(args.labels)
        row = {s: i for i, s in enumerate(l_ids)}
        labels = labels[[row[s] for s in ids]]
        order = np.argsort(-labels.sum(axis=0), kind="stable")
        labels, names = labels[:, order], [names[i] for i in order]
    with stage("density"):
        models, reference = fit_condition_models(
            tau, labels, names, M=args.m, normalized=not args.paper_kernel
        )
        reference = replace(reference, sample_ids=tuple(ids))
    out = _out_dir(args)
    with stage("output"):
        payload = {"models": [m.to_dict() for m in models], "omitted": [list(o) for o in reference.omitted]}
        (out / "models.json").write_text(json.dumps(payload), encoding="utf-8")
        reference.write_csv(out / "reference_q.csv")
    if args.pi:
        with stage("predictor"):
            pi_ids, _, pi = read_matrix_csv(args.pi)
            prow = {s: i for i, s in enumerate(pi_ids)}
            pi = pi[[prow[s] for s in ids]]
            pca = PcaModel.load(args.pca) if args.pca else None
            predictor = Predictor(
                pca=pca,
                reference_pi=pi,
                reference_q=reference.q,
                k=args.k,
                condition_names=reference.condition_names,
                reference_ids=ids,
                metadata={"seed": args.seed},
            )
            predictor.save(out / "predictor.json")


def _read_predict_inputs(args):
    with stage("dataset"):
        predictor = Predictor.load(args.model)
        ids, _, features = ds.read_features_csv(args.features)
    return predictor, ids, features


def cmd_predict(args):
    predictor, ids, features = _read_predict_inputs(args)
    with stage("predictor"):
        scores = predict_batch(predictor, features)
    with stage("output"):
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_matrix_csv(args.out, ids, scores, "q", columns=list(predictor.condition_names))


def cmd_gradient(args):
    predictor, ids, features = _read_predict_inputs(args)
    with stage("predictor"):
        n = predictor.condition_index(args.condition)
        grads = np.array([prediction_gradient(predictor, row, n) for row in features])
    with stage("output"):
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_matrix_csv(args.out, ids, grads.reshape(len(ids), -1), "g")


def cmd_evaluate(args):
    with stage("dataset"):
        dataset = ds.load_dataset(args.features, args.labels)
    splits, folds = _load_splits_and_folds(args, dataset)
    with stage("evaluate"):
        protocol = cross_test if args.mode == "test" else cross_validate
        report = protocol(dataset, splits, folds, _model_config(args))
    with stage("output"):
        report.write(_out_dir(args))
    log.info({"event": "evaluate", "average_auc": report.average_auc, "average_auc_rare": report.average_auc_rare})


def cmd_sweep(args):
    with stage("config"):
        values = [_pprime(v) if args.param == "pprime" else float(v) for v in args.values.split(",")]
        if args.param in ("psecond", "k"):
            values = [int(v) for v in values]
    with stage("dataset"):
        dataset = ds.load_dataset(args.features, args.labels)
    splits, folds = _load_splits_and_folds(args, dataset)
    with stage("evaluate"):
        rows = parameter_sweep(dataset, splits, folds, {args.param: values}, _model_config(args), mode=args.mode)
    with stage("output"):
        write_sweep_csv(_out_dir(args) / "sweep.csv", rows)


def cmd_run(args):
    with stage("config"):
        base = PipelineConfig.load(args.config).to_dict() if args.config else {}
        overrides = {
            "features": args.features,
            "labels": args.labels,
            "M": args.m,
            "seed": args.seed,
            "threads": args.threads,
            "out": args.out,
        }
        base.update({k: v for k, v in overrides.items() if v is not None})
        config = PipelineConfig.from_dict(base)
    report, _, _ = run_pipeline(config)
    log.info({"event": "run", "average_auc": report.average_auc, "average_auc_rare": report.average_auc_rare})


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    # None means "not given", so `run` can tell flags from config-file values
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--out", default=None)
    common.add_argument("--log-level", default="INFO")

    parser = argparse.ArgumentParser(prog="raredetect", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        p = sub.add_parser(name, parents=[common], **kw)
        p.set_defaults(func=fn)
        return p

    def split_args(p, required=True):
        p.add_argument("--features", required=required)
        p.add_argument("--labels", required=required)
        p.add_argument("--cap", type=int, default=1500)
        p.add_argument("--normals", type=int, default=5000)
        p.add_argument("--n-folds", type=int, default=10)

    p = add("split", cmd_split, help="balanced subset, split and fold assignment")
    split_args(p)
    p.add_argument("--m", type=int, required=True)

    p = add("preprocess", cmd_preprocess, help="normalize fundus photographs")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--roi-threshold", type=float, default=10)
    p.add_argument("--sigma", type=float, default=5.0)

    p = add("synth", cmd_synth, help="generate a synthetic dataset")
    p.add_argument("--spec")

    p = add("pca", cmd_pca, help="fit PCA and project features")
    p.add_argument("--features", required=True)
    p.add_argument("--dims", type=int, default=50)

    p = add("tsne", cmd_tsne, help="embed projected features")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--dims", type=int, default=2)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--variant", choices=VARIANTS, default="student_t")

    p = add("fit-density", cmd_fit_density, help="fit condition densities on an embedding")
    p.add_argument("--embedding", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--paper-kernel", action="store_true")
    p.add_argument("--pi", help="projected reference features; also writes predictor.json")
    p.add_argument("--pca", help="pca.json to embed in the predictor")
    p.add_argument("--k", type=int, default=3)

    p = add("predict", cmd_predict, help="score feature vectors")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)

    p = add("gradient", cmd_gradient, help="gradient of one condition's score")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--condition", required=True)

    for name, fn in (("evaluate", cmd_evaluate), ("sweep", cmd_sweep)):
        p = add(name, fn, help="cross-validation / cross-testing" if name == "evaluate" else "parameter sweep")
        split_args(p)
        _model_args(p)
        p.add_argument("--mode", choices=("cv", "test"), default="test" if name == "evaluate" else "cv")
        p.add_argument("--splits", help="existing split.csv")
        p.add_argument("--folds", help="existing folds.csv")
        if name == "sweep":
            p.add_argument("--param", choices=("pprime", "psecond", "perplexity", "k"), required=True)
            p.add_argument("--values", required=True, help="comma-separated values")

    p = add("run", cmd_run, help="end-to-end pipeline")
    p.add_argument("--config")
    p.add_argument("--features")
    p.add_argument("--labels")
    p.add_argument("--m", type=int)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command != "run":
        args.seed = 0 if args.seed is None else args.seed
        args.threads = 1 if args.threads is None else args.threads
        args.out = "out" if args.out is None else args.out
    configure_logging(getattr(logging, str(args.log_level).upper(), logging.INFO))
    try:
        args.func(args)
    except PipelineError as err:
        log.error({"event": "error", "stage": err.stage, "error": str(err)})
        return err.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
