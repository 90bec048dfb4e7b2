"""Command-line front end.

Subcommands: gen (synthetic data), fit (curve-fit baselines), train (one
model), gridsearch, eval (saved model on a CSV), importance (permutation
feature importance), report (the full experiment pipeline). Every
subcommand writes a deterministic report.json into --out; exit code is 0 on
success and 1 with a stage-tagged message on failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import baselines, clustering, dataset, harness, synthgen
from .forest import permutation_importance

_MODEL_ALIASES = {"exp": "exponential", "twoterm": "two_term"}
_CLI_MODELS = ("mlp", "rbf", "forest", "lambertian", "linear", "exp", "twoterm")


def _canonical_model(name: str) -> str:
    return _MODEL_ALIASES.get(name, name)


def _load_generator_config(args) -> synthgen.GeneratorConfig:
    if getattr(args, "config", None):
        try:
            config = synthgen.GeneratorConfig.from_json(Path(args.config).read_text())
        except (OSError, ValueError, TypeError) as exc:
            raise harness.PipelineError("config", f"bad generator config: {exc}") from exc
    else:
        config = synthgen.GeneratorConfig()
    if getattr(args, "count", None):
        config = replace(config, sample_count=args.count)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    return config


def _split_for_fraction(train_frac: float) -> dataset.SplitSpec:
    if not 0.0 < train_frac < 1.0:
        raise harness.PipelineError("config", "--train-frac must be in (0, 100) percent")
    validation = min(0.2, round((1.0 - train_frac) / 2.0, 12))
    test = round(1.0 - train_frac - validation, 12)
    return dataset.SplitSpec(train=train_frac, validation=validation, test=test)


def _experiment_config(args) -> harness.ExperimentConfig:
    generator = None
    if not getattr(args, "data", None):
        generator = _load_generator_config(args)
    split = dataset.SplitSpec()
    if getattr(args, "train_frac", None):
        split = _split_for_fraction(args.train_frac / 100.0)
    grid = None
    if getattr(args, "grid", None):
        try:
            doc = json.loads(Path(args.grid).read_text())
        except (OSError, ValueError) as exc:
            raise harness.PipelineError("config", f"bad grid file: {exc}") from exc
        grid = harness.GridSpec(params=doc.get("params", doc), cv_folds=doc.get("cv_folds"))
    fractions = None
    if getattr(args, "sweep", False):
        fractions = (0.1, 0.3, 0.6, 0.8, 0.9)
    return harness.ExperimentConfig(
        task=args.task,
        model=_canonical_model(args.model),
        source_csv=getattr(args, "data", None),
        generator=generator,
        split=split,
        train_fractions=fractions,
        grid=grid,
        include_vna=not getattr(args, "no_vna", False),
        distance_only_clustering=getattr(args, "cluster_distance_only", False),
        seed=args.seed if args.seed is not None else 0,
    )


def _cmd_gen(args) -> int:
    config = _load_generator_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.task == "pathloss":
        samples = synthgen.generate_ds2(config)
        name = "ds2.csv"
        dataset.write_ds2_csv(out / name, samples)
    else:
        samples = synthgen.generate_ds1(config)
        name = "ds1.csv"
        dataset.write_ds1_csv(out / name, samples)
    harness.write_report_json(
        {"command": "gen", "task": args.task, "file": name,
         "n_samples": len(samples), "config": json.loads(config.to_json())},
        out / "report.json")
    return 0


def _pathloss_arrays(args):
    """Shared loader for fit/importance: CSV or generator-backed samples."""
    if getattr(args, "data", None):
        try:
            report = dataset.ingest_csv(args.data, "pathloss")
        except (OSError, ValueError) as exc:
            raise harness.PipelineError("ingest", str(exc)) from exc
        samples = report.samples
        info = {"source": "csv", "path": Path(args.data).name,
                "n_ingested": len(samples), "n_rejected": len(report.rejected)}
    else:
        config = _load_generator_config(args)
        samples = synthgen.generate_ds2(config)
        info = {"source": "generator", "n_ingested": len(samples),
                "config": json.loads(config.to_json())}
    return samples, info


def _cmd_fit(args) -> int:
    samples, info = _pathloss_arrays(args)
    distances = np.array([s.distance_m for s in samples])
    losses = np.array([s.path_loss_db for s in samples])
    families = ([_canonical_model(args.model)] if args.model
                else list(baselines.FAMILIES))
    fits = {}
    for family in families:
        if family not in baselines.FAMILIES:
            raise harness.PipelineError("config", f"{family!r} is not a fit family")
        result = baselines.fit_model(family, distances, losses)
        gof = baselines.goodness(result.model, distances, losses)
        fits[family] = baselines.fit_report(result, gof)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_report_json(
        {"command": "fit", "dataset": info, "fits": fits}, out / "report.json")
    return 0


def _cmd_train(args) -> int:
    config = _experiment_config(args)
    if config.model not in harness.ML_FAMILIES:
        raise harness.PipelineError("config", "train expects an ML model (mlp|rbf|forest)")
    if config.task == "pathloss":
        bundle = harness.run_pathloss_experiment(config, out_dir=args.out)
    else:
        bundle = harness.run_cfr_experiment(config, out_dir=args.out)
    bundle_key = "model_eval" if config.task == "pathloss" else "pooled_eval"
    print(f"{config.model} test rmse: {bundle[bundle_key]['rmse_db']:.4f} dB")
    return 0


def _cmd_gridsearch(args) -> int:
    config = _experiment_config(args)
    if config.model not in harness.ML_FAMILIES:
        raise harness.PipelineError("config", "gridsearch expects an ML model")
    if config.grid is None:
        config = replace(config, grid=harness.GridSpec(params=harness.DEFAULT_GRIDS[config.model]))
    if config.task == "pathloss":
        bundle = harness.run_pathloss_experiment(config, out_dir=args.out)
    else:
        raise harness.PipelineError("config", "gridsearch currently drives the pathloss task")
    print(f"best params: {bundle['grid_search']['best_params']}")
    return 0


def _cmd_eval(args) -> int:
    try:
        doc = json.loads(Path(args.model_file).read_text())
    except (OSError, ValueError) as exc:
        raise harness.PipelineError("persist", f"cannot load model: {exc}") from exc
    model = harness.model_from_dict(doc)
    if args.task == "pathloss":
        try:
            report = dataset.ingest_csv(args.data, "pathloss")
        except (OSError, ValueError) as exc:
            raise harness.PipelineError("ingest", str(exc)) from exc
        samples = report.samples
        if (any(s.variance_region is None for s in samples)
                and "variance_region" in model.feature_names):
            labeled = clustering.label_variance_region(
                samples, seed=args.seed if args.seed is not None else 0)
            samples = labeled.samples
        features = dataset.pathloss_features(samples)
        targets = dataset.pathloss_targets(samples)
    else:
        try:
            report = dataset.ingest_csv(args.data, "cfr")
        except (OSError, ValueError) as exc:
            raise harness.PipelineError("ingest", str(exc)) from exc
        samples = report.samples
        features = dataset.cfr_features(samples,
                                        include_vna=len(model.feature_names) == 4)
        targets = dataset.cfr_targets(samples)
    predictions = model.predict(features)
    eval_report = harness.compute_metrics(targets, predictions,
                                          model_id=model.family,
                                          dataset_id=Path(args.data).name)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.export_residual_cdf(eval_report, out / "residual_cdf.csv")
    harness.write_report_json(
        {"command": "eval", "model_file": Path(args.model_file).name,
         "data": Path(args.data).name, "eval": eval_report.to_dict(),
         "artifacts": {"residual_cdf": "residual_cdf.csv"}},
        out / "report.json")
    print(f"rmse: {eval_report.rmse:.4f} dB over {eval_report.n} rows")
    return 0


def _cmd_importance(args) -> int:
    config = _experiment_config(args)
    if config.task != "pathloss":
        raise harness.PipelineError("config", "importance runs on the pathloss task")
    if config.model not in harness.ML_FAMILIES:
        raise harness.PipelineError("config", "importance expects an ML model")
    samples, info = _pathloss_arrays(args)
    filtered = dataset.filter_outliers(samples, config.outlier_threshold)
    labeled = clustering.label_variance_region(
        filtered.kept, seed=harness.substream(config.seed, 2),
        distance_only=config.distance_only_clustering)
    features = dataset.pathloss_features(labeled.samples)
    losses = dataset.pathloss_targets(labeled.samples)
    scaling = dataset.fit_scaler(features, dataset.PATHLOSS_FEATURES)
    scaled = dataset.apply_scaler(scaling, features)
    train_idx, val_idx, test_idx = dataset.split(
        len(losses), replace(config.split, seed=harness.substream(config.seed, 1)))
    model = harness.train_regressor(config.model, scaled[train_idx], losses[train_idx],
                                    scaled[val_idx], losses[val_idx],
                                    dict(config.model_params),
                                    harness.substream(config.seed, 3),
                                    scaling, dataset.PATHLOSS_FEATURES)
    importance = permutation_importance(
        model.predict_scaled_inputs, scaled[test_idx], losses[test_idx],
        repeats=args.repeats, seed=harness.substream(config.seed, 5),
        feature_names=dataset.PATHLOSS_FEATURES)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_importance_csv(importance, out / "importance.csv")
    harness.write_report_json(
        {"command": "importance", "model": config.model, "dataset": info,
         "baseline_rmse_db": importance.baseline_rmse,
         "ranking": [{"feature": f, "normalized": v} for f, v in importance.ranking()],
         "artifacts": {"importance": "importance.csv"}},
        out / "report.json")
    print("top feature:", importance.ranking()[0][0])
    return 0


def _cmd_report(args) -> int:
    config = _experiment_config(args)
    if config.model not in harness.ML_FAMILIES:
        raise harness.PipelineError("config", "report expects an ML model")
    if config.task == "pathloss":
        bundle = harness.run_pathloss_experiment(config, out_dir=args.out)
    else:
        bundle = harness.run_cfr_experiment(config, out_dir=args.out)
    if "sweep" in bundle:
        for row in bundle["sweep"]:
            print(f"train {row['train_fraction']:.0%}: rmse {row['rmse_db']:.4f} dB")
    else:
        key = "model_eval" if config.task == "pathloss" else "pooled_eval"
        print(f"{config.model} test rmse: {bundle[key]['rmse_db']:.4f} dB")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vvlcml",
        description="Channel-loss and frequency-response modeling for vehicular "
                    "visible-light links: synthetic data, curve fits, ML models.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model_default=None, needs_model=True):
        p.add_argument("--task", choices=("pathloss", "cfr"), default="pathloss")
        if needs_model:
            p.add_argument("--model", choices=_CLI_MODELS, default=model_default)
        p.add_argument("--config", help="generator config JSON")
        p.add_argument("--data", help="dataset CSV (overrides --config)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("gen", help="write a synthetic dataset CSV")
    p.add_argument("--task", choices=("pathloss", "cfr"), default="pathloss")
    p.add_argument("--config", help="generator config JSON")
    p.add_argument("--count", type=int, help="override sample count")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("fit", help="fit the curve-model families")
    p.add_argument("--model", choices=("lambertian", "linear", "exp", "twoterm"),
                   default=None, help="single family (default: all four)")
    p.add_argument("--config", help="generator config JSON")
    p.add_argument("--data", help="pathloss CSV")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("train", help="train one ML model and save it")
    common(p, model_default="rbf")
    p.add_argument("--train-frac", type=float, help="training percentage (e.g. 60)")
    p.add_argument("--no-vna", action="store_true",
                   help="drop the VNA flag from the CFR features")
    p.add_argument("--cluster-distance-only", action="store_true",
                   help="variance regions from distance alone")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("gridsearch", help="exhaustive hyperparameter search")
    common(p, model_default="rbf")
    p.add_argument("--grid", help="grid JSON: {param: [values, ...]}")
    p.add_argument("--train-frac", type=float)
    p.add_argument("--cluster-distance-only", action="store_true")
    p.set_defaults(func=_cmd_gridsearch)

    p = sub.add_parser("eval", help="evaluate a saved model on a CSV")
    p.add_argument("--task", choices=("pathloss", "cfr"), default="pathloss")
    p.add_argument("--model-file", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("importance", help="permutation feature importance")
    common(p, model_default="forest")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--cluster-distance-only", action="store_true")
    p.set_defaults(func=_cmd_importance)

    p = sub.add_parser("report", help="full experiment pipeline")
    common(p, model_default="rbf")
    p.add_argument("--train-frac", type=float)
    p.add_argument("--sweep", action="store_true",
                   help="training-fraction sweep 10/30/60/80/90%")
    p.add_argument("--grid", help="grid JSON to tune before the final fit")
    p.add_argument("--no-vna", action="store_true")
    p.add_argument("--cluster-distance-only", action="store_true")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except harness.PipelineError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error [cli] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
