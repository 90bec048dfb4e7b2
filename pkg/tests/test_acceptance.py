"""Acceptance suite: one test per gate criterion, each printing a pass line.

Heavy per-seed artifacts (full-size synthetic DS2 runs and trained models)
are cached at module scope so criteria that share a dataset do not rebuild
it. Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""

import json
import math
import time

import numpy as np
import pytest

from vvlcml import baselines
from vvlcml.dataset import PATHLOSS_FEATURES, SplitSpec
from vvlcml.forest import ForestConfig, forest_fit, forest_predict, permutation_importance, tree_predict
from vvlcml.harness import (ExperimentConfig, compute_metrics, run_cfr_experiment,
                            train_regressor)
from vvlcml.neuralnet import (MlpNetwork, mlp_gradient, mlp_init, mlp_sse,
                              rbf_predict, rbf_train, _pack, _unpack)
from vvlcml.synthgen import GeneratorConfig, generate_ds2, ground_truth_pl, noiseless

from conftest import build_ds2_run

SEEDS = tuple(range(10))
_MODEL_CACHE = {}


def _passline(n, detail):
    print(f"criterion {n}: PASS — {detail}")


def trained_model(seed, family, params=None):
    key = (seed, family)
    if key not in _MODEL_CACHE:
        run = build_ds2_run(seed)
        model = train_regressor(family, run.scaled[run.train_idx],
                                run.losses[run.train_idx],
                                run.scaled[run.val_idx], run.losses[run.val_idx],
                                params or {}, seed=seed, input_scaling=run.scaler,
                                feature_names=PATHLOSS_FEATURES)
        pred = model.predict_scaled_inputs(run.scaled[run.test_idx])
        rmse = compute_metrics(run.losses[run.test_idx], pred).rmse
        _MODEL_CACHE[key] = (model, rmse)
    return _MODEL_CACHE[key]


def test_criterion_01_two_term_evaluation_golden_values():
    started = time.time()
    coeffs = (60.34, 0.0013, -47.57, -0.05405)
    model = baselines.TwoTermExpFit(*coeffs)
    approx = {10.0: 33.42, 50.0: 61.20, 114.0: 69.88}
    for d, rough in approx.items():
        scratch = coeffs[0] * math.exp(coeffs[1] * d) + coeffs[2] * math.exp(coeffs[3] * d)
        assert abs(baselines.eval_fit(model, d) - scratch) < 1e-6
        assert abs(ground_truth_pl(GeneratorConfig(feature_effects_enabled=False), d)
                   - scratch) < 1e-6
        assert scratch == pytest.approx(rough, abs=5e-3)
    _passline(1, f"curve values at 10/50/114 m within 1e-6 of scratch evaluation "
                 f"({time.time() - started:.1f}s)")


def test_criterion_02_fit_recovery_and_noisy_band():
    started = time.time()
    clean = generate_ds2(noiseless(GeneratorConfig(feature_effects_enabled=False)))
    assert len(clean) == 7686
    d = np.array([s.distance_m for s in clean])
    y = np.array([s.path_loss_db for s in clean])
    fit = baselines.fit_model("two_term", d, y)
    grid = np.arange(2.0, 114.0 + 1e-9, 0.1)
    truth = ground_truth_pl(GeneratorConfig(feature_effects_enabled=False), grid)
    deviation = float(np.max(np.abs(baselines.eval_fit(fit.model, grid) - truth)))
    assert deviation < 0.05

    noisy = generate_ds2(GeneratorConfig(seed=0))
    dn = np.array([s.distance_m for s in noisy])
    yn = np.array([s.path_loss_db for s in noisy])
    gof = baselines.goodness(baselines.fit_model("two_term", dn, yn).model, dn, yn)
    assert 5.5 <= gof.rmse <= 8.5
    _passline(2, f"noiseless recovery max dev {deviation:.2e} dB; noisy fit rmse "
                 f"{gof.rmse:.3f} dB in [5.5, 8.5] ({time.time() - started:.1f}s)")


def test_criterion_03_ml_beats_curve_fit_on_9_of_10_seeds():
    started = time.time()
    wins = {"rbf": 0, "forest": 0, "mlp": 0}
    margins = []
    for seed in SEEDS:
        run = build_ds2_run(seed)
        per_seed = {}
        for family in ("rbf", "forest", "mlp"):
            _, rmse = trained_model(seed, family)
            per_seed[family] = rmse
            if rmse <= run.baseline_test_rmse - 1.0:
                wins[family] += 1
        margins.append(run.baseline_test_rmse - max(per_seed.values()))
    for family, count in wins.items():
        assert count >= 9, f"{family} beat the two-term fit by 1 dB on only {count}/10 seeds"
    _passline(3, f"wins {wins}, worst seed margin {min(margins):.2f} dB "
                 f"({time.time() - started:.0f}s)")


def test_criterion_04_distance_importance_first_all_seeds():
    started = time.time()
    top_values = []
    for seed in SEEDS:
        run = build_ds2_run(seed)
        model, _ = trained_model(seed, "forest")
        report = permutation_importance(
            model.predict_scaled_inputs, run.scaled[run.test_idx],
            run.losses[run.test_idx], repeats=3, seed=seed,
            feature_names=PATHLOSS_FEATURES)
        name, value = report.ranking()[0]
        assert name == "distance_m", f"seed {seed}: top feature {name}"
        assert value > 0.5, f"seed {seed}: distance importance {value:.3f}"
        top_values.append(value)
    _passline(4, f"distance ranked first 10/10, normalized importance "
                 f"{min(top_values):.3f}-{max(top_values):.3f} ({time.time() - started:.0f}s)")


def test_criterion_05_variance_region_boundary_window():
    started = time.time()
    boundaries = [build_ds2_run(seed).boundary_m for seed in SEEDS]
    inside = sum(30.0 <= b <= 45.0 for b in boundaries)
    assert inside >= 9, f"boundary in [30, 45] m on only {inside}/10 seeds: {boundaries}"
    _passline(5, f"boundary within [30, 45] m on {inside}/10 seeds "
                 f"(range {min(boundaries):.1f}-{max(boundaries):.1f} m, "
                 f"{time.time() - started:.0f}s)")


def _gradient_check(seed, h):
    rng = np.random.default_rng(seed)
    sizes = (int(rng.integers(1, 4)), int(rng.integers(2, 6)),
             int(rng.integers(2, 6)), int(rng.integers(1, 3)))
    net = mlp_init(sizes, seed=seed)
    x = rng.uniform(-1, 1, (5, sizes[0]))
    y = rng.uniform(-1, 1, (5, sizes[-1]))
    gw, gb = mlp_gradient(net, x, y)
    analytic = _pack(gw, gb)
    w0 = _pack(net.weights, net.biases)
    fd = np.empty_like(w0)
    for i in range(w0.size):
        wp = w0.copy(); wp[i] += h
        wm = w0.copy(); wm[i] -= h
        fd[i] = (mlp_sse(MlpNetwork(sizes, *_unpack(wp, sizes)), x, y)
                 - mlp_sse(MlpNetwork(sizes, *_unpack(wm, sizes)), x, y)) / (2.0 * h)
    mask = np.abs(analytic) > 1e-10
    return float(np.max(np.abs(analytic[mask] - fd[mask]) / np.abs(analytic[mask])))


def test_criterion_06_gradient_oracle_50_networks():
    started = time.time()
    worst = max(_gradient_check(seed, h=1e-5) for seed in range(50))
    assert worst < 1e-6
    _passline(6, f"50 networks, worst relative deviation {worst:.2e} "
                 f"({time.time() - started:.0f}s)")


def test_criterion_07_rbf_exact_interpolation_10_seeds():
    started = time.time()
    worst = 0.0
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        x = rng.uniform(0.0, 10.0, (100, 2))
        y = rng.uniform(-5.0, 5.0, 100)
        net = rbf_train(x, y, spread=0.3, center_policy="all_points")
        assert not net.ridge_fallback
        rmse = float(np.sqrt(np.mean((rbf_predict(net, x) - y) ** 2)))
        worst = max(worst, rmse)
        assert rmse < 1e-8, f"seed {seed}: interpolation rmse {rmse:.2e}"
    _passline(7, f"training rmse < 1e-8 on 10/10 seeds (worst {worst:.2e}, "
                 f"{time.time() - started:.1f}s)")


def test_criterion_08_metric_laws():
    started = time.time()
    rng = np.random.default_rng(0)
    for _ in range(1000):
        residuals = rng.normal(0, rng.uniform(0.1, 10.0), rng.integers(1, 40))
        report = compute_metrics(np.zeros_like(residuals), residuals)
        assert report.rmse >= report.mae - 1e-12 * max(1.0, report.mae)
    constant = compute_metrics(np.zeros(6), np.array([2.0, -2.0] * 3))
    assert constant.rmse == constant.mae
    hand = compute_metrics(np.zeros(2), np.array([3.0, 4.0]))
    assert hand.mae == 3.5
    assert hand.rmse == math.sqrt(12.5)
    assert hand.rmse == pytest.approx(3.5355, abs=5e-5)
    _passline(8, f"rmse >= mae on 1000 random vectors; [3,4] -> (3.5, {hand.rmse:.4f}) "
                 f"({time.time() - started:.1f}s)")


def test_criterion_09_forest_beats_median_tree_9_of_10_seeds():
    started = time.time()
    wins = 0
    for seed in SEEDS:
        run = build_ds2_run(seed)
        config = ForestConfig(n_trees=100, max_splits=710, features_per_split=3,
                              min_leaf=10, seed=seed)
        forest = forest_fit(run.scaled[run.train_idx], run.losses[run.train_idx], config)
        holdout = run.scaled[run.test_idx]
        target = run.losses[run.test_idx]
        forest_rmse = compute_metrics(target, forest_predict(forest, holdout)).rmse
        tree_rmses = [compute_metrics(target, tree_predict(t, holdout)).rmse
                      for t in forest.trees]
        if forest_rmse <= float(np.median(tree_rmses)):
            wins += 1
    assert wins >= 9, f"forest beat its median tree on only {wins}/10 seeds"
    _passline(9, f"forest <= median single tree on {wins}/10 seeds "
                 f"({time.time() - started:.0f}s)")


def test_criterion_10_cfr_pipeline():
    started = time.time()
    clean = noiseless(GeneratorConfig(sample_count=1411))
    pooled = {}
    for family, params in (("mlp", {"max_epochs": 1500}), ("rbf", {})):
        bundle = run_cfr_experiment(ExperimentConfig(
            task="cfr", model=family, seed=0, generator=clean, model_params=params))
        pooled[family] = bundle["pooled_eval"]["rmse_db"]
        assert pooled[family] < 0.5, f"noiseless {family}: {pooled[family]:.3f} dB"
        assert len(bundle["per_frequency_rmse"]) == 19

    noisy = GeneratorConfig(sample_count=1411)
    noisy_pooled = {}
    for family in ("mlp", "rbf"):
        bundle = run_cfr_experiment(ExperimentConfig(
            task="cfr", model=family, seed=0, generator=noisy,
            split=SplitSpec(0.7, 0.0, 0.3)))
        noisy_pooled[family] = bundle["pooled_eval"]["rmse_db"]
    gap = abs(noisy_pooled["mlp"] - noisy_pooled["rbf"])
    assert gap <= 1.5, f"family gap {gap:.3f} dB"
    _passline(10, f"noiseless pooled mlp/rbf {pooled['mlp']:.3f}/{pooled['rbf']:.3f} dB; "
                  f"noisy gap {gap:.3f} dB ({time.time() - started:.0f}s)")


def test_criterion_11_cli_determinism(tmp_path):
    from vvlcml.cli import main
    started = time.time()
    gen_json = tmp_path / "gen.json"
    gen_json.write_text(GeneratorConfig(sample_count=300).to_json())
    data_dir = tmp_path / "data"
    assert main(["gen", "--task", "pathloss", "--count", "400", "--seed", "5",
                 "--out", str(data_dir)]) == 0
    ds2 = str(data_dir / "ds2.csv")
    grid_json = tmp_path / "grid.json"
    grid_json.write_text(json.dumps({"params": {"spread": [0.5, 2.0]}}))

    commands = {
        "gen": ["gen", "--task", "cfr", "--count", "200", "--seed", "9"],
        "fit": ["fit", "--data", ds2],
        "train": ["train", "--task", "pathloss", "--model", "forest",
                  "--data", ds2, "--seed", "3"],
        "gridsearch": ["gridsearch", "--task", "pathloss", "--model", "rbf",
                       "--data", ds2, "--seed", "4", "--grid", str(grid_json)],
        "importance": ["importance", "--data", ds2, "--seed", "5", "--repeats", "2"],
        "report": ["report", "--task", "pathloss", "--model", "rbf",
                   "--config", str(gen_json), "--seed", "6"],
    }
    for name, argv in commands.items():
        first = tmp_path / f"{name}_a"
        second = tmp_path / f"{name}_b"
        assert main(argv + ["--out", str(first)]) == 0
        assert main(argv + ["--out", str(second)]) == 0
        assert (first / "report.json").read_bytes() == (second / "report.json").read_bytes(), name

    # eval needs the model trained above
    model_file = str(tmp_path / "train_a" / "model.json")
    for out in ("eval_a", "eval_b"):
        assert main(["eval", "--task", "pathloss", "--model-file", model_file,
                     "--data", ds2, "--seed", "3", "--out", str(tmp_path / out)]) == 0
    assert ((tmp_path / "eval_a" / "report.json").read_bytes()
            == (tmp_path / "eval_b" / "report.json").read_bytes())
    _passline(11, f"7 subcommands byte-identical across repeat runs "
                  f"({time.time() - started:.0f}s)")
