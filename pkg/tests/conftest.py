"""Shared fixtures: cached per-seed DS2 pipeline runs.

The acceptance tests sweep seeds over the full-size synthetic DS2 set;
building the dataset, region labels, split, and baseline fit once per seed
keeps the suite inside its runtime budgets.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
import pytest

from vvlcml import baselines, clustering, dataset, synthgen
from vvlcml.dataset import PATHLOSS_FEATURES, SplitSpec


@dataclass
class Ds2Run:
    seed: int
    samples: tuple
    features: np.ndarray
    scaled: np.ndarray
    losses: np.ndarray
    distances: np.ndarray
    scaler: dataset.ScalingSpec
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    boundary_m: float
    high_count: int
    baseline_fit: baselines.FitResult
    baseline_test_rmse: float


@functools.lru_cache(maxsize=16)
def build_ds2_run(seed: int, sample_count: int = 7686) -> Ds2Run:
    config = synthgen.GeneratorConfig(seed=seed, sample_count=sample_count)
    samples = synthgen.generate_ds2(config)
    labeled = clustering.label_variance_region(samples, seed=seed)
    features = dataset.pathloss_features(labeled.samples)
    losses = dataset.pathloss_targets(labeled.samples)
    scaler = dataset.fit_scaler(features, PATHLOSS_FEATURES)
    scaled = dataset.apply_scaler(scaler, features)
    train_idx, val_idx, test_idx = dataset.split(len(losses), SplitSpec(seed=seed))
    distances = features[:, 0]
    fit = baselines.fit_model("two_term", distances[train_idx], losses[train_idx])
    baseline_rmse = baselines.goodness(fit.model, distances[test_idx],
                                       losses[test_idx]).rmse
    return Ds2Run(
        seed=seed, samples=labeled.samples, features=features, scaled=scaled,
        losses=losses, distances=distances, scaler=scaler,
        train_idx=train_idx, val_idx=val_idx, test_idx=test_idx,
        boundary_m=labeled.boundary_m, high_count=labeled.high_count,
        baseline_fit=fit, baseline_test_rmse=baseline_rmse,
    )


@pytest.fixture(scope="session")
def ds2_run_factory():
    return build_ds2_run
