"""Computation/accuracy tradeoff experiments on the synthetic stream.

Each sweep cell runs the full thinning pipeline on freshly generated
data for every seed, tunes the threshold to minimize detection error on
the streamed (post-training) portion, and reports seed-averaged error
and wall time.
"""

import csv
import time
from dataclasses import replace

import numpy as np

from .config import EngineConfig
from .engine import ObservationBatch, OnlineThinner
from .metrics import best_threshold
from .synthetic import SyntheticConfig, gen_synthetic

DEFAULT_SEEDS = tuple(range(10))


def run_synthetic_thinning(syn_config, engine_config, batch_size):
    """Generate, fit on the training prefix, stream the rest in batches.

    Returns (scores, labels, wall_time, engine) where scores/labels cover
    only the streamed portion and wall_time measures streaming only.
    """
    X, labels = gen_synthetic(syn_config)
    n_train = syn_config.train_count
    engine = OnlineThinner(engine_config)
    engine.fit_initial(X[:, :n_train])
    scores = []
    start = time.perf_counter()
    for t, lo in enumerate(range(n_train, syn_config.total, batch_size)):
        batch = ObservationBatch(t, X[:, lo:lo + batch_size])
        records, _ = engine.process_batch(batch)
        scores.extend(r.score for r in records)
    wall = time.perf_counter() - start
    return np.asarray(scores), labels[n_train:], wall, engine


def sweep_cell(kind, value, delta, seeds, syn_config, engine_config, batch_size):
    """Seed-averaged detection error and wall time for one grid value."""
    errors, times = [], []
    for seed in seeds:
        eng = replace(engine_config, seed=seed)
        bs = batch_size
        if kind == "subsample":
            eng = replace(eng, subsample_rate=float(value))
        elif kind == "batch":
            bs = int(value)
        else:
            raise ValueError(f"unknown sweep kind {kind!r}")
        # one model update and one subspace rotation per time step
        syn = replace(
            syn_config, rotation_speed=delta, seed=seed, obs_per_step=bs
        )
        scores, labels, wall, _ = run_synthetic_thinning(syn, eng, bs)
        _, metrics = best_threshold(scores, labels)
        errors.append(metrics.detection_error)
        times.append(wall)
    return {
        "kind": kind,
        "grid_value": float(value),
        "delta": float(delta),
        "detection_error": float(np.mean(errors)),
        "detection_error_std": float(np.std(errors)),
        "wall_time_s": float(np.mean(times)),
        "seeds": len(list(seeds)),
    }


def tradeoff_sweep(
    kind,
    grid,
    delta,
    seeds=DEFAULT_SEEDS,
    syn_config=None,
    engine_config=None,
    batch_size=100,
):
    """Run one row of cells; returns a list of result dicts."""
    if syn_config is None:
        syn_config = SyntheticConfig()
    if engine_config is None:
        engine_config = EngineConfig(rank=syn_config.subspace_rank)
    return [
        sweep_cell(kind, value, delta, seeds, syn_config, engine_config, batch_size)
        for value in grid
    ]


def write_sweep_csv(path, rows):
    if not rows:
        raise ValueError("no sweep rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
