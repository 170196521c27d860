"""Shared builders for small random model instances."""

import numpy as np

from fusiondetect.graphstream import build_adjacency
from fusiondetect.model import TrainConfig, init_params

MIXED = ("Metric", "Metric", "Log", "Log", "Trace", "Trace")


def random_instance(seed, n=6, theta=12, layers=2, heads=2, hidden=8, batch=2, modalities=None):
    """Random adjacency, parameters and windows with every parameter away from zero."""
    rng = np.random.default_rng(seed)
    modalities = tuple(modalities or (MIXED * (n // 6 + 1))[:n])
    cfg = TrainConfig(layers=layers, heads=heads, hidden=hidden, seed=seed)
    series = rng.normal(size=(n, 200))
    series[1] += series[0]  # some dependence so MI is not flat
    A = build_adjacency(series, modalities).slices
    params = init_params(cfg, n)
    params["gt_w"] = rng.uniform(0.2, 1.0, size=params["gt_w"].shape)
    for k in ("lift_b", "gru_bz", "gru_br", "gru_bh", "out_b"):
        params[k] = rng.normal(scale=0.3, size=params[k].shape)
    windows = rng.normal(scale=0.5, size=(batch, theta, n))
    mod = np.array([("Metric", "Log", "Trace").index(m) for m in modalities])
    return cfg, A, params, mod, windows
