"""Black-hole detection in backbone telemetry.

Thin wrappers over the native module; arrays come back as NumPy arrays and
JSON reports as dictionaries.
"""

import json

import numpy as np

from . import _core
from ._core import ConfigError, Error, davies_bouldin_score, run_cli, silhouette_score, split_indices

__all__ = [
    "ConfigError",
    "Error",
    "bhmm",
    "davies_bouldin_score",
    "dbscan",
    "make_redundancy_fixture",
    "run_cli",
    "silhouette_score",
    "simulate_scenario",
    "split_indices",
]


def dbscan(points, eps, min_pts):
    """Return an int array of cluster labels, -1 for noise."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    return np.asarray(_core.dbscan(pts, float(eps), int(min_pts)), dtype=np.int64)


def make_redundancy_fixture(seed=1, rows=17280):
    return _core.make_redundancy_fixture(seed, rows)


def bhmm(timestamps, columns, values, period_s=300, sparse_threshold=0.95, corr_threshold=0.9):
    """Run the feature pipeline; returns columns, values and the audit report."""
    out = _core.bhmm(list(timestamps), list(columns), np.ascontiguousarray(values, dtype=np.float64),
                     period_s, sparse_threshold, corr_threshold)
    out["report"] = json.loads(out.pop("report_json"))
    return out


def simulate_scenario(path, seed=None):
    """Simulate a scenario file; labels come back as a (rows, nodes) bool array."""
    out = _core.simulate_scenario(str(path), seed)
    n_nodes = len(out["label_nodes"])
    out["labels"] = np.asarray(out["labels"], dtype=bool).reshape(-1, n_nodes)
    return out
