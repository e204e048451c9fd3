"""Exposure mappings: neighbor treatments -> neighborhood treatment G_i.

Three kinds are supported. ``proportion`` is the fraction of treated
neighbors (undefined for isolated nodes), ``count`` the number, and
``weighted`` an A_ij * w(X_i, X_j)-weighted sum. Isolated nodes are flagged
ineligible but still contribute their own Z to neighbors' exposures.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ValidationError
from .graph import Network

KINDS = ("proportion", "count", "weighted")


@dataclass
class ExposureSpec:
    kind: str = "proportion"
    # symmetric similarity on covariate rows; required for kind="weighted"
    weight_fn: Callable[[np.ndarray, np.ndarray], float] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown exposure kind {self.kind!r}")
        if self.kind == "weighted" and self.weight_fn is None:
            raise ValidationError("weighted exposure needs a weight_fn")


@dataclass
class ExposureResult:
    g: np.ndarray  # NaN where undefined (isolated nodes, proportion kind)
    eligible: np.ndarray
    kind: str


def compute_exposure(net: Network, z, spec: ExposureSpec | None = None,
                     X=None) -> ExposureResult:
    """G_i = sum_j A_ij w(X_i,X_j) Z_j over stored (out-)neighbors of i."""
    spec = spec or ExposureSpec()
    z = np.asarray(z)
    if z.shape != (net.n_nodes,):
        raise ValidationError("Z must have one entry per node")
    if not np.isin(z, (0, 1)).all():
        raise ValidationError("Z must be binary")
    z = z.astype(np.float64)
    deg = net.degrees
    eligible = deg >= 1

    if spec.kind == "weighted":
        if X is None:
            raise ValidationError("weighted exposure needs covariates X")
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] != net.n_nodes:
            raise ValidationError("X must have one row per node")
        g = np.zeros(net.n_nodes)
        for i in range(net.n_nodes):
            nbr = net.neighbors(i)
            if nbr.size == 0:
                continue
            w = np.array([spec.weight_fn(X[i], X[j]) for j in nbr])
            g[i] = np.sum(net.neighbor_weights(i) * w * z[nbr])
        g[~eligible] = np.nan
        return ExposureResult(g, eligible, spec.kind)

    # count / proportion: segment sums over the CSR neighbor lists
    src = np.repeat(np.arange(net.n_nodes), deg)
    treated = np.bincount(src, weights=z[net.indices], minlength=net.n_nodes)
    if spec.kind == "count":
        g = treated
        g = g.astype(np.float64)
        g[~eligible] = np.nan
    else:
        with np.errstate(invalid="ignore"):
            g = treated / np.where(eligible, deg, np.nan)
    return ExposureResult(g, eligible, spec.kind)


def feasible_set(net: Network, g: float, spec: ExposureSpec | None = None) -> np.ndarray:
    """Indices of units for which exposure level g is meaningful.

    Proportion: any g in [0,1] is feasible for every degree>=1 unit (grid
    interpretation; exact attainability is not enforced). Count: units with
    at least g neighbors.
    """
    spec = spec or ExposureSpec()
    deg = net.degrees
    if spec.kind == "count":
        if g < 0 or g != int(g):
            warnings.warn(f"count exposure level {g} outside domain; empty set")
            return np.empty(0, dtype=np.int64)
        return np.nonzero(deg >= g if g >= 1 else deg >= 1)[0]
    if not 0.0 <= g <= 1.0:
        warnings.warn(f"proportion exposure level {g} outside [0,1]; empty set")
        return np.empty(0, dtype=np.int64)
    return np.nonzero(deg >= 1)[0]
