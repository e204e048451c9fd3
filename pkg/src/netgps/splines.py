"""Low-rank thin-plate radial basis for the outcome model's smooth term.

The basis at points V against knots k_1..k_K is U = R @ Omega^{-1/2} with
R_ik = C(||V_i - k_k||) and Omega the knot-knot kernel matrix. Thin-plate
Gram matrices are conditionally positive definite, so the symmetric inverse
square root uses absolute eigenvalues, truncating |lambda| < 1e-10
(low-rank radial smoother convention).

Coordinates are standardized to zero mean / unit sd before any distance is
taken: the predictor space mixes an exposure in [0,1] with probabilities, and
raw thin-plate distances are scale-sensitive. The fitted transform is stored
on the basis and reapplied to prediction points.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateBasisError, ValidationError

EIG_TRUNCATION = 1e-10


def default_order(d: int) -> int:
    """Smallest m with 2m - d > 0 (m=2 for the d=2 and d=3 predictors)."""
    if d < 1:
        raise ValidationError("dimension must be >= 1")
    return d // 2 + 1


def default_knot_count(n: int) -> int:
    # a 3-d radial smoother needs real local resolution; too few knots leaves
    # sharp features (steep dose-response segments) systematically underfit
    return min(80, max(10, n // 5))


def radial_kernel(r, m: int, d: int):
    """C(r) = r^(2m-d) (odd d) or r^(2m-d) log r (even d, 0 at r=0)."""
    r = np.asarray(r, dtype=np.float64)
    if np.any(r < 0):
        raise ValidationError("radius must be nonnegative")
    if 2 * m - d <= 0:
        raise ValidationError("need 2m - d > 0")
    expo = 2 * m - d
    if d % 2 == 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(r > 0, r**expo * np.log(r), 0.0)
    else:
        out = r**expo
    return out if out.ndim else float(out)


@dataclass
class Standardizer:
    center: np.ndarray
    scale: np.ndarray

    def transform(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return (pts - self.center) / self.scale


def fit_standardizer(points) -> Standardizer:
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    center = pts.mean(axis=0)
    scale = pts.std(axis=0)
    scale[scale == 0] = 1.0  # constant coordinate: leave centered at 0
    return Standardizer(center, scale)


def select_knots(points, n_knots: int, seed: int = 0,
                 max_locations: int = 2000) -> np.ndarray:
    """Space-filling knot choice: dedupe, cap candidates, k-means++ seeding.

    Points are used as given (standardize upstream if needed). Deterministic
    for a fixed seed. Distances in the D^2 sampling are Euclidean.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    cand = np.unique(pts, axis=0)
    rng = np.random.default_rng(seed)
    if cand.shape[0] > max_locations:
        idx = rng.choice(cand.shape[0], size=max_locations, replace=False)
        cand = cand[np.sort(idx)]
    if n_knots > cand.shape[0]:
        raise ValidationError(
            f"requested {n_knots} knots but only {cand.shape[0]} distinct points"
        )
    if n_knots == cand.shape[0]:
        return cand
    chosen = np.empty(n_knots, dtype=np.int64)
    chosen[0] = rng.integers(cand.shape[0])
    d2 = np.sum((cand - cand[chosen[0]]) ** 2, axis=1)
    for j in range(1, n_knots):
        total = d2.sum()
        if total <= 0:
            # all remaining candidates coincide with chosen knots
            remaining = np.setdiff1d(np.arange(cand.shape[0]), chosen[:j])
            chosen[j:] = remaining[: n_knots - j]
            break
        probs = d2 / total
        chosen[j] = rng.choice(cand.shape[0], p=probs)
        d2 = np.minimum(d2, np.sum((cand - cand[chosen[j]]) ** 2, axis=1))
    return cand[chosen]


@dataclass
class SplineBasis:
    knots: np.ndarray  # (K, d), standardized space
    m: int
    d: int
    omega: np.ndarray
    whiten: np.ndarray  # Omega^{-1/2}, symmetric, zero on truncated modes
    eigvals: np.ndarray  # retained eigenvalues of Omega (signed)
    eigvecs: np.ndarray  # (K, r)
    transform: Standardizer

    @property
    def n_knots(self) -> int:
        return self.knots.shape[0]

    @property
    def rank(self) -> int:
        return self.eigvals.size

    def design(self, points) -> np.ndarray:
        """U at new points (original coordinates)."""
        sp = self.transform.transform(points)
        if sp.shape[1] != self.d:
            raise ValidationError("points dimension does not match basis")
        return kernels.tps_design(sp, self.knots, self.m, self.whiten)


def build_basis(points, knots=None, m: int | None = None,
                n_knots: int | None = None, seed: int = 0,
                standardize: bool = True) -> tuple[np.ndarray, SplineBasis]:
    """Construct (U, basis) at ``points``; select knots if none are given.

    Explicit ``knots`` are taken in the original coordinate system and pass
    through the same standardizer as the points.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n, d = pts.shape
    m = default_order(d) if m is None else m
    if 2 * m - d <= 0:
        raise ValidationError("need 2m - d > 0")
    if standardize:
        transform = fit_standardizer(pts)
    else:
        transform = Standardizer(np.zeros(d), np.ones(d))
    sp = transform.transform(pts)
    if knots is None:
        k = default_knot_count(n) if n_knots is None else n_knots
        if k < 1:
            raise ValidationError("need at least one knot")
        knots_std = select_knots(sp, k, seed=seed)
    else:
        knots_std = transform.transform(knots)
    omega = kernels.tps_design(knots_std, knots_std, m, None)
    omega = 0.5 * (omega + omega.T)
    w, q = np.linalg.eigh(omega)
    keep = np.abs(w) >= EIG_TRUNCATION
    if not keep.any():
        raise DegenerateBasisError("all basis eigenvalues below truncation")
    w, q = w[keep], q[:, keep]
    whiten = (q / np.sqrt(np.abs(w))) @ q.T
    basis = SplineBasis(
        knots=knots_std, m=m, d=d, omega=omega, whiten=whiten,
        eigvals=w, eigvecs=q, transform=transform,
    )
    u = kernels.tps_design(sp, knots_std, m, whiten)
    return u, basis
