"""Network container, edge-list I/O, and the two simulation graph generators.

Adjacency is stored in CSR form (indptr/indices/weights). Undirected graphs
store both arc directions, so ``degrees`` is the usual degree; directed graphs
store out-neighborhoods (nominees), matching how nomination networks are used
downstream: unit i is exposed through the units it nominates.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)


@dataclass
class Network:
    """Immutable CSR adjacency with optional planted community labels."""

    n_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    directed: bool = False
    community_labels: np.ndarray | None = None

    def __post_init__(self):
        self.indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if self.indptr.shape != (self.n_nodes + 1,):
            raise ValidationError("indptr must have length n_nodes + 1")
        if self.indices.shape != self.weights.shape:
            raise ValidationError("indices and weights must align")
        if self.indices.size and (
            self.indices.min() < 0 or self.indices.max() >= self.n_nodes
        ):
            raise ValidationError("neighbor ids must lie in [0, n_nodes)")
        if self.weights.size and self.weights.min() <= 0:
            raise ValidationError("edge weights must be positive")
        if self.community_labels is not None:
            self.community_labels = np.ascontiguousarray(
                self.community_labels, dtype=np.int64
            )
            if self.community_labels.shape != (self.n_nodes,):
                raise ValidationError("community_labels must have one entry per node")
        # freeze: shared read-only across worker processes/threads
        for arr in (self.indptr, self.indices, self.weights):
            arr.setflags(write=False)

    @property
    def degrees(self) -> np.ndarray:
        """Out-degree N_i (== degree for undirected graphs)."""
        return np.diff(self.indptr)

    @property
    def n_edges(self) -> int:
        return int(self.indices.size if self.directed else self.indices.size // 2)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def neighbor_weights(self, i: int) -> np.ndarray:
        return self.weights[self.indptr[i] : self.indptr[i + 1]]

    def arcs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All stored arcs as (src, dst, weight) arrays."""
        src = np.repeat(np.arange(self.n_nodes, dtype=np.int64), self.degrees)
        return src, self.indices.copy(), self.weights.copy()

    def symmetrized(self) -> "Network":
        """Undirected view: weight of {i,j} is the max over both arc directions."""
        if not self.directed:
            return self
        src, dst, w = self.arcs()
        return _from_arcs(
            self.n_nodes,
            np.concatenate([src, dst]),
            np.concatenate([dst, src]),
            np.concatenate([w, w]),
            directed=False,
            community_labels=self.community_labels,
        )


def _from_arcs(n_nodes, src, dst, w, directed, community_labels=None) -> Network:
    """Build CSR from possibly duplicated arcs, keeping max weight per arc."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    w = np.asarray(w, dtype=np.float64)
    if src.size:
        order = np.lexsort((dst, src))
        src, dst, w = src[order], dst[order], w[order]
        new = np.empty(src.size, dtype=bool)
        new[0] = True
        new[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
        starts = np.nonzero(new)[0]
        w = np.maximum.reduceat(w, starts)
        src, dst = src[starts], dst[starts]
    counts = np.bincount(src, minlength=n_nodes)
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return Network(
        n_nodes=n_nodes,
        indptr=indptr,
        indices=dst,
        weights=w,
        directed=directed,
        community_labels=community_labels,
    )


def from_arrays(
    src, dst, weight=None, n_nodes=None, directed=False, community_labels=None
) -> Network:
    """Build a Network from parallel arc arrays (mirrors arcs if undirected)."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if np.any(src == dst):
        raise ValidationError("self-loops are not allowed")
    w = np.ones(src.size) if weight is None else np.asarray(weight, dtype=np.float64)
    if np.any(w < 0):
        raise ValidationError("negative edge weight")
    if np.any(w == 0):
        raise ValidationError("zero edge weight; drop the row instead")
    if n_nodes is None:
        n_nodes = int(max(src.max(initial=-1), dst.max(initial=-1)) + 1) if src.size else 0
    if not directed:
        src, dst, w = (
            np.concatenate([src, dst]),
            np.concatenate([dst, src]),
            np.concatenate([w, w]),
        )
    return _from_arcs(n_nodes, src, dst, w, directed, community_labels)


def from_edge_list(path, directed: bool = False,
                   n_nodes: int | None = None) -> Network:
    """Read a `src,dst[,weight]` CSV.

    Node ids are compacted to [0, n) unless ``n_nodes`` is given, in which
    case ids are taken literally so isolated nodes survive a round trip.
    A single header row is tolerated. Duplicate edges collapse keeping the
    max weight. Malformed rows raise ParseError with the 1-based line number.
    """
    src, dst, wgt = [], [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                a, b = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                if lineno == 1:  # header row
                    continue
                raise ParseError(f"{path}:{lineno}: expected integer src,dst") from None
            if len(row) not in (2, 3):
                raise ParseError(f"{path}:{lineno}: expected 2 or 3 fields")
            if len(row) == 3 and row[2].strip():
                try:
                    wv = float(row[2])
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bad weight {row[2]!r}") from None
            else:
                wv = 1.0
            if wv < 0:
                raise ValidationError(f"{path}:{lineno}: negative weight")
            if a == b:
                raise ValidationError(f"{path}:{lineno}: self-loop {a}->{b}")
            src.append(a)
            dst.append(b)
            wgt.append(wv)
    if not src:
        n = 0 if n_nodes is None else n_nodes
        return Network(n, np.zeros(n + 1, dtype=np.int64),
                       np.empty(0, dtype=np.int64), np.empty(0),
                       directed=directed)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if n_nodes is None:
        ids = np.unique(np.concatenate([src, dst]))
        src = np.searchsorted(ids, src)
        dst = np.searchsorted(ids, dst)
        n_nodes = ids.size
    elif min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n_nodes:
        raise ValidationError(f"{path}: node ids must lie in [0, {n_nodes})")
    return from_arrays(src, dst, np.asarray(wgt), n_nodes=n_nodes, directed=directed)


def write_edge_list(net: Network, path) -> None:
    """Write CSV with header; undirected graphs emit sorted src<dst rows."""
    src, dst, w = net.arcs()
    if not net.directed:
        keep = src < dst
        src, dst, w = src[keep], dst[keep], w[keep]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst", "weight"])
        for a, b, wv in zip(src.tolist(), dst.tolist(), w.tolist()):
            writer.writerow([a, b, repr(wv)])


@dataclass
class SbmConfig:
    """Stochastic block model: within-block prob p_in, between p_out."""

    community_sizes: list[int]
    p_in: float = 0.08
    p_out: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if not self.community_sizes or any(s <= 0 for s in self.community_sizes):
            raise ValidationError("community sizes must be positive")
        for p in (self.p_in, self.p_out):
            if not 0.0 <= p <= 1.0:
                raise ValidationError("link probabilities must be in [0, 1]")


@dataclass
class LatentClusterConfig:
    """Covariate/community distance link model: Pr = exp(b0 + bx'|dX| + bc|dC|)."""

    community_sizes: list[int]
    beta0: float = -4.6
    beta_x: list[float] = field(default_factory=lambda: [0.05, 0.005])
    beta_c: float = 0.18
    seed: int = 0

    def __post_init__(self):
        if not self.community_sizes or any(s <= 0 for s in self.community_sizes):
            raise ValidationError("community sizes must be positive")


def _labels_from_sizes(sizes) -> np.ndarray:
    return np.repeat(np.arange(len(sizes), dtype=np.int64), np.asarray(sizes))


def generate_sbm(cfg: SbmConfig) -> Network:
    """Sample an SBM graph; community labels ride along on the Network."""
    labels = _labels_from_sizes(cfg.community_sizes)
    n = labels.size
    rng = np.random.default_rng(cfg.seed)
    src_parts, dst_parts = [], []
    for i in range(n - 1):
        p = np.where(labels[i + 1 :] == labels[i], cfg.p_in, cfg.p_out)
        hit = np.nonzero(rng.random(n - 1 - i) < p)[0]
        if hit.size:
            src_parts.append(np.full(hit.size, i, dtype=np.int64))
            dst_parts.append(hit.astype(np.int64) + i + 1)
    if src_parts:
        src = np.concatenate(src_parts)
        dst = np.concatenate(dst_parts)
    else:
        src = dst = np.empty(0, dtype=np.int64)
    return from_arrays(src, dst, n_nodes=n, directed=False, community_labels=labels)


def latent_link_probability(cfg: LatentClusterConfig, xi, xj, ci, cj) -> float:
    """Link probability for one pair, clamped at 1."""
    dx = np.abs(np.asarray(xi, dtype=float) - np.asarray(xj, dtype=float))
    lp = cfg.beta0 + float(dx @ np.asarray(cfg.beta_x, dtype=float))
    lp += cfg.beta_c * abs(int(ci) - int(cj))
    return float(min(1.0, np.exp(lp)))


def generate_latent_cluster(cfg: LatentClusterConfig, X) -> Network:
    """Sample the covariate-distance cluster graph.

    The exponential link formula is not a probability in general; values are
    clamped at 1 and the number of clamped pairs is logged.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = _labels_from_sizes(cfg.community_sizes)
    n = labels.size
    if X.shape[0] != n:
        raise ValidationError("X must have one row per node")
    bx = np.asarray(cfg.beta_x, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != bx.size:
        raise ValidationError("beta_x length must match covariate count")
    rng = np.random.default_rng(cfg.seed)
    clamped = 0
    src_parts, dst_parts = [], []
    for i in range(n - 1):
        lp = cfg.beta0 + np.abs(X[i + 1 :] - X[i]) @ bx
        lp += cfg.beta_c * np.abs(labels[i + 1 :] - labels[i])
        p = np.exp(lp)
        clamped += int(np.count_nonzero(p > 1.0))
        np.minimum(p, 1.0, out=p)
        hit = np.nonzero(rng.random(n - 1 - i) < p)[0]
        if hit.size:
            src_parts.append(np.full(hit.size, i, dtype=np.int64))
            dst_parts.append(hit.astype(np.int64) + i + 1)
    if clamped:
        log.info("latent-cluster generator clamped %d pair probabilities at 1", clamped)
    if src_parts:
        src = np.concatenate(src_parts)
        dst = np.concatenate(dst_parts)
    else:
        src = dst = np.empty(0, dtype=np.int64)
    return from_arrays(src, dst, n_nodes=n, directed=False, community_labels=labels)
