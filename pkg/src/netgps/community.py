"""Community labels for the random-intercept structure.

Labels are either known (planted by a generator, or supplied in a CSV) or
detected by greedy modularity maximization: two-phase local moving plus
aggregation, seeded for determinism. The simulation harness always uses the
planted labels; detection exists for data where no labels are available.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError
from .graph import Network

__all__ = ["CommunityAssignment", "detect_communities", "modularity",
           "read_labels", "write_labels"]


@dataclass
class CommunityAssignment:
    labels: np.ndarray
    n_communities: int
    source: str  # "known" | "detected"
    pass_modularity: tuple[float, ...] = ()

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.labels.size == 0:
            raise ValidationError("no nodes to label")
        if self.labels.min() < 0 or self.labels.max() >= self.n_communities:
            raise ValidationError("labels must lie in [0, n_communities)")
        if np.unique(self.labels).size != self.n_communities:
            raise ValidationError("labels must be contiguous 0..J-1")
        if self.source not in ("known", "detected"):
            raise ValidationError("source must be 'known' or 'detected'")


def from_labels(labels, source: str = "known") -> CommunityAssignment:
    """Compact arbitrary label values to contiguous ids, first-seen order."""
    labels = np.asarray(labels)
    _, compact = np.unique(labels, return_inverse=True)
    # reorder so ids follow first appearance, making output order-stable
    first = np.full(compact.max() + 1, labels.size, dtype=np.int64)
    np.minimum.at(first, compact, np.arange(labels.size))
    rank = np.argsort(np.argsort(first))
    compact = rank[compact]
    return CommunityAssignment(compact, int(compact.max()) + 1, source)


def modularity(net: Network, labels) -> float:
    """Newman-Girvan modularity; directed graphs are symmetrized first."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (net.n_nodes,):
        raise ValidationError("labels must have one entry per node")
    net = net.symmetrized()
    if net.indices.size == 0:
        return 0.0
    src, dst, w = net.arcs()
    m2 = w.sum()  # == 2m for undirected storage
    n_comm = int(labels.max()) + 1
    internal = np.bincount(
        labels[src], weights=w * (labels[src] == labels[dst]), minlength=n_comm
    )
    strength = np.bincount(src, weights=w, minlength=net.n_nodes)
    tot = np.bincount(labels, weights=strength, minlength=n_comm)
    return float(np.sum(internal / m2) - np.sum((tot / m2) ** 2))


def _local_move(indptr, indices, weights, strength, m2, comm, tot, order):
    """One vertex-sweep phase; mutates comm/tot, returns number of moves."""
    neigh_w = np.zeros(tot.size)
    moved_total = 0
    while True:
        moved = 0
        for i in order:
            ci = comm[i]
            touched = []
            for idx in range(indptr[i], indptr[i + 1]):
                j = indices[idx]
                if j == i:
                    continue  # self-loop: internal either way
                cj = comm[j]
                if neigh_w[cj] == 0.0:
                    touched.append(cj)
                neigh_w[cj] += weights[idx]
            tot[ci] -= strength[i]
            best_c = ci
            best_gain = neigh_w[ci] - strength[i] * tot[ci] / m2
            for c in touched:
                if c == ci:
                    continue
                gain = neigh_w[c] - strength[i] * tot[c] / m2
                if gain > best_gain + 1e-12 or (
                    abs(gain - best_gain) <= 1e-12 and c < best_c
                ):
                    best_c, best_gain = c, gain
            tot[best_c] += strength[i]
            comm[i] = best_c
            if best_c != ci:
                moved += 1
            for c in touched:
                neigh_w[c] = 0.0
            neigh_w[ci] = 0.0
        moved_total += moved
        if moved == 0:
            return moved_total


def _aggregate(indptr, indices, weights, comm):
    """Collapse communities to super-nodes; self-loops carry internal weight."""
    _, comm = np.unique(comm, return_inverse=True)
    n_new = int(comm.max()) + 1
    src = np.repeat(np.arange(indptr.size - 1), np.diff(indptr))
    cs, cd = comm[src], comm[indices]
    key = cs * n_new + cd
    order = np.argsort(key, kind="stable")
    key, w = key[order], weights[order]
    new = np.empty(key.size, dtype=bool)
    new[0] = True
    new[1:] = key[1:] != key[:-1]
    starts = np.nonzero(new)[0]
    w = np.add.reduceat(w, starts)
    key = key[starts]
    new_src, new_dst = key // n_new, key % n_new
    counts = np.bincount(new_src, minlength=n_new)
    new_indptr = np.zeros(n_new + 1, dtype=np.int64)
    np.cumsum(counts, out=new_indptr[1:])
    return new_indptr, new_dst.astype(np.int64), w, comm


def detect_communities(net: Network, seed: int = 0) -> CommunityAssignment:
    """Greedy modularity maximization (Louvain-style), deterministic per seed.

    Isolated nodes end up in singleton communities. ``pass_modularity``
    records modularity of the full-graph partition after each aggregation
    pass; it is non-decreasing by construction.
    """
    if net.n_nodes == 0:
        raise ValidationError("network is empty")
    base = net.symmetrized()
    if base.indices.size == 0:
        labels = np.arange(base.n_nodes, dtype=np.int64)
        return CommunityAssignment(labels, base.n_nodes, "detected")

    rng = np.random.default_rng(seed)
    indptr, indices, weights = base.indptr, base.indices, base.weights
    leaf = np.arange(base.n_nodes, dtype=np.int64)  # node -> current super-node
    history: list[float] = []
    while True:
        n_cur = indptr.size - 1
        strength = np.zeros(n_cur)
        np.add.at(strength, np.repeat(np.arange(n_cur), np.diff(indptr)), weights)
        m2 = weights.sum()
        comm = np.arange(n_cur, dtype=np.int64)
        tot = strength.copy()
        order = rng.permutation(n_cur)
        moves = _local_move(indptr, indices, weights, strength, m2, comm, tot, order)
        indptr, indices, weights, comm = _aggregate(indptr, indices, weights, comm)
        leaf = comm[leaf]
        history.append(modularity(base, leaf))
        if moves == 0:
            break
    assign = from_labels(leaf, source="detected")
    assign.pass_modularity = tuple(history)
    return assign


def write_labels(assign: CommunityAssignment, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "community"])
        for i, c in enumerate(assign.labels.tolist()):
            writer.writerow([i, c])


def read_labels(path, n_nodes: int | None = None) -> CommunityAssignment:
    """Read `node,community` CSV; labels may be arbitrary ints, compacted here."""
    pairs = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                node, com = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                if lineno == 1:
                    continue
                raise ParseError(f"{path}:{lineno}: expected integer node,community") from None
            pairs[node] = com
    if not pairs:
        raise ParseError(f"{path}: no label rows")
    n = n_nodes if n_nodes is not None else max(pairs) + 1
    if set(pairs) != set(range(n)):
        raise ValidationError(f"{path}: every node in [0,{n}) needs a label")
    labels = np.array([pairs[i] for i in range(n)], dtype=np.int64)
    return from_labels(labels, source="known")
