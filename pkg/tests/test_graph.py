import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netgps import ParseError, ValidationError
from netgps import graph as G


def _write(tmp_path, text, name="edges.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestFromEdgeList:
    def test_path_graph_degrees(self, tmp_path):
        net = G.from_edge_list(_write(tmp_path, "0,1\n1,2\n"))
        assert net.n_nodes == 3
        assert net.degrees.tolist() == [1, 2, 1]
        assert net.n_edges == 2

    def test_empty_file(self, tmp_path):
        net = G.from_edge_list(_write(tmp_path, ""))
        assert net.n_nodes == 0 and net.n_edges == 0

    def test_duplicate_edge_collapses(self, tmp_path):
        net = G.from_edge_list(_write(tmp_path, "0,1\n1,0\n"))
        assert net.n_edges == 1
        assert net.degrees.tolist() == [1, 1]

    def test_duplicate_keeps_max_weight(self, tmp_path):
        net = G.from_edge_list(_write(tmp_path, "0,1,2.0\n1,0,5.0\n"))
        assert net.neighbor_weights(0).tolist() == [5.0]

    def test_header_tolerated(self, tmp_path):
        net = G.from_edge_list(_write(tmp_path, "src,dst\n0,1\n"))
        assert net.n_edges == 1

    def test_ids_compacted(self, tmp_path):
        net = G.from_edge_list(_write(tmp_path, "10,70\n70,42\n"))
        assert net.n_nodes == 3
        assert net.degrees.sum() == 4

    def test_malformed_row_reports_line(self, tmp_path):
        with pytest.raises(ParseError, match=":3:"):
            G.from_edge_list(_write(tmp_path, "0,1\n1,2\n1,x\n"))

    def test_negative_weight_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            G.from_edge_list(_write(tmp_path, "0,1,-1.0\n"))

    def test_self_loop_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            G.from_edge_list(_write(tmp_path, "3,3\n"))

    def test_directed_mode_stores_out_neighbors(self, tmp_path):
        net = G.from_edge_list(_write(tmp_path, "0,1\n0,2\n2,1\n"), directed=True)
        assert net.degrees.tolist() == [2, 0, 1]
        assert net.n_edges == 3


class TestRoundTrip:
    def test_undirected_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        src, dst = np.triu_indices(12, k=1)
        keep = rng.random(src.size) < 0.4
        # guarantee every node appears so compaction is the identity
        net = G.from_arrays(
            np.concatenate([src[keep], np.arange(11)]),
            np.concatenate([dst[keep], np.arange(1, 12)]),
            n_nodes=12,
        )
        p = tmp_path / "rt.csv"
        G.write_edge_list(net, p)
        back = G.from_edge_list(p)
        assert back.n_nodes == net.n_nodes
        assert np.array_equal(back.indptr, net.indptr)
        assert np.array_equal(back.indices, net.indices)
        assert np.array_equal(back.weights, net.weights)

    def test_directed_roundtrip_with_weights(self, tmp_path):
        net = G.from_arrays([0, 1, 2], [1, 2, 0], [0.5, 1.25, 3.0], directed=True)
        p = tmp_path / "rt.csv"
        G.write_edge_list(net, p)
        back = G.from_edge_list(p, directed=True)
        assert np.array_equal(back.indices, net.indices)
        assert np.array_equal(back.weights, net.weights)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(
        st.tuples(st.integers(0, 15), st.integers(0, 15)).filter(lambda t: t[0] != t[1]),
        min_size=1,
        max_size=40,
    )
)
def test_from_arrays_symmetry_property(pairs):
    src = np.array([p[0] for p in pairs])
    dst = np.array([p[1] for p in pairs])
    net = G.from_arrays(src, dst, n_nodes=16)
    # undirected storage holds each edge in both directions
    fwd = set(zip(*net.arcs()[:2]))
    assert all((b, a) in fwd for a, b in fwd)
    assert net.degrees.sum() == 2 * net.n_edges


class TestSbm:
    def test_paper_config_edge_count(self):
        cfg = G.SbmConfig([10] * 100, p_in=0.08, p_out=0.02, seed=7)
        net = G.generate_sbm(cfg)
        # E = 100*C(10,2)*0.08 + (C(1000,2)-4500)*0.02 = 360 + 9900 = 10260
        mean = 100 * 45 * 0.08 + (499500 - 4500) * 0.02
        var = 4500 * 0.08 * 0.92 + 495000 * 0.02 * 0.98
        assert abs(net.n_edges - mean) <= 4 * math.sqrt(var)
        assert net.community_labels is not None
        assert np.bincount(net.community_labels).tolist() == [10] * 100

    def test_zero_probability_empty_graph(self):
        net = G.generate_sbm(G.SbmConfig([5, 5], p_in=0.0, p_out=0.0, seed=3))
        assert net.n_edges == 0 and net.n_nodes == 10

    def test_seed_reproducible(self):
        a = G.generate_sbm(G.SbmConfig([20, 20], seed=11))
        b = G.generate_sbm(G.SbmConfig([20, 20], seed=11))
        assert np.array_equal(a.indptr, b.indptr)
        assert np.array_equal(a.indices, b.indices)

    def test_within_block_frequency(self):
        # one block of 142 nodes -> 10011 pairs, all at p_in
        cfg = G.SbmConfig([142], p_in=0.08, p_out=0.0, seed=5)
        net = G.generate_sbm(cfg)
        pairs = 142 * 141 // 2
        freq = net.n_edges / pairs
        se = math.sqrt(0.08 * 0.92 / pairs)
        assert abs(freq - 0.08) <= 3 * se

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            G.SbmConfig([0, 5])
        with pytest.raises(ValidationError):
            G.SbmConfig([5], p_in=1.5)


class TestLatentCluster:
    def test_identical_units_same_community(self):
        cfg = G.LatentClusterConfig([4])
        p = G.latent_link_probability(cfg, [1.0, 0.0], [1.0, 0.0], 0, 0)
        assert p == pytest.approx(math.exp(-4.6), rel=1e-12)

    def test_reduces_to_er(self):
        # beta_x = 0, beta_c = 0: every pair links with exp(beta0)
        cfg = G.LatentClusterConfig([80], beta0=-1.0, beta_x=[0.0], beta_c=0.0, seed=9)
        X = np.random.default_rng(0).normal(size=(80, 1))
        net = G.generate_latent_cluster(cfg, X)
        pairs = 80 * 79 // 2
        p = math.exp(-1.0)
        se = math.sqrt(p * (1 - p) / pairs)
        assert abs(net.n_edges / pairs - p) <= 4 * se

    def test_clamp_counter_logged(self, caplog):
        cfg = G.LatentClusterConfig([6], beta0=0.5, beta_x=[0.0], beta_c=0.0, seed=1)
        with caplog.at_level(logging.INFO, logger="netgps.graph"):
            net = G.generate_latent_cluster(cfg, np.zeros((6, 1)))
        assert net.n_edges == 15  # all pairs clamp to p=1
        assert any("clamped 15" in r.message for r in caplog.records)

    def test_beta_x_dimension_checked(self):
        cfg = G.LatentClusterConfig([4], beta_x=[0.1, 0.2])
        with pytest.raises(ValidationError):
            G.generate_latent_cluster(cfg, np.zeros((4, 3)))

    def test_seed_reproducible(self):
        cfg = G.LatentClusterConfig([30, 30], seed=21)
        X = np.random.default_rng(2).gamma(0.5, 1.0, size=(60, 2))
        a = G.generate_latent_cluster(cfg, X)
        b = G.generate_latent_cluster(cfg, X)
        assert np.array_equal(a.indices, b.indices)


class TestNetworkContainer:
    def test_arrays_read_only(self):
        net = G.from_arrays([0], [1])
        with pytest.raises(ValueError):
            net.indices[0] = 5

    def test_symmetrized_directed(self):
        net = G.from_arrays([0, 1], [1, 2], directed=True)
        sym = net.symmetrized()
        assert not sym.directed
        assert sym.degrees.tolist() == [1, 2, 1]

    def test_neighbors(self):
        net = G.from_arrays([0, 0, 1], [1, 2, 2])
        assert sorted(net.neighbors(2).tolist()) == [0, 1]


class TestEdgeListNodeCount:
    def test_isolated_nodes_survive(self, tmp_path):
        # node 3 has no edges; with the count supplied it stays in the graph
        net = G.from_arrays([0, 1], [1, 2], n_nodes=4)
        p = tmp_path / "edges.csv"
        G.write_edge_list(net, p)
        back = G.from_edge_list(p, n_nodes=4)
        assert back.n_nodes == 4
        assert back.degrees.tolist() == net.degrees.tolist()

    def test_ids_out_of_range(self, tmp_path):
        p = tmp_path / "edges.csv"
        p.write_text("src,dst\n0,9\n")
        with pytest.raises(ValidationError):
            G.from_edge_list(p, n_nodes=5)

    def test_empty_with_count(self, tmp_path):
        p = tmp_path / "edges.csv"
        p.write_text("src,dst\n")
        net = G.from_edge_list(p, n_nodes=3)
        assert net.n_nodes == 3
        assert net.degrees.tolist() == [0, 0, 0]
