"""Tests for core/net_topology.py"""
import pytest

from core.errors import ConfigurationError, TopologyError
from core.net_topology import (
    CLOUD, CommLedger, TopologyGraph, account_schedule, builtin_topology, compare_topologies,
    compression_ratio, fedavg_sample_load, hops, load_topology, migration_hops, round_comm_load,
    save_topology,
)


def _custom(cloud_neighbor):
    return TopologyGraph.from_dict({
        "kind": "custom",
        "nodes": [{"name": "cloud", "role": "cloud"}, {"name": "a", "role": "edge"}, {"name": "b", "role": "edge"}],
        "links": [["a", "b"], ["cloud", cloud_neighbor]],
        "edge_nodes": ["a", "b"],
        "attachments": {0: "a", 1: "b"},
    })


class TestBuiltinTopologies:
    def test_simple(self):
        topo = builtin_topology("simple", edges=3)
        assert topo.edge_nodes == ["edge_1", "edge_2", "edge_3"]
        assert hops(topo, "edge_2", CLOUD) == 1
        assert hops(topo, "edge_1", "edge_3") == 2

    def test_breadth_parallel(self):
        topo = builtin_topology("breadth_parallel", branching=4)
        assert hops(topo, "edge_1", CLOUD) == 2
        assert migration_hops(topo, "edge_1", "edge_4") == 2

    def test_depth_linear(self):
        topo = builtin_topology("depth_linear", depth=4)
        assert hops(topo, "edge_1", CLOUD) == 4
        assert hops(topo, "edge_4", CLOUD) == 1
        assert migration_hops(topo, "edge_1", "edge_3") == 2

    def test_hybrid_order_is_chain_major(self):
        topo = builtin_topology("hybrid", branching=2, depth=3)
        assert topo.edge_nodes == ["edge_1_1", "edge_1_2", "edge_1_3", "edge_2_1", "edge_2_2", "edge_2_3"]
        assert hops(topo, "edge_1_1", CLOUD) == 3
        # chains only meet at the cloud
        assert migration_hops(topo, "edge_1_3", "edge_2_1") == 1 + 3

    def test_attachment_wraps(self):
        topo = builtin_topology("simple", edges=4).attach_clusters(10)
        assert topo.edge_of(0) == "edge_1"
        assert topo.edge_of(9) == "edge_2"

    def test_unknown_kind(self):
        with pytest.raises(TopologyError):
            builtin_topology("star")

    def test_bad_size(self):
        with pytest.raises(ConfigurationError):
            builtin_topology("depth_linear", depth=0)


class TestValidation:
    def test_unmapped_cluster(self):
        topo = builtin_topology("simple", edges=2).attach_clusters(2)
        with pytest.raises(TopologyError):
            topo.edge_of(5)

    def test_unknown_node(self):
        with pytest.raises(TopologyError):
            hops(builtin_topology("simple"), "edge_1", "edge_99")

    def test_disconnected_graph(self):
        with pytest.raises(TopologyError):
            TopologyGraph.from_dict({
                "nodes": [{"name": "cloud", "role": "cloud"}, {"name": "a", "role": "edge"}],
                "links": [],
                "edge_nodes": ["a"],
            })

    def test_two_clouds(self):
        with pytest.raises(TopologyError):
            TopologyGraph.from_dict({
                "nodes": [{"name": "cloud", "role": "cloud"}, {"name": "c2", "role": "cloud"},
                          {"name": "a", "role": "edge"}],
                "links": [["cloud", "a"], ["c2", "a"]],
                "edge_nodes": ["a"],
            })

    def test_strict_routing(self):
        topo = builtin_topology("simple", edges=2)
        assert migration_hops(topo, "edge_1", "edge_2") == 2
        with pytest.raises(TopologyError):
            migration_hops(topo, "edge_1", "edge_2", strict_edge_routing=True)


class TestRoundLoad:
    @pytest.fixture
    def two_edges(self):
        return builtin_topology("simple", edges=2).attach_clusters(2)

    def test_per_method_loads(self, two_edges):
        assert round_comm_load("fedavg", two_edges, 0, 10, 1) == 20
        assert round_comm_load("hier_fl", two_edges, 0, 10, 1) == 11
        assert round_comm_load("edgeflow", two_edges, 0, 10, 1, next_cluster=1) == 12

    def test_self_migration_is_free(self, two_edges):
        assert round_comm_load("edgeflow", two_edges, 0, 10, 1, next_cluster=0) == 10

    def test_model_size_scales(self, two_edges):
        assert round_comm_load("fedavg", two_edges, 0, 10, 7) == 7 * 20

    def test_downloads(self, two_edges):
        assert round_comm_load("fedavg", two_edges, 0, 10, 1, include_downloads=True) == 40
        assert round_comm_load("edgeflow", two_edges, 0, 10, 1, next_cluster=1, include_downloads=True) == 22

    def test_deep_cluster_ratio(self):
        topo = builtin_topology("depth_linear", depth=4).attach_clusters(2)
        fedavg = round_comm_load("fedavg", topo, 0, 10, 1)
        edgeflow = round_comm_load("edgeflow", topo, 0, 10, 1, next_cluster=1)
        assert (fedavg, edgeflow) == (50, 11)
        assert compression_ratio(edgeflow, fedavg) == pytest.approx(0.22)

    def test_unknown_method(self, two_edges):
        with pytest.raises(ConfigurationError):
            round_comm_load("gossip", two_edges, 0, 10, 1)

    def test_cloud_placement_does_not_change_migration(self):
        near_a = _custom("a")
        near_b = _custom("b")
        assert round_comm_load("edgeflow", near_a, 0, 5, 3, next_cluster=1) == 5 * 3 + 3
        assert round_comm_load("edgeflow", near_b, 0, 5, 3, next_cluster=1) == 5 * 3 + 3
        assert round_comm_load("fedavg", near_a, 0, 5, 3) != round_comm_load("fedavg", near_b, 0, 5, 3)

    def test_sampled_fedavg(self, two_edges):
        membership = {0: 0, 1: 0, 2: 1, 3: 1}
        assert fedavg_sample_load(two_edges, membership, [0, 3], 1) == 4
        assert fedavg_sample_load(two_edges, membership, [0, 3], 1, include_downloads=True) == 8

    def test_ratio_needs_positive_baseline(self):
        with pytest.raises(ConfigurationError):
            compression_ratio(5, 0)


class TestCompareTopologies:
    def test_cycle_totals(self):
        report = compare_topologies(num_clusters=10, cluster_size=10, model_size=1)
        rows = {r["topology"]: r for r in report["rows"]}
        assert {k: (r["fedavg"], r["edgeflow"]) for k, r in rows.items()} == {
            "simple": (200, 120),
            "breadth_parallel": (300, 120),
            "depth_linear": (370, 114),
            "hybrid": (370, 124),
        }
        assert rows["simple"]["hier_fl"] == 110
        assert report["totals"]["fedavg"] == 1240
        assert report["totals"]["edgeflow"] == 478

    def test_depth_beats_breadth(self):
        rows = {r["topology"]: r for r in compare_topologies()["rows"]}
        assert rows["depth_linear"]["ratio_vs_fedavg"] < rows["breadth_parallel"]["ratio_vs_fedavg"]

    def test_overall_reduction_band(self):
        report = compare_topologies()
        assert 0.5 <= report["overall_reduction"] <= 0.8
        assert report["overall_reduction"] == pytest.approx(1 - 478 / 1240)

    def test_logs_each_topology(self):
        lines = []
        compare_topologies(log_callback=lines.append)
        assert len(lines) == 4


class TestLedger:
    def test_account_schedule(self):
        topo = builtin_topology("simple", edges=2).attach_clusters(2)
        ledger = account_schedule("edgeflow", topo, [0, 1, 0], [10, 10], 1)
        assert [e.params_hop_units for e in ledger.entries] == [12, 12, 10]
        assert [e.uploads for e in ledger.entries] == [11, 11, 10]
        wrapped = account_schedule("edgeflow", topo, [0, 1], [10, 10], 1, wrap=True)
        assert wrapped.total() == 24

    def test_totals_and_ratio(self):
        topo = builtin_topology("simple", edges=2).attach_clusters(2)
        ledger = account_schedule("fedavg", topo, [0, 1], [10, 10], 1)
        account_schedule("edgeflow", topo, [0, 1], [10, 10], 1, ledger=ledger)
        assert ledger.methods() == ["fedavg", "edgeflow"]
        assert ledger.total("fedavg") == 40
        assert ledger.ratio() == pytest.approx(22 / 40)

    def test_negative_entry(self):
        with pytest.raises(ConfigurationError):
            CommLedger().record(0, "fedavg", -1, 0)

    def test_csv(self, tmp_path):
        ledger = CommLedger()
        ledger.record(0, "fedavg", 20, 10)
        ledger.record(0, "edgeflow", 12, 11)
        path = ledger.to_csv(tmp_path / "ledger.csv")
        assert path.read_text().splitlines()[0] == "t,method,params_hop_units,uploads"
        restored = CommLedger.from_csv(path)
        assert [e.to_dict() for e in restored.entries] == [e.to_dict() for e in ledger.entries]


class TestTopologyFiles:
    def test_yaml_save_load(self, tmp_path):
        topo = builtin_topology("hybrid", branching=2, depth=2).attach_clusters(3)
        path = save_topology(topo, tmp_path / "topo.yaml")
        restored = load_topology(path)
        assert restored.to_dict() == topo.to_dict()
        assert restored.edge_of(2) == "edge_2_1"

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(TopologyError):
            load_topology(tmp_path / "missing.yaml")

    def test_non_mapping(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("- a\n- b\n")
        with pytest.raises(TopologyError):
            load_topology(path)
