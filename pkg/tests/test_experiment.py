"""Tests for core/experiment.py"""
import json
from pathlib import Path

import pytest

from config import METHODS
from core.errors import ConfigurationError
from core.fed_engine import FederatedRunner
from core.experiment import (
    ExperimentRunner, bound_report, load_config, parse_config, read_round_csv, rounds_to_threshold, smooth,
)
from core.net_topology import CommLedger


class TestParseConfig:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg.num_clients == 100
        assert cfg.num_clusters == 10
        assert cfg.N_m == 10
        assert cfg.methods == METHODS
        assert cfg.partition.name == "IID"

    def test_tiny_config(self, tiny_config_text):
        cfg = parse_config(tiny_config_text)
        assert cfg.N_m == 2
        assert cfg.hp.T == 5
        assert cfg.data.class_separation == 3.0
        assert cfg.theory.num_directions == 10
        assert cfg.repeats == 2

    def test_indivisible_clusters_point_at_line(self):
        text = "partition:\n  num_clients: 100\nplan:\n  num_clusters: 7\n"
        with pytest.raises(ConfigurationError) as info:
            parse_config(text)
        assert info.value.line == 4
        assert "N=100 clients cannot be split into M=7 equal clusters" in str(info.value)

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError) as info:
            parse_config("hp:\n  eta: 0.1\n  etaa: 0.2\n")
        assert info.value.line == 3

    def test_unknown_section(self):
        with pytest.raises(ConfigurationError) as info:
            parse_config("model:\n  kind: mlp\n  hidden_dims: [4]\nextras: 1\n")
        assert info.value.line == 4

    def test_wrong_type(self):
        with pytest.raises(ConfigurationError) as info:
            parse_config("hp:\n  K: five\n")
        assert info.value.line == 2

    def test_int_accepted_for_float(self):
        assert parse_config("hp:\n  eta: 1\n").hp.eta == 1.0

    def test_bool_rejected_for_int(self):
        with pytest.raises(ConfigurationError):
            parse_config("hp:\n  K: true\n")

    def test_invalid_value_reports_its_section(self):
        with pytest.raises(ConfigurationError) as info:
            parse_config("model:\n  kind: cnn\n")
        assert info.value.line == 1

    def test_unknown_method(self):
        with pytest.raises(ConfigurationError) as info:
            parse_config("methods: [fedavg, gossip]\n")
        assert info.value.line == 1

    def test_custom_topology_needs_file(self):
        with pytest.raises(ConfigurationError):
            parse_config("topology:\n  kind: custom\n")

    def test_malformed_yaml(self):
        with pytest.raises(ConfigurationError):
            parse_config("hp: [1, 2\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "nope.yaml")


class TestMetricsHelpers:
    def test_smooth_shrinks_window_at_edges(self):
        assert smooth([0.0, 0.0, 5.0, 0.0, 0.0]) == pytest.approx([5 / 3, 5 / 4, 1.0, 5 / 4, 5 / 3])

    def test_rounds_to_threshold(self):
        assert rounds_to_threshold([0.1, 0.5, 0.85, 0.95, 1.0]) == 4
        assert rounds_to_threshold([]) is None


@pytest.fixture
def tiny_run(tiny_config_file, tmp_path):
    cfg = load_config(tiny_config_file)
    out = tmp_path / "run"
    summary = ExperimentRunner(cfg).run(out)
    return cfg, summary, out


class TestExperimentRun:
    def test_artifacts(self, tiny_run):
        cfg, summary, out = tiny_run
        assert summary.ok
        for method in METHODS:
            for r in range(2):
                assert (out / f"rounds_{method}_r{r}.csv").exists()
                assert (out / f"ledger_{method}_r{r}.csv").exists()
        assert (out / "bounds_edgeflow_seq_r0.json").exists()
        assert not (out / "bounds_fedavg_r0.json").exists()
        for name in ("accuracy_vs_round.csv", "load_vs_topology.csv", "summary.json"):
            assert (out / name).exists()

    def test_round_csv_rows(self, tiny_run):
        cfg, _, out = tiny_run
        rows = read_round_csv(out / "rounds_edgeflow_seq_r0.csv")
        assert len(rows) == cfg.hp.T
        assert [int(r["cluster"]) for r in rows] == [0, 1, 2, 0, 1]
        fedavg_rows = read_round_csv(out / "rounds_fedavg_r0.csv")
        assert {r["cluster"] for r in fedavg_rows} == {"-1"}

    def test_summary(self, tiny_run):
        _, summary, out = tiny_run
        data = json.loads((out / "summary.json").read_text())
        assert set(data["methods"]) == set(METHODS)
        assert data["methods"]["edgeflow_seq"]["repeats"] == 2
        assert isinstance(data["edgeflow_beats_fedavg"], bool)
        assert data["failures"] == []

    def test_fedavg_ledger_has_only_fedavg(self, tiny_run):
        _, _, out = tiny_run
        ledger = CommLedger.from_csv(out / "ledger_fedavg_r0.csv")
        assert ledger.methods() == ["fedavg"]
        assert len(ledger.entries) == 5

    def test_ratio_matches_ledger(self, tiny_run):
        _, summary, out = tiny_run
        ledger = CommLedger.from_csv(out / "ledger_edgeflow_seq_r1.csv")
        stored = summary.methods["edgeflow_seq"]["compression_ratio_vs_fedavg"][1]
        assert stored == pytest.approx(ledger.ratio("edgeflow", "fedavg"), rel=1e-12)
        assert stored < 1.0

    def test_bytes_are_deterministic(self, tiny_config_file, tiny_run, tmp_path):
        _, _, out = tiny_run
        again = tmp_path / "again"
        ExperimentRunner(load_config(tiny_config_file)).run(again)
        for name in ("rounds_edgeflow_rand_r1.csv", "accuracy_vs_round.csv", "summary.json",
                     "bounds_edgeflow_seq_r0.json"):
            assert (out / name).read_bytes() == (again / name).read_bytes()

    def test_parallel_cells_match_serial(self, tiny_config_file, tiny_run, tmp_path):
        _, _, out = tiny_run
        cfg = load_config(tiny_config_file)
        cfg.workers = 3
        ExperimentRunner(cfg).run(tmp_path / "parallel")
        for name in ("rounds_fedavg_r1.csv", "accuracy_vs_round.csv"):
            assert (out / name).read_bytes() == (tmp_path / "parallel" / name).read_bytes()

    def test_failed_cell_is_recorded(self, tiny_config_text, tmp_path):
        cfg = parse_config(tiny_config_text.replace("batch_size: 5", "batch_size: 50"))
        summary = ExperimentRunner(cfg).run(tmp_path / "fail")
        assert not summary.ok
        assert len(summary.failures) == 6
        assert "batch size" in summary.failures[0]["error"]

    @pytest.mark.parametrize("workers", [1, 3])
    def test_unexpected_error_fails_only_its_cell(self, tiny_config_text, tmp_path, monkeypatch, workers):
        def broken(self, *args, **kwargs):
            raise RuntimeError("out of memory")

        monkeypatch.setattr(FederatedRunner, "run_fedavg", broken)
        cfg = parse_config(tiny_config_text)
        cfg.theory.enabled = False
        cfg.workers = workers
        summary = ExperimentRunner(cfg).run(tmp_path / "broken")
        assert [f["method"] for f in summary.failures] == ["fedavg", "fedavg"]
        assert summary.failures[0]["error"] == "RuntimeError: out of memory"
        assert set(summary.methods) == {"edgeflow_seq", "edgeflow_rand"}
        assert (tmp_path / "broken" / "summary.json").exists()

    def test_default_output_dir(self, tiny_config_text, output_root):
        cfg = parse_config(tiny_config_text.replace("repeats: 2", "repeats: 1"))
        cfg.theory.enabled = False
        summary = ExperimentRunner(cfg).run()
        assert summary.output_dir == str(output_root / "experiment")


class TestSweep:
    def test_k_sweep(self, tiny_config_text, tmp_path):
        cfg = parse_config(tiny_config_text.replace("repeats: 2", "repeats: 1"))
        cfg.theory.enabled = False
        table = ExperimentRunner(cfg).sweep("K", [1, 2], tmp_path)
        assert (tmp_path / "sweep_K_1" / "summary.json").exists()
        assert (tmp_path / "sweep_K.csv").exists()
        assert len(table["rows"]) == 2 * len(METHODS)
        for method in METHODS:
            best = [r for r in table["rows"] if r["method"] == method and r["best"]]
            assert len(best) == 1
            assert best[0]["value"] == table["best"][method]
            assert set(table["curves"][method]) == {1, 2}

    def test_cluster_size_sweep(self, tiny_config_text, tmp_path):
        cfg = parse_config(tiny_config_text.replace("repeats: 2", "repeats: 1"))
        cfg.theory.enabled = False
        cfg.methods = ["edgeflow_seq"]
        ExperimentRunner(cfg).sweep("N_m", [2, 3], tmp_path)
        rows = read_round_csv(tmp_path / "sweep_N_m_3" / "rounds_edgeflow_seq_r0.csv")
        assert [int(r["cluster"]) for r in rows] == [0, 1, 0, 1, 0]

    def test_bad_axis_and_value(self, tiny_config_text, tmp_path):
        runner = ExperimentRunner(parse_config(tiny_config_text))
        with pytest.raises(ConfigurationError):
            runner.sweep("eta", [1], tmp_path)
        with pytest.raises(ConfigurationError):
            runner.sweep("N_m", [4], tmp_path)

    def test_values_checked_before_any_run(self, tiny_config_text, tmp_path):
        runner = ExperimentRunner(parse_config(tiny_config_text))
        with pytest.raises(ConfigurationError):
            runner.sweep("N_m", [2, 4], tmp_path)
        with pytest.raises(ConfigurationError):
            runner.sweep("K", [2, 0], tmp_path)
        assert list(tmp_path.iterdir()) == []


class TestReports:
    def test_bound_report(self, tiny_run):
        _, summary, out = tiny_run
        report = bound_report(out)
        assert set(report["bounds"]) == {"edgeflow_seq_r0", "edgeflow_seq_r1", "edgeflow_rand_r0", "edgeflow_rand_r1"}
        assert report["lemma3_violations"] == 0
        assert report["compression_ratios"]["edgeflow_seq_r1"] == pytest.approx(
            summary.methods["edgeflow_seq"]["compression_ratio_vs_fedavg"][1]
        )
        assert "fedavg_r0" not in report["compression_ratios"]

    def test_bound_report_needs_summary(self, tmp_path):
        with pytest.raises(ConfigurationError):
            bound_report(tmp_path)

    def test_topo_report(self, tiny_config_file, tmp_path):
        report = ExperimentRunner(load_config(tiny_config_file)).topo_report(tmp_path)
        lines = (tmp_path / "load_vs_topology.csv").read_text().splitlines()
        assert lines[0] == "topology,fedavg,hier_fl,edgeflow,ratio_vs_fedavg,ratio_vs_hier_fl"
        assert [line.split(",")[0] for line in lines[1:]] == ["simple", "breadth_parallel", "depth_linear", "hybrid"]
        assert (tmp_path / "topology_report.json").exists()
        assert 0 < report["overall_ratio"] < 1


SWEEP_CONFIG = """\
partition:
  preset: NIID_B
hp:
  eta: 0.05
  K: 5
  T: 60
  batch_size: 64
theory:
  enabled: false
methods: [fedavg, edgeflow_seq, edgeflow_rand]
repeats: 3
"""


def _means(table, method):
    return {r["value"]: r["final_accuracy_mean"] for r in table["rows"] if r["method"] == method}


@pytest.mark.slow
class TestSweepTrends:
    def test_larger_clusters_do_not_hurt(self, tmp_path):
        table = ExperimentRunner(parse_config(SWEEP_CONFIG)).sweep("N_m", [5, 10, 20], tmp_path)
        assert not table["failed"]
        for method in ("edgeflow_seq", "edgeflow_rand"):
            acc = _means(table, method)
            assert acc[10] >= acc[5] - 0.01
            assert acc[20] >= acc[10] - 0.01

    def test_more_local_steps_have_diminishing_returns(self, tmp_path):
        table = ExperimentRunner(parse_config(SWEEP_CONFIG)).sweep("K", [1, 5, 20], tmp_path)
        assert not table["failed"]
        for method in ("edgeflow_seq", "edgeflow_rand"):
            acc = _means(table, method)
            marked = [r["value"] for r in table["rows"] if r["method"] == method and r["best"]]
            assert marked == [max(acc, key=acc.get)]
            # quadrupling K past 5 buys nothing beyond repeat noise
            assert acc[20] <= acc[5] + 0.01


CONFIG_DIR = Path(__file__).parent.parent / "configs"


class TestShippedConfigs:
    @pytest.mark.parametrize("name", ["iid.yaml", "niid_a.yaml", "niid_b.yaml"])
    def test_parses(self, name):
        cfg = load_config(CONFIG_DIR / name)
        assert cfg.num_clients == 100
        assert cfg.N_m == 10

    def test_mesh_topology_file(self):
        cfg = parse_config(f"topology:\n  kind: custom\n  file: {CONFIG_DIR / 'mesh_topology.yaml'}\n")
        topo = cfg.topology.build(cfg.num_clusters)
        assert topo.edge_of(1) == "edge_b"
        assert topo.hops("edge_a", "cloud") == 2
