"""Tests for the edgeflow_app command line."""
import json

import pytest

from edgeflow_app import _parse_values, main


@pytest.fixture
def quick_config(tmp_path, tiny_config_text):
    path = tmp_path / "quick.yaml"
    path.write_text(tiny_config_text.replace("repeats: 2", "repeats: 1"), encoding="utf-8")
    return path


class TestCommands:
    def test_run_then_bound_report(self, quick_config, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", str(quick_config), "--output", str(out)]) == 0
        assert (out / "summary.json").exists()
        capsys.readouterr()
        assert main(["bound-report", str(out)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["lemma3_violations"] == 0

    def test_run_with_failed_cells(self, tmp_path, tiny_config_text):
        path = tmp_path / "bad.yaml"
        path.write_text(tiny_config_text.replace("batch_size: 5", "batch_size: 50"), encoding="utf-8")
        assert main(["run", str(path), "--output", str(tmp_path / "out")]) == 1

    def test_invalid_config(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text("plan:\n  num_clusters: 7\n", encoding="utf-8")
        assert main(["run", str(path)]) == 1
        assert "line 2" in capsys.readouterr().out

    def test_sweep(self, quick_config, tmp_path):
        assert main(["sweep", str(quick_config), "--axis", "K", "--values", "1,2",
                     "--output", str(tmp_path / "sweep")]) == 0
        assert (tmp_path / "sweep" / "sweep_K.json").exists()

    def test_topo_report(self, quick_config, tmp_path, capsys):
        assert main(["topo-report", str(quick_config), "--output", str(tmp_path)]) == 0
        assert "depth_linear" in capsys.readouterr().out

    def test_bound_report_missing_dir(self, tmp_path):
        assert main(["bound-report", str(tmp_path / "nothing")]) == 1

    def test_unknown_axis_is_rejected(self, quick_config):
        with pytest.raises(SystemExit):
            main(["sweep", str(quick_config), "--axis", "eta", "--values", "1"])


class TestParseValues:
    def test_values(self):
        assert _parse_values("5, 10,20") == [5, 10, 20]

    def test_bad_values(self):
        with pytest.raises(ValueError):
            _parse_values("5,x")
