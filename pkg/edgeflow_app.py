#!/usr/bin/env python
"""
EdgeFLow Simulator - Main Application Entry Point

Runs experiment grids, parameter sweeps and the topology / bound reports,
or serves the REST API.

Usage:
    python edgeflow_app.py run experiment.yaml
    python edgeflow_app.py --help
"""
import sys
import argparse
import json
from pathlib import Path

# Ensure the module directory is in path
sys.path.insert(0, str(Path(__file__).parent))

from tqdm import tqdm


def main(argv=None):
    """Main entry point."""
    from config import DEFAULT_API_HOST, DEFAULT_API_PORT

    parser = argparse.ArgumentParser(
        description="EdgeFLow federated learning simulator",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
    python edgeflow_app.py run configs/niid_b.yaml
    python edgeflow_app.py sweep configs/niid_b.yaml --axis K --values 1,5,20
    python edgeflow_app.py topo-report configs/niid_b.yaml
    python edgeflow_app.py bound-report runs/experiment
    python edgeflow_app.py api --port 5000
        """
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="Run every method x repeat cell of a config")
    p_run.add_argument("config", help="YAML experiment config")
    p_run.add_argument("--output", default=None, help="Output directory (overrides the config)")

    p_sweep = sub.add_parser("sweep", help="Re-run a config over N_m or K values")
    p_sweep.add_argument("config", help="YAML experiment config")
    p_sweep.add_argument("--axis", required=True, choices=["N_m", "K"])
    p_sweep.add_argument("--values", required=True, help="Comma-separated integers, e.g. 5,10,20")
    p_sweep.add_argument("--output", default=None)

    p_topo = sub.add_parser("topo-report", help="Per-topology communication load comparison")
    p_topo.add_argument("config", help="YAML experiment config")
    p_topo.add_argument("--output", default=None)

    p_bound = sub.add_parser("bound-report", help="Summarize bounds and drift checks of a run directory")
    p_bound.add_argument("run_dir")

    p_api = sub.add_parser("api", help="Start the REST API server")
    p_api.add_argument("--host", default=DEFAULT_API_HOST)
    p_api.add_argument("--port", type=int, default=DEFAULT_API_PORT)

    args = parser.parse_args(argv)

    if args.command == "run":
        return run_experiment(args.config, args.output)
    elif args.command == "sweep":
        return run_sweep(args.config, args.axis, args.values, args.output)
    elif args.command == "topo-report":
        return run_topo_report(args.config, args.output)
    elif args.command == "bound-report":
        return run_bound_report(args.run_dir)
    else:
        return run_api(args.host, args.port)


class _ProgressBar:
    """progress_callback(current, total, message) rendered with tqdm."""

    def __init__(self):
        self._bar = None

    def __call__(self, current: int, total: int, message: str):
        if self._bar is None or self._bar.total != total:
            self.close()
            self._bar = tqdm(total=total, unit="cell", leave=False)
        self._bar.set_description(message)
        self._bar.update(current - self._bar.n)

    def close(self):
        if self._bar is not None:
            self._bar.close()
            self._bar = None


def _log(line: str):
    tqdm.write(line)


def _parse_values(text: str):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValueError(f"--values must be comma-separated integers, got '{text}'")


def run_experiment(config_path: str, output: str = None):
    """Run the experiment grid of a config file."""
    print("EdgeFLow Simulator - Run")
    print("=" * 40)

    bar = _ProgressBar()
    try:
        from core.experiment import ExperimentRunner, load_config

        config = load_config(Path(config_path))
        summary = ExperimentRunner(config, log_callback=_log, progress_callback=bar).run(
            Path(output) if output else None
        )
        bar.close()

        for method, stats in summary.methods.items():
            print(f"  {method:<14} acc {stats['final_accuracy_mean']:.4f} +/- {stats['final_accuracy_std']:.4f}")
        if summary.edgeflow_beats_fedavg is not None:
            print(f"  EdgeFLow beats FedAvg: {summary.edgeflow_beats_fedavg}")
        print(f"\nArtifacts written to {summary.output_dir}")
        if summary.failures:
            print(f"{len(summary.failures)} cell(s) failed:")
            for failure in summary.failures:
                print(f"  {failure['method']} repeat {failure['repeat']}: {failure['error']}")
            return 1
        return 0

    except Exception as e:
        bar.close()
        print(f"\nError: {e}")
        return 1


def run_sweep(config_path: str, axis: str, values: str, output: str = None):
    """Sweep N_m or K."""
    print(f"EdgeFLow Simulator - Sweep over {axis}")
    print("=" * 40)

    bar = _ProgressBar()
    try:
        from core.experiment import ExperimentRunner, load_config

        config = load_config(Path(config_path))
        table = ExperimentRunner(config, log_callback=_log, progress_callback=bar).sweep(
            axis, _parse_values(values), Path(output) if output else None
        )
        bar.close()

        for row in table["rows"]:
            marker = " *" if row["best"] else ""
            print(f"  {axis}={row['value']:<4} {row['method']:<14} acc {row['final_accuracy_mean']:.4f}{marker}")
        return 1 if table["failed"] else 0

    except Exception as e:
        bar.close()
        print(f"\nError: {e}")
        return 1


def run_topo_report(config_path: str, output: str = None):
    """Communication load per builtin topology."""
    try:
        from core.experiment import ExperimentRunner, load_config

        config = load_config(Path(config_path))
        report = ExperimentRunner(config, log_callback=_log).topo_report(Path(output) if output else None)

        print(f"{'topology':<18}{'fedavg':>10}{'hier_fl':>10}{'edgeflow':>10}{'ratio':>8}")
        for row in report["rows"]:
            print(f"{row['topology']:<18}{row['fedavg']:>10}{row['hier_fl']:>10}"
                  f"{row['edgeflow']:>10}{row['ratio_vs_fedavg']:>8.3f}")
        print(f"\nOverall reduction vs FedAvg: {report['overall_reduction'] * 100:.1f}%")
        return 0

    except Exception as e:
        print(f"Error: {e}")
        return 1


def run_bound_report(run_dir: str):
    """Bound and drift results of a finished run."""
    try:
        from core.experiment import bound_report

        report = bound_report(Path(run_dir))
        print(json.dumps(report, indent=2, sort_keys=True))
        failed = report["failures"] or report["lemma3_violations"]
        return 1 if failed else 0

    except Exception as e:
        print(f"Error: {e}")
        return 1


def run_api(host: str, port: int):
    """Start the REST API server."""
    print(f"Starting EdgeFLow Simulator REST API on {host}:{port}...")

    try:
        from api.server import create_app, run_server
        app = create_app()
        run_server(app, host=host, port=port)
        return 0
    except ImportError as e:
        print(f"Error importing API modules: {e}")
        return 1
    except Exception as e:
        print(f"Error starting API server: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
