"""
Experiment Harness
Config ingestion, the method x repeat grid, metrics persistence and the
summary / plot-data files.
"""
import csv
import json
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml
from yaml.constructor import SafeConstructor

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))
from config import (
    METHODS, DEFAULT_NUM_CLIENTS, DEFAULT_NUM_CLUSTERS, DEFAULT_REPEATS,
    DEFAULT_EVAL_SAMPLES_PER_CLASS, DEFAULT_TOPOLOGY_KIND, DEFAULT_EDGES, DEFAULT_BRANCHING,
    DEFAULT_DEPTH, DEFAULT_SMOOTHNESS_DIRECTIONS, DEFAULT_SMOOTHNESS_RADIUS, DEFAULT_BATCHES_PER_POINT,
    DEFAULT_F_STAR_STEPS, DEFAULT_F_STAR_LR, SMOOTHING_WINDOW, THRESHOLD_FRACTION,
    ROUND_CSV_HEADER, TOPOLOGY_KINDS, get_output_root,
)

from core.data_gen import DatasetSpec, PartitionConfig, build_partition, make_synthetic_dataset
from core.errors import ConfigurationError, EdgeFlowError
from core.fed_engine import ClusterPlan, FederatedRunner, HyperParams, RunResult, make_cluster_plan
from core.model_core import ModelSpec
from core.net_topology import (
    CommLedger, TopologyGraph, account_schedule, builtin_topology, compare_topologies,
    compression_ratio, fedavg_sample_load, load_topology,
)
from core.theory_bounds import bound_vs_empirical, check_lemma3, estimate_run_constants

# section -> key -> accepted type
CONFIG_SCHEMA: Dict[str, Dict[str, type]] = {
    "model": {"kind": str, "input_dim": int, "hidden_dims": list, "num_classes": int},
    "data": {"samples_per_class": int, "eval_samples_per_class": int,
             "class_separation": float, "noise_std": float},
    "partition": {"preset": str, "num_clients": int},
    "plan": {"num_clusters": int, "assignment": str, "order": list, "start": int},
    "hp": {"eta": float, "K": int, "T": int, "batch_size": int, "seed": int, "local_mode": str},
    "topology": {"kind": str, "edges": int, "branching": int, "depth": int, "file": str,
                 "include_downloads": bool, "strict_edge_routing": bool},
    "theory": {"enabled": bool, "num_directions": int, "radius": float, "batches_per_point": int,
               "f_star_steps": int, "f_star_lr": float},
    "output": {"dir": str, "smoothing": bool, "checkpoint_every": int},
}
TOP_LEVEL_KEYS: Dict[str, type] = {"methods": list, "repeats": int, "workers": int}
LIST_ITEM_TYPES: Dict[str, type] = {"hidden_dims": int, "order": int, "methods": str}

SWEEP_AXES = ["N_m", "K"]

METHOD_POLICY = {"edgeflow_seq": "fixed_sequence", "edgeflow_rand": "random"}


@dataclass
class TopologySettings:
    kind: str = DEFAULT_TOPOLOGY_KIND
    edges: int = DEFAULT_EDGES
    branching: int = DEFAULT_BRANCHING
    depth: int = DEFAULT_DEPTH
    file: Optional[str] = None
    include_downloads: bool = False
    strict_edge_routing: bool = False

    def build(self, num_clusters: int) -> TopologyGraph:
        if self.file:
            topo = load_topology(Path(self.file))
            if not topo.attachments:
                topo.attach_clusters(num_clusters)
            return topo
        return builtin_topology(self.kind, self.edges, self.branching, self.depth).attach_clusters(num_clusters)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "edges": self.edges, "branching": self.branching, "depth": self.depth,
            "file": self.file, "include_downloads": self.include_downloads,
            "strict_edge_routing": self.strict_edge_routing,
        }


@dataclass
class TheorySettings:
    enabled: bool = True
    num_directions: int = DEFAULT_SMOOTHNESS_DIRECTIONS
    radius: float = DEFAULT_SMOOTHNESS_RADIUS
    batches_per_point: int = DEFAULT_BATCHES_PER_POINT
    f_star_steps: int = DEFAULT_F_STAR_STEPS
    f_star_lr: float = DEFAULT_F_STAR_LR

    def to_dict(self) -> dict:
        return {
            "enabled": self.enabled, "num_directions": self.num_directions, "radius": self.radius,
            "batches_per_point": self.batches_per_point, "f_star_steps": self.f_star_steps,
            "f_star_lr": self.f_star_lr,
        }


@dataclass
class ExperimentConfig:
    """Everything one experiment grid needs."""
    model: ModelSpec = field(default_factory=ModelSpec)
    data: DatasetSpec = field(default_factory=DatasetSpec)
    eval_samples_per_class: int = DEFAULT_EVAL_SAMPLES_PER_CLASS
    partition: PartitionConfig = field(default_factory=lambda: PartitionConfig.from_preset("IID"))
    num_clusters: int = DEFAULT_NUM_CLUSTERS
    assignment: str = "contiguous"
    order: Tuple[int, ...] = ()
    start: int = 0
    hp: HyperParams = field(default_factory=HyperParams)
    topology: TopologySettings = field(default_factory=TopologySettings)
    theory: TheorySettings = field(default_factory=TheorySettings)
    methods: List[str] = field(default_factory=lambda: list(METHODS))
    output_dir: Optional[Path] = None
    smoothing: bool = True
    checkpoint_every: int = 0
    repeats: int = DEFAULT_REPEATS
    workers: int = 1

    @property
    def num_clients(self) -> int:
        return self.partition.num_clients

    @property
    def N_m(self) -> int:
        return self.num_clients // self.num_clusters

    def resolved_output_dir(self) -> Path:
        return Path(self.output_dir) if self.output_dir else get_output_root() / "experiment"

    def plan(self, policy: str) -> ClusterPlan:
        return make_cluster_plan(self.num_clients, self.num_clusters, policy,
                                 self.assignment, self.order, self.start)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "data": self.data.to_dict(),
            "eval_samples_per_class": self.eval_samples_per_class,
            "partition": self.partition.to_dict(),
            "num_clusters": self.num_clusters,
            "N_m": self.N_m,
            "assignment": self.assignment,
            "order": list(self.order),
            "start": self.start,
            "hp": self.hp.to_dict(),
            "topology": self.topology.to_dict(),
            "theory": self.theory.to_dict(),
            "methods": list(self.methods),
            "smoothing": self.smoothing,
            "checkpoint_every": self.checkpoint_every,
            "repeats": self.repeats,
            "workers": self.workers,
        }


# ---- config parsing ----

def _construct(node: yaml.Node) -> Any:
    return SafeConstructor().construct_object(node, deep=True)


def _typed(value: Any, expected: type, where: str, line: int) -> Any:
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if expected is int and isinstance(value, bool):
        raise ConfigurationError(f"{where}: expected int, got bool", line)
    if not isinstance(value, expected):
        raise ConfigurationError(f"{where}: expected {expected.__name__}, got {type(value).__name__}", line)
    item_type = LIST_ITEM_TYPES.get(where.rsplit(".", 1)[-1])
    if expected is list and item_type is not None:
        for item in value:
            if isinstance(item, bool) or not isinstance(item, item_type):
                raise ConfigurationError(f"{where}: every entry must be {item_type.__name__}, got {item!r}", line)
    return value


def _read_mapping(node: yaml.Node, schema: Dict[str, type], where: str) -> Dict[str, Tuple[Any, int]]:
    if not isinstance(node, yaml.MappingNode):
        raise ConfigurationError(f"{where}: expected a mapping", node.start_mark.line + 1)
    values = {}
    for key_node, value_node in node.value:
        key = key_node.value
        line = key_node.start_mark.line + 1
        if key not in schema:
            raise ConfigurationError(f"unknown key '{key}' in {where} (allowed: {sorted(schema)})", line)
        if key in values:
            raise ConfigurationError(f"duplicate key '{key}' in {where}", line)
        values[key] = (_typed(_construct(value_node), schema[key], f"{where}.{key}", line), line)
    return values


def parse_config(text: str) -> ExperimentConfig:
    """Validated config from YAML text; errors carry the offending line."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigurationError(f"malformed YAML: {getattr(e, 'problem', e)}",
                                 mark.line + 1 if mark else None) from e

    sections: Dict[str, Dict[str, Tuple[Any, int]]] = {name: {} for name in CONFIG_SCHEMA}
    section_lines: Dict[str, int] = {}
    top: Dict[str, Tuple[Any, int]] = {}
    if root is not None:
        if not isinstance(root, yaml.MappingNode):
            raise ConfigurationError("config must be a mapping of sections", root.start_mark.line + 1)
        for key_node, value_node in root.value:
            key = key_node.value
            line = key_node.start_mark.line + 1
            if key in CONFIG_SCHEMA:
                section_lines[key] = line
                if not (isinstance(value_node, yaml.ScalarNode) and value_node.value in ("", "~", "null")):
                    sections[key] = _read_mapping(value_node, CONFIG_SCHEMA[key], key)
            elif key in TOP_LEVEL_KEYS:
                top[key] = (_typed(_construct(value_node), TOP_LEVEL_KEYS[key], key, line), line)
            else:
                raise ConfigurationError(
                    f"unknown key '{key}' (allowed: {sorted(CONFIG_SCHEMA) + sorted(TOP_LEVEL_KEYS)})", line
                )

    def get(section: str, key: str, default: Any) -> Any:
        return sections[section][key][0] if key in sections[section] else default

    def line_of(section: str, key: Optional[str] = None) -> Optional[int]:
        if key and key in sections[section]:
            return sections[section][key][1]
        return section_lines.get(section)

    def build(section: str, factory: Callable, *args, key: Optional[str] = None, **kwargs):
        try:
            return factory(*args, **kwargs)
        except EdgeFlowError as e:
            raise ConfigurationError(getattr(e, "message", str(e)), line_of(section, key)) from e

    model = build("model", ModelSpec,
                  kind=get("model", "kind", ModelSpec.kind),
                  input_dim=get("model", "input_dim", ModelSpec.input_dim),
                  hidden_dims=tuple(get("model", "hidden_dims", [])),
                  num_classes=get("model", "num_classes", ModelSpec.num_classes))
    data = build("data", DatasetSpec,
                 num_classes=model.num_classes,
                 input_dim=model.input_dim,
                 samples_per_class=get("data", "samples_per_class", DatasetSpec.samples_per_class),
                 class_separation=get("data", "class_separation", DatasetSpec.class_separation),
                 noise_std=get("data", "noise_std", DatasetSpec.noise_std))
    eval_spc = get("data", "eval_samples_per_class", DEFAULT_EVAL_SAMPLES_PER_CLASS)
    if eval_spc < 1:
        raise ConfigurationError("eval_samples_per_class must be >= 1", line_of("data", "eval_samples_per_class"))

    num_clients = get("partition", "num_clients", DEFAULT_NUM_CLIENTS)
    if num_clients < 1:
        raise ConfigurationError(f"num_clients must be >= 1, got {num_clients}", line_of("partition", "num_clients"))
    partition = build("partition", PartitionConfig.from_preset,
                      get("partition", "preset", "IID"), num_clients, key="preset")

    num_clusters = get("plan", "num_clusters", DEFAULT_NUM_CLUSTERS)
    if num_clusters < 1 or num_clients % num_clusters:
        raise ConfigurationError(
            f"N={num_clients} clients cannot be split into M={num_clusters} equal clusters",
            line_of("plan", "num_clusters"),
        )
    assignment = get("plan", "assignment", "contiguous")
    order = tuple(get("plan", "order", []))
    start = get("plan", "start", 0)
    build("plan", make_cluster_plan, num_clients, num_clusters, "fixed_sequence", assignment, order, start)

    hp = build("hp", HyperParams,
               eta=get("hp", "eta", HyperParams.eta),
               K=get("hp", "K", HyperParams.K),
               T=get("hp", "T", HyperParams.T),
               batch_size=get("hp", "batch_size", HyperParams.batch_size),
               seed=get("hp", "seed", HyperParams.seed),
               local_mode=get("hp", "local_mode", HyperParams.local_mode))

    topology = TopologySettings(**{k: v for k, (v, _) in sections["topology"].items()})
    if topology.kind not in TOPOLOGY_KINDS:
        raise ConfigurationError(f"Unknown topology kind '{topology.kind}'. Choose from: {TOPOLOGY_KINDS}",
                                 line_of("topology", "kind"))
    if topology.kind == "custom" and not topology.file:
        raise ConfigurationError("custom topology needs a file", line_of("topology", "kind"))
    build("topology", topology.build, num_clusters)
    theory = TheorySettings(**{k: v for k, (v, _) in sections["theory"].items()})

    methods = list(top["methods"][0]) if "methods" in top else list(METHODS)
    for method in methods:
        if method not in METHODS:
            raise ConfigurationError(f"Unknown method '{method}'. Choose from: {METHODS}", top["methods"][1])
    if not methods:
        raise ConfigurationError("methods must not be empty", top["methods"][1])
    repeats = top["repeats"][0] if "repeats" in top else DEFAULT_REPEATS
    if repeats < 1:
        raise ConfigurationError(f"repeats must be >= 1, got {repeats}", top["repeats"][1])
    workers = top["workers"][0] if "workers" in top else 1
    if workers < 1:
        raise ConfigurationError(f"workers must be >= 1, got {workers}", top["workers"][1])

    out_dir = get("output", "dir", None)
    return ExperimentConfig(
        model=model,
        data=data,
        eval_samples_per_class=eval_spc,
        partition=partition,
        num_clusters=num_clusters,
        assignment=assignment,
        order=order,
        start=start,
        hp=hp,
        topology=topology,
        theory=theory,
        methods=methods,
        output_dir=Path(out_dir) if out_dir else None,
        smoothing=get("output", "smoothing", True),
        checkpoint_every=get("output", "checkpoint_every", 0),
        repeats=repeats,
        workers=workers,
    )


def load_config(path: Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


# ---- metrics helpers ----

def smooth(values: Sequence[float], window: int = SMOOTHING_WINDOW) -> List[float]:
    """Centered moving average; the window shrinks at the ends."""
    half = window // 2
    arr = np.asarray(values, dtype=np.float64)
    return [float(arr[max(0, i - half):i + half + 1].mean()) for i in range(len(arr))]


def rounds_to_threshold(accuracies: Sequence[float], fraction: float = THRESHOLD_FRACTION) -> Optional[int]:
    """First round count at which accuracy reaches `fraction` of the final value."""
    if not accuracies:
        return None
    target = fraction * accuracies[-1]
    for t, acc in enumerate(accuracies):
        if acc >= target:
            return t + 1
    return len(accuracies)


def write_round_csv(path: Path, method: str, result: RunResult, hop_units: Sequence[int]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(ROUND_CSV_HEADER)
        for record, units in zip(result.records, hop_units):
            writer.writerow([record.t, method, record.cluster_id, repr(record.global_loss),
                             repr(record.eval_accuracy), units])
    return path


def read_round_csv(path: Path) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def _write_json(path: Path, data: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


@dataclass
class CellResult:
    """One (method, repeat) cell of the grid."""
    method: str
    repeat: int
    seed: int
    final_accuracy: float = float("nan")
    accuracies: List[float] = field(default_factory=list)
    rounds_to_threshold: Optional[int] = None
    params_hop_units: int = 0
    baseline_hop_units: int = 0
    compression_ratio: Optional[float] = None
    bounds: Optional[dict] = None
    lemma3: Optional[dict] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class RunSummary:
    """Per-method aggregates over repeats plus failed cells."""
    methods: Dict[str, dict] = field(default_factory=dict)
    failures: List[dict] = field(default_factory=list)
    edgeflow_beats_fedavg: Optional[bool] = None
    output_dir: Optional[str] = None

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "methods": self.methods,
            "failures": self.failures,
            "edgeflow_beats_fedavg": self.edgeflow_beats_fedavg,
        }


class ExperimentRunner:
    """Runs experiment grids and writes their artifacts."""

    def __init__(
        self,
        config: ExperimentConfig,
        log_callback: Optional[Callable] = None,
        progress_callback: Optional[Callable] = None,
    ):
        self.config = config
        self._log_callback = log_callback
        self._progress_callback = progress_callback

    def _log(self, message: str):
        if self._log_callback:
            self._log_callback(message)

    # ---- run ----

    def run(self, output_dir: Optional[Path] = None) -> RunSummary:
        cfg = self.config
        out = Path(output_dir) if output_dir else cfg.resolved_output_dir()
        out.mkdir(parents=True, exist_ok=True)
        self._log(f"[run] {len(cfg.methods)} method(s) x {cfg.repeats} repeat(s) -> {out}")

        cells = [(method, i) for i in range(cfg.repeats) for method in cfg.methods]
        results: Dict[Tuple[str, int], CellResult] = {}
        done = 0
        if cfg.workers == 1:
            for method, i in cells:
                results[(method, i)] = self._run_cell(method, i, out)
                done += 1
                if self._progress_callback:
                    self._progress_callback(done, len(cells), f"{method} repeat {i}")
        else:
            with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
                futures = {executor.submit(self._run_cell, method, i, out): (method, i) for method, i in cells}
                for future in as_completed(futures):
                    results[futures[future]] = future.result()
                    done += 1
                    if self._progress_callback:
                        method, i = futures[future]
                        self._progress_callback(done, len(cells), f"{method} repeat {i}")

        ordered = [results[c] for c in cells]
        summary = self._summarize(ordered)
        summary.output_dir = str(out)
        self._write_accuracy_csv(out / "accuracy_vs_round.csv", ordered)
        self._write_load_csv(out / "load_vs_topology.csv")
        _write_json(out / "summary.json", {"config": cfg.to_dict(), **summary.to_dict()})
        self._log(f"[run] finished, {len(summary.failures)} failed cell(s)")
        return summary

    def _build_repeat(self, seed: int):
        cfg = self.config
        train = make_synthetic_dataset(cfg.data, seed, split="train")
        eval_set = make_synthetic_dataset(cfg.data, seed, split="eval", samples_per_class=cfg.eval_samples_per_class)
        shards = build_partition(cfg.partition, train, seed, self._log_callback)
        return shards, eval_set

    def _run_cell(self, method: str, repeat: int, out: Path) -> CellResult:
        cfg = self.config
        seed = cfg.hp.seed + repeat
        cell = CellResult(method=method, repeat=repeat, seed=seed)
        try:
            shards, eval_set = self._build_repeat(seed)
            hp = replace(cfg.hp, seed=seed)
            plan = cfg.plan(METHOD_POLICY.get(method, "fixed_sequence"))
            runner = FederatedRunner(
                cfg.model, shards, hp, eval_set,
                log_callback=self._log_callback,
                checkpoint_dir=out / "checkpoints" / f"{method}_r{repeat}" if cfg.checkpoint_every else None,
                checkpoint_every=cfg.checkpoint_every,
            )
            if method == "fedavg":
                result = runner.run_fedavg(cfg.N_m, method=method)
            else:
                result = runner.run_edgeflow(plan, method=method)

            ledger, hop_units = self._account(method, result, plan)
            ledger.to_csv(out / f"ledger_{method}_r{repeat}.csv")
            write_round_csv(out / f"rounds_{method}_r{repeat}.csv", method, result, hop_units)

            cell.accuracies = [r.eval_accuracy for r in result.records]
            cell.final_accuracy = result.final_accuracy
            cell.rounds_to_threshold = rounds_to_threshold(cell.accuracies)
            cell.params_hop_units = sum(hop_units)
            cell.baseline_hop_units = ledger.total("fedavg")
            if cell.baseline_hop_units > 0:
                cell.compression_ratio = compression_ratio(cell.params_hop_units, cell.baseline_hop_units)

            if result.records:
                g_sq = max(r.per_client_grad_norm_sq_max for r in result.records)
                cell.lemma3 = check_lemma3(result.records, hp.eta, g_sq).to_dict()
                if cfg.theory.enabled and method != "fedavg":
                    cell.bounds = self._bounds(shards, plan, hp, result)
                    _write_json(out / f"bounds_{method}_r{repeat}.json",
                                {"lemma3": cell.lemma3, **cell.bounds})
        except Exception as e:
            cell.error = str(e) if isinstance(e, EdgeFlowError) else f"{type(e).__name__}: {e}"
            self._log(f"[run] cell {method}/r{repeat} failed: {cell.error}")
        return cell

    def _account(self, method: str, result: RunResult, plan: ClusterPlan) -> Tuple[CommLedger, List[int]]:
        """Ledger for a finished run plus this method's per-round load."""
        cfg = self.config
        topo = cfg.topology.build(cfg.num_clusters)
        P = cfg.model.param_count
        ledger = CommLedger()
        if method == "fedavg":
            for r in result.records:
                units = fedavg_sample_load(topo, plan.membership, r.participants, P, cfg.topology.include_downloads)
                ledger.record(r.t, "fedavg", units, len(r.participants))
            return ledger, [e.params_hop_units for e in ledger.rounds("fedavg")]

        schedule = result.schedule
        for ledger_method in ("edgeflow", "hier_fl", "fedavg"):
            account_schedule(ledger_method, topo, schedule, plan.cluster_sizes, P,
                             include_downloads=cfg.topology.include_downloads,
                             strict_edge_routing=cfg.topology.strict_edge_routing,
                             ledger=ledger)
        return ledger, [e.params_hop_units for e in ledger.rounds("edgeflow")]

    def _bounds(self, shards, plan: ClusterPlan, hp: HyperParams, result: RunResult) -> dict:
        th = self.config.theory
        constants = estimate_run_constants(
            self.config.model, shards, plan, hp, result,
            num_directions=th.num_directions, radius=th.radius, batches_per_point=th.batches_per_point,
            f_star_steps=th.f_star_steps, f_star_lr=th.f_star_lr,
            log_callback=self._log_callback,
        )
        comparison = bound_vs_empirical(result.records, constants, self._log_callback)
        return {"constants": constants.to_dict(), "comparison": comparison.to_dict()}

    def _summarize(self, cells: Sequence[CellResult]) -> RunSummary:
        summary = RunSummary()
        for cell in cells:
            if not cell.ok:
                summary.failures.append({"method": cell.method, "repeat": cell.repeat, "error": cell.error})
        for method in self.config.methods:
            done = [c for c in cells if c.method == method and c.ok]
            if not done:
                continue
            finals = [c.final_accuracy for c in done]
            ratios = [c.compression_ratio for c in done if c.compression_ratio is not None]
            summary.methods[method] = {
                "repeats": len(done),
                "final_accuracy": finals,
                "final_accuracy_mean": float(np.mean(finals)),
                "final_accuracy_std": float(np.std(finals)),
                "rounds_to_threshold": [c.rounds_to_threshold for c in done],
                "params_hop_units": [c.params_hop_units for c in done],
                "params_hop_units_mean": float(np.mean([c.params_hop_units for c in done])),
                "compression_ratio_vs_fedavg": [float(r) for r in ratios],
                "compression_ratio_mean": float(np.mean(ratios)) if ratios else None,
                "bounds": [c.bounds for c in done if c.bounds is not None],
                "lemma3": [c.lemma3 for c in done if c.lemma3 is not None],
            }
        if "fedavg" in summary.methods:
            base = summary.methods["fedavg"]["final_accuracy_mean"]
            variants = [summary.methods[m]["final_accuracy_mean"] for m in ("edgeflow_seq", "edgeflow_rand")
                        if m in summary.methods]
            if variants:
                summary.edgeflow_beats_fedavg = max(variants) > base
        return summary

    def _write_accuracy_csv(self, path: Path, cells: Sequence[CellResult]):
        curves = {}
        for method in self.config.methods:
            runs = [c.accuracies for c in cells if c.method == method and c.ok and c.accuracies]
            if runs:
                curves[method] = np.mean(np.array(runs), axis=0).tolist()
        header = ["t"]
        columns = []
        for method, curve in curves.items():
            header.append(method)
            columns.append(curve)
            if self.config.smoothing:
                header.append(f"{method}_smoothed")
                columns.append(smooth(curve))
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for t in range(self.config.hp.T):
                writer.writerow([t, *[repr(float(col[t])) for col in columns]])

    def _write_load_csv(self, path: Path) -> dict:
        cfg = self.config
        report = compare_topologies(
            num_clusters=cfg.num_clusters,
            cluster_size=cfg.N_m,
            model_size=cfg.model.param_count,
            topology_params={
                "simple": {"edges": cfg.topology.edges},
                "breadth_parallel": {"branching": cfg.topology.branching},
                "depth_linear": {"depth": cfg.topology.depth},
                "hybrid": {"branching": cfg.topology.branching, "depth": cfg.topology.depth},
            },
            include_downloads=cfg.topology.include_downloads,
            log_callback=self._log_callback,
        )
        if cfg.topology.file:
            topo = cfg.topology.build(cfg.num_clusters)
            schedule = list(range(cfg.num_clusters))
            sizes = [cfg.N_m] * cfg.num_clusters
            loads = {
                m: account_schedule(m, topo, schedule, sizes, cfg.model.param_count, wrap=True,
                                    include_downloads=cfg.topology.include_downloads,
                                    strict_edge_routing=cfg.topology.strict_edge_routing).total()
                for m in ("fedavg", "hier_fl", "edgeflow")
            }
            report["rows"].append({
                "topology": Path(cfg.topology.file).stem, **loads,
                "ratio_vs_fedavg": compression_ratio(loads["edgeflow"], loads["fedavg"]),
                "ratio_vs_hier_fl": compression_ratio(loads["edgeflow"], loads["hier_fl"]),
            })
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["topology", "fedavg", "hier_fl", "edgeflow", "ratio_vs_fedavg", "ratio_vs_hier_fl"])
            for row in report["rows"]:
                writer.writerow([row["topology"], row["fedavg"], row["hier_fl"], row["edgeflow"],
                                 repr(row["ratio_vs_fedavg"]), repr(row["ratio_vs_hier_fl"])])
        return report

    # ---- sweep ----

    def sweep(self, axis: str, values: Sequence[int], output_dir: Optional[Path] = None) -> dict:
        """Re-run the grid once per axis value and tabulate final accuracy."""
        if axis not in SWEEP_AXES:
            raise ConfigurationError(f"Unknown sweep axis '{axis}'. Choose from: {SWEEP_AXES}")
        if not values:
            raise ConfigurationError("sweep needs at least one value")
        base = self.config
        out = Path(output_dir) if output_dir else base.resolved_output_dir()
        # every value is checked before the first run writes anything
        configs = []
        for value in values:
            if axis == "N_m":
                if value < 1 or base.num_clients % value:
                    raise ConfigurationError(f"N_m={value} does not divide N={base.num_clients}")
                configs.append(replace(base, num_clusters=base.num_clients // value, order=()))
            else:
                configs.append(replace(base, hp=replace(base.hp, K=value)))

        rows = []
        curves: Dict[str, Dict[int, List[float]]] = {}
        failed = False
        for value, cfg in zip(values, configs):
            self._log(f"[sweep] {axis}={value}")
            summary = ExperimentRunner(cfg, self._log_callback, self._progress_callback).run(
                out / f"sweep_{axis}_{value}"
            )
            failed = failed or not summary.ok
            for method, stats in summary.methods.items():
                rows.append({"axis": axis, "value": value, "method": method,
                             "final_accuracy_mean": stats["final_accuracy_mean"],
                             "final_accuracy_std": stats["final_accuracy_std"]})
            acc_path = out / f"sweep_{axis}_{value}" / "accuracy_vs_round.csv"
            for row in read_round_csv(acc_path):
                for method in summary.methods:
                    curves.setdefault(method, {}).setdefault(value, []).append(float(row[method]))

        best = {}
        for method in {r["method"] for r in rows}:
            scored = [r for r in rows if r["method"] == method]
            top = max(scored, key=lambda r: r["final_accuracy_mean"])
            best[method] = top["value"]
        for row in rows:
            row["best"] = best[row["method"]] == row["value"]

        with open(out / f"sweep_{axis}.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["axis", "value", "method", "final_accuracy_mean", "final_accuracy_std", "best"])
            for row in rows:
                writer.writerow([row["axis"], row["value"], row["method"], repr(row["final_accuracy_mean"]),
                                 repr(row["final_accuracy_std"]), int(row["best"])])
        table = {"axis": axis, "values": list(values), "rows": rows, "best": best, "curves": curves,
                 "failed": failed}
        _write_json(out / f"sweep_{axis}.json", table)
        return table

    # ---- reports ----

    def topo_report(self, output_dir: Optional[Path] = None) -> dict:
        out = Path(output_dir) if output_dir else self.config.resolved_output_dir()
        report = self._write_load_csv(out / "load_vs_topology.csv")
        _write_json(out / "topology_report.json", report)
        return report


def bound_report(run_dir: Path) -> dict:
    """Collect bound / drift results of a finished run directory.

    Compression ratios are recomputed from the ledger CSVs.
    """
    run_dir = Path(run_dir)
    summary_path = run_dir / "summary.json"
    if not summary_path.exists():
        raise ConfigurationError(f"no summary.json in {run_dir}")
    with open(summary_path, encoding="utf-8") as f:
        summary = json.load(f)

    bounds = {}
    for path in sorted(run_dir.glob("bounds_*.json")):
        with open(path, encoding="utf-8") as f:
            bounds[path.stem[len("bounds_"):]] = json.load(f)

    ratios = {}
    for path in sorted(run_dir.glob("ledger_*.csv")):
        ledger = CommLedger.from_csv(path)
        cell = path.stem[len("ledger_"):]
        if ledger.total("edgeflow") and ledger.total("fedavg"):
            ratios[cell] = ledger.ratio("edgeflow", "fedavg")

    return {
        "run_dir": str(run_dir),
        "bounds": bounds,
        "compression_ratios": ratios,
        "lemma3_violations": sum(len(b.get("lemma3", {}).get("violations", [])) for b in bounds.values()),
        "slack_negative": sorted(k for k, b in bounds.items() if b["comparison"]["slack"] < 0),
        "failures": summary.get("failures", []),
    }
