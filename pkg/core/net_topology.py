"""
Network Topology
Edge-network graphs, hop counts and per-round communication accounting for
FedAvg, Hierarchical FL and EdgeFLow.
"""
import csv
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import networkx as nx
import yaml

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))
from config import (
    TOPOLOGY_KINDS, LEDGER_METHODS, DEFAULT_EDGES, DEFAULT_BRANCHING, DEFAULT_DEPTH,
    DEFAULT_NUM_CLUSTERS,
)

from core.errors import ConfigurationError, TopologyError
from data.topology_presets import BUILTIN_TOPOLOGIES

CLOUD = "cloud"
GATEWAY = "gateway"


@dataclass
class TopologyGraph:
    """Undirected unit-cost network with one cloud node and ordered edge nodes."""
    graph: nx.Graph
    kind: str
    edge_nodes: List[str]
    attachments: Dict[int, str] = field(default_factory=dict)
    cloud: str = CLOUD

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in TOPOLOGY_KINDS:
            raise TopologyError(f"Unknown topology kind '{self.kind}'. Choose from: {TOPOLOGY_KINDS}")
        clouds = [n for n, role in self.graph.nodes(data="role") if role == "cloud"]
        if clouds != [self.cloud]:
            raise TopologyError(f"topology needs exactly one cloud node, found {clouds}")
        if not self.edge_nodes:
            raise TopologyError("topology has no edge nodes")
        for node in self.edge_nodes:
            if node not in self.graph:
                raise TopologyError(f"edge node '{node}' is not in the graph")
        if not nx.is_connected(self.graph):
            raise TopologyError("topology graph is not connected")
        for cluster, node in self.attachments.items():
            if node not in self.edge_nodes:
                raise TopologyError(f"cluster {cluster} is attached to '{node}', which is not an edge node")

    def attach_clusters(self, num_clusters: int) -> "TopologyGraph":
        """Attach cluster m to edge_nodes[m % E]."""
        if num_clusters < 1:
            raise ConfigurationError(f"num_clusters must be >= 1, got {num_clusters}")
        self.attachments = {m: self.edge_nodes[m % len(self.edge_nodes)] for m in range(num_clusters)}
        return self

    def edge_of(self, cluster: int) -> str:
        if cluster not in self.attachments:
            raise TopologyError(f"cluster {cluster} is not attached to any edge node")
        return self.attachments[cluster]

    def hops(self, a: str, b: str) -> int:
        return hops(self, a, b)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "cloud": self.cloud,
            "nodes": [
                {"name": str(n), "role": role or "relay"}
                for n, role in sorted(self.graph.nodes(data="role"), key=lambda item: str(item[0]))
            ],
            "links": sorted([sorted([str(a), str(b)]) for a, b in self.graph.edges()]),
            "edge_nodes": list(self.edge_nodes),
            "attachments": {int(m): node for m, node in sorted(self.attachments.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TopologyGraph":
        try:
            graph = nx.Graph()
            for node in data["nodes"]:
                graph.add_node(node["name"], role=node.get("role", "relay"))
            for a, b in data["links"]:
                for end in (a, b):
                    if end not in graph:
                        raise TopologyError(f"link references unknown node '{end}'")
                graph.add_edge(a, b)
            return cls(
                graph=graph,
                kind=data.get("kind", "custom"),
                edge_nodes=list(data["edge_nodes"]),
                attachments={int(m): node for m, node in (data.get("attachments") or {}).items()},
                cloud=data.get("cloud", CLOUD),
            )
        except (KeyError, TypeError) as e:
            raise TopologyError(f"malformed topology description: {e}") from e


def _new_graph() -> nx.Graph:
    graph = nx.Graph()
    graph.add_node(CLOUD, role="cloud")
    return graph


def builtin_topology(
    kind: str,
    edges: int = DEFAULT_EDGES,
    branching: int = DEFAULT_BRANCHING,
    depth: int = DEFAULT_DEPTH,
) -> TopologyGraph:
    """Build one of the four builtin topologies.

    simple: edge_1..edge_E each linked to the cloud.
    breadth_parallel: edge_1..edge_b linked to a gateway linked to the cloud.
    depth_linear: chain edge_1 - ... - edge_d - cloud.
    hybrid: b chains edge_i_1 - ... - edge_i_d - cloud; edge_i_1 is the deepest.
    """
    for name, value in (("edges", edges), ("branching", branching), ("depth", depth)):
        if value < 1:
            raise ConfigurationError(f"{name} must be >= 1, got {value}")

    graph = _new_graph()
    if kind == "simple":
        edge_nodes = [f"edge_{i}" for i in range(1, edges + 1)]
        for node in edge_nodes:
            graph.add_node(node, role="edge")
            graph.add_edge(node, CLOUD)
    elif kind == "breadth_parallel":
        graph.add_node(GATEWAY, role="gateway")
        graph.add_edge(GATEWAY, CLOUD)
        edge_nodes = [f"edge_{i}" for i in range(1, branching + 1)]
        for node in edge_nodes:
            graph.add_node(node, role="edge")
            graph.add_edge(node, GATEWAY)
    elif kind == "depth_linear":
        edge_nodes = [f"edge_{i}" for i in range(1, depth + 1)]
        for node in edge_nodes:
            graph.add_node(node, role="edge")
        nx.add_path(graph, edge_nodes + [CLOUD])
    elif kind == "hybrid":
        edge_nodes = []
        for i in range(1, branching + 1):
            chain = [f"edge_{i}_{j}" for j in range(1, depth + 1)]
            for node in chain:
                graph.add_node(node, role="edge")
            nx.add_path(graph, chain + [CLOUD])
            edge_nodes.extend(chain)
    else:
        raise TopologyError(f"Unknown builtin topology '{kind}'. Choose from: {BUILTIN_TOPOLOGIES}")

    return TopologyGraph(graph=graph, kind=kind, edge_nodes=edge_nodes)


def hops(topology: TopologyGraph, a: str, b: str) -> int:
    """Shortest-path hop count."""
    for node in (a, b):
        if node not in topology.graph:
            raise TopologyError(f"node '{node}' is not in the topology")
    try:
        return nx.shortest_path_length(topology.graph, a, b)
    except nx.NetworkXNoPath as e:
        raise TopologyError(f"no path between '{a}' and '{b}'") from e


def migration_hops(topology: TopologyGraph, a: str, b: str, strict_edge_routing: bool = False) -> int:
    """Edge-to-edge hops for a model migration, bypassing the cloud when possible."""
    if a == b:
        return 0
    bypass = nx.restricted_view(topology.graph, [topology.cloud], [])
    try:
        return nx.shortest_path_length(bypass, a, b)
    except nx.NetworkXNoPath:
        if strict_edge_routing:
            raise TopologyError(f"no cloud-free path between '{a}' and '{b}'")
    return hops(topology, a, b)


def round_comm_load(
    method: str,
    topology: TopologyGraph,
    cluster: int,
    cluster_size: int,
    model_size: int,
    next_cluster: Optional[int] = None,
    include_downloads: bool = False,
    strict_edge_routing: bool = False,
) -> int:
    """Parameter-hop units for one round of `method` served by `cluster`.

    fedavg:  N_m * P * (1 + h)            every client model reaches the cloud
    hier_fl: N_m * P + P * h              one edge aggregate reaches the cloud
    edgeflow: N_m * P + P * hops(edge(m), edge(next))
    where h = hops(edge(m), cloud). A missing next cluster means no migration.
    """
    if method not in LEDGER_METHODS:
        raise ConfigurationError(f"Unknown ledger method '{method}'. Choose from: {LEDGER_METHODS}")
    edge = topology.edge_of(cluster)
    to_cloud = hops(topology, edge, topology.cloud)
    client_term = cluster_size * model_size

    if method == "fedavg":
        upload = client_term * (1 + to_cloud)
        download = upload
    elif method == "hier_fl":
        upload = client_term + model_size * to_cloud
        download = upload
    else:
        migration = 0
        if next_cluster is not None:
            migration = migration_hops(topology, edge, topology.edge_of(next_cluster), strict_edge_routing)
        upload = client_term + model_size * migration
        download = client_term
    return upload + download if include_downloads else upload


def fedavg_sample_load(
    topology: TopologyGraph,
    membership: Dict[int, int],
    participants: Sequence[int],
    model_size: int,
    include_downloads: bool = False,
) -> int:
    """FedAvg load when sampled clients come from several clusters."""
    total = 0
    for client in participants:
        edge = topology.edge_of(membership[client])
        total += model_size * (1 + hops(topology, edge, topology.cloud))
    return 2 * total if include_downloads else total


def compression_ratio(edgeflow_total: int, baseline_total: int) -> float:
    if baseline_total <= 0:
        raise ConfigurationError(f"baseline load must be positive, got {baseline_total}")
    return edgeflow_total / baseline_total


@dataclass
class LedgerEntry:
    t: int
    method: str
    params_hop_units: int
    uploads: int

    def to_dict(self) -> dict:
        return {"t": self.t, "method": self.method,
                "params_hop_units": self.params_hop_units, "uploads": self.uploads}


@dataclass
class CommLedger:
    """Append-only per-round communication ledger."""
    entries: List[LedgerEntry] = field(default_factory=list)

    def record(self, t: int, method: str, params_hop_units: int, uploads: int) -> LedgerEntry:
        if method not in LEDGER_METHODS:
            raise ConfigurationError(f"Unknown ledger method '{method}'. Choose from: {LEDGER_METHODS}")
        if params_hop_units < 0 or uploads < 0:
            raise ConfigurationError("ledger entries must be nonnegative")
        entry = LedgerEntry(t=t, method=method, params_hop_units=int(params_hop_units), uploads=int(uploads))
        self.entries.append(entry)
        return entry

    def extend(self, other: "CommLedger"):
        self.entries.extend(other.entries)

    def methods(self) -> List[str]:
        return [m for m in LEDGER_METHODS if any(e.method == m for e in self.entries)]

    def rounds(self, method: str) -> List[LedgerEntry]:
        return [e for e in self.entries if e.method == method]

    def total(self, method: Optional[str] = None) -> int:
        return sum(e.params_hop_units for e in self.entries if method is None or e.method == method)

    def ratio(self, method: str = "edgeflow", baseline: str = "fedavg") -> float:
        return compression_ratio(self.total(method), self.total(baseline))

    def to_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["t", "method", "params_hop_units", "uploads"])
            for e in self.entries:
                writer.writerow([e.t, e.method, e.params_hop_units, e.uploads])
        return path

    @classmethod
    def from_csv(cls, path: Path) -> "CommLedger":
        ledger = cls()
        with open(path, newline="", encoding="utf-8") as f:
            for row in csv.DictReader(f):
                ledger.record(int(row["t"]), row["method"], int(row["params_hop_units"]), int(row["uploads"]))
        return ledger


def account_schedule(
    method: str,
    topology: TopologyGraph,
    schedule: Sequence[int],
    cluster_sizes: Sequence[int],
    model_size: int,
    wrap: bool = False,
    include_downloads: bool = False,
    strict_edge_routing: bool = False,
    ledger: Optional[CommLedger] = None,
) -> CommLedger:
    """Ledger entries for a cluster schedule.

    The model migrates after every round except the last; with wrap=True the
    last round migrates back to schedule[0] (one full cycle).
    """
    ledger = ledger if ledger is not None else CommLedger()
    for t, cluster in enumerate(schedule):
        if t + 1 < len(schedule):
            nxt = schedule[t + 1]
        else:
            nxt = schedule[0] if wrap else None
        size = cluster_sizes[cluster]
        units = round_comm_load(method, topology, cluster, size, model_size, nxt,
                                include_downloads, strict_edge_routing)
        if method == "fedavg":
            uploads = size
        elif method == "hier_fl":
            uploads = size + 1
        else:
            uploads = size + (1 if nxt is not None and topology.edge_of(nxt) != topology.edge_of(cluster) else 0)
        ledger.record(t, method, units, uploads)
    return ledger


def compare_topologies(
    num_clusters: int = DEFAULT_NUM_CLUSTERS,
    cluster_size: int = 10,
    model_size: int = 1,
    kinds: Sequence[str] = tuple(BUILTIN_TOPOLOGIES),
    topology_params: Optional[Dict[str, dict]] = None,
    include_downloads: bool = False,
    log_callback=None,
) -> dict:
    """One fixed-sequence cycle over every cluster on each builtin topology."""
    topology_params = topology_params or {}
    schedule = list(range(num_clusters))
    sizes = [cluster_size] * num_clusters
    rows = []
    totals = {m: 0 for m in LEDGER_METHODS}
    for kind in kinds:
        topo = builtin_topology(kind, **topology_params.get(kind, {})).attach_clusters(num_clusters)
        loads = {}
        for method in LEDGER_METHODS:
            ledger = account_schedule(method, topo, schedule, sizes, model_size,
                                      wrap=True, include_downloads=include_downloads)
            loads[method] = ledger.total()
            totals[method] += loads[method]
        row = {
            "topology": kind,
            "fedavg": loads["fedavg"],
            "hier_fl": loads["hier_fl"],
            "edgeflow": loads["edgeflow"],
            "ratio_vs_fedavg": compression_ratio(loads["edgeflow"], loads["fedavg"]),
            "ratio_vs_hier_fl": compression_ratio(loads["edgeflow"], loads["hier_fl"]),
        }
        rows.append(row)
        if log_callback:
            log_callback(f"[topology] {kind}: edgeflow/fedavg = {row['ratio_vs_fedavg']:.4f}")

    overall = compression_ratio(totals["edgeflow"], totals["fedavg"])
    return {
        "rows": rows,
        "totals": totals,
        "overall_ratio": overall,
        "overall_reduction": float(1 - Fraction(totals["edgeflow"], totals["fedavg"])),
    }


def load_topology(path: Path) -> TopologyGraph:
    """Read a YAML topology file (nodes, links, edge_nodes, attachments)."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise TopologyError(f"cannot read topology file {path}: {e}") from e
    if not isinstance(data, dict):
        raise TopologyError(f"topology file {path} must hold a mapping")
    return TopologyGraph.from_dict(data)


def save_topology(topology: TopologyGraph, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(topology.to_dict(), f, sort_keys=False)
    return path
