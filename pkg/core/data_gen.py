"""
Synthetic Data and Client Partitioning
Class-conditional Gaussian datasets and the IID / x%-non-IID client splits
used by the federated experiments.
"""
import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))
from config import (
    DEFAULT_NUM_CLASSES, DEFAULT_INPUT_DIM, DEFAULT_SAMPLES_PER_CLASS,
    DEFAULT_CLASS_SEPARATION, DEFAULT_NOISE_STD, DEFAULT_NUM_CLIENTS,
)
from data.partition_presets import PARTITION_PRESETS

from core.errors import CapacityError, ConfigurationError
from core.model_core import Batch
from core.rng import stream

PARTITION_SETTINGS = ["iid", "x_pct_noniid"]


@dataclass(frozen=True)
class DatasetSpec:
    """Shape of a synthetic classification task."""
    num_classes: int = DEFAULT_NUM_CLASSES
    input_dim: int = DEFAULT_INPUT_DIM
    samples_per_class: int = DEFAULT_SAMPLES_PER_CLASS
    class_separation: float = DEFAULT_CLASS_SEPARATION
    noise_std: float = DEFAULT_NOISE_STD

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_dim < 1 or self.samples_per_class < 1:
            raise ConfigurationError("input_dim and samples_per_class must be positive")
        if self.class_separation <= 0:
            raise ConfigurationError(f"class_separation must be > 0, got {self.class_separation}")
        # noise_std == 0 is the exact zero-noise limit
        if self.noise_std < 0:
            raise ConfigurationError(f"noise_std must be >= 0, got {self.noise_std}")

    @property
    def total_samples(self) -> int:
        return self.num_classes * self.samples_per_class

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "input_dim": self.input_dim,
            "samples_per_class": self.samples_per_class,
            "class_separation": self.class_separation,
            "noise_std": self.noise_std,
        }


@dataclass(eq=False)
class Dataset:
    """Labeled feature matrix."""
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)

    def histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def as_batch(self) -> Batch:
        return Batch(self.features, self.labels)


@dataclass(eq=False)
class ClientShard:
    """One client's local dataset."""
    client_id: int
    features: np.ndarray
    labels: np.ndarray
    label_histogram: np.ndarray

    @property
    def size(self) -> int:
        return len(self.labels)

    def as_batch(self) -> Batch:
        return Batch(self.features, self.labels)

    def recomputed_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(self.label_histogram))


@dataclass(frozen=True)
class ClientGroup:
    """A run of `count` clients sharing one data setting."""
    count: int
    setting: str = "iid"
    x: float = 100.0
    num_major: int = 1

    def __post_init__(self):
        if self.count < 0:
            raise ConfigurationError(f"client count must be >= 0, got {self.count}")
        if self.setting not in PARTITION_SETTINGS:
            raise ConfigurationError(f"Unknown setting '{self.setting}'. Choose from: {PARTITION_SETTINGS}")
        if self.setting == "x_pct_noniid":
            if not 0 < self.x <= 100:
                raise ConfigurationError(f"x must lie in (0, 100], got {self.x}")
            if self.num_major not in (1, 2):
                raise ConfigurationError(f"num_major must be 1 or 2, got {self.num_major}")


@dataclass(frozen=True)
class PartitionConfig:
    """Named list of client groups."""
    name: str
    client_specs: Tuple[ClientGroup, ...]

    def __post_init__(self):
        object.__setattr__(self, "client_specs", tuple(self.client_specs))

    @property
    def num_clients(self) -> int:
        return sum(g.count for g in self.client_specs)

    @classmethod
    def from_preset(cls, name: str, num_clients: int = DEFAULT_NUM_CLIENTS) -> "PartitionConfig":
        """Build a preset, scaling its group counts from 100 clients to num_clients."""
        preset = PARTITION_PRESETS.get(name)
        if preset is None:
            raise ConfigurationError(f"Unknown partition '{name}'. Choose from: {list(PARTITION_PRESETS)}")
        base = sum(g["count"] for g in preset["groups"])
        scaled = [g["count"] * num_clients // base for g in preset["groups"]]
        # absorb rounding in the last group
        scaled[-1] += num_clients - sum(scaled)
        groups = tuple(
            ClientGroup(
                count=count,
                setting=g["setting"],
                x=g.get("x", 100.0),
                num_major=g.get("num_major", 1),
            )
            for g, count in zip(preset["groups"], scaled)
        )
        return cls(name=name, client_specs=groups)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "groups": [
                {"count": g.count, "setting": g.setting, "x": g.x, "num_major": g.num_major}
                for g in self.client_specs
            ],
        }


# ---- dataset generation ----

def class_centers(spec: DatasetSpec, seed: int) -> np.ndarray:
    """class_separation * u_c with unit directions u_c.

    Orthonormal directions when input_dim >= num_classes, otherwise random
    unit vectors.
    """
    rng = stream(seed, "centers")
    if spec.input_dim >= spec.num_classes:
        q, r = np.linalg.qr(rng.standard_normal((spec.input_dim, spec.input_dim)))
        q = q * np.sign(np.diag(r))
        directions = q[:, :spec.num_classes].T
    else:
        directions = rng.standard_normal((spec.num_classes, spec.input_dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return spec.class_separation * directions


def make_synthetic_dataset(
    spec: DatasetSpec,
    seed: int,
    split: str = "train",
    samples_per_class: Optional[int] = None,
) -> Dataset:
    """Gaussian blobs around the class centers, in class-major order.

    Centers depend only on (spec, seed); the samples come from a per-split
    stream, so "train" and "eval" splits describe the same task.
    """
    per_class = samples_per_class or spec.samples_per_class
    centers = class_centers(spec, seed)
    labels = np.repeat(np.arange(spec.num_classes, dtype=np.int64), per_class)
    rng = stream(seed, "samples", split)
    noise = rng.standard_normal((len(labels), spec.input_dim))
    features = centers[labels] + spec.noise_std * noise
    return Dataset(features=features, labels=labels, num_classes=spec.num_classes)


def pool_shards(shards: Sequence[ClientShard], num_classes: int) -> Dataset:
    """Concatenate shards in client order."""
    return Dataset(
        features=np.concatenate([s.features for s in shards]),
        labels=np.concatenate([s.labels for s in shards]),
        num_classes=num_classes,
    )


# ---- partitioning ----

def _shard_size(n: int, num_clients: int, log_callback: Optional[Callable]) -> int:
    if num_clients < 1:
        raise ConfigurationError(f"number of clients must be positive, got {num_clients}")
    if num_clients > n:
        raise ConfigurationError(f"{num_clients} clients exceed dataset size {n}")
    size = n // num_clients
    dropped = n - size * num_clients
    if dropped and log_callback:
        log_callback(f"[partition] dropping {dropped} remainder samples ({n} samples, {num_clients} clients)")
    return size


def _make_shard(dataset: Dataset, client_id: int, indices: np.ndarray, rng: np.random.Generator) -> ClientShard:
    indices = rng.permutation(indices)
    labels = dataset.labels[indices]
    return ClientShard(
        client_id=client_id,
        features=dataset.features[indices],
        labels=labels,
        label_histogram=np.bincount(labels, minlength=dataset.num_classes),
    )


def partition_iid(
    dataset: Dataset,
    num_clients: int,
    seed: int,
    log_callback: Optional[Callable] = None,
) -> List[ClientShard]:
    """Stratified round-robin IID split into equal shards.

    Remainder samples (chosen at random) are dropped; the kept samples are
    sorted by class and dealt to clients in turn, so per-class counts of any
    two shards differ by at most one.
    """
    size = _shard_size(len(dataset), num_clients, log_callback)
    rng = stream(seed, "partition", "iid")
    kept = rng.permutation(len(dataset))[:size * num_clients]
    # class-major, random order within each class
    dealt = kept[np.argsort(dataset.labels[kept], kind="stable")]
    return [
        _make_shard(dataset, n, dealt[n::num_clients], rng)
        for n in range(num_clients)
    ]


def _major_total(x: float, size: int) -> int:
    """floor(x% of size), in exact arithmetic."""
    return math.floor(Fraction(str(x)) * size / 100)


def _place_minors(
    needs: Dict[int, int],
    majors: Dict[int, List[int]],
    remaining: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Spread each client's minor samples over its non-major classes.

    Solved as a min-cost flow with random edge costs so the placement is
    random but never dead-ends when the class supplies are tight.
    Returns a (num_clients_with_needs, C) count matrix keyed in `needs` order.
    """
    num_classes = len(remaining)
    clients = list(needs)
    costs = {
        (n, c): int(rng.integers(0, 1_000_000))
        for n in clients for c in range(num_classes) if c not in majors[n]
    }
    demand = sum(needs.values())
    widen = 1
    while True:
        graph = nx.DiGraph()
        for n in clients:
            options = num_classes - len(majors[n])
            cap = min(needs[n], math.ceil(needs[n] / options) * widen)
            graph.add_edge("source", ("client", n), capacity=needs[n], weight=0)
            for c in range(num_classes):
                if c not in majors[n]:
                    graph.add_edge(("client", n), ("class", c), capacity=cap, weight=costs[(n, c)])
        for c in range(num_classes):
            graph.add_edge(("class", c), "sink", capacity=int(remaining[c]), weight=0)

        flow = nx.max_flow_min_cost(graph, "source", "sink")
        placed = sum(flow["source"].values())
        if placed == demand:
            out = np.zeros((len(clients), num_classes), dtype=np.int64)
            for i, n in enumerate(clients):
                for node, units in flow[("client", n)].items():
                    out[i, node[1]] = units
            return out
        if all(math.ceil(needs[n] / (num_classes - len(majors[n]))) * widen >= needs[n] for n in clients):
            starved = int(np.argmin(remaining))
            raise CapacityError(
                f"not enough samples outside the major classes to fill minor quotas "
                f"(class {starved} has {int(remaining[starved])} left)",
                label=starved,
            )
        widen *= 2


def _allocate_counts(
    groups: Sequence[ClientGroup],
    size: int,
    supply: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-client class counts honoring every group's setting."""
    num_classes = len(supply)
    num_clients = sum(g.count for g in groups)
    counts = np.zeros((num_clients, num_classes), dtype=np.int64)
    majors: Dict[int, List[int]] = {}
    needs: Dict[int, int] = {}

    client = 0
    iid_index = 0
    noniid_index = 0
    for group in groups:
        for _ in range(group.count):
            if group.setting == "iid":
                base, extra = divmod(size, num_classes)
                counts[client, :] = base
                for i in range(extra):
                    counts[client, (iid_index * extra + i) % num_classes] += 1
                iid_index += 1
            else:
                chosen = [noniid_index % num_classes]
                if group.num_major == 2:
                    chosen.append((noniid_index + 1) % num_classes)
                total = _major_total(group.x, size)
                per, rem = divmod(total, group.num_major)
                counts[client, chosen[0]] += per + rem
                if group.num_major == 2:
                    counts[client, chosen[1]] += per
                majors[client] = chosen
                if size - total > 0:
                    needs[client] = size - total
                noniid_index += 1
            client += 1

    used = counts.sum(axis=0)
    for c in range(num_classes):
        if used[c] > supply[c]:
            raise CapacityError(
                f"class {c} needs {int(used[c])} samples but only {int(supply[c])} exist",
                label=c,
            )
    if needs:
        minors = _place_minors(needs, majors, supply - used, rng)
        for i, n in enumerate(needs):
            counts[n] += minors[i]
    return counts


def _partition_by_counts(
    dataset: Dataset,
    groups: Sequence[ClientGroup],
    seed: int,
    tag: str,
    log_callback: Optional[Callable],
) -> List[ClientShard]:
    num_clients = sum(g.count for g in groups)
    size = _shard_size(len(dataset), num_clients, log_callback)
    rng = stream(seed, "partition", tag)
    supply = dataset.histogram()
    counts = _allocate_counts(groups, size, supply, rng)

    pools = [rng.permutation(np.flatnonzero(dataset.labels == c)) for c in range(dataset.num_classes)]
    cursor = np.zeros(dataset.num_classes, dtype=np.int64)
    shards = []
    for n in range(num_clients):
        parts = []
        for c in range(dataset.num_classes):
            take = int(counts[n, c])
            parts.append(pools[c][cursor[c]:cursor[c] + take])
            cursor[c] += take
        shards.append(_make_shard(dataset, n, np.concatenate(parts), rng))
    return shards


def partition_x_pct_noniid(
    dataset: Dataset,
    num_clients: int,
    x: float,
    num_major: int,
    seed: int,
    log_callback: Optional[Callable] = None,
) -> List[ClientShard]:
    """Every client takes x% of its samples from 1 or 2 major classes.

    Majors are assigned round-robin over clients; the remaining (100-x)% come
    from the other classes.
    """
    group = ClientGroup(count=num_clients, setting="x_pct_noniid", x=x, num_major=num_major)
    return _partition_by_counts(dataset, [group], seed, "noniid", log_callback)


def build_partition(
    config: PartitionConfig,
    dataset: Dataset,
    seed: int,
    log_callback: Optional[Callable] = None,
) -> List[ClientShard]:
    """Shards for a named configuration, client ids assigned group by group."""
    if config.num_clients < 1:
        raise ConfigurationError(f"partition '{config.name}' has no clients")
    if all(g.setting == "iid" for g in config.client_specs):
        return partition_iid(dataset, config.num_clients, seed, log_callback)
    return _partition_by_counts(dataset, config.client_specs, seed, config.name, log_callback)


def export_shards_csv(shards: Sequence[ClientShard], path: Path) -> Path:
    """Write shards as CSV rows: client_id, label, x0..x{d-1}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dim = shards[0].features.shape[1] if shards else 0
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["client_id", "label", *[f"x{i}" for i in range(dim)]])
        for shard in shards:
            for row, label in zip(shard.features, shard.labels):
                writer.writerow([shard.client_id, int(label), *[repr(float(v)) for v in row]])
    return path
