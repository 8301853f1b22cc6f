"""
Federated Engine
EdgeFLow (one cluster trains per round, its base station aggregates and the
model migrates to the next cluster) and the FedAvg baseline.
"""
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))
from config import (
    DEFAULT_LEARNING_RATE, DEFAULT_LOCAL_STEPS, DEFAULT_ROUNDS, DEFAULT_BATCH_SIZE,
    DEFAULT_SEED, SCHEDULE_POLICIES, CLUSTER_ASSIGNMENTS, LOCAL_MODES,
)

from core.data_gen import ClientShard, Dataset, pool_shards
from core.errors import ConfigurationError, NumericError, ProtocolError, SamplingError
from core.model_core import (
    Batch, ModelSpec, ParamVector, PooledObjective,
    init_params, loss_and_gradient, logits, save_param_vector, ensure_finite,
)
from core.rng import stream


@dataclass(frozen=True)
class HyperParams:
    """SGD and protocol hyperparameters."""
    eta: float = DEFAULT_LEARNING_RATE
    K: int = DEFAULT_LOCAL_STEPS
    T: int = DEFAULT_ROUNDS
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int = DEFAULT_SEED
    local_mode: str = "steps"

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigurationError(f"eta must be > 0, got {self.eta}")
        if self.K < 1:
            raise ConfigurationError(f"K must be >= 1, got {self.K}")
        if self.T < 0:
            raise ConfigurationError(f"T must be >= 0, got {self.T}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.local_mode not in LOCAL_MODES:
            raise ConfigurationError(f"Unknown local_mode '{self.local_mode}'. Choose from: {LOCAL_MODES}")

    def lk_eta_ok(self, smoothness: float) -> bool:
        """Convergence-bound precondition L*K*eta < 1."""
        return smoothness * self.K * self.eta < 1

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "K": self.K,
            "T": self.T,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "local_mode": self.local_mode,
        }


@dataclass
class ClusterPlan:
    """Fixed client-to-cluster membership plus the selection policy."""
    M: int
    membership: Dict[int, int]
    policy: str = "fixed_sequence"
    order: Tuple[int, ...] = ()
    start: int = 0
    sequence: List[int] = field(default_factory=list)

    def __post_init__(self):
        if self.M < 1:
            raise ConfigurationError(f"M must be >= 1, got {self.M}")
        if self.policy not in SCHEDULE_POLICIES:
            raise ConfigurationError(f"Unknown policy '{self.policy}'. Choose from: {SCHEDULE_POLICIES}")
        self.order = tuple(self.order) if self.order else tuple(range(self.M))
        if any(not 0 <= m < self.M for m in self.order):
            raise ConfigurationError(f"sequence order {list(self.order)} references clusters outside [0, {self.M})")
        if set(self.membership.values()) != set(range(self.M)):
            raise ConfigurationError("every cluster needs at least one member")
        self._members = {m: [] for m in range(self.M)}
        for client in sorted(self.membership):
            self._members[self.membership[client]].append(client)

    def members(self, cluster_id: int) -> List[int]:
        """Sorted client ids of a cluster."""
        if cluster_id not in self._members:
            raise ProtocolError(f"cluster {cluster_id} does not exist")
        return list(self._members[cluster_id])

    @property
    def cluster_sizes(self) -> List[int]:
        return [len(self._members[m]) for m in range(self.M)]

    @property
    def num_clients(self) -> int:
        return len(self.membership)

    def reset(self):
        self.sequence = []


def make_cluster_plan(
    num_clients: int,
    M: int,
    policy: str = "fixed_sequence",
    assignment: str = "contiguous",
    order: Optional[Sequence[int]] = None,
    start: int = 0,
) -> ClusterPlan:
    """Equal-size clusters.

    contiguous: cluster m holds clients m*N_m .. (m+1)*N_m - 1
    interleaved: client n belongs to cluster n mod M
    """
    if M < 1 or num_clients % M:
        raise ConfigurationError(f"N={num_clients} clients cannot form M={M} equal clusters")
    if assignment not in CLUSTER_ASSIGNMENTS:
        raise ConfigurationError(f"Unknown assignment '{assignment}'. Choose from: {CLUSTER_ASSIGNMENTS}")
    size = num_clients // M
    if assignment == "contiguous":
        membership = {n: n // size for n in range(num_clients)}
    else:
        membership = {n: n % M for n in range(num_clients)}
    return ClusterPlan(M=M, membership=membership, policy=policy, order=tuple(order or ()), start=start)


def next_cluster(plan: ClusterPlan, t: int, rng: Optional[np.random.Generator] = None) -> int:
    """m(t): cyclic over plan.order, or uniform from the seeded stream."""
    if plan.policy == "fixed_sequence":
        m = plan.order[(plan.start + t) % len(plan.order)]
    else:
        if rng is None:
            raise ProtocolError("random cluster selection needs a generator")
        m = int(rng.integers(0, plan.M))
    if len(plan.sequence) == t:
        plan.sequence.append(m)
    elif len(plan.sequence) > t:
        plan.sequence[t] = m
    return m


@dataclass
class LocalUpdate:
    """Result of one client's local training in one round."""
    client_id: int
    final: ParamVector
    grad_sum: ParamVector
    drift: np.ndarray
    grad_norm_sq_max: float
    steps: int


@dataclass
class RoundRecord:
    """Per-round metrics."""
    t: int
    cluster_id: int
    participants: List[int]
    global_loss: float
    eval_loss: float
    eval_accuracy: float
    global_grad_norm_sq: float
    per_client_grad_norm_sq_max: float
    drift_trajectory: List[float]
    wall_params_uploaded: int

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "cluster_id": self.cluster_id,
            "participants": list(self.participants),
            "global_loss": self.global_loss,
            "eval_loss": self.eval_loss,
            "eval_accuracy": self.eval_accuracy,
            "global_grad_norm_sq": self.global_grad_norm_sq,
            "per_client_grad_norm_sq_max": self.per_client_grad_norm_sq_max,
            "drift_trajectory": list(self.drift_trajectory),
            "wall_params_uploaded": self.wall_params_uploaded,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RoundRecord":
        return cls(**data)


@dataclass
class RunResult:
    """Round records and parameters of one training run."""
    method: str
    records: List[RoundRecord]
    initial_params: ParamVector
    final_params: ParamVector
    trajectory: List[ParamVector] = field(default_factory=list)

    @property
    def schedule(self) -> List[int]:
        return [r.cluster_id for r in self.records]

    @property
    def final_accuracy(self) -> float:
        return self.records[-1].eval_accuracy if self.records else float("nan")


# ---- pure operations ----

def _batch_indices(shard: ClientShard, hp: HyperParams, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Mini-batch index sets for one client-round.

    steps mode: K batches, without replacement inside a batch, with
    replacement across batches. epochs mode: K shuffled passes.
    """
    if shard.size < hp.batch_size:
        raise SamplingError(
            f"client {shard.client_id} holds {shard.size} samples, fewer than batch size {hp.batch_size}"
        )
    if hp.local_mode == "steps":
        for _ in range(hp.K):
            yield rng.choice(shard.size, size=hp.batch_size, replace=False)
    else:
        for _ in range(hp.K):
            order = rng.permutation(shard.size)
            for lo in range(0, shard.size, hp.batch_size):
                yield order[lo:lo + hp.batch_size]


def local_train(
    spec: ModelSpec,
    start: ParamVector,
    shard: ClientShard,
    hp: HyperParams,
    t: int,
    client: int,
) -> LocalUpdate:
    """Local SGD from the round's global model.

    theta_{k+1} = theta_k - eta * g_k, one fresh mini-batch per step drawn
    from the (seed, t, client) stream. drift[k] = ||start - theta_k||^2.
    """
    rng = stream(hp.seed, "batch", t, client)
    theta = start.copy()
    grad_sum = np.zeros_like(start)
    drift = [0.0]
    grad_norm_sq_max = 0.0
    steps = 0
    for idx in _batch_indices(shard, hp, rng):
        batch = Batch(shard.features[idx], shard.labels[idx])
        try:
            _, g = loss_and_gradient(spec, theta, batch)
        except NumericError as e:
            raise NumericError(str(e), layer=e.layer, round=t, client=client) from e
        grad_sum = grad_sum + g
        theta = theta - hp.eta * g
        grad_norm_sq_max = max(grad_norm_sq_max, float(g @ g))
        diff = start - theta
        drift.append(float(diff @ diff))
        steps += 1
    ensure_finite(theta, "local model", round=t, client=client)
    return LocalUpdate(
        client_id=client,
        final=theta,
        grad_sum=grad_sum,
        drift=np.asarray(drift),
        grad_norm_sq_max=grad_norm_sq_max,
        steps=steps,
    )


def aggregate_cluster(global_params: ParamVector, grad_sums: Sequence[ParamVector], eta: float) -> ParamVector:
    """theta^{t+1} = theta^t - (eta / N_m) * sum_n grad_sum_n."""
    if len(grad_sums) == 0:
        raise ProtocolError("cannot aggregate an empty cluster")
    for g in grad_sums:
        if g.shape != global_params.shape:
            raise ConfigurationError(f"update shape {g.shape} does not match model {global_params.shape}")
    total = np.sum(np.stack(grad_sums), axis=0)
    return global_params - (eta / len(grad_sums)) * total


def average_models(models: Sequence[ParamVector]) -> ParamVector:
    """Plain model averaging, equal to aggregate_cluster when all clients share a start."""
    if len(models) == 0:
        raise ProtocolError("cannot average an empty cluster")
    return np.mean(np.stack(models), axis=0)


def evaluate(spec: ModelSpec, params: ParamVector, eval_set: Dataset) -> Tuple[float, float]:
    """Mean cross-entropy and top-1 accuracy (ties go to the first index)."""
    if len(eval_set) == 0:
        raise ConfigurationError("evaluation set is empty")
    out = logits(spec, params, eval_set.features)
    shifted = out - out.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(len(eval_set))
    loss = max(-float(np.mean(logp[rows, eval_set.labels])), 0.0) + 0.0
    accuracy = float(np.mean(np.argmax(out, axis=1) == eval_set.labels))
    return loss, accuracy


# ---- run loops ----

class FederatedRunner:
    """Runs EdgeFLow or FedAvg over a fixed set of client shards."""

    def __init__(
        self,
        spec: ModelSpec,
        shards: Sequence[ClientShard],
        hp: HyperParams,
        eval_set: Optional[Dataset] = None,
        workers: int = 1,
        log_callback: Optional[Callable] = None,
        progress_callback: Optional[Callable] = None,
        checkpoint_dir: Optional[Path] = None,
        checkpoint_every: int = 0,
        track_global_gradient: bool = True,
        keep_trajectory: bool = False,
    ):
        self.spec = spec
        self.shards = {s.client_id: s for s in shards}
        if len(self.shards) != len(shards):
            raise ConfigurationError("client ids must be unique")
        self.hp = hp
        self.workers = max(1, workers)
        self._log_callback = log_callback
        self._progress_callback = progress_callback
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.checkpoint_every = checkpoint_every
        self.track_global_gradient = track_global_gradient
        self.keep_trajectory = keep_trajectory

        ordered = [self.shards[n] for n in sorted(self.shards)]
        pooled = pool_shards(ordered, spec.num_classes)
        self.objective = PooledObjective(spec, pooled.features, pooled.labels)
        self.eval_set = eval_set if eval_set is not None else pooled

    def initial_params(self) -> ParamVector:
        return init_params(self.spec, stream(self.hp.seed, "init"))

    def run_edgeflow(self, plan: ClusterPlan, method: str = "edgeflow") -> RunResult:
        missing = set(plan.membership) ^ set(self.shards)
        if missing:
            raise ConfigurationError(f"plan and shards disagree on clients {sorted(missing)[:5]}")
        plan.reset()
        schedule_rng = stream(self.hp.seed, "schedule")

        def select(t: int) -> Tuple[int, List[int]]:
            m = next_cluster(plan, t, schedule_rng)
            return m, plan.members(m)

        return self._run(method, select)

    def run_fedavg(self, sample_size: int, method: str = "fedavg") -> RunResult:
        clients = sorted(self.shards)
        if not 1 <= sample_size <= len(clients):
            raise ConfigurationError(f"sample size {sample_size} must lie in [1, {len(clients)}]")

        def select(t: int) -> Tuple[int, List[int]]:
            rng = stream(self.hp.seed, "fedavg-sample", t)
            picked = rng.choice(len(clients), size=sample_size, replace=False)
            return -1, sorted(clients[i] for i in picked)

        return self._run(method, select)

    def _run(self, method: str, select: Callable[[int], Tuple[int, List[int]]]) -> RunResult:
        hp = self.hp
        params = self.initial_params()
        initial = params.copy()
        records: List[RoundRecord] = []
        trajectory = [initial.copy()] if self.keep_trajectory else []

        for t in range(hp.T):
            cluster_id, members = select(t)
            grad_norm_sq = float("nan")
            if self.track_global_gradient:
                g = self.objective.grad(params)
                grad_norm_sq = float(g @ g)

            updates = self._train_clients(params, members, t)
            new_params = aggregate_cluster(params, [u.grad_sum for u in updates], hp.eta)
            ensure_finite(new_params, "global model", round=t)

            steps = min(len(u.drift) for u in updates)
            drift = np.mean(np.stack([u.drift[:steps] for u in updates]), axis=0)
            global_loss = self.objective.loss(new_params)
            eval_loss, eval_acc = evaluate(self.spec, new_params, self.eval_set)

            records.append(RoundRecord(
                t=t,
                cluster_id=cluster_id,
                participants=list(members),
                global_loss=global_loss,
                eval_loss=eval_loss,
                eval_accuracy=eval_acc,
                global_grad_norm_sq=grad_norm_sq,
                per_client_grad_norm_sq_max=max(u.grad_norm_sq_max for u in updates),
                drift_trajectory=[float(d) for d in drift],
                wall_params_uploaded=len(members) * self.spec.param_count,
            ))
            params = new_params
            if self.keep_trajectory:
                trajectory.append(params.copy())
            self._maybe_checkpoint(method, t, params)

            if self._progress_callback:
                label = f"cluster {cluster_id}" if cluster_id >= 0 else f"{len(members)} sampled"
                self._progress_callback(t + 1, hp.T, f"{method} round {t + 1}/{hp.T} ({label}) acc {eval_acc:.4f}")

        if self._log_callback:
            final_acc = records[-1].eval_accuracy if records else float("nan")
            self._log_callback(f"[{method}] finished {hp.T} rounds, final accuracy {final_acc:.4f}")
        return RunResult(method=method, records=records, initial_params=initial,
                         final_params=params, trajectory=trajectory)

    def _train_clients(self, params: ParamVector, members: Sequence[int], t: int) -> List[LocalUpdate]:
        """Train a round's clients; results in client-id order whatever the schedule."""
        if not members:
            raise ProtocolError(f"round {t} selected an empty cluster")
        if self.workers == 1 or len(members) == 1:
            return [local_train(self.spec, params, self.shards[n], self.hp, t, n) for n in members]

        results: Dict[int, LocalUpdate] = {}
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            futures = {
                executor.submit(local_train, self.spec, params, self.shards[n], self.hp, t, n): n
                for n in members
            }
            for future in as_completed(futures):
                update = future.result()
                results[update.client_id] = update
        return [results[n] for n in sorted(results)]

    def _maybe_checkpoint(self, method: str, t: int, params: ParamVector):
        if not self.checkpoint_dir or self.checkpoint_every <= 0:
            return
        if (t + 1) % self.checkpoint_every == 0:
            path = save_param_vector(self.checkpoint_dir / f"{method}_round{t + 1:05d}.bin", params)
            if self._log_callback:
                self._log_callback(f"[{method}] checkpoint {path.name}")


def run_edgeflow(
    spec: ModelSpec,
    shards: Sequence[ClientShard],
    plan: ClusterPlan,
    hp: HyperParams,
    eval_set: Optional[Dataset] = None,
    **runner_options,
) -> RunResult:
    """T rounds of cluster training, aggregation and migration."""
    runner = FederatedRunner(spec, shards, hp, eval_set, **runner_options)
    return runner.run_edgeflow(plan)


def run_fedavg(
    spec: ModelSpec,
    shards: Sequence[ClientShard],
    sample_size: int,
    hp: HyperParams,
    eval_set: Optional[Dataset] = None,
    **runner_options,
) -> RunResult:
    """FedAvg: sample_size clients drawn without replacement every round."""
    runner = FederatedRunner(spec, shards, hp, eval_set, **runner_options)
    return runner.run_fedavg(sample_size)
