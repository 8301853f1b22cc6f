"""
Theory Bounds
Empirical smoothness / gradient / heterogeneity constants, the convergence
bound and its IID form, and the local drift check.

Norms in the assumptions are read as squared Euclidean norms throughout.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))
from config import (
    DEFAULT_SMOOTHNESS_DIRECTIONS, DEFAULT_SMOOTHNESS_RADIUS, DEFAULT_GRADIENT_POINTS,
    DEFAULT_BATCHES_PER_POINT, DEFAULT_F_STAR_STEPS, DEFAULT_F_STAR_LR, DEFAULT_BATCH_SIZE,
)

from core.data_gen import ClientShard, Dataset, pool_shards
from core.errors import ConfigurationError, ProtocolError, SamplingError
from core.fed_engine import ClusterPlan, HyperParams, RoundRecord, RunResult
from core.model_core import (
    Batch, ModelSpec, Objective, ParamVector, PooledObjective, gradient, init_params,
)
from core.rng import stream

NORM_INTERPRETATION = "norms in the smoothness/variance/heterogeneity assumptions read as squared Euclidean norms"
MIN_DIRECTION_NORM = 1e-12
DRIFT_RTOL = 1e-9


@dataclass
class BoundConstants:
    """Constants feeding the convergence bound."""
    L: float
    G_sq: float
    sigma_sq: float
    lambda_sq: List[float]
    F0: float
    F_star: float
    eta: float
    K: int
    T: int
    N_m: Union[int, List[int]] = 10

    def __post_init__(self):
        self.lambda_sq = [float(v) for v in np.atleast_1d(self.lambda_sq)]
        if not self.lambda_sq:
            raise ConfigurationError("lambda_sq needs one entry per cluster")
        if np.isscalar(self.N_m):
            self.N_m = [int(self.N_m)] * len(self.lambda_sq)
        else:
            self.N_m = [int(n) for n in self.N_m]
        if len(self.N_m) != len(self.lambda_sq):
            raise ConfigurationError(
                f"N_m has {len(self.N_m)} entries but lambda_sq has {len(self.lambda_sq)}"
            )
        if any(n < 1 for n in self.N_m):
            raise ConfigurationError("cluster sizes must be >= 1")
        for name in ("L", "G_sq", "sigma_sq"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if any(v < 0 for v in self.lambda_sq):
            raise ConfigurationError("lambda_sq entries must be >= 0")
        if self.F0 < self.F_star:
            raise ConfigurationError(f"F0={self.F0} is below F_star={self.F_star}")

    @property
    def M(self) -> int:
        return len(self.lambda_sq)

    @property
    def lk_eta(self) -> float:
        return self.L * self.K * self.eta

    @property
    def valid(self) -> bool:
        return self.lk_eta < 1

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "G_sq": self.G_sq,
            "sigma_sq": self.sigma_sq,
            "lambda_sq": list(self.lambda_sq),
            "F0": self.F0,
            "F_star": self.F_star,
            "eta": self.eta,
            "K": self.K,
            "T": self.T,
            "N_m": list(self.N_m),
            "lk_eta": self.lk_eta,
            "valid": self.valid,
        }


@dataclass
class BoundBreakdown:
    term_init: float
    term_hetero: float
    term_variance: float
    term_drift: float
    total: float
    lk_eta: float = 0.0
    valid: bool = True

    def to_dict(self) -> dict:
        return {
            "term_init": self.term_init,
            "term_hetero": self.term_hetero,
            "term_variance": self.term_variance,
            "term_drift": self.term_drift,
            "total": self.total,
            "lk_eta": self.lk_eta,
            "valid": self.valid,
        }


@dataclass
class DriftCheckReport:
    violations: List[dict] = field(default_factory=list)
    max_ratio: float = 0.0
    checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"violations": list(self.violations), "max_ratio": self.max_ratio,
                "checked": self.checked, "ok": self.ok}


@dataclass
class BoundComparison:
    empirical_avg_grad_norm_sq: float
    bound_total: float
    slack: float
    valid: bool
    breakdown: BoundBreakdown

    @property
    def holds(self) -> bool:
        return self.slack >= 0

    def to_dict(self) -> dict:
        return {
            "empirical_avg_grad_norm_sq": self.empirical_avg_grad_norm_sq,
            "bound_total": self.bound_total,
            "slack": self.slack,
            "valid": self.valid,
            "holds": self.holds,
            "breakdown": self.breakdown.to_dict(),
        }


# ---- constant estimators ----

def estimate_smoothness_objective(
    objective: Objective,
    num_directions: int = DEFAULT_SMOOTHNESS_DIRECTIONS,
    radius: float = DEFAULT_SMOOTHNESS_RADIUS,
    seed: int = 0,
) -> float:
    """max ||grad(a) - grad(a + d)|| / ||d|| over random directions d with ||d|| <= radius.

    A lower bound on the true smoothness constant.
    """
    if num_directions < 1:
        raise ConfigurationError(f"num_directions must be >= 1, got {num_directions}")
    if not radius > 0:
        raise ConfigurationError(f"radius must be > 0, got {radius}")
    rng = stream(seed, "smoothness")
    best = 0.0
    for _ in range(num_directions):
        theta = objective.sample_point(rng)
        direction = rng.standard_normal(theta.shape[0])
        magnitude = radius * (1.0 - rng.random())
        norm = np.linalg.norm(direction)
        if norm == 0:
            continue
        delta = direction * (magnitude / norm)
        delta_norm = np.linalg.norm(delta)
        if delta_norm < MIN_DIRECTION_NORM:
            continue
        diff = objective.grad(theta) - objective.grad(theta + delta)
        best = max(best, float(np.linalg.norm(diff) / delta_norm))
    return best


def estimate_smoothness(
    spec: ModelSpec,
    dataset: Dataset,
    num_directions: int = DEFAULT_SMOOTHNESS_DIRECTIONS,
    radius: float = DEFAULT_SMOOTHNESS_RADIUS,
    seed: int = 0,
) -> float:
    """Full-dataset smoothness estimate for a model."""
    objective = PooledObjective(spec, dataset.features, dataset.labels)
    return estimate_smoothness_objective(objective, num_directions, radius, seed)


def _sweep_batches(size: int, batch_size: int, count: int, rng: np.random.Generator) -> List[np.ndarray]:
    """`count` batches from successive shuffled passes, indices sorted per batch."""
    if batch_size > size:
        raise SamplingError(f"shard of {size} samples cannot fill a batch of {batch_size}")
    batches = []
    order = rng.permutation(size)
    pos = 0
    while len(batches) < count:
        if pos + batch_size > size:
            order = rng.permutation(size)
            pos = 0
        batches.append(np.sort(order[pos:pos + batch_size]))
        pos += batch_size
    return batches


def estimate_gradient_bounds(
    spec: ModelSpec,
    shards: Sequence[ClientShard],
    sample_points: Union[int, Sequence[ParamVector]] = DEFAULT_GRADIENT_POINTS,
    batches_per_point: int = DEFAULT_BATCHES_PER_POINT,
    seed: int = 0,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> Tuple[float, float]:
    """(G_sq_hat, sigma_sq_hat) as maxima over sampled (client, point) pairs.

    sample_points is either a count of random parameter vectors or explicit
    vectors (e.g. checkpoints of a run).
    """
    if batches_per_point < 2:
        raise ConfigurationError(f"batches_per_point must be >= 2, got {batches_per_point}")
    if isinstance(sample_points, (int, np.integer)):
        points = [init_params(spec, stream(seed, "gradient-point", p)) for p in range(int(sample_points))]
    else:
        points = [np.asarray(p, dtype=np.float64) for p in sample_points]

    g_sq_max = 0.0
    sigma_sq_max = 0.0
    for p, theta in enumerate(points):
        for shard in sorted(shards, key=lambda s: s.client_id):
            rng = stream(seed, "gradient-batches", p, shard.client_id)
            grads = np.stack([
                gradient(spec, theta, Batch(shard.features[idx], shard.labels[idx]))
                for idx in _sweep_batches(shard.size, batch_size, batches_per_point, rng)
            ])
            g_sq_max = max(g_sq_max, float(np.max(np.sum(grads * grads, axis=1))))
            centered = grads - grads.mean(axis=0)
            sigma_sq_max = max(sigma_sq_max, float(np.mean(np.sum(centered * centered, axis=1))))
    return g_sq_max, sigma_sq_max


def estimate_heterogeneity(
    spec: ModelSpec,
    params: Union[ParamVector, Sequence[ParamVector]],
    shards: Sequence[ClientShard],
    plan: ClusterPlan,
) -> List[float]:
    """Per-cluster ||grad F - grad F_m||^2, max over the supplied points.

    F averages all client objectives, F_m the objectives of cluster m.
    """
    by_id = {s.client_id: s for s in shards}
    points = [params] if np.ndim(params) == 1 else list(params)
    result = [0.0] * plan.M
    for theta in points:
        if not np.all(np.isfinite(theta)):
            raise ConfigurationError("heterogeneity point is not finite")
        client_grads = {n: gradient(spec, theta, by_id[n].as_batch()) for n in sorted(by_id)}
        global_grad = np.mean(np.stack([client_grads[n] for n in sorted(client_grads)]), axis=0)
        for m in range(plan.M):
            members = plan.members(m)
            if not members:
                raise ProtocolError(f"cluster {m} is empty")
            cluster_grad = np.mean(np.stack([client_grads[n] for n in members]), axis=0)
            diff = global_grad - cluster_grad
            result[m] = max(result[m], float(diff @ diff))
    return result


def estimate_f_star(
    spec: ModelSpec,
    dataset: Dataset,
    steps: int = DEFAULT_F_STAR_STEPS,
    eta: float = DEFAULT_F_STAR_LR,
    seed: int = 0,
    start: Optional[ParamVector] = None,
) -> float:
    """Lowest pooled loss seen along full-batch gradient descent (optimum proxy)."""
    objective = PooledObjective(spec, dataset.features, dataset.labels)
    theta = start.copy() if start is not None else init_params(spec, stream(seed, "f-star"))
    best = float("inf")
    for _ in range(steps):
        loss, g = objective.loss_and_grad(theta)
        best = min(best, loss)
        theta = theta - eta * g
    return min(best, objective.loss(theta))


# ---- bounds ----

def _check_horizon(c: BoundConstants):
    if c.T < 1:
        raise ConfigurationError(f"T must be >= 1, got {c.T}")
    if not c.eta > 0:
        raise ConfigurationError(f"eta must be > 0, got {c.eta}")
    if c.K < 1:
        raise ConfigurationError(f"K must be >= 1, got {c.K}")


def _resolve_schedule(c: BoundConstants, schedule: Optional[Sequence[int]]) -> List[int]:
    if schedule is None:
        return [t % c.M for t in range(c.T)]
    schedule = list(schedule)
    if len(schedule) != c.T:
        raise ConfigurationError(f"schedule has {len(schedule)} rounds, constants say T={c.T}")
    for m in schedule:
        if not 0 <= m < c.M:
            raise ConfigurationError(f"schedule references cluster {m}, constants cover {c.M}")
    return schedule


def theorem1_bound(
    c: BoundConstants,
    schedule: Optional[Sequence[int]] = None,
    log_callback: Optional[Callable] = None,
) -> BoundBreakdown:
    """Bound on (1/T) sum_t ||grad F(theta^t)||^2.

    4(F0 - F*)/(K eta T) + (2/T) sum_t lambda^2_m(t)
      + (2/T) sum_t L eta sigma^2 / N_m(t) + 4 L^2 K^2 eta^2 G^2 / 3
    """
    _check_horizon(c)
    schedule = _resolve_schedule(c, schedule)
    if not c.valid and log_callback:
        log_callback(f"[bounds] L*K*eta = {c.lk_eta:.4f} >= 1, bound reported but flagged invalid")

    term_init = 4.0 * (c.F0 - c.F_star) / (c.K * c.eta * c.T)
    term_hetero = 2.0 / c.T * sum(c.lambda_sq[m] for m in schedule)
    term_variance = 2.0 / c.T * sum(c.L * c.eta * c.sigma_sq / c.N_m[m] for m in schedule)
    term_drift = 4.0 * c.L ** 2 * c.K ** 2 * c.eta ** 2 * c.G_sq / 3.0
    return BoundBreakdown(
        term_init=term_init,
        term_hetero=term_hetero,
        term_variance=term_variance,
        term_drift=term_drift,
        total=term_init + term_hetero + term_variance + term_drift,
        lk_eta=c.lk_eta,
        valid=c.valid,
    )


def iid_bound(
    c: BoundConstants,
    schedule: Optional[Sequence[int]] = None,
    with_constants: bool = True,
) -> BoundBreakdown:
    """IID form: heterogeneity is zero.

    with_constants keeps the full bound's factors; otherwise the bare order
    expression (F0 - F*)/(K eta T) + L eta sigma^2 / N_m + L^2 K^2 eta^2 G^2.
    """
    _check_horizon(c)
    schedule = _resolve_schedule(c, schedule)
    if with_constants:
        full = theorem1_bound(c, schedule)
        return BoundBreakdown(
            term_init=full.term_init,
            term_hetero=0.0,
            term_variance=full.term_variance,
            term_drift=full.term_drift,
            total=full.term_init + full.term_variance + full.term_drift,
            lk_eta=c.lk_eta,
            valid=c.valid,
        )
    term_init = (c.F0 - c.F_star) / (c.K * c.eta * c.T)
    term_variance = sum(c.L * c.eta * c.sigma_sq / c.N_m[m] for m in schedule) / c.T
    term_drift = c.L ** 2 * c.K ** 2 * c.eta ** 2 * c.G_sq
    return BoundBreakdown(
        term_init=term_init,
        term_hetero=0.0,
        term_variance=term_variance,
        term_drift=term_drift,
        total=term_init + term_variance + term_drift,
        lk_eta=c.lk_eta,
        valid=c.valid,
    )


def check_lemma3(
    drift_trajectories: Sequence[Union[RoundRecord, Sequence[float]]],
    eta: float,
    G_sq_hat: float,
    rtol: float = DRIFT_RTOL,
) -> DriftCheckReport:
    """Check mean drift at step k <= k^2 eta^2 G^2 for every round and step.

    Violations are reported, never raised.
    """
    report = DriftCheckReport()
    for t, item in enumerate(drift_trajectories):
        if isinstance(item, RoundRecord):
            t, trajectory = item.t, item.drift_trajectory
        else:
            trajectory = item
        for k, drift in enumerate(trajectory):
            bound = k * k * eta * eta * G_sq_hat
            report.checked += 1
            if bound > 0:
                ratio = drift / bound
            else:
                ratio = 0.0 if drift == 0 else float("inf")
            report.max_ratio = max(report.max_ratio, ratio)
            if drift > bound * (1 + rtol):
                report.violations.append({"t": t, "k": k, "drift": drift, "bound": bound})
    return report


def bound_vs_empirical(
    records: Sequence[RoundRecord],
    c: BoundConstants,
    log_callback: Optional[Callable] = None,
) -> BoundComparison:
    """Compare the time-averaged squared global gradient norm with the bound."""
    if not records:
        raise ConfigurationError("no rounds to compare")
    if len(records) != c.T:
        raise ConfigurationError(f"run has {len(records)} rounds, constants say T={c.T}")
    schedule = [r.cluster_id for r in records]
    if any(m < 0 for m in schedule):
        raise ProtocolError("bound comparison needs a cluster schedule (EdgeFLow run)")
    norms = np.array([r.global_grad_norm_sq for r in records], dtype=np.float64)
    if not np.all(np.isfinite(norms)):
        raise ConfigurationError("run did not track global gradient norms")

    breakdown = theorem1_bound(c, schedule, log_callback)
    empirical = float(np.mean(norms))
    return BoundComparison(
        empirical_avg_grad_norm_sq=empirical,
        bound_total=breakdown.total,
        slack=breakdown.total - empirical,
        valid=breakdown.valid,
        breakdown=breakdown,
    )


def estimate_run_constants(
    spec: ModelSpec,
    shards: Sequence[ClientShard],
    plan: ClusterPlan,
    hp: HyperParams,
    result: RunResult,
    num_directions: int = DEFAULT_SMOOTHNESS_DIRECTIONS,
    radius: float = DEFAULT_SMOOTHNESS_RADIUS,
    batches_per_point: int = DEFAULT_BATCHES_PER_POINT,
    f_star_steps: int = DEFAULT_F_STAR_STEPS,
    f_star_lr: float = DEFAULT_F_STAR_LR,
    log_callback: Optional[Callable] = None,
) -> BoundConstants:
    """Assemble bound constants from a finished run.

    G_sq covers the run's own observed gradients, so the drift check holds
    by construction. Heterogeneity and variance are evaluated at the initial
    and final models plus any kept trajectory points.
    """
    ordered = sorted(shards, key=lambda s: s.client_id)
    pooled = pool_shards(ordered, spec.num_classes)
    objective = PooledObjective(spec, pooled.features, pooled.labels)

    points = [result.initial_params, result.final_params]
    if result.trajectory:
        step = max(1, len(result.trajectory) // 5)
        points.extend(result.trajectory[::step])

    L = estimate_smoothness(spec, pooled, num_directions, radius, hp.seed)
    g_sq, sigma_sq = estimate_gradient_bounds(spec, ordered, points, batches_per_point, hp.seed, hp.batch_size)
    observed = max((r.per_client_grad_norm_sq_max for r in result.records), default=0.0)
    lambda_sq = estimate_heterogeneity(spec, points, ordered, plan)

    F0 = objective.loss(result.initial_params)
    f_star = estimate_f_star(spec, pooled, f_star_steps, f_star_lr, start=result.initial_params)
    seen = min((r.global_loss for r in result.records), default=F0)
    F_star = min(f_star, seen, F0)

    constants = BoundConstants(
        L=L,
        G_sq=max(g_sq, observed),
        sigma_sq=sigma_sq,
        lambda_sq=lambda_sq,
        F0=F0,
        F_star=F_star,
        eta=hp.eta,
        K=hp.K,
        T=max(hp.T, 1),
        N_m=plan.cluster_sizes,
    )
    if log_callback:
        log_callback(f"[bounds] {NORM_INTERPRETATION}")
        log_callback(f"[bounds] F* is a proxy: lowest loss of {f_star_steps} full-batch descent steps")
        log_callback(f"[bounds] L_hat={L:.4f} (empirical lower bound), L*K*eta={constants.lk_eta:.4f} "
                     f"({'ok' if constants.valid else 'precondition violated'})")
    return constants
