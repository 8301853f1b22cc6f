"""Tests for core/theory_bounds.py"""
from dataclasses import replace

import numpy as np
import pytest

from conftest import QuadraticObjective
from core.data_gen import (
    ClientShard, DatasetSpec, PartitionConfig, build_partition, make_synthetic_dataset, partition_iid,
)
from core.errors import ConfigurationError, ProtocolError
from core.fed_engine import FederatedRunner, HyperParams, RoundRecord, make_cluster_plan
from core.model_core import Batch, ModelSpec, gradient, zero_params
from core.theory_bounds import (
    BoundConstants, bound_vs_empirical, check_lemma3, estimate_f_star, estimate_gradient_bounds,
    estimate_heterogeneity, estimate_run_constants, estimate_smoothness, estimate_smoothness_objective,
    iid_bound, theorem1_bound,
)


@pytest.fixture
def hand_constants():
    return BoundConstants(L=1.0, G_sq=1.0, sigma_sq=1.0, lambda_sq=[0.2] * 4,
                          F0=1.0, F_star=0.0, eta=0.01, K=5, T=100, N_m=10)


def _record(t, cluster, grad_norm_sq):
    return RoundRecord(t=t, cluster_id=cluster, participants=[0], global_loss=1.0, eval_loss=1.0,
                       eval_accuracy=0.5, global_grad_norm_sq=grad_norm_sq, per_client_grad_norm_sq_max=1.0,
                       drift_trajectory=[0.0, 0.0], wall_params_uploaded=1)


class TestBoundConstants:
    def test_scalar_cluster_size_broadcasts(self, hand_constants):
        assert hand_constants.N_m == [10, 10, 10, 10]
        assert hand_constants.M == 4

    def test_mismatched_sizes(self):
        with pytest.raises(ConfigurationError):
            BoundConstants(L=1, G_sq=1, sigma_sq=1, lambda_sq=[0.1, 0.2], F0=1, F_star=0,
                           eta=0.1, K=1, T=1, N_m=[5])

    def test_f0_below_f_star(self):
        with pytest.raises(ConfigurationError):
            BoundConstants(L=1, G_sq=1, sigma_sq=1, lambda_sq=[0.1], F0=0.0, F_star=1.0, eta=0.1, K=1, T=1)

    def test_negative_constant(self):
        with pytest.raises(ConfigurationError):
            BoundConstants(L=-1, G_sq=1, sigma_sq=1, lambda_sq=[0.1], F0=1, F_star=0, eta=0.1, K=1, T=1)


class TestConvergenceBound:
    def test_hand_example(self, hand_constants):
        b = theorem1_bound(hand_constants)
        assert b.term_init == pytest.approx(0.8)
        assert b.term_hetero == pytest.approx(0.4)
        assert b.term_variance == pytest.approx(0.002)
        assert b.term_drift == pytest.approx(0.01 / 3)
        assert b.total == pytest.approx(1.2053333, abs=1e-6)
        assert b.valid

    def test_decreases_with_rounds(self, hand_constants):
        short = theorem1_bound(replace(hand_constants, T=50)).total
        long = theorem1_bound(replace(hand_constants, T=400)).total
        assert long < short

    def test_increases_with_noise_and_heterogeneity(self, hand_constants):
        base = theorem1_bound(hand_constants).total
        assert theorem1_bound(replace(hand_constants, sigma_sq=4.0)).total > base
        assert theorem1_bound(replace(hand_constants, lambda_sq=[0.5] * 4)).total > base

    def test_interior_optimum_in_local_steps(self, hand_constants):
        totals = {k: theorem1_bound(replace(hand_constants, K=k)).total for k in (1, 5, 25, 60, 100)}
        assert totals[25] < totals[1]
        assert totals[25] < totals[5]
        assert totals[25] < totals[60]
        assert totals[25] < totals[100]

    def test_strictly_decreases_with_cluster_size(self, hand_constants):
        totals = [theorem1_bound(replace(hand_constants, N_m=n)).total for n in (1, 2, 5, 10, 20, 50)]
        assert all(b < a for a, b in zip(totals, totals[1:]))

    def test_local_steps_minimum_is_interior(self, hand_constants):
        # 4/K + K^2/7500 plus constants: minimized at K = 25
        totals = [theorem1_bound(replace(hand_constants, K=k)).total for k in range(1, 51)]
        best = int(np.argmin(totals)) + 1
        assert best == 25
        assert totals[0] > totals[best - 1] < totals[-1]

    def test_precondition_flag_is_reported(self, hand_constants):
        lines = []
        b = theorem1_bound(replace(hand_constants, K=100), log_callback=lines.append)
        assert not b.valid
        assert b.lk_eta == pytest.approx(1.0)
        assert lines and "invalid" in lines[0]

    def test_schedule_weights_clusters(self):
        c = BoundConstants(L=1, G_sq=0, sigma_sq=0, lambda_sq=[0.0, 1.0], F0=0, F_star=0,
                           eta=0.1, K=1, T=4, N_m=[5, 5])
        assert theorem1_bound(c, [1, 1, 1, 1]).term_hetero == pytest.approx(2.0)
        assert theorem1_bound(c).term_hetero == pytest.approx(1.0)

    def test_schedule_length_mismatch(self, hand_constants):
        with pytest.raises(ConfigurationError):
            theorem1_bound(hand_constants, [0, 1])

    def test_iid_form_drops_heterogeneity(self, hand_constants):
        homogeneous = replace(hand_constants, lambda_sq=[0.0] * 4)
        assert iid_bound(hand_constants).total == pytest.approx(theorem1_bound(homogeneous).total, rel=1e-12)

    def test_iid_order_expression(self, hand_constants):
        b = iid_bound(hand_constants, with_constants=False)
        assert b.term_init == pytest.approx(0.2)
        assert b.term_variance == pytest.approx(0.001)
        assert b.term_drift == pytest.approx(0.0025)


class TestDriftCheck:
    def test_within_bound(self):
        report = check_lemma3([[0.0, 0.01, 0.04]], eta=0.1, G_sq_hat=1.0)
        assert report.ok
        assert report.checked == 3
        assert report.max_ratio == pytest.approx(1.0)

    def test_violation_is_reported(self):
        report = check_lemma3([[0.0, 0.005], [0.0, 0.02]], eta=0.1, G_sq_hat=1.0)
        assert not report.ok
        assert report.violations == [{"t": 1, "k": 1, "drift": 0.02, "bound": pytest.approx(0.01)}]

    def test_nonzero_start(self):
        assert not check_lemma3([[1e-3]], eta=0.1, G_sq_hat=1.0).ok

    def test_accepts_round_records(self):
        assert check_lemma3([_record(7, 0, 1.0)], eta=0.1, G_sq_hat=1.0).ok


class TestSmoothness:
    def test_quadratic_largest_eigenvalue(self, quadratic):
        L = estimate_smoothness_objective(quadratic, num_directions=500, radius=1.0, seed=0)
        assert 0.95 * 4.0 <= L <= 4.0 + 1e-9

    def test_scales_with_curvature(self, quadratic):
        scaled = QuadraticObjective(9.0 * quadratic.A)
        a = estimate_smoothness_objective(quadratic, num_directions=50, seed=1)
        b = estimate_smoothness_objective(scaled, num_directions=50, seed=1)
        assert b == pytest.approx(9.0 * a, rel=1e-12)

    def test_tiny_radius_directions_are_skipped(self, quadratic):
        assert estimate_smoothness_objective(quadratic, num_directions=20, radius=1e-14) == 0.0

    def test_bad_arguments(self, quadratic):
        with pytest.raises(ConfigurationError):
            estimate_smoothness_objective(quadratic, num_directions=0)
        with pytest.raises(ConfigurationError):
            estimate_smoothness_objective(quadratic, radius=0.0)

    def test_model_estimate_is_positive(self, linear_spec, small_dataset):
        assert estimate_smoothness(linear_spec, small_dataset, num_directions=20) > 0


class TestGradientBounds:
    def test_full_batch_has_no_variance(self, linear_spec, small_shards):
        _, sigma_sq = estimate_gradient_bounds(linear_spec, small_shards, sample_points=2,
                                               batches_per_point=2, batch_size=20)
        assert sigma_sq == 0.0

    def test_two_sample_shard(self, linear_spec, small_shards):
        src = small_shards[0]
        shard = ClientShard(0, src.features[:2], src.labels[:2], np.bincount(src.labels[:2], minlength=3))
        theta = np.linspace(-0.5, 0.5, linear_spec.param_count)
        g0 = gradient(linear_spec, theta, Batch(shard.features[:1], shard.labels[:1]))
        g1 = gradient(linear_spec, theta, Batch(shard.features[1:], shard.labels[1:]))
        g_sq, sigma_sq = estimate_gradient_bounds(linear_spec, [shard], [theta], batches_per_point=2, batch_size=1)
        assert g_sq == pytest.approx(max(g0 @ g0, g1 @ g1))
        assert sigma_sq == pytest.approx(float((g0 - g1) @ (g0 - g1)) / 4)

    def test_needs_two_batches(self, linear_spec, small_shards):
        with pytest.raises(ConfigurationError):
            estimate_gradient_bounds(linear_spec, small_shards, batches_per_point=1)


class TestHeterogeneity:
    def test_single_cluster_is_homogeneous(self, linear_spec, small_shards):
        plan = make_cluster_plan(6, 1)
        theta = np.linspace(-1, 1, linear_spec.param_count)
        assert estimate_heterogeneity(linear_spec, theta, small_shards, plan) == [0.0]

    def test_identical_clusters(self, linear_spec, small_shards):
        twins = [ClientShard(n, small_shards[n % 3].features, small_shards[n % 3].labels,
                             small_shards[n % 3].label_histogram) for n in range(6)]
        plan = make_cluster_plan(6, 2)
        values = estimate_heterogeneity(linear_spec, zero_params(linear_spec), twins, plan)
        assert max(values) <= 1e-20

    def test_non_iid_clusters_are_far_more_heterogeneous(self):
        spec = DatasetSpec(num_classes=10, input_dim=5, samples_per_class=100, class_separation=10.0)
        data = make_synthetic_dataset(spec, seed=0)
        model = ModelSpec(input_dim=5, num_classes=10)
        plan = make_cluster_plan(100, 10, assignment="interleaved")
        theta = zero_params(model)
        iid = estimate_heterogeneity(model, theta, partition_iid(data, 100, seed=0), plan)
        skewed_shards = build_partition(PartitionConfig.from_preset("NIID_B"), data, seed=0)
        skewed = estimate_heterogeneity(model, theta, skewed_shards, plan)
        assert max(iid) <= 1e-2 * max(skewed)

    def test_max_over_points(self, linear_spec, small_shards):
        plan = make_cluster_plan(6, 3)
        a = np.zeros(linear_spec.param_count)
        b = np.linspace(-1, 1, linear_spec.param_count)
        both = estimate_heterogeneity(linear_spec, [a, b], small_shards, plan)
        single = [estimate_heterogeneity(linear_spec, p, small_shards, plan) for p in (a, b)]
        assert both == [max(x, y) for x, y in zip(*single)]


class TestFStar:
    def test_descent_lowers_loss(self, linear_spec, small_dataset):
        start = zero_params(linear_spec)
        assert estimate_f_star(linear_spec, small_dataset, steps=50, eta=0.5, start=start) < np.log(3)


class TestBoundVsEmpirical:
    def test_slack(self, hand_constants):
        c = replace(hand_constants, T=4)
        records = [_record(t, t % 4, 0.1) for t in range(4)]
        comparison = bound_vs_empirical(records, c)
        assert comparison.empirical_avg_grad_norm_sq == pytest.approx(0.1)
        assert comparison.slack == pytest.approx(comparison.bound_total - 0.1)
        assert comparison.holds

    def test_fedavg_records_rejected(self, hand_constants):
        c = replace(hand_constants, T=2)
        with pytest.raises(ProtocolError):
            bound_vs_empirical([_record(0, -1, 0.1), _record(1, -1, 0.1)], c)

    def test_untracked_gradients(self, hand_constants):
        c = replace(hand_constants, T=1)
        with pytest.raises(ConfigurationError):
            bound_vs_empirical([_record(0, 0, float("nan"))], c)


class TestRunConstants:
    def test_small_run(self, linear_spec, small_shards):
        hp = HyperParams(eta=0.1, K=2, T=6, batch_size=5, seed=2)
        plan = make_cluster_plan(6, 3)
        result = FederatedRunner(linear_spec, small_shards, hp).run_edgeflow(plan)
        lines = []
        c = estimate_run_constants(linear_spec, small_shards, plan, hp, result, num_directions=20,
                                   batches_per_point=2, f_star_steps=30, log_callback=lines.append)
        assert c.M == 3 and c.N_m == [2, 2, 2]
        assert c.F_star <= c.F0
        assert c.G_sq >= max(r.per_client_grad_norm_sq_max for r in result.records)
        assert check_lemma3(result.records, hp.eta, c.G_sq).ok
        assert any("squared Euclidean" in line for line in lines)


@pytest.mark.slow
class TestFullScaleBounds:
    @pytest.fixture(scope="class", params=["IID", "NIID_B"])
    def full_run(self, request):
        spec = DatasetSpec()
        model = ModelSpec()
        shards = build_partition(PartitionConfig.from_preset(request.param), make_synthetic_dataset(spec, 0), 0)
        hp = HyperParams(eta=0.05, K=5, T=50, batch_size=64, seed=0)
        plan = make_cluster_plan(100, 10)
        result = FederatedRunner(model, shards, hp).run_edgeflow(plan)
        c = estimate_run_constants(model, shards, plan, hp, result, num_directions=50,
                                   batches_per_point=4, f_star_steps=300)
        return result, c, hp

    def test_drift_bound_holds(self, full_run):
        result, c, hp = full_run
        assert check_lemma3(result.records, hp.eta, c.G_sq).ok

    def test_bound_dominates_empirical(self, full_run):
        result, c, _ = full_run
        assert bound_vs_empirical(result.records, c).slack >= 0
