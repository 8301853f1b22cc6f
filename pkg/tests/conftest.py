"""Shared fixtures: tiny models, small datasets, a quadratic objective and output roots."""
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from core.data_gen import DatasetSpec, make_synthetic_dataset, partition_iid
from core.model_core import ModelSpec, Objective


class QuadraticObjective(Objective):
    """0.5 * theta^T A theta, gradient A theta."""

    def __init__(self, A):
        self.A = np.asarray(A, dtype=np.float64)
        self.dim = self.A.shape[0]

    def loss(self, params):
        return 0.5 * float(params @ self.A @ params)

    def grad(self, params):
        return self.A @ params


@pytest.fixture
def quadratic():
    return QuadraticObjective(np.diag([4.0, 2.0, 1.0]))


@pytest.fixture
def linear_spec():
    return ModelSpec(kind="linear-softmax", input_dim=4, num_classes=3)


@pytest.fixture
def mlp_spec():
    return ModelSpec(kind="mlp", input_dim=4, hidden_dims=(5,), num_classes=3)


@pytest.fixture
def small_data_spec():
    return DatasetSpec(num_classes=3, input_dim=4, samples_per_class=40, class_separation=3.0, noise_std=1.0)


@pytest.fixture
def small_dataset(small_data_spec):
    return make_synthetic_dataset(small_data_spec, seed=0)


@pytest.fixture
def small_shards(small_dataset):
    # 6 clients x 20 samples
    return partition_iid(small_dataset, 6, seed=0)


@pytest.fixture
def output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("EDGEFLOW_OUTPUT_ROOT", str(tmp_path))
    return tmp_path


TINY_CONFIG = """\
model:
  kind: linear-softmax
  input_dim: 4
  num_classes: 3
data:
  samples_per_class: 40
  eval_samples_per_class: 20
  class_separation: 3.0
partition:
  preset: IID
  num_clients: 6
plan:
  num_clusters: 3
hp:
  eta: 0.1
  K: 2
  T: 5
  batch_size: 5
  seed: 3
theory:
  num_directions: 10
  batches_per_point: 2
  f_star_steps: 20
methods: [fedavg, edgeflow_seq, edgeflow_rand]
repeats: 2
"""


@pytest.fixture
def tiny_config_text():
    return TINY_CONFIG


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return path
