"""
EdgeFLow Simulator Core - models, data, protocol engine, topology and bounds
"""
from .errors import (
    EdgeFlowError, ConfigurationError, NumericError, CapacityError,
    SamplingError, ProtocolError, TopologyError,
)
from .model_core import ModelSpec, Batch, PooledObjective
from .data_gen import DatasetSpec, Dataset, ClientShard, PartitionConfig
from .fed_engine import HyperParams, ClusterPlan, RoundRecord, RunResult, FederatedRunner
from .net_topology import TopologyGraph, CommLedger
from .theory_bounds import BoundConstants, BoundBreakdown

__all__ = [
    "EdgeFlowError",
    "ConfigurationError",
    "NumericError",
    "CapacityError",
    "SamplingError",
    "ProtocolError",
    "TopologyError",
    "ModelSpec",
    "Batch",
    "PooledObjective",
    "DatasetSpec",
    "Dataset",
    "ClientShard",
    "PartitionConfig",
    "HyperParams",
    "ClusterPlan",
    "RoundRecord",
    "RunResult",
    "FederatedRunner",
    "TopologyGraph",
    "CommLedger",
    "BoundConstants",
    "BoundBreakdown",
]
