"""
EdgeFLow Simulator Data - Partition and topology preset registries
"""
from .partition_presets import PARTITION_PRESETS
from .topology_presets import TOPOLOGY_PRESETS, BUILTIN_TOPOLOGIES

__all__ = [
    "PARTITION_PRESETS",
    "TOPOLOGY_PRESETS",
    "BUILTIN_TOPOLOGIES",
]
