"""
Topology Presets Registry
Builtin edge-network shapes and their default sizes.
"""

TOPOLOGY_PRESETS = {
    "simple": {
        "name": "Simple (local-edge-cloud)",
        "description": "E edge nodes, each one hop from the cloud.",
        "params": {"edges": 4},
    },
    "breadth_parallel": {
        "name": "Breadth-parallel",
        "description": "b edge nodes behind a shared gateway one hop from the cloud.",
        "params": {"branching": 4},
    },
    "depth_linear": {
        "name": "Depth-linear",
        "description": "Chain edge_1 - ... - edge_d - cloud.",
        "params": {"depth": 4},
    },
    "hybrid": {
        "name": "Hybrid breadth-depth",
        "description": "b parallel chains of depth d joined at the cloud.",
        "params": {"branching": 4, "depth": 4},
    },
}

# Order used by reports and plot data
BUILTIN_TOPOLOGIES = ["simple", "breadth_parallel", "depth_linear", "hybrid"]
