"""
Partition Presets Registry
Client data configurations for 100 clients; counts are scaled when a run
uses a different number of clients.
"""

PARTITION_PRESETS = {
    # ===================
    # IID
    # ===================
    "IID": {
        "name": "IID",
        "description": "Every client draws uniformly from all categories.",
        "groups": [
            {"count": 100, "setting": "iid"},
        ],
    },

    # ===================
    # NON-IID
    # ===================
    "NIID_A": {
        "name": "NIID A",
        "description": "10 IID clients, 20 clients 95%-non-IID (two majors), 70 clients 98%-non-IID.",
        "groups": [
            {"count": 10, "setting": "iid"},
            {"count": 20, "setting": "x_pct_noniid", "x": 95.0, "num_major": 2},
            {"count": 70, "setting": "x_pct_noniid", "x": 98.0, "num_major": 1},
        ],
    },
    "NIID_B": {
        "name": "NIID B",
        "description": "10 IID clients, 90 clients holding a single category.",
        "groups": [
            {"count": 10, "setting": "iid"},
            {"count": 90, "setting": "x_pct_noniid", "x": 100.0, "num_major": 1},
        ],
    },
}
