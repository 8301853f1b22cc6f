"""
Counter-based random streams.

Every stream is a Philox generator whose key is derived from the master
seed and a path of labels, e.g. stream(seed, "batch", t, n). Streams for
different paths are independent, so results never depend on the order in
which clients or grid cells are executed.
"""
import hashlib
from typing import Union

import numpy as np

Label = Union[int, str]


def _label_word(label: Label) -> int:
    """Map a path label to a stable 64-bit word (Python's hash() is salted)."""
    if isinstance(label, (bool, np.bool_)):
        label = int(label)
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream_key(seed: int, *path: Label) -> np.ndarray:
    """128-bit Philox key for (seed, *path)."""
    seq = np.random.SeedSequence(
        entropy=_label_word(seed),
        spawn_key=tuple(_label_word(p) for p in path),
    )
    return seq.generate_state(2, dtype=np.uint64)


def stream(seed: int, *path: Label) -> np.random.Generator:
    """Independent generator for the given (seed, *path)."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *path)))
