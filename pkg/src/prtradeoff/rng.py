"""Seeded random streams.

All randomness flows through :func:`make_rng`, a Philox (counter-based)
bit generator wrapped in a numpy ``Generator``; normal variates come from
numpy's ziggurat sampler. Substream seeds for independent cells are
derived by hashing, so a cell's stream never depends on scheduling order.
"""

from __future__ import annotations

import hashlib

import numpy as np

DEFAULT_MASTER_SEED = 20240607


def make_rng(seed: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be an unsigned integer")
    return np.random.Generator(np.random.Philox(int(seed)))


def resolve_seed(master_seed: int, cell_path: str | tuple | list) -> int:
    """Stable 63-bit substream seed for ``cell_path`` under ``master_seed``.

    The digest is SHA-256 over the UTF-8 text ``"<master_seed>/<path>"``,
    with tuple/list paths joined by ``/``. The first 8 bytes, big-endian,
    masked to 63 bits, form the seed.
    """
    if isinstance(cell_path, (tuple, list)):
        cell_path = "/".join(str(p) for p in cell_path)
    digest = hashlib.sha256(f"{int(master_seed)}/{cell_path}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & ((1 << 63) - 1)
