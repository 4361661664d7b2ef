"""Named random sub-streams derived from one root seed."""

from __future__ import annotations

import zlib

import numpy as np


def substream_seed(root: int, *keys) -> int:
    """Deterministic 32-bit seed for the stream named by ``keys`` under ``root``.

    Integer keys are used as-is; anything else is hashed with CRC-32 so
    that e.g. ``("init", "V03")`` and ``("shuffle", "V03")`` are independent.
    """
    parts = [int(root)] + [k if isinstance(k, int) else zlib.crc32(str(k).encode()) for k in keys]
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


def substream(root: int, *keys) -> np.random.Generator:
    return np.random.default_rng(substream_seed(root, *keys))
