"""Seeded, label-addressed random streams."""

import zlib

import numpy as np


def stream(seed, label):
    """Return an independent Philox generator for ``(seed, label)``.

    Distinct labels give statistically independent streams from a single
    master seed, so e.g. the sign diagonal and the row selection of a
    sketch never share draws.
    """
    key = zlib.crc32(str(label).encode("utf-8"))
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, key])
    return np.random.Generator(np.random.Philox(ss))
