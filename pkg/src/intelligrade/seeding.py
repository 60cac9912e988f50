"""Deterministic seed fan-out.

Every random draw in the toolkit flows from one user seed.  Stages derive
independent generators by mixing the seed with stage-name parts, so adding
a stage never perturbs the streams of the others.
"""

import zlib

import numpy as np

_MASK = 0xFFFFFFFF


def subrng(seed, *parts):
    """Generator for a named sub-stream of ``seed``.

    ``parts`` may mix strings (hashed stably via crc32) and integers, e.g.
    ``subrng(seed, "speaker", 17)``.
    """
    entropy = [int(seed) & _MASK]
    for part in parts:
        if isinstance(part, str):
            entropy.append(zlib.crc32(part.encode("utf-8")) & _MASK)
        else:
            entropy.append(int(part) & _MASK)
    return np.random.default_rng(entropy)
