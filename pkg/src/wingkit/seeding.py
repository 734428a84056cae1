"""Deterministic seed derivation.

All randomness in the toolkit flows from explicit integer seeds. Two
helpers keep independent consumers independent: `stream_seed` splits one
root seed into named streams (adding a consumer never perturbs existing
streams), and `derived_rng` builds a generator that is a pure function of
a seed plus the float inputs of the call site.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_seed(root_seed: int, name: str) -> int:
    """Derive the sub-seed for a named stream from the root seed."""
    h = hashlib.sha256()
    h.update(int(root_seed & _MASK64).to_bytes(8, "little"))
    h.update(name.encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def derived_rng(seed: int, tag: str, *values: float) -> np.random.Generator:
    """Generator seeded by (seed, tag, values); same inputs, same stream."""
    h = hashlib.sha256()
    h.update(tag.encode("utf-8"))
    h.update(np.asarray(values, dtype=np.float64).tobytes())
    digest = int.from_bytes(h.digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([seed & _MASK64, digest]))
