"""Deterministic random-stream management.

Every stochastic routine in the toolkit draws from a Generator derived from a
single 64-bit run seed through a named purpose and an integer index:

    rng = child_rng(seed, "sim_bench.mc_ground_truth", index=k)

The derivation hashes (seed, crc32(purpose), index) into a SeedSequence, so

  * streams for different purposes are statistically independent,
  * replicate k's stream does not depend on how many replicates run,
  * reruns with the same seed reproduce every draw bit for bit.

Purpose strings are dotted module.use names; they are part of the public run
configuration contract and are listed in the config schema documentation.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def child_rng(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Generator for the stream (seed, purpose, index).

    seed is reduced modulo 2^64 so that any Python int is accepted; purpose is
    hashed with crc32 so that distinct names give distinct streams.
    """
    entropy = [int(seed) & _MASK64, zlib.crc32(purpose.encode("utf-8")), int(index)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def spawn_seed(seed: int, purpose: str, index: int = 0) -> int:
    """A 64-bit integer seed derived the same way as child_rng.

    Used where a plain integer must be recorded in a run configuration.
    """
    return int(child_rng(seed, purpose, index).integers(0, _MASK64, dtype=np.uint64))
