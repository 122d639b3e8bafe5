"""Seed derivation and counter-based random streams.

Every random quantity in the package is drawn from a Philox counter-based
generator keyed by a 64-bit seed.  Derived streams (per shard, per block,
per repetition) are obtained by mixing the base seed with a stream tag via
splitmix64, so results never depend on thread scheduling or call order
between independent consumers.
"""

import numpy as np

_MASK64 = (1 << 64) - 1

# Stream tags.  Distinct constants keep derived streams independent.
TAG_TRUTH = 0x7472757468  # truth vector draw
TAG_DATA = 0x64617461  # sample stream
TAG_ORACLE = 0x6F7261636C65  # oracle-fit sample stream
TAG_PLAN = 0x706C616E  # shard plan permutation
TAG_SHARD = 0x7368617264  # per-shard task seeds
TAG_SOLVER = 0x736F6C7665  # SGD visit order
TAG_SUBSAMPLE = 0x737562  # without-replacement subsample
TAG_HOLDOUT = 0x686F6C64  # held-out evaluation stream
TAG_REP = 0x726570  # per-repetition seeds


def splitmix64(x: int) -> int:
    """One splitmix64 step; a 64-bit finalizer with good avalanche."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_seed(base: int, *tags: int) -> int:
    """Derive an independent 64-bit seed from `base` and one or more tags."""
    s = base & _MASK64
    for t in tags:
        s = splitmix64(s ^ splitmix64(t & _MASK64))
    return s


def make_generator(seed: int, counter_hi: int = 0) -> np.random.Generator:
    """Philox generator keyed directly by (seed, counter_hi).

    Distinct keys give statistically independent streams, which is what
    makes per-block and per-shard regeneration deterministic and
    order-free.
    """
    key = np.array([seed & _MASK64, counter_hi & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
