"""Counter-based random number streams.

All randomness in the package flows through Philox (a counter-based,
splittable generator) keyed by a root seed plus an integer path. Substreams
are derived with ``SeedSequence([seed, *path])``, so any (seed, path) pair
names one reproducible stream independent of call order. Reports record the
algorithm as ``philox4x64``.

Stream path conventions (first path element after the run index):
    source-level draws append the source id so that data generation and
    splitting are split by (seed, sourceId) as documented in the data module.
"""

from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "philox4x64"

# Path tags; kept distinct so unrelated consumers can never collide.
TAG_SPLIT = 101        # fold permutations, keyed (seed, source_id, n, TAG_SPLIT)
TAG_HYPER = 102        # suite hyperparameter draws
TAG_DRAW = 103         # per-source data draws
TAG_TRAIN = 104        # minibatch shuffling in dual training
TAG_UNIFORMS = 105     # per-(test point, source) p-value uniforms
TAG_TUNE = 106         # penalty-tuning mimic split and uniforms
TAG_SPLIT_SEED = 107   # derivation of per-run SplitPlan seeds
TAG_FIT = 108          # per-source working-model fits
TAG_POOL_FIT = 109     # pooled working-model refits


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return the Philox stream named by (seed, *path)."""
    entropy = [int(seed)] + [int(p) for p in path]
    if any(e < 0 for e in entropy):
        raise ValueError("stream path components must be nonnegative integers")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *path: int) -> int:
    """Collapse (seed, *path) into a single 63-bit integer seed."""
    return int(stream(seed, *path).integers(0, 2**63 - 1))
